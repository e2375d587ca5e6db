#include "mian/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mian {
namespace {

enum class Broadcast { Same, Row };

Broadcast broadcast_kind(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() == b.rows() && a.cols() == b.cols()) return Broadcast::Same;
  if (b.rows() == 1 && b.cols() == a.cols()) return Broadcast::Row;
  throw DimensionError(std::string(op) + ": incompatible shapes " + shape_string(a.rows(), a.cols()) +
                       " and " + shape_string(b.rows(), b.cols()));
}

Tape& common_tape(const Var& a, const Var& b) {
  Tape& t = a.tape();
  if (&t != &b.tape()) throw std::logic_error("operands recorded on different tapes");
  return t;
}

template <typename IsValid>
Matrix masked_softmax(const Matrix& x, IsValid&& is_valid) {
  Matrix y(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    Scalar mx = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < x.cols(); ++j) {
      if (is_valid(i, j)) mx = std::max(mx, x(i, j));
    }
    if (mx == -std::numeric_limits<Scalar>::infinity()) {
      throw std::invalid_argument("softmax_rows: row " + std::to_string(i) + " is fully masked");
    }
    Scalar total = 0.0;
    for (Index j = 0; j < x.cols(); ++j) {
      // Additive -inf on masked entries; exp(-inf) is exactly zero.
      const Scalar shifted = is_valid(i, j) ? x(i, j) - mx : -std::numeric_limits<Scalar>::infinity();
      y(i, j) = std::exp(shifted);
      total += y(i, j);
    }
    y.row(i) /= total;
  }
  return y;
}

Var softmax_record(const Var& m, Matrix y) {
  return m.tape().record(std::move(y), {m}, [m](Tape& t, const Matrix& y, const Matrix& g) {
    const Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    t.accumulate(m, (y.array() * (g.array().colwise() - dot.array())).matrix());
  });
}

}  // namespace

Var matmul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(av.rows(), av.cols()) +
                         " x " + shape_string(bv.rows(), bv.cols()));
  }
  Matrix out = av * bv;
  return t.record(std::move(out), {a, b}, [a, b](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(a)) t.accumulate(a, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * g);
  });
}

Var transpose(const Var& a) {
  return a.tape().record(a.value().transpose(), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g.transpose());
  });
}

Var add(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "add");
  Matrix out = kind == Broadcast::Same ? Matrix(a.value() + b.value())
                                       : Matrix(a.value().rowwise() + b.value().row(0));
  return t.record(std::move(out), {a, b}, [a, b, kind](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (kind == Broadcast::Same) {
      t.accumulate(b, g);
    } else {
      t.accumulate(b, g.colwise().sum());
    }
  });
}

Var sub(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "sub");
  Matrix out = kind == Broadcast::Same ? Matrix(a.value() - b.value())
                                       : Matrix(a.value().rowwise() - b.value().row(0));
  return t.record(std::move(out), {a, b}, [a, b, kind](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g);
    if (kind == Broadcast::Same) {
      t.accumulate(b, -g);
    } else {
      t.accumulate(b, -g.colwise().sum());
    }
  });
}

Var mul(const Var& a, const Var& b) {
  Tape& t = common_tape(a, b);
  const Broadcast kind = broadcast_kind(a.value(), b.value(), "mul");
  Matrix out = kind == Broadcast::Same
                   ? Matrix(a.value().cwiseProduct(b.value()))
                   : Matrix((a.value().array().rowwise() * b.value().row(0).array()).matrix());
  return t.record(std::move(out), {a, b}, [a, b, kind](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& av = t.value(a);
    const Matrix& bv = t.value(b);
    if (kind == Broadcast::Same) {
      if (t.requires_grad(a)) t.accumulate(a, g.cwiseProduct(bv));
      if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(av));
    } else {
      if (t.requires_grad(a)) t.accumulate(a, (g.array().rowwise() * bv.row(0).array()).matrix());
      if (t.requires_grad(b)) t.accumulate(b, g.cwiseProduct(av).colwise().sum());
    }
  });
}

Var lerp(const Var& a, const Var& b, const Var& t) {
  Tape& tape = common_tape(a, b);
  common_tape(a, t);
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != t.rows() || a.cols() != t.cols()) {
    throw DimensionError("lerp: " + shape_string(a.rows(), a.cols()) + ", " + shape_string(b.rows(), b.cols()) +
                         " and weight " + shape_string(t.rows(), t.cols()));
  }
  Matrix out(a.rows(), a.cols());
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Matrix& tv = t.value();
  for (Index i = 0; i < out.size(); ++i) out.data()[i] = std::lerp(bv.data()[i], av.data()[i], tv.data()[i]);
  return tape.record(std::move(out), {a, b, t}, [a, b, t](Tape& tp, const Matrix&, const Matrix& g) {
    const Matrix& w = tp.value(t);
    if (tp.requires_grad(a)) tp.accumulate(a, g.cwiseProduct(w));
    if (tp.requires_grad(b)) tp.accumulate(b, (g.array() * (1.0 - w.array())).matrix());
    if (tp.requires_grad(t)) tp.accumulate(t, g.cwiseProduct(tp.value(a) - tp.value(b)));
  });
}

Var affine(const Var& a, Scalar alpha, Scalar beta) {
  Matrix out = (alpha * a.value().array() + beta).matrix();
  return a.tape().record(std::move(out), {a}, [a, alpha](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, alpha * g);
  });
}

Var relu(const Var& a) {
  Matrix out = a.value().cwiseMax(0.0);
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& y, const Matrix& g) {
    t.accumulate(a, (y.array() > 0.0).select(g, 0.0));
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& y, const Matrix& g) {
    t.accumulate(a, (g.array() * (1.0 - y.array().square())).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix& y, const Matrix& g) {
    t.accumulate(a, (g.array() * y.array() * (1.0 - y.array())).matrix());
  });
}

Var concat_cols(const Var& a, const Var& b) { return concat_cols(std::vector<Var>{a, b}); }

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  Tape& t = parts.front().tape();
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (&p.tape() != &t) throw std::logic_error("concat_cols: operands on different tapes");
    if (p.rows() != rows) {
      throw DimensionError("concat_cols: row counts differ, " + shape_string(rows, parts.front().cols()) +
                           " vs " + shape_string(p.rows(), p.cols()));
    }
    cols += p.cols();
  }
  Matrix out(rows, cols);
  Index offset = 0;
  for (const Var& p : parts) {
    out.middleCols(offset, p.cols()) = p.value();
    offset += p.cols();
  }
  return t.record(std::move(out), parts, [parts](Tape& t, const Matrix&, const Matrix& g) {
    Index offset = 0;
    for (const Var& p : parts) {
      const Index c = t.value(p).cols();
      t.accumulate(p, g.middleCols(offset, c));
      offset += c;
    }
  });
}

Var softmax_rows(const Var& m) {
  return softmax_record(m, masked_softmax(m.value(), [](Index, Index) { return true; }));
}

Var softmax_rows(const Var& m, const MaskMatrix& mask) {
  if (mask.rows() != m.rows() || mask.cols() != m.cols()) {
    throw DimensionError("softmax_rows: mask " + shape_string(mask.rows(), mask.cols()) +
                         " does not match " + shape_string(m.rows(), m.cols()));
  }
  return softmax_record(m, masked_softmax(m.value(), [&](Index i, Index j) { return mask(i, j); }));
}

Var softmax_rows(const Var& m, const KeyMask& key_mask) {
  if (key_mask.size() != m.cols()) {
    throw DimensionError("softmax_rows: key mask of length " + std::to_string(key_mask.size()) +
                         " for " + shape_string(m.rows(), m.cols()));
  }
  return softmax_record(m, masked_softmax(m.value(), [&](Index, Index j) { return key_mask(j); }));
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const Matrix& xv = x.value();
  const Index d = xv.cols();
  if (d < 2) throw DimensionError("layer_norm: needs at least 2 features, got " + std::to_string(d));
  if (gain.rows() != 1 || gain.cols() != d || bias.rows() != 1 || bias.cols() != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_string(gain.rows(), gain.cols()) + "/" +
                         shape_string(bias.rows(), bias.cols()) + " for input " +
                         shape_string(xv.rows(), d));
  }
  const Eigen::VectorXd mean = xv.rowwise().mean();
  Matrix centered = xv.colwise() - mean;
  const Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<Scalar>(d)) + kLayerNormEps).rsqrt();
  Matrix xhat = (centered.array().colwise() * inv_std.array()).matrix();
  Matrix out = ((xhat.array().rowwise() * gain.value().row(0).array()).rowwise() +
                bias.value().row(0).array())
                   .matrix();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x, gain, bias, xhat = std::move(xhat), inv_std](Tape& t, const Matrix&, const Matrix& g) {
        if (t.requires_grad(gain)) t.accumulate(gain, g.cwiseProduct(xhat).colwise().sum());
        if (t.requires_grad(bias)) t.accumulate(bias, g.colwise().sum());
        if (!t.requires_grad(x)) return;
        const Matrix gx = (g.array().rowwise() * t.value(gain).row(0).array()).matrix();
        const Eigen::VectorXd mean_g = gx.rowwise().mean();
        const Eigen::VectorXd mean_gx = gx.cwiseProduct(xhat).rowwise().mean();
        Matrix dx = gx.colwise() - mean_g;
        dx -= (xhat.array().colwise() * mean_gx.array()).matrix();
        t.accumulate(x, (dx.array().colwise() * inv_std.array()).matrix());
      });
}

Var sum(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [a](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& av = t.value(a);
    t.accumulate(a, Matrix::Constant(av.rows(), av.cols(), g(0, 0)));
  });
}

Var sum_rows(const Var& a) {
  const Index n = a.rows();
  Matrix out = a.value().colwise().sum();
  return a.tape().record(std::move(out), {a}, [a, n](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g.replicate(n, 1));
  });
}

Var mean_rows(const Var& a) {
  const Index n = a.rows();
  Matrix out = a.value().colwise().mean();
  return a.tape().record(std::move(out), {a}, [a, n](Tape& t, const Matrix&, const Matrix& g) {
    t.accumulate(a, g.replicate(n, 1) / static_cast<Scalar>(n));
  });
}

Var mean_rows(const Var& a, const KeyMask& mask) {
  const Matrix& av = a.value();
  if (mask.size() != av.rows()) {
    throw DimensionError("mean_rows: mask of length " + std::to_string(mask.size()) + " for " +
                         shape_string(av.rows(), av.cols()));
  }
  const Index valid = mask.count();
  if (valid == 0) throw std::invalid_argument("mean_rows: no unmasked rows");
  Matrix out = Matrix::Zero(1, av.cols());
  for (Index i = 0; i < av.rows(); ++i) {
    if (mask(i)) out += av.row(i);
  }
  out /= static_cast<Scalar>(valid);
  return a.tape().record(std::move(out), {a}, [a, mask, valid](Tape& t, const Matrix&, const Matrix& g) {
    const Matrix& av = t.value(a);
    Matrix ga = Matrix::Zero(av.rows(), av.cols());
    const Matrix row = g / static_cast<Scalar>(valid);
    for (Index i = 0; i < av.rows(); ++i) {
      if (mask(i)) ga.row(i) = row;
    }
    t.accumulate(a, ga);
  });
}

Var scale_rows(const Var& x, const Var& w) {
  Tape& t = common_tape(x, w);
  if (w.cols() != 1 || w.rows() != x.rows()) {
    throw DimensionError("scale_rows: weights " + shape_string(w.rows(), w.cols()) + " for rows of " +
                         shape_string(x.rows(), x.cols()));
  }
  Matrix out = (x.value().array().colwise() * w.value().col(0).array()).matrix();
  return t.record(std::move(out), {x, w}, [x, w](Tape& t, const Matrix&, const Matrix& g) {
    if (t.requires_grad(x)) t.accumulate(x, (g.array().colwise() * t.value(w).col(0).array()).matrix());
    if (t.requires_grad(w)) t.accumulate(w, g.cwiseProduct(t.value(x)).rowwise().sum());
  });
}

Var binary_cross_entropy(const Var& y_hat, Scalar y) {
  if (y_hat.rows() != 1 || y_hat.cols() != 1) {
    throw DimensionError("binary_cross_entropy: expected a 1x1 probability, got " +
                         shape_string(y_hat.rows(), y_hat.cols()));
  }
  const Scalar raw = y_hat.value()(0, 0);
  const Scalar p = std::clamp(raw, kProbabilityClamp, 1.0 - kProbabilityClamp);
  Matrix out(1, 1);
  out(0, 0) = -y * std::log(p) - (1.0 - y) * std::log(1.0 - p);
  const bool clamped = p != raw;
  return y_hat.tape().record(std::move(out), {y_hat},
                             [y_hat, y, p, clamped](Tape& t, const Matrix&, const Matrix& g) {
                               if (clamped) return;
                               Matrix d(1, 1);
                               d(0, 0) = g(0, 0) * (-y / p + (1.0 - y) / (1.0 - p));
                               t.accumulate(y_hat, d);
                             });
}

}  // namespace mian
