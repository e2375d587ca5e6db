#include "mian/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace mian {

Scalar GradCheckReport::max_rel_error() const {
  Scalar worst = 0.0;
  for (const auto& e : entries) worst = std::max(worst, e.max_rel_error);
  return worst;
}

namespace {

Scalar evaluate(const TapedLoss& f) {
  Tape tape(Tape::Mode::Inference);
  const Var loss = f(tape);
  if (loss.rows() != 1 || loss.cols() != 1) throw DimensionError("grad_check: loss is not scalar");
  return loss.value()(0, 0);
}

}  // namespace

GradCheckReport grad_check(const TapedLoss& f, ModelParams& params, Scalar h) {
  params.zero_grad();
  {
    Tape tape;
    tape.backward(f(tape));
  }

  GradCheckReport report;
  for (auto& [path, tensor] : params) {
    if (!tensor.requires_grad) continue;
    const Matrix analytic = tensor.has_grad() ? tensor.grad : Matrix::Zero(tensor.data.rows(), tensor.data.cols());
    GradCheckEntry entry{path, tensor.size(), 0.0, 0.0};
    Scalar* values = tensor.data.data();
    for (Index i = 0; i < tensor.size(); ++i) {
      const Scalar saved = values[i];
      values[i] = saved + h;
      const Scalar plus = evaluate(f);
      values[i] = saved - h;
      const Scalar minus = evaluate(f);
      values[i] = saved;

      const Scalar numeric = (plus - minus) / (2.0 * h);
      const Scalar a = analytic.data()[i];
      const Scalar abs_err = std::abs(a - numeric);
      const Scalar denom = std::max({std::abs(a), std::abs(numeric), kGradCheckFloor});
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
      entry.max_rel_error = std::max(entry.max_rel_error, abs_err / denom);
    }
    report.entries.push_back(std::move(entry));
  }
  params.zero_grad();
  return report;
}

}  // namespace mian
