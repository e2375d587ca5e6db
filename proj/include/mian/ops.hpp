#pragma once

#include "mian/tape.hpp"

#include <vector>

namespace mian {

// Differentiable primitives. Binary elementwise ops accept either equal
// shapes or a (p×d) ∘ (1×d) row broadcast; anything else is a DimensionError.

Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }

/// Elementwise std::lerp(b, a, t) = t⊙a + (1−t)⊙b; all three share one shape.
/// For t in [0, 1] each entry stays within its two endpoints, rounding included.
Var lerp(const Var& a, const Var& b, const Var& t);

/// alpha * a + beta, elementwise.
Var affine(const Var& a, Scalar alpha, Scalar beta);
inline Var scale(const Var& a, Scalar s) { return affine(a, s, 0.0); }

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

Var concat_cols(const Var& a, const Var& b);
Var concat_cols(const std::vector<Var>& parts);

/// Row-wise softmax with per-row max subtraction.
Var softmax_rows(const Var& m);
/// Masked entries (false) get -inf before exponentiation and are exactly 0 after.
/// Throws if any row is fully masked.
Var softmax_rows(const Var& m, const MaskMatrix& mask);
/// Same, with a per-column key mask broadcast over every row.
Var softmax_rows(const Var& m, const KeyMask& key_mask);

inline constexpr Scalar kLayerNormEps = 1e-5;
/// Per-row normalization with population variance; gain/bias are 1×d.
Var layer_norm(const Var& x, const Var& gain, const Var& bias);

/// Sum of all entries as a 1×1 value.
Var sum(const Var& a);
/// Sum over rows (1×d).
Var sum_rows(const Var& a);
/// Mean over rows (1×d). With a key mask only valid rows contribute.
Var mean_rows(const Var& a);
Var mean_rows(const Var& a, const KeyMask& mask);
/// Scales row i of `x` (n×d) by `w(i)` where `w` is n×1.
Var scale_rows(const Var& x, const Var& w);

inline constexpr Scalar kProbabilityClamp = 1e-12;
/// Binary cross-entropy on a 1×1 probability, clamped to [1e-12, 1 - 1e-12].
Var binary_cross_entropy(const Var& y_hat, Scalar y);

}  // namespace mian
