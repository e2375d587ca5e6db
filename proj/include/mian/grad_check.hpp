#pragma once

#include "mian/params.hpp"
#include "mian/tape.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mian {

struct GradCheckEntry {
  std::string path;
  Index count = 0;
  Scalar max_rel_error = 0.0;
  Scalar max_abs_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;

  Scalar max_rel_error() const;
  bool passed(Scalar tolerance) const { return max_rel_error() < tolerance; }
};

/// Builds a scalar loss on the given tape, binding parameters with Tape::param.
using TapedLoss = std::function<Var(Tape&)>;

inline constexpr Scalar kGradCheckStep = 1e-5;
/// Denominator floor for the relative error, so that entries whose true
/// gradient is ~0 are judged on absolute error instead.
inline constexpr Scalar kGradCheckFloor = 1e-6;

/// Compares the taped gradient of every entry of every parameter with the
/// central difference (f(θ+h·e) − f(θ−h·e)) / 2h. Relative error is
/// |analytic − numeric| / max(|analytic|, |numeric|, kGradCheckFloor).
/// Parameter values are restored and gradients cleared on return.
GradCheckReport grad_check(const TapedLoss& f, ModelParams& params, Scalar h = kGradCheckStep);

}  // namespace mian
