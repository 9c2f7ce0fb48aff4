#pragma once

#include <functional>
#include <string>
#include <vector>

#include "csunet/autodiff.hpp"

namespace csunet {

struct GradCheckOptions {
  double h = 1e-4;
  double tol = 1e-4;
  /// Coordinates probed per tensor (input and each parameter); 0 probes all.
  std::int64_t max_probes = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  bool pass = true;
  std::int64_t probes = 0;
  std::string worst;  // "<tensor>[<flat index>]" of the worst coordinate
};

/// Scalar function under test. `tape` is null for finite-difference probes;
/// the function binds parameters through it when present.
using ScalarFn = std::function<Var<double>(Tape<double>* tape, const Var<double>& x)>;

/// Compare reverse-mode gradients with central differences. Relative error
/// per coordinate is |g_ad - g_fd| / max(1, |g_ad|, |g_fd|). Throws
/// NonFiniteError when a probe evaluates to NaN/Inf.
GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& point, const GradCheckOptions& opt = {},
                           const std::vector<Parameter<double>*>& params = {});

}  // namespace csunet
