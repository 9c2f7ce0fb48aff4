#include "csunet/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace csunet {

namespace {

std::vector<std::int64_t> probe_indices(std::int64_t n, std::int64_t max_probes, std::mt19937_64& rng) {
  std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  if (max_probes > 0 && max_probes < n) {
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(max_probes));
    std::sort(idx.begin(), idx.end());
  }
  return idx;
}

double finite_value(const Var<double>& v) {
  const double x = v.value().item();
  if (!std::isfinite(x)) throw NonFiniteError("grad_check: non-finite function value while probing");
  return x;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const Tensor<double>& point, const GradCheckOptions& opt,
                           const std::vector<Parameter<double>*>& params) {
  for (auto* p : params) p->zero_grad();
  Tensor<double> ad_input;
  {
    Tape<double> tape;
    auto x = tape.input(point, true);
    auto loss = f(&tape, x);
    finite_value(loss);
    tape.backward(loss);
    ad_input = x.grad();
  }

  GradCheckReport rep;
  std::mt19937_64 rng(opt.seed);
  auto consider = [&](double ad, double fd, const std::string& where) {
    const double err = std::abs(ad - fd) / std::max({1.0, std::abs(ad), std::abs(fd)});
    ++rep.probes;
    if (rep.worst.empty() || err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst = where;
    }
  };
  auto eval_at = [&](const Tensor<double>& x) { return finite_value(f(nullptr, Var<double>::constant(x))); };

  Tensor<double> probe = point;
  for (auto i : probe_indices(point.numel(), opt.max_probes, rng)) {
    const double orig = probe[i];
    probe[i] = orig + opt.h;
    const double up = eval_at(probe);
    probe[i] = orig - opt.h;
    const double down = eval_at(probe);
    probe[i] = orig;
    consider(ad_input[i], (up - down) / (2 * opt.h), "input[" + std::to_string(i) + "]");
  }

  for (auto* p : params) {
    for (auto i : probe_indices(p->value.numel(), opt.max_probes, rng)) {
      const double orig = p->value[i];
      p->value[i] = orig + opt.h;
      const double up = eval_at(point);
      p->value[i] = orig - opt.h;
      const double down = eval_at(point);
      p->value[i] = orig;
      consider(p->grad[i], (up - down) / (2 * opt.h), p->name + "[" + std::to_string(i) + "]");
    }
  }
  rep.pass = rep.max_rel_err <= opt.tol;
  return rep;
}

}  // namespace csunet
