#include "subilstm/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace subi {

namespace {

double eval_plain(const ScalarFn& f, const std::vector<Tensor>& params) {
  Tensor out = f(params);
  const double v = out.scalar();
  if (!std::isfinite(v)) throw std::runtime_error("grad_check: non-finite function value");
  return v;
}

}  // namespace

GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
  if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");

  Tape tape;
  std::vector<Tensor> watched = params;
  for (auto& p : watched) {
    p.detach();
    tape.watch(p);
  }
  Tensor loss = f(watched);
  if (loss.size() != 1) throw std::invalid_argument("grad_check: f must be scalar-valued");
  if (!std::isfinite(loss.scalar())) {
    throw std::runtime_error("grad_check: non-finite function value");
  }
  Gradients grads = backward(tape, loss);

  GradCheckReport report;
  std::vector<Tensor> probe = params;
  for (auto& p : probe) p.detach();

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const Tensor analytic = grads.grad_of(watched[pi]);
    for (std::int64_t ci = 0; ci < params[pi].size(); ++ci) {
      const double base = params[pi].at(ci);

      auto with_coord = [&](double v) {
        auto data = std::make_shared<Buffer>(*params[pi].values);
        (*data)[static_cast<std::size_t>(ci)] = v;
        Tensor t;
        t.shape = params[pi].shape;
        t.values = std::move(data);
        return t;
      };

      probe[pi] = with_coord(base + eps);
      const double lp = eval_plain(f, probe);
      probe[pi] = with_coord(base - eps);
      const double lm = eval_plain(f, probe);
      probe[pi] = params[pi];
      probe[pi].detach();

      const double numeric = (lp - lm) / (2.0 * eps);
      const double a = analytic.at(ci);
      const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      const double rel = std::fabs(a - numeric) / denom;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_coord = ci;
      }
    }
  }
  return report;
}

double grad_check_max_err(const ScalarFn& f, const std::vector<Tensor>& params, double eps) {
  return grad_check(f, params, eps).max_rel_err;
}

}  // namespace subi
