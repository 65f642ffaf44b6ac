#include "selfdoc/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace selfdoc {

GradCheckReport finite_diff_check(const std::function<Tensor()>& make_loss, ParamRegistry& params,
                                  double eps, Rng& rng, long min_coords) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("finite_diff_check: eps must lie in [1e-7, 1e-3]");
  if (!f64_build)
    throw std::runtime_error("finite_diff_check: requires the 64-bit build (rebuild without SELFDOC_F32)");

  params.zero_grads();
  Tensor loss = make_loss();
  loss.check_finite("finite_diff_check: loss");
  backward(loss);

  // Snapshot analytic gradients before we start nudging values.
  std::vector<std::vector<Scalar>> analytic;
  std::vector<std::size_t> trainable;
  for (std::size_t i = 0; i < params.entries().size(); ++i) {
    const auto& e = params.entries()[i];
    if (!e.tensor.requires_grad()) continue;
    trainable.push_back(i);
    analytic.push_back(e.tensor.has_grad() ? e.tensor.grad() : std::vector<Scalar>(e.tensor.numel(), 0));
  }
  if (trainable.empty()) throw std::invalid_argument("finite_diff_check: no trainable parameters");

  // At least one coordinate per tensor, topped up round-robin to min_coords.
  std::vector<long> quota(trainable.size(), 1);
  long total = static_cast<long>(trainable.size());
  for (std::size_t i = 0; total < min_coords; i = (i + 1) % trainable.size()) {
    ++quota[i];
    ++total;
  }

  GradCheckReport report;
  NoGradGuard no_grad;  // finite-difference evaluations need values only
  for (std::size_t t = 0; t < trainable.size(); ++t) {
    auto& entry = params.entries()[trainable[t]];
    std::vector<Scalar>& theta = entry.tensor.data();
    double group_max = 0.0;
    for (long q = 0; q < quota[t]; ++q) {
      const std::size_t c = static_cast<std::size_t>(rng.uniform_int(static_cast<int64_t>(theta.size())));
      const Scalar saved = theta[c];
      theta[c] = saved + static_cast<Scalar>(eps);
      const double f_plus = static_cast<double>(make_loss().item());
      theta[c] = saved - static_cast<Scalar>(eps);
      const double f_minus = static_cast<double>(make_loss().item());
      theta[c] = saved;
      if (!std::isfinite(f_plus) || !std::isfinite(f_minus))
        throw std::runtime_error("finite_diff_check: non-finite loss at " + entry.name);
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double a = static_cast<double>(analytic[t][c]);
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(a));
      group_max = std::max(group_max, rel);
      ++report.coords_checked;
    }
    report.per_group.emplace_back(entry.name, group_max);
    report.max_rel_err = std::max(report.max_rel_err, group_max);
  }
  return report;
}

}  // namespace selfdoc
