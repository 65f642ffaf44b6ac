#pragma once

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "selfdoc/params.hpp"
#include "selfdoc/rng.hpp"
#include "selfdoc/tensor.hpp"

namespace selfdoc {

struct GradCheckReport {
  double max_rel_err = 0.0;
  long coords_checked = 0;
  // One entry per parameter tensor: worst relative error sampled in it.
  std::vector<std::pair<std::string, double>> per_group;
};

/// Central finite differences against the recorded backward pass.
///
/// make_loss must rebuild the forward graph from the current parameter values
/// and return the scalar loss; it must be deterministic (any randomness frozen
/// outside). Samples at least min_coords coordinates overall and at least one
/// coordinate inside every trainable parameter tensor. Relative error per
/// coordinate is |analytic - numeric| / max(1, |analytic|).
GradCheckReport finite_diff_check(const std::function<Tensor()>& make_loss, ParamRegistry& params,
                                  double eps, Rng& rng, long min_coords = 200);

}  // namespace selfdoc
