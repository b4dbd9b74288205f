#pragma once

#include "rubi/tensor.hpp"

#include <functional>
#include <string>
#include <vector>

namespace rubi {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t coordinates = 0;
    /// "<tensor index>:<flat offset>" of the worst coordinate, empty when all match exactly.
    std::string worst;
};

/// Central-difference check of a scalar function of `point`.
/// Error per coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                                        double eps = 1e-5);

/// Same check against leaves already owned by `f` (layer parameters, inputs).
/// Every tensor in `wrt` must be a requires-grad leaf; their values are
/// perturbed in place and restored.
GradCheckResult finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> wrt,
                                        double eps = 1e-5);

} // namespace rubi
