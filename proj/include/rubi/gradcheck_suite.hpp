#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rubi {

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::size_t points = 10;        // random points per primitive
    double eps = 1e-5;              // primitives
    double composite_eps = 1e-4;    // full-network paths; see README
    double tolerance = 1e-4;
};

struct GradcheckEntry {
    std::string name;
    bool composite = false;
    double max_rel_error = 0.0;
    std::size_t points = 0;
    std::size_t coordinates = 0;
    bool passed = false;
};

/// Every differentiable primitive once, then the composite paths
/// predict_logits, fused_loss and question_only_loss.
std::vector<GradcheckEntry> run_gradcheck_suite(const GradcheckOptions& options = {});

} // namespace rubi
