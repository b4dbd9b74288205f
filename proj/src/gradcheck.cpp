#include "rubi/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace rubi {

namespace {

double evaluate(const std::function<Tensor()>& f) {
    NoGradGuard guard;
    const double value = f().item();
    if (!std::isfinite(value)) {
        throw NonFiniteError("finite_difference_check: non-finite function value under perturbation");
    }
    return value;
}

} // namespace

GradCheckResult finite_difference_check(const std::function<Tensor()>& f, std::vector<Tensor> wrt, double eps) {
    for (const Tensor& t : wrt) {
        if (!t.is_leaf() || !t.requires_grad()) {
            throw std::invalid_argument("finite_difference_check: targets must be requires-grad leaves");
        }
    }
    for (Tensor& t : wrt) {
        t.zero_grad();
    }
    const Tensor out = f();
    if (out.size() != 1) {
        throw ShapeError("finite_difference_check: function must be scalar-valued (got " + shape_str(out.shape()) +
                         ")");
    }
    // A function with no dependence on its targets has an exactly zero gradient.
    if (out.requires_grad()) {
        backward(out);
    }

    GradCheckResult result;
    for (std::size_t ti = 0; ti < wrt.size(); ++ti) {
        Tensor& t = wrt[ti];
        const std::vector<double> analytic = t.grad();
        auto values = t.mutable_data();
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            values[i] = original + eps;
            const double up = evaluate(f);
            values[i] = original - eps;
            const double down = evaluate(f);
            values[i] = original;

            const double numeric = (up - down) / (2.0 * eps);
            const double diff = std::abs(analytic[i] - numeric);
            const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-8});
            const double rel = diff / denom;
            ++result.coordinates;
            if (rel > result.max_rel_error) {
                result.max_rel_error = rel;
                result.worst = std::to_string(ti) + ":" + std::to_string(i);
            }
        }
        t.zero_grad();
    }
    return result;
}

GradCheckResult finite_difference_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                                        double eps) {
    Tensor x = Tensor::parameter(point.shape(), std::vector<double>(point.data().begin(), point.data().end()));
    return finite_difference_check([&f, &x] { return f(x); }, {x}, eps);
}

} // namespace rubi
