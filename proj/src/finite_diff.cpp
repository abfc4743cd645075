#include "flags/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "flags/error.hpp"

namespace flags {

Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps) {
    if (!(eps > 0.0)) {
        throw ContractError("finite_diff_grad: eps must be positive");
    }
    Tensor probe = x;
    Tensor grad(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = probe[i];
        probe[i] = orig + eps;
        const double up = f(probe);
        probe[i] = orig - eps;
        const double down = f(probe);
        probe[i] = orig;
        if (!std::isfinite(up) || !std::isfinite(down)) {
            throw NumericError("finite_diff_grad: function returned a non-finite value at coordinate " +
                               std::to_string(i));
        }
        grad[i] = (up - down) / (2.0 * eps);
    }
    return grad;
}

double relative_error(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

double max_relative_error(const Tensor& a, const Tensor& b, double floor) {
    if (a.shape() != b.shape()) {
        throw DimensionError("max_relative_error: shape " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        worst = std::max(worst, relative_error(a[i], b[i], floor));
    }
    return worst;
}

}  // namespace flags
