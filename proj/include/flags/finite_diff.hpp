#pragma once

#include <functional>

#include "flags/tensor.hpp"

namespace flags {

using ScalarFn = std::function<double(const Tensor&)>;

// Central-difference gradient of f at x, one coordinate at a time:
// (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).
// Throws NumericError if f returns a non-finite value.
Tensor finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps = 1e-6);

// |a - b| / max(|a|, |b|, floor): relative error that degrades to absolute
// error for entries below `floor`, where central differences carry roundoff of
// order 1e-10 regardless of the gradient's size.
double relative_error(double a, double b, double floor = 1e-3);

// Largest relative_error over all entries. Shapes must match.
double max_relative_error(const Tensor& a, const Tensor& b, double floor = 1e-3);

}  // namespace flags
