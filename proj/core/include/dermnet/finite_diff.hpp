#pragma once

#include <functional>
#include <span>
#include <vector>

#include "dermnet/tensor.hpp"

namespace dermnet {

/// Scalar function of a flat parameter vector, evaluated in double precision.
/// The double signature is what makes the oracle a "64-bit shadow": gradient
/// checks pair a float32 autodiff path with a float64 reference evaluation.
using ScalarFn = std::function<double(std::span<const double>)>;

/// Central finite differences (f(x + eps*e_i) - f(x - eps*e_i)) / (2*eps)
/// per element, all arithmetic in double. eps must be positive.
std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x,
                                     double eps);

/// Convenience overload for float32 tensors: promotes the tensor's values to
/// double and differentiates there.
std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps);

}  // namespace dermnet
