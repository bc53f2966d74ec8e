#include "dermnet/finite_diff.hpp"

#include <stdexcept>

namespace dermnet {

std::vector<double> finite_diff_grad(const ScalarFn& f, std::span<const double> x,
                                     double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("finite_diff_grad: eps must be positive");
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(x.size());
  for (size_t i = 0; i < point.size(); ++i) {
    const double saved = point[i];
    point[i] = saved + eps;
    const double fp = f(point);
    point[i] = saved - eps;
    const double fm = f(point);
    point[i] = saved;
    grad[i] = (fp - fm) / (2.0 * eps);
  }
  return grad;
}

std::vector<double> finite_diff_grad(const ScalarFn& f, const Tensor& x, double eps) {
  std::vector<double> point(x.data().begin(), x.data().end());
  return finite_diff_grad(f, point, eps);
}

}  // namespace dermnet
