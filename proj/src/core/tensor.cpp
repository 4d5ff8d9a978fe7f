#include "core/tensor.hpp"

#include <cmath>
#include <sstream>

namespace mvi::nn {

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << "]";
  return os.str();
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_arg(a.numel() == b.numel(), "max_abs_diff: size mismatch");
  double m = 0.0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace mvi::nn
