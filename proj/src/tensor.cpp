#include "nast/tensor.hpp"

#include <sstream>

namespace nast {

Index shape_numel(std::span<const Index> dims) {
  Index n = 1;
  for (Index d : dims) {
    check_arg(d >= 0, "shape extent must be non-negative");
    n *= d;
  }
  return n;
}

std::string shape_to_string(std::span<const Index> dims) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << ", ";
    os << dims[i];
  }
  os << "]";
  return os.str();
}

Array::Array(std::vector<Index> s, std::vector<double> data) : shape(std::move(s)), v(std::move(data)) {
  check_arg(shape_numel(shape) == static_cast<Index>(v.size()),
            "element count does not match shape " + shape_to_string(shape));
}

Array Array::zeros(std::vector<Index> s) {
  const Index n = shape_numel(s);
  return Array(std::move(s), std::vector<double>(static_cast<std::size_t>(n), 0.0));
}

Array Array::full(std::vector<Index> s, double x) {
  const Index n = shape_numel(s);
  return Array(std::move(s), std::vector<double>(static_cast<std::size_t>(n), x));
}

Index Array::rows() const {
  if (rank() != 2) throw ContractViolation("rows(): array is not rank-2");
  return shape[0];
}

Index Array::cols() const {
  if (rank() != 2) throw ContractViolation("cols(): array is not rank-2");
  return shape[1];
}

bool Array::all_finite() const {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

double Array::scalar_value() const {
  check_arg(v.size() == 1, "scalar_value(): array has " + std::to_string(v.size()) + " elements");
  return v[0];
}

Tensor::Tensor(std::vector<Index> s, std::vector<float> data) : shape(std::move(s)), v(std::move(data)) {
  check_arg(shape_numel(shape) == static_cast<Index>(v.size()),
            "element count does not match shape " + shape_to_string(shape));
}

Tensor Tensor::zeros(std::vector<Index> s) {
  const Index n = shape_numel(s);
  return Tensor(std::move(s), std::vector<float>(static_cast<std::size_t>(n), 0.0f));
}

bool Tensor::all_finite() const {
  for (float x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

Array widen(const Tensor& t) {
  Array a;
  a.shape = t.shape;
  a.v.assign(t.v.begin(), t.v.end());
  return a;
}

Tensor narrow(const Array& a) {
  Tensor t;
  t.shape = a.shape;
  t.v.resize(a.v.size());
  for (std::size_t i = 0; i < a.v.size(); ++i) t.v[i] = static_cast<float>(a.v[i]);
  return t;
}

}  // namespace nast
