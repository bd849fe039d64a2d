#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "nast/common.hpp"

namespace nast {

Index shape_numel(std::span<const Index> dims);
std::string shape_to_string(std::span<const Index> dims);

// Dense row-major 64-bit buffer; all runtime compute happens in these.
struct Array {
  std::vector<Index> shape;
  std::vector<double> v;

  Array() = default;
  Array(std::vector<Index> s, std::vector<double> data);

  static Array zeros(std::vector<Index> s);
  static Array full(std::vector<Index> s, double x);
  static Array scalar(double x) { return Array({}, {x}); }

  Index numel() const { return static_cast<Index>(v.size()); }
  Index rank() const { return static_cast<Index>(shape.size()); }
  Index rows() const;
  Index cols() const;

  // Unchecked rank-2 access; hot paths rely on this staying branch-free.
  double& at(Index r, Index c) { return v[static_cast<std::size_t>(r * shape[1] + c)]; }
  double at(Index r, Index c) const { return v[static_cast<std::size_t>(r * shape[1] + c)]; }
  double& operator[](Index i) { return v[static_cast<std::size_t>(i)]; }
  double operator[](Index i) const { return v[static_cast<std::size_t>(i)]; }

  bool same_shape(const Array& o) const { return shape == o.shape; }
  bool all_finite() const;
  bool is_scalar() const { return v.size() == 1 && shape.empty(); }
  double scalar_value() const;
};

// Dense row-major 32-bit store; parameter masters and checkpoint payloads.
struct Tensor {
  std::vector<Index> shape;
  std::vector<float> v;

  Tensor() = default;
  Tensor(std::vector<Index> s, std::vector<float> data);

  static Tensor zeros(std::vector<Index> s);

  Index numel() const { return static_cast<Index>(v.size()); }
  bool all_finite() const;
};

Array widen(const Tensor& t);
Tensor narrow(const Array& a);

}  // namespace nast
