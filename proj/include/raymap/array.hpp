#pragma once

#include <vector>

#include "raymap/errors.hpp"

namespace raymap {

// Dense row-major matrix of doubles.  Vectors are (1, n) rows throughout
// the model code: activations left-multiply weight matrices shaped
// (inputs, outputs).
struct Array {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;

  Array() = default;
  Array(int r, int c) : rows(r), cols(c), data(static_cast<std::size_t>(r) * static_cast<std::size_t>(c), 0.0) {}

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols + c]; }
  std::size_t size() const { return data.size(); }
  bool same_shape(const Array& o) const { return rows == o.rows && cols == o.cols; }

  static Array full(int r, int c, double v) {
    Array a(r, c);
    for (auto& x : a.data) x = v;
    return a;
  }
  static Array row_vec(const std::vector<double>& v) {
    Array a(1, static_cast<int>(v.size()));
    a.data = v;
    return a;
  }
};

Array matmul(const Array& a, const Array& b);

}  // namespace raymap
