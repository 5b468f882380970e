#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "raymap/array.hpp"

namespace raymap {

// Append-only reverse-mode autodiff tape.  Every operation records a node
// whose parents have smaller ids, so one reverse sweep in id order
// propagates gradients.  Built from scratch on purpose: the op counter
// doubles as the complexity meter for encoder cost accounting.
class Tape {
 public:
  using Id = int;

  enum class Op : std::uint8_t {
    Constant, Param, MatMul, Add, Sub, Mul, SMul, Scale, AddConst, HConcat,
    Row, Elem, Tanh, LeakyRelu, Sigmoid, SoftmaxRow, Sum, Mean, Huber
  };

  Id constant(Array v);
  // Named differentiable leaf; names must be unique within one tape.
  Id param(const std::string& name, Array v);

  Id matmul(Id a, Id b);
  Id add(Id a, Id b);
  Id sub(Id a, Id b);
  Id mul(Id a, Id b);
  // Broadcast multiply by a (1,1) scalar node.
  Id smul(Id scalar, Id a);
  Id scale(Id a, double c);
  Id add_const(Id a, double c);
  // Column-wise concatenation of two arrays with equal row counts.
  Id hconcat(Id a, Id b);
  // Select row r of a matrix as a (1, cols) vector.
  Id row(Id a, int r);
  // Select one entry as a (1,1) scalar.
  Id elem(Id a, int r, int c);
  Id tanh_(Id a);
  Id leaky_relu(Id a, double slope);
  Id sigmoid_(Id a);
  // Softmax over the entries of a (1, n) vector, max-shifted.
  Id softmax_row(Id a);
  Id sum(Id a);
  Id mean(Id a);
  // Elementwise Huber penalty of (pred - target) with threshold delta.
  Id huber(Id pred, Id target, double delta);

  const Array& value(Id id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  // Reverse sweep from a (1,1) root.
  void backward(Id root);
  bool has_grad(Id id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }
  const Array& grad(Id id) const;

  // Gradients of every registered param, zero-filled when unreachable.
  std::map<std::string, Array> param_grads() const;
  Id param_id(const std::string& name) const;

  // Number of recorded primitive operations.
  std::size_t num_ops() const { return nodes_.size(); }
  void clear();

 private:
  struct Node {
    Op op;
    Id a = -1;
    Id b = -1;
    double c0 = 0.0;
    int i0 = 0;
    int i1 = 0;
    Array val;
    Array grad;
    bool has_grad = false;
    bool needs_grad = false;
  };

  Id push(Node n);
  void accumulate(Id id, const Array& g);
  Node& node(Id id) { return nodes_[static_cast<std::size_t>(id)]; }
  const Node& node(Id id) const { return nodes_[static_cast<std::size_t>(id)]; }

  std::vector<Node> nodes_;
  std::map<std::string, Id> params_;
};

// Relative-error finite difference check of d(loss)/d(params) at the given
// point.  `loss` must rebuild the computation from scratch on each call.
// Returns the maximum relative error over a seeded sample of coordinates.
struct FiniteDiffReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  int worst_index = -1;
};
FiniteDiffReport finite_diff_check(
    const std::function<double(const std::map<std::string, Array>&)>& loss,
    const std::function<std::map<std::string, Array>(const std::map<std::string, Array>&)>&
        grads,
    const std::map<std::string, Array>& at, double h = 1e-5,
    int max_coords_per_param = 24, std::uint64_t seed = 1);

}  // namespace raymap
