#include "raymap/tape.hpp"

#include <algorithm>
#include <cmath>

#include "raymap/rng.hpp"

namespace raymap {

Tape::Id Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<Id>(nodes_.size()) - 1;
}

Tape::Id Tape::constant(Array v) {
  Node n;
  n.op = Op::Constant;
  n.val = std::move(v);
  return push(std::move(n));
}

Tape::Id Tape::param(const std::string& name, Array v) {
  if (params_.count(name)) throw ValidationError("duplicate param '" + name + "'");
  Node n;
  n.op = Op::Param;
  n.val = std::move(v);
  n.needs_grad = true;
  const Id id = push(std::move(n));
  params_[name] = id;
  return id;
}

Tape::Id Tape::matmul(Id a, Id b) {
  const Array& A = node(a).val;
  const Array& B = node(b).val;
  Node n;
  n.op = Op::MatMul;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.val = raymap::matmul(A, B);
  return push(std::move(n));
}

Tape::Id Tape::add(Id a, Id b) {
  const Array& A = node(a).val;
  const Array& B = node(b).val;
  if (!A.same_shape(B)) throw ValidationError("add: shape mismatch");
  Node n;
  n.op = Op::Add;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.val = A;
  for (std::size_t i = 0; i < B.size(); ++i) n.val.data[i] += B.data[i];
  return push(std::move(n));
}

Tape::Id Tape::sub(Id a, Id b) {
  const Array& A = node(a).val;
  const Array& B = node(b).val;
  if (!A.same_shape(B)) throw ValidationError("sub: shape mismatch");
  Node n;
  n.op = Op::Sub;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.val = A;
  for (std::size_t i = 0; i < B.size(); ++i) n.val.data[i] -= B.data[i];
  return push(std::move(n));
}

Tape::Id Tape::mul(Id a, Id b) {
  const Array& A = node(a).val;
  const Array& B = node(b).val;
  if (!A.same_shape(B)) throw ValidationError("mul: shape mismatch");
  Node n;
  n.op = Op::Mul;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.val = A;
  for (std::size_t i = 0; i < B.size(); ++i) n.val.data[i] *= B.data[i];
  return push(std::move(n));
}

Tape::Id Tape::smul(Id scalar, Id a) {
  const Array& S = node(scalar).val;
  if (S.rows != 1 || S.cols != 1) throw ValidationError("smul: scalar must be (1,1)");
  Node n;
  n.op = Op::SMul;
  n.a = scalar;
  n.b = a;
  n.needs_grad = node(scalar).needs_grad || node(a).needs_grad;
  n.val = node(a).val;
  const double s = S.data[0];
  for (auto& x : n.val.data) x *= s;
  return push(std::move(n));
}

Tape::Id Tape::scale(Id a, double c) {
  Node n;
  n.op = Op::Scale;
  n.a = a;
  n.c0 = c;
  n.needs_grad = node(a).needs_grad;
  n.val = node(a).val;
  for (auto& x : n.val.data) x *= c;
  return push(std::move(n));
}

Tape::Id Tape::add_const(Id a, double c) {
  Node n;
  n.op = Op::AddConst;
  n.a = a;
  n.c0 = c;
  n.needs_grad = node(a).needs_grad;
  n.val = node(a).val;
  for (auto& x : n.val.data) x += c;
  return push(std::move(n));
}

Tape::Id Tape::hconcat(Id a, Id b) {
  const Array& A = node(a).val;
  const Array& B = node(b).val;
  if (A.rows != B.rows) throw ValidationError("hconcat: row counts differ");
  Node n;
  n.op = Op::HConcat;
  n.a = a;
  n.b = b;
  n.needs_grad = node(a).needs_grad || node(b).needs_grad;
  n.val = Array(A.rows, A.cols + B.cols);
  for (int r = 0; r < A.rows; ++r) {
    for (int c = 0; c < A.cols; ++c) n.val.at(r, c) = A.at(r, c);
    for (int c = 0; c < B.cols; ++c) n.val.at(r, A.cols + c) = B.at(r, c);
  }
  return push(std::move(n));
}

Tape::Id Tape::row(Id a, int r) {
  const Array& A = node(a).val;
  if (r < 0 || r >= A.rows) throw ValidationError("row: index out of range");
  Node n;
  n.op = Op::Row;
  n.a = a;
  n.i0 = r;
  n.needs_grad = node(a).needs_grad;
  n.val = Array(1, A.cols);
  for (int c = 0; c < A.cols; ++c) n.val.at(0, c) = A.at(r, c);
  return push(std::move(n));
}

Tape::Id Tape::elem(Id a, int r, int c) {
  const Array& A = node(a).val;
  if (r < 0 || r >= A.rows || c < 0 || c >= A.cols)
    throw ValidationError("elem: index out of range");
  Node n;
  n.op = Op::Elem;
  n.a = a;
  n.i0 = r;
  n.i1 = c;
  n.needs_grad = node(a).needs_grad;
  n.val = Array::full(1, 1, A.at(r, c));
  return push(std::move(n));
}

Tape::Id Tape::tanh_(Id a) {
  Node n;
  n.op = Op::Tanh;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.val = node(a).val;
  for (auto& x : n.val.data) x = std::tanh(x);
  return push(std::move(n));
}

Tape::Id Tape::leaky_relu(Id a, double slope) {
  Node n;
  n.op = Op::LeakyRelu;
  n.a = a;
  n.c0 = slope;
  n.needs_grad = node(a).needs_grad;
  n.val = node(a).val;
  for (auto& x : n.val.data) x = x > 0.0 ? x : slope * x;
  return push(std::move(n));
}

Tape::Id Tape::sigmoid_(Id a) {
  Node n;
  n.op = Op::Sigmoid;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.val = node(a).val;
  for (auto& x : n.val.data) x = 1.0 / (1.0 + std::exp(-x));
  return push(std::move(n));
}

Tape::Id Tape::softmax_row(Id a) {
  const Array& A = node(a).val;
  if (A.rows != 1) throw ValidationError("softmax_row: input must be (1, n)");
  Node n;
  n.op = Op::SoftmaxRow;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.val = A;
  double mx = n.val.data[0];
  for (double x : n.val.data) mx = std::max(mx, x);
  double den = 0.0;
  for (auto& x : n.val.data) {
    x = std::exp(x - mx);
    den += x;
  }
  for (auto& x : n.val.data) x /= den;
  return push(std::move(n));
}

Tape::Id Tape::sum(Id a) {
  Node n;
  n.op = Op::Sum;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.val = Array(1, 1);
  for (double x : node(a).val.data) n.val.data[0] += x;
  return push(std::move(n));
}

Tape::Id Tape::mean(Id a) {
  Node n;
  n.op = Op::Mean;
  n.a = a;
  n.needs_grad = node(a).needs_grad;
  n.val = Array(1, 1);
  for (double x : node(a).val.data) n.val.data[0] += x;
  n.val.data[0] /= static_cast<double>(node(a).val.size());
  return push(std::move(n));
}

Tape::Id Tape::huber(Id pred, Id target, double delta) {
  const Array& P = node(pred).val;
  const Array& T = node(target).val;
  if (!P.same_shape(T)) throw ValidationError("huber: shape mismatch");
  if (!(delta > 0.0)) throw ValidationError("huber: delta must be positive");
  Node n;
  n.op = Op::Huber;
  n.a = pred;
  n.b = target;
  n.c0 = delta;
  n.needs_grad = node(pred).needs_grad || node(target).needs_grad;
  n.val = P;
  for (std::size_t i = 0; i < P.size(); ++i) {
    const double r = P.data[i] - T.data[i];
    const double ar = std::abs(r);
    n.val.data[i] = ar <= delta ? 0.5 * r * r : delta * (ar - 0.5 * delta);
  }
  return push(std::move(n));
}

void Tape::accumulate(Id id, const Array& g) {
  Node& n = node(id);
  if (!n.needs_grad) return;
  if (!n.has_grad) {
    n.grad = Array(n.val.rows, n.val.cols);
    n.has_grad = true;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad.data[i] += g.data[i];
}

const Array& Tape::grad(Id id) const {
  if (!node(id).has_grad) throw StateError("gradient not computed for node");
  return node(id).grad;
}

void Tape::backward(Id root) {
  {
    const Node& r = node(root);
    if (r.val.rows != 1 || r.val.cols != 1)
      throw ValidationError("backward: root must be a (1,1) scalar");
    if (!r.needs_grad) return;
  }
  accumulate(root, Array::full(1, 1, 1.0));

  for (Id id = root; id >= 0; --id) {
    Node& n = node(id);
    if (!n.has_grad || !n.needs_grad) continue;
    const Array& g = n.grad;
    switch (n.op) {
      case Op::Constant:
      case Op::Param:
        break;
      case Op::MatMul: {
        const Array& A = node(n.a).val;
        const Array& B = node(n.b).val;
        if (node(n.a).needs_grad) {
          Array ga(A.rows, A.cols);
          for (int i = 0; i < A.rows; ++i)
            for (int k = 0; k < A.cols; ++k) {
              double acc = 0.0;
              for (int j = 0; j < B.cols; ++j) acc += g.at(i, j) * B.at(k, j);
              ga.at(i, k) = acc;
            }
          accumulate(n.a, ga);
        }
        if (node(n.b).needs_grad) {
          Array gb(B.rows, B.cols);
          for (int k = 0; k < B.rows; ++k)
            for (int j = 0; j < B.cols; ++j) {
              double acc = 0.0;
              for (int i = 0; i < A.rows; ++i) acc += A.at(i, k) * g.at(i, j);
              gb.at(k, j) = acc;
            }
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::Add:
        accumulate(n.a, g);
        accumulate(n.b, g);
        break;
      case Op::Sub: {
        accumulate(n.a, g);
        if (node(n.b).needs_grad) {
          Array gb = g;
          for (auto& x : gb.data) x = -x;
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::Mul: {
        if (node(n.a).needs_grad) {
          Array ga = g;
          const Array& B = node(n.b).val;
          for (std::size_t i = 0; i < ga.size(); ++i) ga.data[i] *= B.data[i];
          accumulate(n.a, ga);
        }
        if (node(n.b).needs_grad) {
          Array gb = g;
          const Array& A = node(n.a).val;
          for (std::size_t i = 0; i < gb.size(); ++i) gb.data[i] *= A.data[i];
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::SMul: {
        const double s = node(n.a).val.data[0];
        const Array& A = node(n.b).val;
        if (node(n.a).needs_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < g.size(); ++i) acc += g.data[i] * A.data[i];
          accumulate(n.a, Array::full(1, 1, acc));
        }
        if (node(n.b).needs_grad) {
          Array gb = g;
          for (auto& x : gb.data) x *= s;
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::Scale: {
        Array ga = g;
        for (auto& x : ga.data) x *= n.c0;
        accumulate(n.a, ga);
        break;
      }
      case Op::AddConst:
        accumulate(n.a, g);
        break;
      case Op::HConcat: {
        const Array& A = node(n.a).val;
        const Array& B = node(n.b).val;
        if (node(n.a).needs_grad) {
          Array ga(A.rows, A.cols);
          for (int r = 0; r < A.rows; ++r)
            for (int c = 0; c < A.cols; ++c) ga.at(r, c) = g.at(r, c);
          accumulate(n.a, ga);
        }
        if (node(n.b).needs_grad) {
          Array gb(B.rows, B.cols);
          for (int r = 0; r < B.rows; ++r)
            for (int c = 0; c < B.cols; ++c) gb.at(r, c) = g.at(r, A.cols + c);
          accumulate(n.b, gb);
        }
        break;
      }
      case Op::Row: {
        const Array& A = node(n.a).val;
        Array ga(A.rows, A.cols);
        for (int c = 0; c < A.cols; ++c) ga.at(n.i0, c) = g.at(0, c);
        accumulate(n.a, ga);
        break;
      }
      case Op::Elem: {
        const Array& A = node(n.a).val;
        Array ga(A.rows, A.cols);
        ga.at(n.i0, n.i1) = g.data[0];
        accumulate(n.a, ga);
        break;
      }
      case Op::Tanh: {
        Array ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double y = n.val.data[i];
          ga.data[i] *= 1.0 - y * y;
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::LeakyRelu: {
        Array ga = g;
        const Array& A = node(n.a).val;
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga.data[i] *= A.data[i] > 0.0 ? 1.0 : n.c0;
        accumulate(n.a, ga);
        break;
      }
      case Op::Sigmoid: {
        Array ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i) {
          const double y = n.val.data[i];
          ga.data[i] *= y * (1.0 - y);
        }
        accumulate(n.a, ga);
        break;
      }
      case Op::SoftmaxRow: {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g.data[i] * n.val.data[i];
        Array ga = g;
        for (std::size_t i = 0; i < ga.size(); ++i)
          ga.data[i] = n.val.data[i] * (g.data[i] - dot);
        accumulate(n.a, ga);
        break;
      }
      case Op::Sum: {
        const Array& A = node(n.a).val;
        accumulate(n.a, Array::full(A.rows, A.cols, g.data[0]));
        break;
      }
      case Op::Mean: {
        const Array& A = node(n.a).val;
        accumulate(n.a,
                   Array::full(A.rows, A.cols, g.data[0] / static_cast<double>(A.size())));
        break;
      }
      case Op::Huber: {
        const Array& P = node(n.a).val;
        const Array& T = node(n.b).val;
        Array gp = g;
        for (std::size_t i = 0; i < gp.size(); ++i) {
          const double r = P.data[i] - T.data[i];
          gp.data[i] *= std::clamp(r, -n.c0, n.c0);
        }
        if (node(n.a).needs_grad) accumulate(n.a, gp);
        if (node(n.b).needs_grad) {
          for (auto& x : gp.data) x = -x;
          accumulate(n.b, gp);
        }
        break;
      }
    }
  }
}

std::map<std::string, Array> Tape::param_grads() const {
  std::map<std::string, Array> out;
  for (const auto& [name, id] : params_) {
    const Node& n = node(id);
    out[name] = n.has_grad ? n.grad : Array(n.val.rows, n.val.cols);
  }
  return out;
}

Tape::Id Tape::param_id(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ValidationError("unknown param '" + name + "'");
  return it->second;
}

void Tape::clear() {
  nodes_.clear();
  params_.clear();
}

FiniteDiffReport finite_diff_check(
    const std::function<double(const std::map<std::string, Array>&)>& loss,
    const std::function<std::map<std::string, Array>(const std::map<std::string, Array>&)>&
        grads,
    const std::map<std::string, Array>& at, double h, int max_coords_per_param,
    std::uint64_t seed) {
  FiniteDiffReport report;
  const std::map<std::string, Array> g = grads(at);
  for (const auto& [name, theta] : at) {
    auto git = g.find(name);
    if (git == g.end()) throw ValidationError("finite_diff_check: missing grad for '" + name + "'");
    Rng rng(seed ^ fnv1a64(name));
    const int n = static_cast<int>(theta.size());
    std::vector<int> coords;
    if (n <= max_coords_per_param) {
      for (int i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < max_coords_per_param; ++i)
        coords.push_back(static_cast<int>(rng.next_below(static_cast<std::uint64_t>(n))));
    }
    for (int c : coords) {
      std::map<std::string, Array> up = at;
      std::map<std::string, Array> dn = at;
      up[name].data[static_cast<std::size_t>(c)] += h;
      dn[name].data[static_cast<std::size_t>(c)] -= h;
      const double num = (loss(up) - loss(dn)) / (2.0 * h);
      const double ana = git->second.data[static_cast<std::size_t>(c)];
      // Unit floor in the denominator keeps the metric meaningful where the
      // true derivative is near zero.
      const double rel = std::abs(num - ana) / std::max({1.0, std::abs(num), std::abs(ana)});
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name;
        report.worst_index = c;
      }
    }
  }
  return report;
}

}  // namespace raymap
