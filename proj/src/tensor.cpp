#include "tempagg/tensor.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "tempagg/error.hpp"

namespace tempagg {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapC = Eigen::Map<const RowMat<T>>;
template <typename T>
using MapM = Eigen::Map<RowMat<T>>;

void check_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
}

// Splits `shape` around `axis` into (outer, extent, inner).
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---- Tensor ----------------------------------------------------------------

template <typename T>
Tensor<T> Tensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::full(Shape shape, T value, bool requires_grad) {
  check_shape(shape);
  std::vector<T> data(shape_numel(shape), value);
  return from(std::move(shape), std::move(data), requires_grad);
}

template <typename T>
Tensor<T> Tensor<T>::from(Shape shape, std::vector<T> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw DimensionError("data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
  }
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

template <typename T>
const Shape& Tensor<T>::shape() const {
  return node_->shape;
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  }
  return node_->shape[axis];
}

template <typename T>
std::size_t Tensor<T>::numel() const {
  return node_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::data() const {
  return node_->data;
}

template <typename T>
std::span<T> Tensor<T>::mutable_data() {
  return node_->data;
}

template <typename T>
bool Tensor<T>::requires_grad() const {
  return node_->requires_grad;
}

template <typename T>
bool Tensor<T>::has_grad() const {
  return node_->grad.size() == node_->data.size();
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  return node_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  node_->grad.clear();
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw DimensionError("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

template <typename T>
T Tensor<T>::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw DimensionError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw DimensionError("index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

template <typename T>
Tensor<T> Tensor<T>::detach() const {
  return from(shape(), node_->data, false);
}

template <typename T>
Tensor<T> Tensor<T>::make_result(Shape shape, std::vector<T> data, std::vector<Tensor> parents,
                                 std::function<void(detail::Node<T>&)> backward_fn) {
  auto node = std::make_shared<detail::Node<T>>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = std::any_of(parents.begin(), parents.end(),
                                    [](const Tensor& p) { return p.requires_grad(); });
  if (node->requires_grad) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_);
    node->backward_fn = std::move(backward_fn);
  }
  return Tensor(std::move(node));
}

template <typename T>
void Tensor<T>::backward() const {
  if (numel() != 1) {
    throw DimensionError("backward() needs a scalar loss, got shape " + shape_str(shape()));
  }
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (parents first).
  using N = detail::Node<T>;
  std::vector<N*> order;
  std::unordered_set<N*> visited;
  std::vector<std::pair<N*, std::size_t>> stack{{node_.get(), 0}};
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      N* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  // Interior gradients describe only this pass; leaf gradients accumulate.
  for (N* n : order) {
    if (n->is_leaf()) {
      n->ensure_grad();
    } else {
      n->grad.assign(n->data.size(), T(0));
    }
  }
  node_->grad[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if (!(*it)->is_leaf()) (*it)->backward_fn(**it);
  }
}

// ---- operations ------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t k = b.shape()[0], n = b.shape()[1];
  const std::size_t m = a.numel() / k;
  std::vector<T> out(m * n);
  MapM<T>(out.data(), m, n).noalias() = MapC<T>(a.data().data(), m, k) * MapC<T>(b.data().data(), k, n);
  Shape shape = a.shape();
  shape.back() = n;
  return Tensor<T>::make_result(std::move(shape), std::move(out), {a, b}, [m, k, n](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    MapC<T> dc(self.grad.data(), m, n);
    if (pa.requires_grad) {
      MapM<T>(pa.ensure_grad().data(), m, k).noalias() += dc * MapC<T>(pb.data.data(), k, n).transpose();
    }
    if (pb.requires_grad) {
      MapM<T>(pb.ensure_grad().data(), k, n).noalias() += MapC<T>(pa.data.data(), m, k).transpose() * dc;
    }
  });
}

template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.shape()[0] != b.shape()[0] || a.shape()[2] != b.shape()[1]) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  std::vector<T> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MapM<T>(out.data() + i * m * n, m, n).noalias() =
        MapC<T>(a.data().data() + i * m * k, m, k) * MapC<T>(b.data().data() + i * k * n, k, n);
  }
  return Tensor<T>::make_result({batch, m, n}, std::move(out), {a, b},
                                [batch, m, k, n](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (std::size_t i = 0; i < batch; ++i) {
      MapC<T> dc(self.grad.data() + i * m * n, m, n);
      if (pa.requires_grad) {
        MapM<T>(pa.ensure_grad().data() + i * m * k, m, k).noalias() +=
            dc * MapC<T>(pb.data.data() + i * k * n, k, n).transpose();
      }
      if (pb.requires_grad) {
        MapM<T>(pb.ensure_grad().data() + i * k * n, k, n).noalias() +=
            MapC<T>(pa.data.data() + i * m * k, m, k).transpose() * dc;
      }
    }
  });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  if (x.rank() != 2 && x.rank() != 3) {
    throw DimensionError("transpose expects rank 2 or 3, got " + shape_str(x.shape()));
  }
  const std::size_t batch = x.rank() == 3 ? x.shape()[0] : 1;
  const std::size_t r = x.shape()[x.rank() - 2], c = x.shape()[x.rank() - 1];
  std::vector<T> out(x.numel());
  for (std::size_t i = 0; i < batch; ++i) {
    MapM<T>(out.data() + i * r * c, c, r) = MapC<T>(x.data().data() + i * r * c, r, c).transpose();
  }
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [batch, r, c](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < batch; ++i) {
      MapM<T>(g.data() + i * r * c, r, c) += MapC<T>(self.grad.data() + i * r * c, c, r).transpose();
    }
  });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::plus<>());
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.rank() != 1 || x.shape().back() != bias.shape()[0]) {
    throw DimensionError("add_bias: shape mismatch " + shape_str(x.shape()) + " vs " +
                         shape_str(bias.shape()));
  }
  const std::size_t n = bias.numel();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.data().begin(), x.data().end());
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] += bd[j];
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x, bias}, [rows, n](detail::Node<T>& self) {
    auto& px = *self.parents[0];
    auto& pb = *self.parents[1];
    if (px.requires_grad) {
      auto& g = px.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < n; ++j) g[j] += self.grad[r * n + j];
      }
    }
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<T> out(a.numel());
  std::transform(a.data().begin(), a.data().end(), b.data().begin(), out.begin(), std::multiplies<>());
  return Tensor<T>::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.data[i];
    }
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c) {
  std::vector<T> out(x.numel());
  std::transform(x.data().begin(), x.data().end(), out.begin(), [c](T v) { return v * c; });
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [c](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * c;
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  std::transform(x.data().begin(), x.data().end(), out.begin(), [](T v) { return v > T(0) ? v : T(0); });
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [](detail::Node<T>& self) {
    auto& p = *self.parents[0];
    auto& g = p.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (p.data[i] > T(0)) g[i] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  check_shape(shape);
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<T> out(x.data().begin(), x.data().end());
  return Tensor<T>::make_result(std::move(shape), std::move(out), {x}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat of an empty list");
  const Shape& ref = parts.front().shape();
  if (axis >= ref.size()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(ref));
  }
  Shape shape = ref;
  shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
    if (!ok) {
      throw DimensionError("concat: shape mismatch " + shape_str(ref) + " vs " + shape_str(s) +
                           " along axis " + std::to_string(axis));
    }
    extents.push_back(s[axis]);
    shape[axis] += s[axis];
  }
  const AxisSplit split = split_at(shape, axis);
  std::vector<T> out(shape_numel(shape));
  std::size_t offset = 0;
  for (std::size_t pi = 0; pi < parts.size(); ++pi) {
    const std::size_t block = extents[pi] * split.inner;
    auto src = parts[pi].data();
    for (std::size_t o = 0; o < split.outer; ++o) {
      std::copy_n(src.begin() + o * block, block, out.begin() + o * split.extent * split.inner + offset);
    }
    offset += block;
  }
  return Tensor<T>::make_result(std::move(shape), std::move(out), parts,
                                [split, extents](detail::Node<T>& self) {
    std::size_t offset = 0;
    for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
      const std::size_t block = extents[pi] * split.inner;
      auto& p = *self.parents[pi];
      if (p.requires_grad) {
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < split.outer; ++o) {
          const T* src = self.grad.data() + o * split.extent * split.inner + offset;
          T* dst = g.data() + o * block;
          for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
        }
      }
      offset += block;
    }
  });
}

template <typename T>
Tensor<T> max_over_axis(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("max_over_axis: axis " + std::to_string(axis) + " out of range for " +
                         shape_str(x.shape()));
  }
  const AxisSplit s = split_at(x.shape(), axis);
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (shape.empty()) shape.push_back(1);
  std::vector<T> out(s.outer * s.inner);
  std::vector<std::size_t> argmax(out.size());
  auto xd = x.data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      std::size_t best = o * s.extent * s.inner + i;
      for (std::size_t e = 1; e < s.extent; ++e) {
        const std::size_t idx = (o * s.extent + e) * s.inner + i;
        if (xd[idx] > xd[best]) best = idx;  // strict: first index wins ties
      }
      out[o * s.inner + i] = xd[best];
      argmax[o * s.inner + i] = best;
    }
  }
  return Tensor<T>::make_result(std::move(shape), std::move(out), {x},
                                [argmax = std::move(argmax)](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += self.grad[i];
  });
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto xd = x.data();
  std::vector<T> out(x.numel());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = xd.data() + r * n;
    T* y = out.data() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (!std::isfinite(in[j])) throw NumericError("softmax_rows: non-finite input in row " + std::to_string(r));
      mx = std::max(mx, in[j]);
    }
    T total = 0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(in[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [rows, n](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t r = 0; r < rows; ++r) {
      const T* y = self.data.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += dy[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (dy[j] - dot);
    }
  });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ValueError("dropout probability must lie in [0, 1), got " + std::to_string(p));
  }
  if (!training || p == 0.0) return x;
  std::bernoulli_distribution keep(1.0 - p);
  const T survivor = T(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = keep(rng) ? survivor : T(0);
  std::vector<T> out(x.numel());
  std::transform(x.data().begin(), x.data().end(), mask.begin(), out.begin(), std::multiplies<>());
  return Tensor<T>::make_result(x.shape(), std::move(out), {x}, [mask = std::move(mask)](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
  });
}

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.shape()[0] != labels.size()) {
    throw DimensionError("cross_entropy: logits " + shape_str(logits.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
  }
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= classes) {
      throw ValueError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(classes) + ")");
    }
  }
  auto ld = logits.data();
  std::vector<T> probs(logits.numel());
  T loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const T* row = ld.data() + b * classes;
    const T mx = *std::max_element(row, row + classes);
    T total = 0;
    for (std::size_t c = 0; c < classes; ++c) total += std::exp(row[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] = std::exp(row[c] - lse);
    loss += lse - row[labels[b]];
  }
  loss /= T(batch);
  std::vector<int> targets(labels.begin(), labels.end());
  return Tensor<T>::make_result({1}, {loss}, {logits},
                                [batch, classes, probs = std::move(probs),
                                 targets = std::move(targets)](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    const T coef = self.grad[0] / T(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t c = 0; c < classes; ++c) {
        const T onehot = static_cast<std::size_t>(targets[b]) == c ? T(1) : T(0);
        g[b * classes + c] += coef * (probs[b * classes + c] - onehot);
      }
    }
  });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T total = std::accumulate(x.data().begin(), x.data().end(), T(0));
  return Tensor<T>::make_result({1}, {total}, {x}, [](detail::Node<T>& self) {
    auto& g = self.parents[0]->ensure_grad();
    for (auto& v : g) v += self.grad[0];
  });
}

#define TEMPAGG_INSTANTIATE(T)                                                      \
  template class Tensor<T>;                                                         \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                    \
  template Tensor<T> bmm(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> transpose(const Tensor<T>&);                                   \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                  \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> scale(const Tensor<T>&, T);                                    \
  template Tensor<T> relu(const Tensor<T>&);                                        \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                              \
  template Tensor<T> concat(const std::vector<Tensor<T>>&, std::size_t);            \
  template Tensor<T> max_over_axis(const Tensor<T>&, std::size_t);                  \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                \
  template Tensor<T> dropout(const Tensor<T>&, double, bool, Rng&);                 \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const int>);         \
  template Tensor<T> sum(const Tensor<T>&);

TEMPAGG_INSTANTIATE(float)
TEMPAGG_INSTANTIATE(double)

#undef TEMPAGG_INSTANTIATE

}  // namespace tempagg
