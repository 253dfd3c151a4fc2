#pragma once

// Minimal dense tensor with reverse-mode differentiation.
//
// A Tensor is a shared handle onto a graph node. Operations on tensors that
// require gradients record their parents and a backward rule; backward()
// walks the recorded graph once in reverse topological order. Leaf gradients
// accumulate across backward() calls until zero_grad().
//
// Both float (training) and double (gradient checking) are instantiated.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace tempagg {

using Shape = std::vector<std::size_t>;
using Rng = std::mt19937_64;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

namespace detail {

template <typename T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this node's grad and accumulates into the parents' grads.
  std::function<void(Node&)> backward_fn;

  bool is_leaf() const { return !backward_fn; }
  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

}  // namespace detail

template <typename T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, T value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false);

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const T> data() const;
  // Parameters are updated in place by optimizers and perturbed by
  // finite-difference checks; nothing else should write through this.
  std::span<T> mutable_data();

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const T> grad() const;
  void zero_grad();

  T item() const;
  T at(std::initializer_list<std::size_t> index) const;

  // Requires a scalar (single-element) tensor.
  void backward() const;

  // Same data, no history, no gradient.
  Tensor detach() const;

  // Internal: build an op output from parents and a backward rule.
  static Tensor make_result(Shape shape, std::vector<T> data,
                            std::vector<Tensor> parents,
                            std::function<void(detail::Node<T>&)> backward_fn);
  const NodePtr& node() const { return node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}
  NodePtr node_;
};

// ---- operations ------------------------------------------------------------

// a: [..., k] (leading axes flattened to rows), b: [k, n] -> [..., n].
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// Batched product: a [B, m, k], b [B, k, n] -> [B, m, n].
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b);

// Swap the last two axes of a rank-2 or rank-3 tensor.
template <typename T>
Tensor<T> transpose(const Tensor<T>& x);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

// x [..., n] + bias [n] broadcast over leading axes.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T c);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// Reduces `axis` by max. Gradient goes to the first maximal index.
template <typename T>
Tensor<T> max_over_axis(const Tensor<T>& x, std::size_t axis);

// Softmax along the last axis, stabilized by per-row max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng);

// Mean over the batch of -log softmax(logits)[label]; logits [B, C].
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

template <typename T>
Tensor<T> sum(const Tensor<T>& x);

}  // namespace tempagg
