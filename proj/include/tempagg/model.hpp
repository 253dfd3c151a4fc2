#pragma once

// Temporal aggregation network.
//
//   snippet sets --input projection--> hidden width
//   for each recent scope (one TAB each):
//     for each spanning scale (one CB each):
//       S' = NLB_span(S, S)         spanning self-attention
//       R' = NLB_cross(R, S')       recent queries attend to spanning context
//       recent_repr = relu(proj_recent(max_rows R'))
//       span_repr   = relu(proj_span(max_rows S'))
//     fused  = relu(fuse([max_scales recent_repr, max_scales span_repr]))
//     logits = head(fused)
//   ensemble = mean over TABs of softmax(logits)
//
// All activations are batched: a snippet set of K vectors for B samples is a
// [B, K, width] tensor.

#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "tempagg/sampler.hpp"
#include "tempagg/tensor.hpp"

namespace tempagg {

struct ModelConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 512;  // NLB width
  std::size_t repr_dim = 512;    // CB / TAB output width
  std::size_t num_classes = 0;
  std::size_t num_recent = 0;       // number of TABs
  std::size_t recent_snippets = 0;  // K_R
  std::vector<std::size_t> spanning_scales;
  double dropout = 0.3;

  void validate() const;
  // Widths from the sampling config; input_dim/num_classes from the data.
  static ModelConfig for_sampling(const SamplingConfig& sampling, std::size_t input_dim,
                                  std::size_t num_classes);
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // [in, out]
  Tensor<T> bias;    // [out]

  static Linear init(std::size_t in, std::size_t out, Rng& rng);
  Tensor<T> operator()(const Tensor<T>& x) const { return add_bias(matmul(x, weight), bias); }
};

template <typename T>
struct NlbParams {
  Linear<T> theta, phi, g, out;
  static NlbParams init(std::size_t width, Rng& rng);
};

template <typename T>
struct CbParams {
  NlbParams<T> nlb_span, nlb_cross;
  Linear<T> proj_recent, proj_span;
  static CbParams init(const ModelConfig& cfg, Rng& rng);
};

template <typename T>
struct TabParams {
  std::vector<CbParams<T>> couplings;  // one per spanning scale
  Linear<T> fuse, head;
  static TabParams init(const ModelConfig& cfg, Rng& rng);
};

// Called with every attention matrix [B, q, k] the forward pass produces.
template <typename T>
using AttentionProbe = std::function<void(const Tensor<T>&)>;

template <typename T>
struct ForwardOptions {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout > 0
  AttentionProbe<T> probe;
};

template <typename T>
struct ModelBatch {
  std::vector<Tensor<T>> recent;    // per TAB: [B, K_R, input_dim]
  std::vector<Tensor<T>> spanning;  // per scale: [B, K, input_dim]
  std::size_t size() const { return recent.empty() ? 0 : recent.front().dim(0); }
};

template <typename T>
ModelBatch<T> make_batch(std::span<const SampledInput* const> inputs);

template <typename T>
struct ModelOutput {
  std::vector<Tensor<T>> tab_logits;  // per TAB: [B, C]
  Tensor<T> ensemble_probs;           // [B, C]
};

template <typename T>
Tensor<T> nlb_forward(const NlbParams<T>& p, const Tensor<T>& query, const Tensor<T>& context,
                      double dropout_p, const ForwardOptions<T>& opt);

// Returns (recent_repr, span_repr), each [B, repr_dim].
template <typename T>
std::pair<Tensor<T>, Tensor<T>> cb_forward(const CbParams<T>& p, const Tensor<T>& recent,
                                           const Tensor<T>& spanning, double dropout_p,
                                           const ForwardOptions<T>& opt);

// Returns (fused [B, repr_dim], logits [B, C]).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> tab_forward(const TabParams<T>& p, const Tensor<T>& recent,
                                            const std::vector<Tensor<T>>& spanning, double dropout_p,
                                            const ForwardOptions<T>& opt);

template <typename T>
class Model {
 public:
  Model() = default;
  static Model init(const ModelConfig& cfg, Rng& rng);

  const ModelConfig& config() const { return cfg_; }

  ModelOutput<T> forward(const ModelBatch<T>& batch, const ForwardOptions<T>& opt = {}) const;

  // Stable, unique names ("tab0.cb1.nlb_span.theta.weight", ...). The
  // returned tensors alias the model's parameters.
  std::vector<std::pair<std::string, Tensor<T>>> named_parameters() const;
  std::size_t parameter_count() const;
  void zero_grad();

  Linear<T> input_proj;
  std::vector<TabParams<T>> tabs;

 private:
  ModelConfig cfg_;
};

// Sum over TAB heads of cross_entropy.
template <typename T>
Tensor<T> ensemble_loss(const ModelOutput<T>& out, std::span<const int> labels);

}  // namespace tempagg
