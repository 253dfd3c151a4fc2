#include "tempagg/model.hpp"

#include <cmath>

#include "tempagg/error.hpp"

namespace tempagg {

void ModelConfig::validate() const {
  if (input_dim == 0 || hidden_dim == 0 || repr_dim == 0) throw ConfigError("model widths must be positive");
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (num_recent == 0) throw ConfigError("model needs at least one recent scope (TAB)");
  if (recent_snippets == 0) throw ConfigError("recent_snippets must be >= 1");
  if (spanning_scales.empty()) throw ConfigError("model needs at least one spanning scale");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
}

ModelConfig ModelConfig::for_sampling(const SamplingConfig& sampling, std::size_t input_dim,
                                      std::size_t num_classes) {
  ModelConfig c;
  c.input_dim = input_dim;
  c.num_classes = num_classes;
  c.num_recent = sampling.num_recent_scopes();
  c.recent_snippets = sampling.recent_snippets;
  c.spanning_scales = sampling.spanning_scales;
  return c;
}

// ---- parameter init ---------------------------------------------------------

template <typename T>
Linear<T> Linear<T>::init(std::size_t in, std::size_t out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> w(in * out), b(out);
  for (auto& v : w) v = static_cast<T>(dist(rng));
  for (auto& v : b) v = static_cast<T>(dist(rng));
  return {Tensor<T>::from({in, out}, std::move(w), true), Tensor<T>::from({out}, std::move(b), true)};
}

template <typename T>
NlbParams<T> NlbParams<T>::init(std::size_t width, Rng& rng) {
  NlbParams p;
  p.theta = Linear<T>::init(width, width, rng);
  p.phi = Linear<T>::init(width, width, rng);
  p.g = Linear<T>::init(width, width, rng);
  p.out = Linear<T>::init(width, width, rng);
  return p;
}

template <typename T>
CbParams<T> CbParams<T>::init(const ModelConfig& cfg, Rng& rng) {
  CbParams p;
  p.nlb_span = NlbParams<T>::init(cfg.hidden_dim, rng);
  p.nlb_cross = NlbParams<T>::init(cfg.hidden_dim, rng);
  p.proj_recent = Linear<T>::init(cfg.hidden_dim, cfg.repr_dim, rng);
  p.proj_span = Linear<T>::init(cfg.hidden_dim, cfg.repr_dim, rng);
  return p;
}

template <typename T>
TabParams<T> TabParams<T>::init(const ModelConfig& cfg, Rng& rng) {
  TabParams p;
  for (std::size_t i = 0; i < cfg.spanning_scales.size(); ++i) p.couplings.push_back(CbParams<T>::init(cfg, rng));
  p.fuse = Linear<T>::init(2 * cfg.repr_dim, cfg.repr_dim, rng);
  p.head = Linear<T>::init(cfg.repr_dim, cfg.num_classes, rng);
  return p;
}

template <typename T>
Model<T> Model<T>::init(const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  Model m;
  m.cfg_ = cfg;
  m.input_proj = Linear<T>::init(cfg.input_dim, cfg.hidden_dim, rng);
  for (std::size_t i = 0; i < cfg.num_recent; ++i) m.tabs.push_back(TabParams<T>::init(cfg, rng));
  return m;
}

// ---- batching -----------------------------------------------------------------

namespace {

template <typename T>
Tensor<T> stack_sets(std::span<const SampledInput* const> inputs, bool recent, std::size_t index) {
  const SnippetSet& ref = recent ? inputs[0]->recent[index] : inputs[0]->spanning[index];
  const std::size_t count = ref.count(), dim = ref.dim;
  std::vector<T> data;
  data.reserve(inputs.size() * count * dim);
  for (const SampledInput* in : inputs) {
    const SnippetSet& s = recent ? in->recent.at(index) : in->spanning.at(index);
    if (s.count() != count || s.dim != dim) {
      throw DimensionError("make_batch: snippet sets disagree in shape within one batch");
    }
    data.insert(data.end(), s.vectors.begin(), s.vectors.end());
  }
  return Tensor<T>::from({inputs.size(), count, dim}, std::move(data));
}

}  // namespace

template <typename T>
ModelBatch<T> make_batch(std::span<const SampledInput* const> inputs) {
  if (inputs.empty()) throw ValueError("make_batch: empty batch");
  ModelBatch<T> batch;
  for (const SampledInput* in : inputs) {
    if (in->recent.size() != inputs[0]->recent.size() || in->spanning.size() != inputs[0]->spanning.size()) {
      throw DimensionError("make_batch: samples disagree in recent/spanning set counts");
    }
  }
  for (std::size_t i = 0; i < inputs[0]->recent.size(); ++i) batch.recent.push_back(stack_sets<T>(inputs, true, i));
  for (std::size_t i = 0; i < inputs[0]->spanning.size(); ++i) {
    batch.spanning.push_back(stack_sets<T>(inputs, false, i));
  }
  return batch;
}

// ---- forward ------------------------------------------------------------------

template <typename T>
Tensor<T> nlb_forward(const NlbParams<T>& p, const Tensor<T>& query, const Tensor<T>& context,
                      double dropout_p, const ForwardOptions<T>& opt) {
  if (query.rank() != 3 || context.rank() != 3 || query.dim(0) != context.dim(0) ||
      query.dim(2) != context.dim(2) || query.dim(2) != p.theta.weight.dim(0)) {
    throw DimensionError("nlb: query " + shape_str(query.shape()) + " and context " +
                         shape_str(context.shape()) + " do not match width " +
                         std::to_string(p.theta.weight.dim(0)));
  }
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(query.dim(2)));
  auto scores = scale(bmm(p.theta(query), transpose(p.phi(context))), inv_sqrt_d);
  auto attention = softmax_rows(scores);
  if (opt.probe) opt.probe(attention);
  auto update = p.out(bmm(attention, p.g(context)));
  if (opt.training && dropout_p > 0.0) {
    if (!opt.rng) throw ValueError("training forward with dropout needs an rng");
    update = dropout(update, dropout_p, true, *opt.rng);
  }
  return add(query, update);
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> cb_forward(const CbParams<T>& p, const Tensor<T>& recent,
                                           const Tensor<T>& spanning, double dropout_p,
                                           const ForwardOptions<T>& opt) {
  auto span_ctx = nlb_forward(p.nlb_span, spanning, spanning, dropout_p, opt);
  auto recent_ctx = nlb_forward(p.nlb_cross, recent, span_ctx, dropout_p, opt);
  auto recent_repr = relu(p.proj_recent(max_over_axis(recent_ctx, 1)));
  auto span_repr = relu(p.proj_span(max_over_axis(span_ctx, 1)));
  return {recent_repr, span_repr};
}

namespace {

// Coordinatewise max over a list of [B, n] tensors.
template <typename T>
Tensor<T> max_of(const std::vector<Tensor<T>>& parts) {
  if (parts.size() == 1) return parts.front();
  std::vector<Tensor<T>> rows;
  rows.reserve(parts.size());
  for (const auto& p : parts) rows.push_back(reshape(p, {p.dim(0), 1, p.dim(1)}));
  return max_over_axis(concat(rows, 1), 1);
}

}  // namespace

template <typename T>
std::pair<Tensor<T>, Tensor<T>> tab_forward(const TabParams<T>& p, const Tensor<T>& recent,
                                            const std::vector<Tensor<T>>& spanning, double dropout_p,
                                            const ForwardOptions<T>& opt) {
  if (spanning.size() != p.couplings.size()) {
    throw DimensionError("tab: " + std::to_string(spanning.size()) + " spanning sets for " +
                         std::to_string(p.couplings.size()) + " coupling blocks");
  }
  std::vector<Tensor<T>> recent_reprs, span_reprs;
  for (std::size_t s = 0; s < spanning.size(); ++s) {
    auto [r, sp] = cb_forward(p.couplings[s], recent, spanning[s], dropout_p, opt);
    recent_reprs.push_back(std::move(r));
    span_reprs.push_back(std::move(sp));
  }
  auto fused = relu(p.fuse(concat<T>({max_of(recent_reprs), max_of(span_reprs)}, 1)));
  auto logits = p.head(fused);
  return {fused, logits};
}

template <typename T>
ModelOutput<T> Model<T>::forward(const ModelBatch<T>& batch, const ForwardOptions<T>& opt) const {
  if (batch.recent.size() != tabs.size()) {
    throw DimensionError("model: " + std::to_string(batch.recent.size()) + " recent sets for " +
                         std::to_string(tabs.size()) + " TABs");
  }
  if (batch.spanning.size() != cfg_.spanning_scales.size()) {
    throw DimensionError("model: " + std::to_string(batch.spanning.size()) + " spanning sets for " +
                         std::to_string(cfg_.spanning_scales.size()) + " scales");
  }
  auto project = [this](const Tensor<T>& x) { return relu(input_proj(x)); };
  std::vector<Tensor<T>> spanning;
  for (const auto& s : batch.spanning) spanning.push_back(project(s));

  ModelOutput<T> out;
  std::vector<Tensor<T>> probs;
  for (std::size_t i = 0; i < tabs.size(); ++i) {
    auto logits = tab_forward(tabs[i], project(batch.recent[i]), spanning, cfg_.dropout, opt).second;
    probs.push_back(softmax_rows(logits));
    out.tab_logits.push_back(std::move(logits));
  }
  Tensor<T> total = probs.front();
  for (std::size_t i = 1; i < probs.size(); ++i) total = add(total, probs[i]);
  out.ensemble_probs = probs.size() == 1 ? total : scale(total, T(1) / static_cast<T>(probs.size()));
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> Model<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto lin = [&out](const std::string& prefix, const Linear<T>& l) {
    out.emplace_back(prefix + ".weight", l.weight);
    out.emplace_back(prefix + ".bias", l.bias);
  };
  auto nlb = [&lin](const std::string& prefix, const NlbParams<T>& n) {
    lin(prefix + ".theta", n.theta);
    lin(prefix + ".phi", n.phi);
    lin(prefix + ".g", n.g);
    lin(prefix + ".out", n.out);
  };
  lin("input_proj", input_proj);
  for (std::size_t t = 0; t < tabs.size(); ++t) {
    const std::string tab = "tab" + std::to_string(t);
    for (std::size_t c = 0; c < tabs[t].couplings.size(); ++c) {
      const std::string cb = tab + ".cb" + std::to_string(c);
      nlb(cb + ".nlb_span", tabs[t].couplings[c].nlb_span);
      nlb(cb + ".nlb_cross", tabs[t].couplings[c].nlb_cross);
      lin(cb + ".proj_recent", tabs[t].couplings[c].proj_recent);
      lin(cb + ".proj_span", tabs[t].couplings[c].proj_span);
    }
    lin(tab + ".fuse", tabs[t].fuse);
    lin(tab + ".head", tabs[t].head);
  }
  return out;
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& [name, t] : named_parameters()) t.zero_grad();
}

template <typename T>
Tensor<T> ensemble_loss(const ModelOutput<T>& out, std::span<const int> labels) {
  Tensor<T> loss = cross_entropy(out.tab_logits.front(), labels);
  for (std::size_t i = 1; i < out.tab_logits.size(); ++i) loss = add(loss, cross_entropy(out.tab_logits[i], labels));
  return loss;
}

#define TEMPAGG_INSTANTIATE(T)                                                                          \
  template struct Linear<T>;                                                                            \
  template struct NlbParams<T>;                                                                         \
  template struct CbParams<T>;                                                                          \
  template struct TabParams<T>;                                                                         \
  template class Model<T>;                                                                              \
  template ModelBatch<T> make_batch<T>(std::span<const SampledInput* const>);                           \
  template Tensor<T> nlb_forward(const NlbParams<T>&, const Tensor<T>&, const Tensor<T>&, double,       \
                                 const ForwardOptions<T>&);                                             \
  template std::pair<Tensor<T>, Tensor<T>> cb_forward(const CbParams<T>&, const Tensor<T>&,             \
                                                      const Tensor<T>&, double, const ForwardOptions<T>&); \
  template std::pair<Tensor<T>, Tensor<T>> tab_forward(const TabParams<T>&, const Tensor<T>&,           \
                                                       const std::vector<Tensor<T>>&, double,           \
                                                       const ForwardOptions<T>&);                       \
  template Tensor<T> ensemble_loss(const ModelOutput<T>&, std::span<const int>);

TEMPAGG_INSTANTIATE(float)
TEMPAGG_INSTANTIATE(double)

#undef TEMPAGG_INSTANTIATE

}  // namespace tempagg
