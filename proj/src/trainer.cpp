#include "tempagg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "tempagg/error.hpp"

namespace tempagg {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
  if (epochs == 0) throw ConfigError("epochs must be >= 1");
  if (decay_every == 0) throw ConfigError("decay_every must be positive");
  if (!(decay_divisor > 0.0)) throw ConfigError("decay_divisor must be positive");
}

TrainConfig TrainConfig::for_task(Task task) {
  TrainConfig c;
  c.epochs = task == Task::anticipation ? 15 : 25;
  return c;
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  // Integer powers of the divisor are exact, so lr0 / 10^n rounds once.
  double divisor = 1.0;
  for (std::size_t n = epoch / cfg.decay_every; n > 0; --n) divisor *= cfg.decay_divisor;
  return cfg.lr0 / divisor;
}

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, double lr) {
  if (state.m.empty() && state.step == 0) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam: optimizer state tracks " + std::to_string(state.m.size()) + " tensors, got " +
                         std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.m[i].size() != params[i].numel() || state.v[i].size() != params[i].numel()) {
      throw DimensionError("adam: state for parameter " + std::to_string(i) + " does not match shape " +
                           shape_str(params[i].shape()));
    }
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
  const T eps = static_cast<T>(state.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i].mutable_data();
    auto g = params[i].grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool has_grad = params[i].has_grad();
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T gj = has_grad ? g[j] : T(0);
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      w[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
    }
  }
}

std::string epoch_record(const EpochStats& s) {
  nlohmann::ordered_json j;
  j["epoch"] = s.epoch;
  j["lr"] = s.lr;
  j["loss"] = s.loss;
  j["train_acc"] = s.accuracy;
  return j.dump();
}

namespace {

std::size_t argmax_row(std::span<const double> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(Model<T>& model, TrainConfig cfg) : model_(model), cfg_(cfg), rng_(cfg.seed) {
  cfg_.validate();
  for (auto& [name, t] : model_.named_parameters()) params_.push_back(t);
}

template <typename T>
EpochStats Trainer<T>::train_epoch(std::span<const Sample> data) {
  if (data.empty()) throw ValueError("train_epoch: empty dataset");
  EpochStats stats;
  stats.epoch = epoch_;
  stats.lr = lr_at(epoch_, cfg_);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng_);

  ForwardOptions<T> opt;
  opt.training = true;
  opt.rng = &rng_;
  double loss_total = 0.0;
  std::size_t correct = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += cfg_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + cfg_.batch_size);
    std::vector<const SampledInput*> inputs;
    std::vector<int> labels;
    for (std::size_t i = begin; i < end; ++i) {
      inputs.push_back(&data[order[i]].input);
      labels.push_back(data[order[i]].label);
    }
    auto batch = make_batch<T>(inputs);
    auto out = model_.forward(batch, opt);
    auto loss = ensemble_loss(out, labels);
    const double value = static_cast<double>(loss.item());
    if (!std::isfinite(value)) {
      std::string ids;
      for (std::size_t i = begin; i < end; ++i) ids += (ids.empty() ? "" : ",") + data[order[i]].segment_id;
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch_) + ", batch " +
                         std::to_string(stats.batches) + " (segments " + ids + ")");
    }
    model_.zero_grad();
    loss.backward();
    adam_step<T>(params_, adam_, stats.lr);

    loss_total += value * static_cast<double>(labels.size());
    const std::size_t classes = out.ensemble_probs.dim(1);
    auto probs = out.ensemble_probs.data();
    for (std::size_t b = 0; b < labels.size(); ++b) {
      std::vector<double> row(probs.begin() + b * classes, probs.begin() + (b + 1) * classes);
      if (argmax_row(row) == static_cast<std::size_t>(labels[b])) ++correct;
    }
    ++stats.batches;
  }
  stats.loss = loss_total / static_cast<double>(data.size());
  stats.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
  ++epoch_;
  return stats;
}

template <typename T>
std::vector<std::vector<double>> predict_probs(const Model<T>& model, std::span<const Sample> data,
                                               std::size_t batch_size) {
  if (batch_size == 0) throw ValueError("predict: batch_size must be positive");
  std::vector<std::vector<double>> rows;
  rows.reserve(data.size());
  for (std::size_t begin = 0; begin < data.size(); begin += batch_size) {
    const std::size_t end = std::min(data.size(), begin + batch_size);
    std::vector<const SampledInput*> inputs;
    for (std::size_t i = begin; i < end; ++i) inputs.push_back(&data[i].input);
    auto out = model.forward(make_batch<T>(inputs));
    const std::size_t classes = out.ensemble_probs.dim(1);
    auto probs = out.ensemble_probs.data();
    for (std::size_t b = 0; b < inputs.size(); ++b) {
      rows.emplace_back(probs.begin() + b * classes, probs.begin() + (b + 1) * classes);
    }
  }
  return rows;
}

template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&, double);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&, double);
template class Trainer<float>;
template class Trainer<double>;
template std::vector<std::vector<double>> predict_probs(const Model<float>&, std::span<const Sample>, std::size_t);
template std::vector<std::vector<double>> predict_probs(const Model<double>&, std::span<const Sample>, std::size_t);

}  // namespace tempagg
