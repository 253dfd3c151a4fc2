#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tempagg/model.hpp"
#include "tempagg/sampler.hpp"

namespace tempagg {

struct TrainConfig {
  std::size_t batch_size = 10;
  double lr0 = 1e-4;
  double dropout = 0.3;
  std::size_t epochs = 15;
  std::size_t decay_every = 10;  // lr divided by decay_divisor at each multiple
  double decay_divisor = 10.0;
  std::uint64_t seed = 0;

  void validate() const;
  // 15 epochs for anticipation, 25 for recognition and activity.
  static TrainConfig for_task(Task task);
};

// lr0 / decay_divisor^floor(epoch / decay_every), epoch 0-based.
double lr_at(std::size_t epoch, const TrainConfig& cfg);

template <typename T>
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<T>> m, v;  // mirror the parameter list
};

// One bias-corrected Adam update using each parameter's accumulated grad.
// Parameters without a grad buffer are treated as having zero gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, double lr);

struct Sample {
  std::string segment_id;
  SampledInput input;
  int label = 0;
};

struct EpochStats {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;      // sample-weighted mean of the summed per-TAB losses
  double accuracy = 0.0;  // ensemble top-1 on the training batches, percent
  std::size_t batches = 0;
};

// One line of the per-epoch log (JSON object, no trailing newline).
std::string epoch_record(const EpochStats& stats);

template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, TrainConfig cfg);

  // Seeded shuffle, minibatches with the partial last batch kept, summed
  // per-TAB cross entropy. Throws NumericError on a non-finite loss.
  EpochStats train_epoch(std::span<const Sample> data);

  std::size_t epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  Rng& rng() { return rng_; }
  const AdamState<T>& adam() const { return adam_; }

 private:
  Model<T>& model_;
  TrainConfig cfg_;
  AdamState<T> adam_;
  Rng rng_;
  std::size_t epoch_ = 0;
  std::vector<Tensor<T>> params_;
};

// Ensemble probabilities, row per sample, in input order (inference mode).
template <typename T>
std::vector<std::vector<double>> predict_probs(const Model<T>& model, std::span<const Sample> data,
                                               std::size_t batch_size = 10);

}  // namespace tempagg
