#pragma once

// Run configuration and the end-to-end steps behind the command-line tool:
// dataset assembly, training, prediction, evaluation, fusion and the
// finite-difference self check.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tempagg/dataio.hpp"
#include "tempagg/evaluate.hpp"
#include "tempagg/model.hpp"
#include "tempagg/sampler.hpp"
#include "tempagg/trainer.hpp"

namespace tempagg {

struct RunConfig {
  std::string preset;
  std::filesystem::path features;     // root holding <modality>/<video>.tagf
  std::filesystem::path annotations;  // train split for `train`, eval split otherwise
  std::filesystem::path subsets;
  std::filesystem::path actions;
  std::filesystem::path checkpoint;
  std::filesystem::path out;
  std::vector<Modality> modalities{Modality::rgb};
  SamplingConfig sampling = SamplingConfig::epic_anticipation();
  TrainConfig train = TrainConfig::for_task(Task::anticipation);
  std::size_t hidden_dim = 512;
  std::size_t repr_dim = 512;
  std::size_t num_classes = 0;  // 0: action map size, else max label + 1

  // Checks values and that the paths needed by `command` exist.
  void validate(std::string_view command) const;
};

// Named presets: epic100-anticipation, epic100-recognition, breakfast-activity.
RunConfig preset_config(std::string_view name);
std::vector<std::string> preset_names();

// Applies one "key = value" setting; ConfigError names the key on failure.
void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value);

// Layered: defaults, then the file's preset (if any), then its other keys in
// order. "#" starts a comment.
RunConfig load_run_config(const std::filesystem::path& path);
RunConfig parse_run_config(std::istream& in, const std::string& origin = "<config>");

// Samples every annotated segment from <root>/<modality>/<video>.tagf.
// DataCoverageError messages name the offending segment.
std::vector<Sample> build_samples(const AnnotationTable& table, const std::filesystem::path& features_root,
                                  Modality modality, const SamplingConfig& sampling,
                                  std::map<std::string, FrameAccessLog>* audit = nullptr);

struct TrainSummary {
  std::vector<EpochStats> epochs;
  std::size_t parameters = 0;
};

// Trains one modality, writes the checkpoint after every epoch and emits one
// JSON line per epoch to `log` and to <checkpoint>.log.jsonl.
TrainSummary run_training(const RunConfig& cfg, std::ostream& log);

// Predictions for every row of cfg.annotations with the checkpoint's
// sampling configuration and modality.
PredictionMatrix run_predict(const RunConfig& cfg, std::map<std::string, FrameAccessLog>* audit = nullptr);

MetricReport run_eval(const std::filesystem::path& predictions, const RunConfig& cfg);

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  std::string worst;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error() const;
};

// Finite-difference check (double precision, eps 1e-5) of every tensor op
// and of the full model on a tiny configuration: width 8, K_R 2, scales
// {2, 3}, 5 classes, 2 TABs.
GradCheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t per_tensor = 6);

ModelConfig gradcheck_model_config();

}  // namespace tempagg
