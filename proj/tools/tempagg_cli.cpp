// tempagg: command-line driver for synthetic data, training, prediction,
// evaluation, late fusion and gradient checking.
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 data error,
// 4 numeric failure.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tempagg/dataio.hpp"
#include "tempagg/error.hpp"
#include "tempagg/evaluate.hpp"
#include "tempagg/pipeline.hpp"

namespace fs = std::filesystem;
using namespace tempagg;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

// Flags shared by train / predict / eval. Unset flags leave the config alone.
struct CommonFlags {
  std::string config, preset, task, features, annotations, subsets, actions, checkpoint, out, modality;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--config", config, "Layered key = value config file");
    cmd->add_option("--preset", preset, "epic100-anticipation | epic100-recognition | breakfast-activity");
    cmd->add_option("--task", task, "anticipation | recognition | activity");
    cmd->add_option("--features", features, "Feature root (<root>/<modality>/<video>.tagf)");
    cmd->add_option("--annotations", annotations, "Annotation CSV");
    cmd->add_option("--subsets", subsets, "Evaluation subset list");
    cmd->add_option("--actions", actions, "Action -> (verb, noun) map CSV");
    cmd->add_option("--checkpoint", checkpoint, "Checkpoint path");
    cmd->add_option("--out", out, "Output path");
    cmd->add_option("--seed", seed, "Random seed");
    cmd->add_option("--epochs", epochs, "Training epochs");
    cmd->add_option("--modality", modality, "rgb | flow | obj | roi (comma-separated)");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    if (!preset.empty()) apply_setting(cfg, "preset", preset);
    if (!task.empty()) apply_setting(cfg, "task", task);
    auto set = [&cfg](const char* key, const std::string& v) {
      if (!v.empty()) apply_setting(cfg, key, v);
    };
    set("features", features);
    set("annotations", annotations);
    set("subsets", subsets);
    set("actions", actions);
    set("checkpoint", checkpoint);
    set("out", out);
    set("modality", modality);
    if (seed) cfg.train.seed = *seed;
    if (epochs) cfg.train.epochs = *epochs;
    return cfg;
  }
};

int cmd_synth(const SyntheticSpec& spec, const std::string& out) {
  if (out.empty()) throw ConfigError("out: required");
  const auto data = generate_synthetic(spec);
  std::error_code ec;
  fs::create_directories(out, ec);
  const fs::path probe = fs::path(out) / ".write_probe";
  {
    std::ofstream f(probe);
    if (ec || !f) throw ConfigError("out: directory '" + out + "' is not writable");
  }
  fs::remove(probe);
  const auto manifest = write_synthetic(data, out);
  for (const auto& e : manifest) {
    std::printf("%016llx  %ju  %s\n", static_cast<unsigned long long>(e.checksum), e.bytes, e.path.c_str());
  }
  std::printf("# %zu videos, %zu segments (%zu train), dim %zu, %zu classes\n", spec.videos,
              data.annotations.size(), data.train_rows, data.dim, spec.classes);
  return 0;
}

int cmd_train(const CommonFlags& flags) {
  RunConfig cfg = flags.resolve();
  if (!flags.out.empty() && flags.checkpoint.empty()) cfg.checkpoint = flags.out;
  const auto summary = run_training(cfg, std::cout);
  std::cerr << "trained " << summary.parameters << " parameters for " << summary.epochs.size() << " epochs -> "
            << cfg.checkpoint << '\n';
  return 0;
}

int cmd_predict(const CommonFlags& flags) {
  RunConfig cfg = flags.resolve();
  if (cfg.out.empty()) throw ConfigError("out: required");
  const auto preds = run_predict(cfg);
  write_predictions(preds, cfg.out);
  std::cerr << "wrote " << preds.rows() << " predictions over " << preds.classes << " classes -> " << cfg.out << '\n';
  return 0;
}

int cmd_eval(const CommonFlags& flags, const std::string& predictions) {
  RunConfig cfg = flags.resolve();
  const auto report = run_eval(predictions, cfg);
  std::cout << report.key_value_text();
  if (!cfg.out.empty()) {
    std::ofstream(cfg.out) << report.key_value_text();
    fs::path table = cfg.out;
    table.replace_extension(".csv");
    std::ofstream(table) << report.table_csv();
  }
  return 0;
}

int cmd_fuse(const std::vector<std::string>& inputs, const std::string& out) {
  if (out.empty()) throw ConfigError("out: required");
  std::vector<PredictionMatrix> mats;
  for (const auto& path : inputs) mats.push_back(read_predictions(path));
  const auto fused = late_fuse(mats);
  write_predictions(fused, out);
  std::cerr << "fused " << mats.size() << " prediction files -> " << out << '\n';
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t per_tensor, double tolerance) {
  const auto report = run_gradcheck_suite(seed, per_tensor);
  for (const auto& e : report.entries) {
    std::printf("%-14s coords=%-5zu max_rel_err=%.3e  worst=%s\n", e.name.c_str(), e.coordinates, e.max_rel_error,
                e.worst.c_str());
  }
  const bool ok = report.max_rel_error() < tolerance;
  std::printf("%s max_rel_err=%.3e (tolerance %.0e)\n", ok ? "PASS" : "FAIL", report.max_rel_error(), tolerance);
  return ok ? 0 : kExitNumeric;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal aggregate models for action anticipation and recognition"};
  app.require_subcommand(1);

  SyntheticSpec synth;
  std::string synth_out, synth_modalities = "rgb";
  auto* s = app.add_subcommand("synth", "Generate a learnable synthetic dataset");
  s->add_option("--classes", synth.classes, "Action classes")->check(CLI::Range(2, 100000));
  s->add_option("--videos", synth.videos, "Videos")->check(CLI::PositiveNumber);
  s->add_option("--segments-per-video", synth.segments_per_video, "Segments per video")->check(CLI::PositiveNumber);
  s->add_option("--fps", synth.fps, "Feature frame rate (>= 5)");
  s->add_option("--dim", synth.dim, "Feature width (0: 4 per class, min 16)");
  s->add_option("--participants", synth.participants, "Participants")->check(CLI::PositiveNumber);
  s->add_option("--seed", synth.seed, "Random seed");
  s->add_option("--modality", synth_modalities, "Modalities to emit (comma-separated)");
  s->add_option("--out", synth_out, "Output directory")->required();

  CommonFlags train_flags, predict_flags, eval_flags;
  auto* t = app.add_subcommand("train", "Train one modality");
  train_flags.add_to(t);
  auto* p = app.add_subcommand("predict", "Write ensemble probabilities for annotated segments");
  predict_flags.add_to(p);
  std::string predictions;
  auto* e = app.add_subcommand("eval", "Score predictions (top-1/5 accuracy, class-mean top-5 recall)");
  eval_flags.add_to(e);
  e->add_option("--predictions", predictions, "Prediction CSV")->required();

  std::vector<std::string> fuse_inputs;
  std::string fuse_out;
  auto* f = app.add_subcommand("fuse", "Late-fuse per-modality predictions by averaging");
  f->add_option("inputs", fuse_inputs, "Prediction CSVs")->required()->expected(1, -1);
  f->add_option("--out", fuse_out, "Fused prediction CSV")->required();

  std::uint64_t gc_seed = 0;
  std::size_t gc_per_tensor = 6;
  double gc_tol = 1e-4;
  std::string gc_config;
  auto* g = app.add_subcommand("gradcheck", "Finite-difference check of every op and a tiny model");
  g->add_option("--seed", gc_seed, "Random seed");
  g->add_option("--per-tensor", gc_per_tensor, "Sampled coordinates per model tensor");
  g->add_option("--tolerance", gc_tol, "Maximum relative error");
  g->add_option("--config", gc_config, "Accepted for symmetry; the check always uses the tiny config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*s) {
      synth.modalities.clear();
      std::stringstream ss(synth_modalities);
      for (std::string m; std::getline(ss, m, ',');) synth.modalities.push_back(parse_modality(m));
      return cmd_synth(synth, synth_out);
    }
    if (*t) return cmd_train(train_flags);
    if (*p) return cmd_predict(predict_flags);
    if (*e) return cmd_eval(eval_flags, predictions);
    if (*f) return cmd_fuse(fuse_inputs, fuse_out);
    if (*g) return cmd_gradcheck(gc_seed, gc_per_tensor, gc_tol);
  } catch (const ConfigError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const ValueError& err) {
    std::cerr << "config error: " << err.what() << '\n';
    return kExitConfig;
  } catch (const NumericError& err) {
    std::cerr << "numeric failure: " << err.what() << '\n';
    return kExitNumeric;
  } catch (const DataCoverageError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const FormatError& err) {
    std::cerr << "data error: " << err.what() << '\n';
    return kExitData;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << '\n';
    return 1;
  }
  return 0;
}
