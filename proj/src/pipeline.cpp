#include "tempagg/pipeline.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <iostream>
#include <sstream>

#include "tempagg/error.hpp"
#include "tempagg/gradcheck.hpp"

namespace tempagg {

namespace fs = std::filesystem;

// ---- configuration ------------------------------------------------------------------

std::vector<std::string> preset_names() {
  return {"epic100-anticipation", "epic100-recognition", "breakfast-activity"};
}

RunConfig preset_config(std::string_view name) {
  RunConfig cfg;
  cfg.preset = std::string(name);
  if (name == "epic100-anticipation") {
    cfg.sampling = SamplingConfig::epic_anticipation();
  } else if (name == "epic100-recognition") {
    cfg.sampling = SamplingConfig::epic_recognition();
  } else if (name == "breakfast-activity") {
    cfg.sampling = SamplingConfig::breakfast_activity();
  } else {
    throw ConfigError("preset: unknown preset '" + std::string(name) + "'");
  }
  cfg.train = TrainConfig::for_task(cfg.sampling.task);
  return cfg;
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

template <typename N>
N number(std::string_view key, std::string_view text) {
  const std::string t = trim(text);
  N v{};
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ConfigError(std::string(key) + ": cannot parse '" + t + "' as a number");
  }
  return v;
}

template <typename N>
std::vector<N> number_list(std::string_view key, std::string_view text) {
  std::vector<N> out;
  std::stringstream ss{std::string(text)};
  for (std::string item; std::getline(ss, item, ',');) out.push_back(number<N>(key, item));
  if (out.empty()) throw ConfigError(std::string(key) + ": empty list");
  return out;
}

}  // namespace

void apply_setting(RunConfig& cfg, std::string_view key_in, std::string_view value_in) {
  const std::string key = trim(key_in);
  const std::string value = trim(value_in);
  try {
    if (key == "preset") {
      auto paths = cfg;
      cfg = preset_config(value);
      cfg.features = paths.features;
      cfg.annotations = paths.annotations;
      cfg.subsets = paths.subsets;
      cfg.actions = paths.actions;
      cfg.checkpoint = paths.checkpoint;
      cfg.out = paths.out;
      cfg.modalities = paths.modalities;
    } else if (key == "task") {
      const Task t = parse_task(value);
      if (t != cfg.sampling.task) {
        apply_setting(cfg, "preset",
                      t == Task::anticipation  ? "epic100-anticipation"
                      : t == Task::recognition ? "epic100-recognition"
                                               : "breakfast-activity");
      }
    } else if (key == "features") {
      cfg.features = value;
    } else if (key == "annotations") {
      cfg.annotations = value;
    } else if (key == "subsets") {
      cfg.subsets = value;
    } else if (key == "actions") {
      cfg.actions = value;
    } else if (key == "checkpoint") {
      cfg.checkpoint = value;
    } else if (key == "out") {
      cfg.out = value;
    } else if (key == "modality") {
      cfg.modalities.clear();
      std::stringstream ss(value);
      for (std::string m; std::getline(ss, m, ',');) cfg.modalities.push_back(parse_modality(trim(m)));
      if (cfg.modalities.empty()) throw ConfigError("modality: empty list");
    } else if (key == "seed") {
      cfg.train.seed = number<std::uint64_t>(key, value);
    } else if (key == "epochs") {
      cfg.train.epochs = number<std::size_t>(key, value);
    } else if (key == "batch_size") {
      cfg.train.batch_size = number<std::size_t>(key, value);
    } else if (key == "lr") {
      cfg.train.lr0 = number<double>(key, value);
    } else if (key == "dropout") {
      cfg.train.dropout = number<double>(key, value);
    } else if (key == "decay_every") {
      cfg.train.decay_every = number<std::size_t>(key, value);
    } else if (key == "hidden_dim") {
      cfg.hidden_dim = number<std::size_t>(key, value);
    } else if (key == "repr_dim") {
      cfg.repr_dim = number<std::size_t>(key, value);
    } else if (key == "classes") {
      cfg.num_classes = number<std::size_t>(key, value);
    } else if (key == "recent_snippets") {
      cfg.sampling.recent_snippets = number<std::size_t>(key, value);
    } else if (key == "spanning_scales") {
      cfg.sampling.spanning_scales = number_list<std::size_t>(key, value);
    } else if (key == "spanning_scope") {
      if (value == "entire_video") {
        cfg.sampling.spanning_scope.reset();
      } else {
        cfg.sampling.spanning_scope = number<double>(key, value);
      }
    } else if (key == "recent_offsets") {
      cfg.sampling.recent_offsets = number_list<double>(key, value);
    } else if (key == "recent_expansions") {
      cfg.sampling.recent_expansions = number_list<double>(key, value);
    } else if (key == "recent_partitions") {
      cfg.sampling.recent_partitions = number<std::size_t>(key, value);
    } else if (key == "anticipation_gap") {
      cfg.sampling.anticipation_gap = number<double>(key, value);
    } else {
      throw ConfigError("unknown setting '" + key + "'");
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

RunConfig parse_run_config(std::istream& in, const std::string& origin) {
  std::vector<std::pair<std::string, std::string>> settings;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    settings.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  RunConfig cfg;
  // Presets and task switches reset sampling/training defaults, so they go first.
  std::stable_partition(settings.begin(), settings.end(),
                        [](const auto& kv) { return kv.first == "preset" || kv.first == "task"; });
  for (const auto& [k, v] : settings) apply_setting(cfg, k, v);
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  return parse_run_config(in, path.string());
}

void RunConfig::validate(std::string_view command) const {
  try {
    sampling.validate();
    train.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("sampling/train: ") + e.what());
  }
  if (hidden_dim == 0 || repr_dim == 0) throw ConfigError("hidden_dim/repr_dim: must be positive");
  if (modalities.empty()) throw ConfigError("modality: at least one modality required");
  auto need = [](const fs::path& p, const char* field) {
    if (p.empty()) throw ConfigError(std::string(field) + ": required");
    if (!fs::exists(p)) throw ConfigError(std::string(field) + ": '" + p.string() + "' does not exist");
  };
  if (command == "train" || command == "predict") {
    need(features, "features");
    need(annotations, "annotations");
  }
  if (command == "train") {
    if (checkpoint.empty()) throw ConfigError("checkpoint: required");
    if (modalities.size() != 1) throw ConfigError("modality: train one modality per run");
  }
  if (command == "predict") need(checkpoint, "checkpoint");
  if (command == "eval") need(annotations, "annotations");
  if (!subsets.empty()) need(subsets, "subsets");
  if (!actions.empty()) need(actions, "actions");
}

// ---- datasets ---------------------------------------------------------------------

std::vector<Sample> build_samples(const AnnotationTable& table, const fs::path& features_root, Modality modality,
                                  const SamplingConfig& sampling, std::map<std::string, FrameAccessLog>* audit) {
  sampling.validate();
  std::map<std::string, FrameFeatureSequence> cache;
  std::vector<Sample> samples;
  samples.reserve(table.size());
  for (const auto& a : table.rows) {
    auto it = cache.find(a.video_id);
    if (it == cache.end()) {
      const fs::path p = feature_path(features_root, modality, a.video_id);
      if (!fs::exists(p)) throw DataCoverageError("segment " + a.segment_id + ": missing feature file " + p.string());
      it = cache.emplace(a.video_id, read_feature_file(p).first).first;
    }
    Sample s;
    s.segment_id = a.segment_id;
    s.label = a.action;
    FrameAccessLog* log = audit ? &(*audit)[a.segment_id] : nullptr;
    try {
      s.input = sample_for_task(it->second, {a.start, a.stop}, sampling, log);
    } catch (const DataCoverageError& e) {
      throw DataCoverageError("segment " + a.segment_id + ": " + e.what());
    }
    samples.push_back(std::move(s));
  }
  return samples;
}

namespace {

std::size_t infer_classes(const RunConfig& cfg, const AnnotationTable& table) {
  if (cfg.num_classes) return cfg.num_classes;
  if (!cfg.actions.empty()) return load_action_map(cfg.actions).actions();
  int m = 0;
  for (const auto& a : table.rows) m = std::max(m, a.action);
  return static_cast<std::size_t>(m + 1);
}

}  // namespace

TrainSummary run_training(const RunConfig& cfg, std::ostream& log) {
  cfg.validate("train");
  const Modality modality = cfg.modalities.front();
  const AnnotationTable table = load_annotations(cfg.annotations);
  if (table.rows.empty()) throw ValidationError(cfg.annotations.string() + ": no segments to train on");
  const auto samples = build_samples(table, cfg.features, modality, cfg.sampling);

  ModelConfig mc = ModelConfig::for_sampling(cfg.sampling, samples.front().input.recent.front().dim,
                                             infer_classes(cfg, table));
  mc.hidden_dim = cfg.hidden_dim;
  mc.repr_dim = cfg.repr_dim;
  mc.dropout = cfg.train.dropout;
  for (const auto& s : samples) {
    if (static_cast<std::size_t>(s.label) >= mc.num_classes) {
      throw ValidationError("segment " + s.segment_id + ": label " + std::to_string(s.label) + " outside " +
                            std::to_string(mc.num_classes) + " classes");
    }
  }
  Rng init_rng(cfg.train.seed);
  Model<float> model = Model<float>::init(mc, init_rng);
  Trainer<float> trainer(model, cfg.train);

  fs::path log_path = cfg.checkpoint;
  log_path += ".log.jsonl";
  if (cfg.checkpoint.has_parent_path()) fs::create_directories(cfg.checkpoint.parent_path());
  std::ofstream log_file(log_path, std::ios::trunc);
  if (!log_file) throw ConfigError("checkpoint: cannot write " + log_path.string());

  TrainSummary summary;
  summary.parameters = model.parameter_count();
  for (std::size_t e = 0; e < cfg.train.epochs; ++e) {
    const EpochStats stats = trainer.train_epoch(samples);
    const std::string record = epoch_record(stats);
    log << record << std::endl;
    log_file << record << std::endl;
    CheckpointInfo info{mc, cfg.train, cfg.sampling, modality, e + 1, rng_state(trainer.rng())};
    save_checkpoint(cfg.checkpoint, model, info);
    summary.epochs.push_back(stats);
  }
  return summary;
}

PredictionMatrix run_predict(const RunConfig& cfg, std::map<std::string, FrameAccessLog>* audit) {
  cfg.validate("predict");
  CheckpointInfo info;
  const Model<float> model = load_checkpoint<float>(cfg.checkpoint, &info);
  const AnnotationTable table = load_annotations(cfg.annotations);
  const auto samples = build_samples(table, cfg.features, info.modality, info.sampling, audit);
  PredictionMatrix p;
  p.classes = info.model.num_classes;
  for (const auto& s : samples) p.segment_ids.push_back(s.segment_id);
  for (const auto& row : predict_probs(model, samples, cfg.train.batch_size)) {
    p.scores.insert(p.scores.end(), row.begin(), row.end());
  }
  return p;
}

MetricReport run_eval(const fs::path& predictions, const RunConfig& cfg) {
  cfg.validate("eval");
  const PredictionMatrix preds = read_predictions(predictions);
  const AnnotationTable table = load_annotations(cfg.annotations);
  const ActionMap map = cfg.actions.empty() ? action_map_from(table, preds.classes) : load_action_map(cfg.actions);
  SubsetLists subsets;
  if (!cfg.subsets.empty()) {
    subsets = load_subsets(cfg.subsets);
    validate_subsets(subsets, table);
  }
  return evaluate_split(preds, table, map, subsets);
}

// ---- gradient check ----------------------------------------------------------------

double GradCheckReport::max_rel_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_rel_error);
  return m;
}

ModelConfig gradcheck_model_config() {
  ModelConfig c;
  c.input_dim = 8;
  c.hidden_dim = 8;
  c.repr_dim = 8;
  c.num_classes = 5;
  c.num_recent = 2;
  c.recent_snippets = 2;
  c.spanning_scales = {2, 3};
  c.dropout = 0.3;
  return c;
}

namespace {

using D = Tensor<double>;

D random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = dist(rng);
  return D::from(std::move(shape), std::move(v), true);
}

// Values bounded away from 0 so relu has no kink within eps.
D away_from_zero(Shape shape, Rng& rng) {
  D t = random_tensor(std::move(shape), rng, 0.1, 1.0);
  std::bernoulli_distribution neg(0.5);
  for (auto& x : t.mutable_data()) x = neg(rng) ? -x : x;
  return t;
}

D constant_like(const D& t, Rng& rng) {
  return random_tensor(t.shape(), rng).detach();
}

GradCheckEntry check(const std::string& name, const std::function<D()>& f, std::vector<NamedTensor> inputs,
                     std::size_t per_tensor, Rng& rng) {
  auto r = gradcheck(f, std::move(inputs), 1e-5, per_tensor, rng);
  return {name, r.max_rel_error, r.coordinates, r.worst};
}

}  // namespace

GradCheckReport run_gradcheck_suite(std::uint64_t seed, std::size_t per_tensor) {
  Rng rng(seed);
  GradCheckReport report;
  // Every op's output is contracted with fixed random weights so each output
  // coordinate contributes a distinct gradient.
  const std::size_t all = 1000;

  {
    D a = random_tensor({3, 4}, rng), b = random_tensor({4, 2}, rng);
    D w = constant_like(matmul(a, b), rng);
    report.entries.push_back(check("matmul", [&] { return sum(mul(matmul(a, b), w)); }, {{"a", a}, {"b", b}}, all, rng));
  }
  {
    D a = random_tensor({2, 3, 4}, rng), b = random_tensor({2, 4, 5}, rng);
    D w = constant_like(bmm(a, b), rng);
    report.entries.push_back(check("bmm", [&] { return sum(mul(bmm(a, b), w)); }, {{"a", a}, {"b", b}}, all, rng));
  }
  {
    D x = random_tensor({2, 3, 4}, rng);
    D w = constant_like(transpose(x), rng);
    report.entries.push_back(check("transpose", [&] { return sum(mul(transpose(x), w)); }, {{"x", x}}, all, rng));
  }
  {
    D a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
    D w = constant_like(a, rng);
    report.entries.push_back(check("add", [&] { return sum(mul(add(a, b), w)); }, {{"a", a}, {"b", b}}, all, rng));
    report.entries.push_back(check("mul", [&] { return sum(mul(mul(a, b), w)); }, {{"a", a}, {"b", b}}, all, rng));
    report.entries.push_back(check("scale", [&] { return sum(mul(scale(a, 2.5), w)); }, {{"a", a}}, all, rng));
  }
  {
    D x = random_tensor({2, 3, 4}, rng), bias = random_tensor({4}, rng);
    D w = constant_like(x, rng);
    report.entries.push_back(
        check("add_bias", [&] { return sum(mul(add_bias(x, bias), w)); }, {{"x", x}, {"bias", bias}}, all, rng));
    report.entries.push_back(check("reshape", [&] { return sum(mul(reshape(x, {2, 3, 4}), w)); }, {{"x", x}}, all, rng));
  }
  {
    D x = away_from_zero({3, 5}, rng);
    D w = constant_like(x, rng);
    report.entries.push_back(check("relu", [&] { return sum(mul(relu(x), w)); }, {{"x", x}}, all, rng));
  }
  {
    D a = random_tensor({2, 2, 3}, rng), b = random_tensor({2, 1, 3}, rng);
    D w = constant_like(concat<double>({a, b}, 1), rng);
    report.entries.push_back(
        check("concat", [&] { return sum(mul(concat<double>({a, b}, 1), w)); }, {{"a", a}, {"b", b}}, all, rng));
  }
  {
    D x = random_tensor({2, 4, 3}, rng);
    D w = constant_like(max_over_axis(x, 1), rng);
    report.entries.push_back(check("max_over_axis", [&] { return sum(mul(max_over_axis(x, 1), w)); }, {{"x", x}}, all, rng));
  }
  {
    D x = random_tensor({2, 5}, rng, -2.0, 2.0);
    D w = constant_like(x, rng);
    report.entries.push_back(check("softmax_rows", [&] { return sum(mul(softmax_rows(x), w)); }, {{"x", x}}, all, rng));
  }
  {
    D x = random_tensor({4, 6}, rng);
    D w = constant_like(x, rng);
    const std::uint64_t mask_seed = rng();
    report.entries.push_back(check("dropout", [&] {
      Rng mask_rng(mask_seed);
      return sum(mul(dropout(x, 0.3, true, mask_rng), w));
    }, {{"x", x}}, all, rng));
  }
  {
    D logits = random_tensor({3, 5}, rng, -2.0, 2.0);
    const std::vector<int> labels{0, 3, 4};
    report.entries.push_back(
        check("cross_entropy", [&] { return cross_entropy(logits, labels); }, {{"logits", logits}}, all, rng));
  }

  // Full model: every parameter, the snippet inputs, the per-TAB losses and
  // the ensemble probabilities all feed the checked scalar.
  {
    const ModelConfig mc = gradcheck_model_config();
    Model<double> model = Model<double>::init(mc, rng);
    const std::size_t batch = 2;
    ModelBatch<double> inputs;
    for (std::size_t i = 0; i < mc.num_recent; ++i) {
      inputs.recent.push_back(random_tensor({batch, mc.recent_snippets, mc.input_dim}, rng));
    }
    for (auto k : mc.spanning_scales) inputs.spanning.push_back(random_tensor({batch, k, mc.input_dim}, rng));
    const std::vector<int> labels{1, 4};
    D w = random_tensor({batch, mc.num_classes}, rng).detach();
    const std::uint64_t dropout_seed = rng();
    auto loss = [&] {
      Rng drop(dropout_seed);
      ForwardOptions<double> opt;
      opt.training = true;
      opt.rng = &drop;
      auto out = model.forward(inputs, opt);
      return add(ensemble_loss(out, labels), sum(mul(out.ensemble_probs, w)));
    };
    auto named = model.named_parameters();
    for (std::size_t i = 0; i < inputs.recent.size(); ++i) named.emplace_back("recent" + std::to_string(i), inputs.recent[i]);
    for (std::size_t i = 0; i < inputs.spanning.size(); ++i) {
      named.emplace_back("spanning" + std::to_string(i), inputs.spanning[i]);
    }
    report.entries.push_back(check("model", loss, std::move(named), per_tensor, rng));
  }
  return report;
}

}  // namespace tempagg
