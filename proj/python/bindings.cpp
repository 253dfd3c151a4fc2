#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <algorithm>
#include <filesystem>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "tempagg/dataio.hpp"
#include "tempagg/error.hpp"
#include "tempagg/evaluate.hpp"
#include "tempagg/pipeline.hpp"
#include "tempagg/sampler.hpp"

namespace py = pybind11;
namespace fs = std::filesystem;
using namespace tempagg;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

FrameFeatureSequence sequence_from(const std::string& video_id, const std::string& modality,
                                   DoubleArray timestamps, FloatArray features) {
  if (features.ndim() != 2) throw DimensionError("features must be a 2-d array (frames x dim)");
  if (timestamps.ndim() != 1) throw DimensionError("timestamps must be a 1-d array");
  FrameFeatureSequence seq;
  seq.video_id = video_id;
  seq.modality = parse_modality(modality);
  seq.dim = static_cast<std::size_t>(features.shape(1));
  seq.timestamps.assign(timestamps.data(), timestamps.data() + timestamps.size());
  seq.features.assign(features.data(), features.data() + features.size());
  seq.validate();
  return seq;
}

py::array_t<double> score_array(const PredictionMatrix& p) {
  py::array_t<double> out({p.rows(), p.classes});
  std::copy(p.scores.begin(), p.scores.end(), out.mutable_data());
  return out;
}

PredictionMatrix matrix_from(DoubleArray scores, std::vector<std::string> ids) {
  if (scores.ndim() != 2) throw DimensionError("scores must be a 2-d array (rows x classes)");
  const auto rows = static_cast<std::size_t>(scores.shape(0));
  if (ids.empty()) {
    for (std::size_t r = 0; r < rows; ++r) ids.push_back(std::to_string(r));
  }
  if (ids.size() != rows) throw DimensionError("segment id count does not match score rows");
  PredictionMatrix p;
  p.segment_ids = std::move(ids);
  p.classes = static_cast<std::size_t>(scores.shape(1));
  p.scores.assign(scores.data(), scores.data() + scores.size());
  return p;
}

RunConfig config_from(const std::string& preset, const py::dict& settings) {
  RunConfig cfg = preset.empty() ? RunConfig{} : preset_config(preset);
  std::vector<std::pair<std::string, std::string>> kv;
  for (auto [key, value] : settings) kv.emplace_back(py::str(key), py::str(value));
  std::stable_partition(kv.begin(), kv.end(), [](const auto& p) { return p.first == "preset" || p.first == "task"; });
  for (const auto& [key, value] : kv) apply_setting(cfg, key, value);
  return cfg;
}

}  // namespace

PYBIND11_MODULE(_tempagg, m) {
  m.doc() = "Temporal aggregation models for long-range video understanding";
  m.attr("__version__") = "0.1.0";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DimensionError>(m, "DimensionError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());
  py::register_exception<ValueError>(m, "ValueError", base.ptr());
  py::register_exception<DataCoverageError>(m, "DataCoverageError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  auto format = py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<BadMagicError>(m, "BadMagicError", format.ptr());
  py::register_exception<TruncatedError>(m, "TruncatedError", format.ptr());
  py::register_exception<ShapeMismatchError>(m, "ShapeMismatchError", format.ptr());
  py::register_exception<UnsupportedVersionError>(m, "UnsupportedVersionError", format.ptr());
  py::register_exception<ValidationError>(m, "ValidationError", format.ptr());

  m.def(
      "pool_snippets",
      [](DoubleArray timestamps, FloatArray features, double start, double end, std::size_t count,
         bool open_end) {
        const auto seq = sequence_from("py", "rgb", timestamps, features);
        const auto set = pool_snippets(seq, {start, end}, count, SnippetKind::spanning,
                                       open_end ? ScopeEnd::open : ScopeEnd::closed);
        py::array_t<float> vectors({set.count(), set.dim});
        std::copy(set.vectors.begin(), set.vectors.end(), vectors.mutable_data());
        std::vector<std::pair<double, double>> extents;
        for (const auto& e : set.extents) extents.emplace_back(e.start, e.end);
        return py::make_tuple(vectors, extents, set.clipped);
      },
      py::arg("timestamps"), py::arg("features"), py::arg("start"), py::arg("end"), py::arg("count"),
      py::arg("open_end") = false,
      "Max-pools frames of [start, end] into `count` equal snippets.\n"
      "Returns (vectors, extents, clipped).");

  m.def(
      "sample",
      [](DoubleArray timestamps, FloatArray features, double start, double stop, const std::string& preset) {
        const auto seq = sequence_from("py", "rgb", timestamps, features);
        const auto cfg = preset_config(preset).sampling;
        const auto in = sample_for_task(seq, {start, stop}, cfg);
        auto convert = [](const std::vector<SnippetSet>& sets) {
          py::list out;
          for (const auto& s : sets) {
            py::array_t<float> a({s.count(), s.dim});
            std::copy(s.vectors.begin(), s.vectors.end(), a.mutable_data());
            out.append(a);
          }
          return out;
        };
        return py::make_tuple(convert(in.recent), convert(in.spanning));
      },
      py::arg("timestamps"), py::arg("features"), py::arg("start"), py::arg("stop"), py::arg("preset"),
      "Samples one segment with a preset's configuration. Returns (recent, spanning).");

  m.def(
      "topk_accuracy",
      [](DoubleArray scores, std::vector<int> labels, std::size_t k) {
        return topk_accuracy(matrix_from(scores, {}), labels, k);
      },
      py::arg("scores"), py::arg("labels"), py::arg("k"));

  m.def(
      "class_mean_recall",
      [](DoubleArray scores, std::vector<int> labels, std::size_t k, std::set<int> subset) {
        return class_mean_topk_recall(matrix_from(scores, {}), labels, k, subset);
      },
      py::arg("scores"), py::arg("labels"), py::arg("k") = 5, py::arg("subset") = std::set<int>{});

  m.def(
      "late_fuse",
      [](std::vector<DoubleArray> inputs) {
        std::vector<PredictionMatrix> mats;
        for (auto& a : inputs) mats.push_back(matrix_from(a, {}));
        return score_array(late_fuse(mats));
      },
      py::arg("inputs"));

  m.def(
      "read_predictions",
      [](const fs::path& path) {
        const auto p = read_predictions(path);
        return py::make_tuple(p.segment_ids, score_array(p));
      },
      py::arg("path"), "Returns (segment_ids, scores).");

  m.def(
      "write_predictions",
      [](const fs::path& path, std::vector<std::string> ids, DoubleArray scores) {
        write_predictions(matrix_from(scores, std::move(ids)), path);
      },
      py::arg("path"), py::arg("segment_ids"), py::arg("scores"));

  m.def(
      "write_feature_file",
      [](const fs::path& path, const std::string& modality, FloatArray features, double fps) {
        if (features.ndim() != 2) throw DimensionError("features must be a 2-d array (frames x dim)");
        if (!(fps > 0.0)) throw ValueError("fps must be positive");
        const auto frames = static_cast<std::size_t>(features.shape(0));
        DoubleArray ts(frames);
        for (std::size_t f = 0; f < frames; ++f) ts.mutable_data()[f] = static_cast<double>(f) / fps;
        write_feature_file(sequence_from(path.stem().string(), modality, ts, features), fps, path);
      },
      py::arg("path"), py::arg("modality"), py::arg("features"), py::arg("fps"),
      "Frame f is stamped f / fps on reading.");

  m.def(
      "read_feature_file",
      [](const fs::path& path) {
        auto [seq, fps] = read_feature_file(path);
        py::array_t<double> ts(seq.timestamps.size());
        std::copy(seq.timestamps.begin(), seq.timestamps.end(), ts.mutable_data());
        py::array_t<float> feats({seq.frames(), seq.dim});
        std::copy(seq.features.begin(), seq.features.end(), feats.mutable_data());
        return py::make_tuple(std::string(modality_name(seq.modality)), ts, feats, fps);
      },
      py::arg("path"), "Returns (modality, timestamps, features, fps).");

  m.def(
      "synth",
      [](const fs::path& out, std::size_t classes, std::size_t videos, std::uint64_t seed) {
        SyntheticSpec spec;
        spec.classes = classes;
        spec.videos = videos;
        spec.seed = seed;
        py::list manifest;
        for (const auto& e : write_synthetic(generate_synthetic(spec), out)) {
          manifest.append(py::make_tuple(e.path, e.bytes, e.checksum));
        }
        return manifest;
      },
      py::arg("out"), py::arg("classes") = 4, py::arg("videos") = 40, py::arg("seed") = 0,
      "Writes a synthetic dataset. Returns [(path, bytes, fnv1a64)].");

  m.def(
      "train",
      [](const std::string& preset, const py::dict& settings) {
        const auto cfg = config_from(preset, settings);
        cfg.validate("train");
        std::ostringstream log;
        TrainSummary summary;
        {
          py::gil_scoped_release release;
          summary = run_training(cfg, log);
        }
        py::list epochs;
        for (const auto& e : summary.epochs) {
          py::dict d;
          d["epoch"] = e.epoch;
          d["lr"] = e.lr;
          d["loss"] = e.loss;
          d["accuracy"] = e.accuracy;
          epochs.append(d);
        }
        return epochs;
      },
      py::arg("preset") = "", py::arg("settings") = py::dict(),
      "Trains with config keys given as a dict of strings. Returns per-epoch stats.");

  m.def(
      "predict",
      [](const std::string& preset, const py::dict& settings) {
        const auto cfg = config_from(preset, settings);
        cfg.validate("predict");
        PredictionMatrix p;
        {
          py::gil_scoped_release release;
          p = run_predict(cfg);
        }
        if (!cfg.out.empty()) write_predictions(p, cfg.out);
        return py::make_tuple(p.segment_ids, score_array(p));
      },
      py::arg("preset") = "", py::arg("settings") = py::dict());

  m.def(
      "evaluate",
      [](const fs::path& predictions, const std::string& preset, const py::dict& settings) {
        const auto cfg = config_from(preset, settings);
        cfg.validate("eval");
        const auto report = run_eval(predictions, cfg);
        py::dict out;
        for (const auto& [key, cell] : report.cells) {
          const auto prefix = std::string(split_name(key.first)) + "." + std::string(level_name(key.second));
          out[py::str(prefix + ".top1")] = cell.top1;
          out[py::str(prefix + ".top5")] = cell.top5;
          out[py::str(prefix + ".recall5")] = cell.recall5;
        }
        return py::make_tuple(out, report.warnings);
      },
      py::arg("predictions"), py::arg("preset") = "", py::arg("settings") = py::dict(),
      "Returns ({'split.level.metric': value}, warnings).");

  m.def(
      "gradcheck",
      [](std::uint64_t seed) {
        GradCheckReport report;
        {
          py::gil_scoped_release release;
          report = run_gradcheck_suite(seed);
        }
        py::dict out;
        for (const auto& e : report.entries) out[py::str(e.name)] = e.max_rel_error;
        return out;
      },
      py::arg("seed") = 0, "Finite-difference check of every op and a tiny model. Returns {name: max_rel_error}.");

  m.def("preset_names", &preset_names);
}
