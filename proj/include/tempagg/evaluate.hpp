#pragma once

// EPIC-style metrics, subset breakdowns and late fusion of per-modality
// predictions.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tempagg/dataio.hpp"

namespace tempagg {

struct PredictionMatrix {
  std::vector<std::string> segment_ids;
  std::size_t classes = 0;
  std::vector<double> scores;  // rows() x classes, row-stochastic

  std::size_t rows() const { return segment_ids.size(); }
  std::span<const double> row(std::size_t i) const { return {scores.data() + i * classes, classes}; }
  // Throws ValidationError unless every row sums to 1 within `tol`.
  void validate(double tol = 1e-5) const;
};

// Header "segment_id,c0,...,c{C-1}", one row per segment, 17 significant digits.
void write_predictions(const PredictionMatrix& p, const std::filesystem::path& path);
PredictionMatrix read_predictions(const std::filesystem::path& path);

// Percentage of rows whose label is among the k best scores. A class ranks
// ahead of another on a higher score, or on equal score with a lower index.
double topk_accuracy(const PredictionMatrix& preds, std::span<const int> labels, std::size_t k);

// Mean over classes in `subset` that occur in `labels` of the per-class
// top-k recall, in percent. An empty subset means every class. Throws
// ValueError if no subset class occurs.
double class_mean_topk_recall(const PredictionMatrix& preds, std::span<const int> labels, std::size_t k,
                              const std::set<int>& subset = {});

// Elementwise mean of matrices with identical ids and class counts.
PredictionMatrix late_fuse(std::span<const PredictionMatrix> inputs);

struct VerbNounProbs {
  PredictionMatrix verbs;
  PredictionMatrix nouns;
};

VerbNounProbs marginalize_action_to_verb_noun(const PredictionMatrix& actions, const ActionMap& map);

enum class Level { verb, noun, action };
enum class Split { overall, unseen, tail };

std::string_view level_name(Level l);
std::string_view split_name(Split s);

struct MetricCell {
  double top1 = 0.0;
  double top5 = 0.0;
  double recall5 = 0.0;  // class-mean top-5 recall
  std::size_t segments = 0;
};

struct MetricReport {
  std::map<std::pair<Split, Level>, MetricCell> cells;
  std::vector<std::string> warnings;

  const MetricCell* find(Split s, Level l) const;
  // "split.level.metric = value" lines.
  std::string key_value_text() const;
  // CSV: split,level,segments,top1,top5,recall5
  std::string table_csv() const;
};

// Scores every (split, level) cell the subsets allow. Splits whose subset
// is undefined or selects nothing are omitted and listed in `warnings`.
MetricReport evaluate_split(const PredictionMatrix& action_preds, const AnnotationTable& annotations,
                            const ActionMap& map, const SubsetLists& subsets);

}  // namespace tempagg
