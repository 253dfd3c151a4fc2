#include "tempagg/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <unordered_map>

#include "tempagg/error.hpp"

namespace tempagg {

namespace fs = std::filesystem;

void PredictionMatrix::validate(double tol) const {
  if (classes == 0) throw ValidationError("prediction matrix has no classes");
  if (scores.size() != rows() * classes) throw ValidationError("prediction matrix size does not match its ids");
  for (std::size_t i = 0; i < rows(); ++i) {
    double total = 0.0;
    for (double v : row(i)) {
      if (!std::isfinite(v) || v < 0.0) throw ValidationError("segment " + segment_ids[i] + ": invalid probability");
      total += v;
    }
    if (std::abs(total - 1.0) > tol) {
      throw ValidationError("segment " + segment_ids[i] + ": probabilities sum to " + std::to_string(total));
    }
  }
}

void write_predictions(const PredictionMatrix& p, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "segment_id";
  for (std::size_t c = 0; c < p.classes; ++c) out << ",c" << c;
  out << '\n' << std::setprecision(17);
  for (std::size_t i = 0; i < p.rows(); ++i) {
    out << p.segment_ids[i];
    for (double v : p.row(i)) out << ',' << v;
    out << '\n';
  }
  if (!out) throw Error("short write to " + path.string());
}

PredictionMatrix read_predictions(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open predictions " + path.string());
  PredictionMatrix p;
  std::string line;
  std::size_t line_no = 0;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    for (std::string f; std::getline(ss, f, ',');) fields.push_back(f);
    if (header) {
      header = false;
      if (fields.size() < 2 || fields[0] != "segment_id") {
        throw ValidationError(path.string() + ": header must start with segment_id", line_no);
      }
      p.classes = fields.size() - 1;
      continue;
    }
    if (fields.size() != p.classes + 1) {
      throw ValidationError(path.string() + ": expected " + std::to_string(p.classes + 1) + " fields", line_no);
    }
    p.segment_ids.push_back(fields[0]);
    for (std::size_t c = 1; c < fields.size(); ++c) {
      double v = 0.0;
      const auto* end = fields[c].data() + fields[c].size();
      auto [ptr, ec] = std::from_chars(fields[c].data(), end, v);
      if (ec != std::errc() || ptr != end) {
        throw ValidationError(path.string() + ": bad probability '" + fields[c] + "'", line_no);
      }
      p.scores.push_back(v);
    }
  }
  if (header) throw ValidationError(path.string() + ": empty prediction file");
  p.validate();
  return p;
}

namespace {

void check_labels(const PredictionMatrix& preds, std::span<const int> labels) {
  if (labels.size() != preds.rows()) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(preds.rows()) +
                         " prediction rows");
  }
  for (int l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= preds.classes) {
      throw ValueError("label " + std::to_string(l) + " outside [0, " + std::to_string(preds.classes) + ")");
    }
  }
}

void check_k(std::size_t k, std::size_t classes) {
  if (k == 0 || k > classes) {
    throw ValueError("k = " + std::to_string(k) + " must lie in [1, " + std::to_string(classes) + "]");
  }
}

bool in_topk(std::span<const double> row, int label, std::size_t k) {
  const double s = row[static_cast<std::size_t>(label)];
  std::size_t ahead = 0;
  for (std::size_t c = 0; c < row.size(); ++c) {
    if (row[c] > s || (row[c] == s && c < static_cast<std::size_t>(label))) ++ahead;
  }
  return ahead < k;
}

}  // namespace

double topk_accuracy(const PredictionMatrix& preds, std::span<const int> labels, std::size_t k) {
  check_k(k, preds.classes);
  check_labels(preds, labels);
  if (labels.empty()) throw ValueError("topk_accuracy of an empty prediction set");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += in_topk(preds.row(i), labels[i], k);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(labels.size());
}

double class_mean_topk_recall(const PredictionMatrix& preds, std::span<const int> labels, std::size_t k,
                              const std::set<int>& subset) {
  check_k(k, preds.classes);
  check_labels(preds, labels);
  std::vector<std::size_t> hits(preds.classes), total(preds.classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto c = static_cast<std::size_t>(labels[i]);
    ++total[c];
    hits[c] += in_topk(preds.row(i), labels[i], k);
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t c = 0; c < preds.classes; ++c) {
    if (total[c] == 0 || (!subset.empty() && !subset.count(static_cast<int>(c)))) continue;
    sum += static_cast<double>(hits[c]) / static_cast<double>(total[c]);
    ++counted;
  }
  if (counted == 0) throw ValueError("class_mean_topk_recall: no class of the subset occurs in the labels");
  return 100.0 * sum / static_cast<double>(counted);
}

PredictionMatrix late_fuse(std::span<const PredictionMatrix> inputs) {
  if (inputs.empty()) throw ValueError("late_fuse needs at least one prediction matrix");
  const PredictionMatrix& ref = inputs.front();
  for (const auto& p : inputs) {
    if (p.classes != ref.classes || p.rows() != ref.rows() || p.scores.size() != ref.scores.size()) {
      throw DimensionError("late_fuse: prediction matrices differ in shape");
    }
    if (p.segment_ids != ref.segment_ids) throw ValueError("late_fuse: prediction matrices differ in segment ids");
  }
  PredictionMatrix out;
  out.segment_ids = ref.segment_ids;
  out.classes = ref.classes;
  out.scores.resize(ref.scores.size());
  // Summing in sorted order makes the result independent of input order
  // bit for bit; identical inputs return the shared value unchanged.
  std::vector<double> values(inputs.size());
  for (std::size_t i = 0; i < out.scores.size(); ++i) {
    for (std::size_t m = 0; m < inputs.size(); ++m) values[m] = inputs[m].scores[i];
    std::sort(values.begin(), values.end());
    if (values.front() == values.back()) {
      out.scores[i] = values.front();
      continue;
    }
    double total = 0.0;
    for (double v : values) total += v;
    out.scores[i] = total / static_cast<double>(values.size());
  }
  return out;
}

VerbNounProbs marginalize_action_to_verb_noun(const PredictionMatrix& actions, const ActionMap& map) {
  if (map.actions() < actions.classes) {
    throw ValueError("action map covers " + std::to_string(map.actions()) + " of " +
                     std::to_string(actions.classes) + " action classes");
  }
  VerbNounProbs out;
  out.verbs.segment_ids = out.nouns.segment_ids = actions.segment_ids;
  out.verbs.classes = map.verbs();
  out.nouns.classes = map.nouns();
  out.verbs.scores.assign(actions.rows() * out.verbs.classes, 0.0);
  out.nouns.scores.assign(actions.rows() * out.nouns.classes, 0.0);
  for (std::size_t i = 0; i < actions.rows(); ++i) {
    auto row = actions.row(i);
    for (std::size_t a = 0; a < actions.classes; ++a) {
      const auto [verb, noun] = map.verb_noun[a];
      out.verbs.scores[i * out.verbs.classes + static_cast<std::size_t>(verb)] += row[a];
      out.nouns.scores[i * out.nouns.classes + static_cast<std::size_t>(noun)] += row[a];
    }
  }
  return out;
}

std::string_view level_name(Level l) {
  switch (l) {
    case Level::verb: return "verb";
    case Level::noun: return "noun";
    case Level::action: return "action";
  }
  return "?";
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::overall: return "overall";
    case Split::unseen: return "unseen";
    case Split::tail: return "tail";
  }
  return "?";
}

const MetricCell* MetricReport::find(Split s, Level l) const {
  auto it = cells.find({s, l});
  return it == cells.end() ? nullptr : &it->second;
}

std::string MetricReport::key_value_text() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2);
  for (const auto& [key, cell] : cells) {
    const std::string prefix = std::string(split_name(key.first)) + "." + std::string(level_name(key.second));
    os << prefix << ".segments = " << cell.segments << '\n';
    os << prefix << ".top1 = " << cell.top1 << '\n';
    os << prefix << ".top5 = " << cell.top5 << '\n';
    os << prefix << ".recall5 = " << cell.recall5 << '\n';
  }
  for (const auto& w : warnings) os << "# warning: " << w << '\n';
  return os.str();
}

std::string MetricReport::table_csv() const {
  std::ostringstream os;
  os << "split,level,segments,top1,top5,recall5\n" << std::setprecision(17);
  for (const auto& [key, cell] : cells) {
    os << split_name(key.first) << ',' << level_name(key.second) << ',' << cell.segments << ',' << cell.top1 << ','
       << cell.top5 << ',' << cell.recall5 << '\n';
  }
  return os.str();
}

namespace {

PredictionMatrix select_rows(const PredictionMatrix& p, const std::vector<std::size_t>& rows) {
  PredictionMatrix out;
  out.classes = p.classes;
  for (auto r : rows) {
    out.segment_ids.push_back(p.segment_ids[r]);
    auto row = p.row(r);
    out.scores.insert(out.scores.end(), row.begin(), row.end());
  }
  return out;
}

int label_at(const Annotation& a, Level l) {
  switch (l) {
    case Level::verb: return a.verb;
    case Level::noun: return a.noun;
    case Level::action: return a.action;
  }
  return -1;
}

}  // namespace

MetricReport evaluate_split(const PredictionMatrix& action_preds, const AnnotationTable& annotations,
                            const ActionMap& map, const SubsetLists& subsets) {
  MetricReport report;
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < action_preds.rows(); ++i) index.emplace(action_preds.segment_ids[i], i);

  // Rows of the prediction matrix in annotation order.
  std::vector<std::size_t> order;
  for (const auto& a : annotations.rows) {
    auto it = index.find(a.segment_id);
    if (it == index.end()) throw ValidationError("no prediction for segment " + a.segment_id);
    order.push_back(it->second);
  }
  if (order.size() < action_preds.rows()) {
    report.warnings.push_back(std::to_string(action_preds.rows() - order.size()) +
                              " predictions have no annotation and were ignored");
  }
  if (order.empty()) throw ValueError("evaluate_split: no annotated segments");
  const PredictionMatrix actions = select_rows(action_preds, order);
  const VerbNounProbs vn = marginalize_action_to_verb_noun(actions, map);

  if (!subsets.unseen_participants) report.warnings.push_back("no unseen-participant list; unseen cells omitted");
  if (!subsets.tail_verbs && !subsets.tail_nouns && !subsets.tail_actions) {
    report.warnings.push_back("no tail-class lists; tail cells omitted");
  }

  for (Level level : {Level::verb, Level::noun, Level::action}) {
    const PredictionMatrix& preds = level == Level::verb ? vn.verbs : level == Level::noun ? vn.nouns : actions;
    const std::optional<std::set<int>>& tail =
        level == Level::verb ? subsets.tail_verbs : level == Level::noun ? subsets.tail_nouns : subsets.tail_actions;
    const std::size_t k = std::min<std::size_t>(5, preds.classes);
    for (Split split : {Split::overall, Split::unseen, Split::tail}) {
      if (split == Split::unseen && !subsets.unseen_participants) continue;
      if (split == Split::tail && !tail) continue;
      std::vector<std::size_t> rows;
      std::vector<int> labels;
      for (std::size_t i = 0; i < annotations.rows.size(); ++i) {
        const auto& a = annotations.rows[i];
        const int label = label_at(a, level);
        const bool keep = split == Split::overall  ? true
                          : split == Split::unseen ? subsets.unseen_participants->count(a.participant) > 0
                                                   : tail->count(label) > 0;
        if (!keep) continue;
        if (label < 0 || static_cast<std::size_t>(label) >= preds.classes) {
          throw ValidationError("segment " + a.segment_id + ": " + std::string(level_name(level)) + " label " +
                                std::to_string(label) + " outside the prediction classes");
        }
        rows.push_back(i);
        labels.push_back(label);
      }
      if (rows.empty()) {
        report.warnings.push_back(std::string(split_name(split)) + "." + std::string(level_name(level)) +
                                  ": subset selects no segments; cell omitted");
        continue;
      }
      const PredictionMatrix sub = select_rows(preds, rows);
      MetricCell cell;
      cell.segments = rows.size();
      cell.top1 = topk_accuracy(sub, labels, 1);
      cell.top5 = topk_accuracy(sub, labels, k);
      cell.recall5 = class_mean_topk_recall(sub, labels, k);
      report.cells[{split, level}] = cell;
    }
  }
  return report;
}

}  // namespace tempagg
