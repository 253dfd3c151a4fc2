#include "tempagg/dataio.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include <json.hpp>

#include "tempagg/error.hpp"

namespace tempagg {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

// ---- little-endian byte helpers -------------------------------------------------

class ByteWriter {
 public:
  void raw(const void* p, std::size_t n) {
    auto b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  template <typename U>
  void uint(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { uint(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}
  std::size_t remaining() const { return bytes_.size() - pos_; }
  void need(std::size_t n, const char* field) const {
    if (remaining() < n) {
      throw TruncatedError(what_ + ": truncated while reading " + field + " (need " + std::to_string(n) +
                           " bytes, " + std::to_string(remaining()) + " left)");
    }
  }
  template <typename U>
  U uint(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    pos_ += sizeof(U);
    return v;
  }
  float f32(const char* field) { return std::bit_cast<float>(uint<std::uint32_t>(field)); }
  double f64(const char* field) { return std::bit_cast<double>(uint<std::uint64_t>(field)); }
  std::span<const std::uint8_t> take(std::size_t n, const char* field) {
    need(n, field);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_all(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_all(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

std::uint8_t modality_tag(Modality m) { return static_cast<std::uint8_t>(m); }

}  // namespace

// ---- feature files ------------------------------------------------------------------

std::vector<std::uint8_t> encode_feature_file(const FrameFeatureSequence& seq, double fps) {
  if (seq.frames() == 0) throw ValueError("video " + seq.video_id + ": refusing to write a feature file with T = 0");
  seq.validate();
  if (!(fps > 0.0) || !std::isfinite(fps)) throw ValueError("video " + seq.video_id + ": fps must be positive");
  if (seq.frames() > UINT32_MAX || seq.dim > UINT32_MAX) throw ValueError("feature matrix too large");
  ByteWriter w;
  w.raw("TAGF", 4);
  w.uint<std::uint16_t>(kFeatureFileVersion);
  w.uint<std::uint8_t>(modality_tag(seq.modality));
  w.uint<std::uint8_t>(0);
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(seq.frames()));
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(seq.dim));
  w.f32(static_cast<float>(fps));
  w.bytes().reserve(kFeatureHeaderBytes + seq.features.size() * 4);
  for (float v : seq.features) w.f32(v);
  return std::move(w.bytes());
}

FrameFeatureSequence decode_feature_file(std::span<const std::uint8_t> bytes, std::string video_id) {
  ByteReader r(bytes, "feature file " + video_id);
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "TAGF", 4) != 0) {
    throw BadMagicError("feature file " + video_id + ": bad magic (expected \"TAGF\")");
  }
  const auto version = r.uint<std::uint16_t>("version");
  if (version != kFeatureFileVersion) {
    throw UnsupportedVersionError("feature file " + video_id + ": unsupported version " + std::to_string(version));
  }
  const auto tag = r.uint<std::uint8_t>("modality");
  r.uint<std::uint8_t>("reserved");
  if (tag > 3) throw FormatError("feature file " + video_id + ": unknown modality tag " + std::to_string(tag));
  const std::uint32_t frames = r.uint<std::uint32_t>("T");
  const std::uint32_t dim = r.uint<std::uint32_t>("D");
  const float fps = r.f32("fps");
  if (frames == 0 || dim == 0) {
    throw ShapeMismatchError("feature file " + video_id + ": declared shape " + std::to_string(frames) + "x" +
                             std::to_string(dim) + " is empty");
  }
  if (!(fps > 0.0f) || !std::isfinite(fps)) throw FormatError("feature file " + video_id + ": invalid fps");
  const std::uint64_t payload = static_cast<std::uint64_t>(frames) * dim * 4;
  if (r.remaining() < payload) {
    throw TruncatedError("feature file " + video_id + ": payload has " + std::to_string(r.remaining()) +
                         " bytes, header declares " + std::to_string(payload));
  }
  if (r.remaining() > payload) {
    throw ShapeMismatchError("feature file " + video_id + ": " + std::to_string(r.remaining() - payload) +
                             " trailing bytes beyond the declared " + std::to_string(frames) + "x" +
                             std::to_string(dim) + " payload");
  }
  std::vector<float> features(static_cast<std::size_t>(frames) * dim);
  for (auto& v : features) v = r.f32("payload");
  return FrameFeatureSequence::uniform(std::move(video_id), static_cast<Modality>(tag), fps, dim,
                                       std::move(features));
}

void write_feature_file(const FrameFeatureSequence& seq, double fps, const fs::path& path) {
  write_all(path, encode_feature_file(seq, fps));
}

std::pair<FrameFeatureSequence, double> read_feature_file(const fs::path& path) {
  auto bytes = read_all(path);
  auto seq = decode_feature_file(bytes, path.stem().string());
  ByteReader r(bytes, path.string());
  r.take(16, "header");
  const double fps = r.f32("fps");
  return {std::move(seq), fps};
}

fs::path feature_path(const fs::path& root, Modality m, const std::string& video_id) {
  return root / std::string(modality_name(m)) / (video_id + ".tagf");
}

// ---- annotations ----------------------------------------------------------------------

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename N>
N parse_number(const std::string& text, const char* field, std::size_t line) {
  N value{};
  const auto* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || text.empty()) {
    throw ValidationError(std::string("cannot parse ") + field + " from '" + text + "'", line);
  }
  return value;
}

void check_class(int value, std::size_t limit, const char* field, std::size_t line) {
  if (value < 0 || (limit > 0 && static_cast<std::size_t>(value) >= limit)) {
    throw ValidationError(std::string(field) + " " + std::to_string(value) + " outside vocabulary of " +
                              std::to_string(limit),
                          line);
  }
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

AnnotationTable parse_annotations(std::istream& in, std::optional<Vocabulary> vocab) {
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> col;
  std::size_t columns = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto names = split(line, ',');
    columns = names.size();
    for (std::size_t i = 0; i < names.size(); ++i) col[names[i]] = i;
    break;
  }
  if (col.empty()) throw ValidationError("annotation file has no header row", line_no);
  for (const char* required :
       {"video_id", "start_sec", "stop_sec", "verb_class", "noun_class", "action_class", "participant_id"}) {
    if (!col.count(required)) throw ValidationError(std::string("header lacks column '") + required + "'", line_no);
  }
  const bool has_segment_id = col.count("segment_id") > 0;

  AnnotationTable table;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (f.size() != columns) {
      throw ValidationError("expected " + std::to_string(columns) + " fields, found " + std::to_string(f.size()),
                            line_no);
    }
    Annotation a;
    a.video_id = f[col["video_id"]];
    if (a.video_id.empty()) throw ValidationError("empty video_id", line_no);
    a.start = parse_number<double>(f[col["start_sec"]], "start_sec", line_no);
    a.stop = parse_number<double>(f[col["stop_sec"]], "stop_sec", line_no);
    if (!(a.start < a.stop)) {
      throw ValidationError("start_sec " + f[col["start_sec"]] + " is not before stop_sec " + f[col["stop_sec"]],
                            line_no);
    }
    a.verb = parse_number<int>(f[col["verb_class"]], "verb_class", line_no);
    a.noun = parse_number<int>(f[col["noun_class"]], "noun_class", line_no);
    a.action = parse_number<int>(f[col["action_class"]], "action_class", line_no);
    const Vocabulary v = vocab.value_or(Vocabulary{});
    check_class(a.verb, v.verbs, "verb_class", line_no);
    check_class(a.noun, v.nouns, "noun_class", line_no);
    check_class(a.action, v.actions, "action_class", line_no);
    a.participant = f[col["participant_id"]];
    a.segment_id = has_segment_id ? f[col["segment_id"]] : a.video_id + "_" + std::to_string(table.rows.size());
    table.rows.push_back(std::move(a));
  }
  return table;
}

AnnotationTable load_annotations(const fs::path& path, std::optional<Vocabulary> vocab) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open annotations " + path.string());
  try {
    return parse_annotations(in, vocab);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what(), e.line());
  }
}

void write_annotations(const AnnotationTable& table, const fs::path& path) {
  std::ostringstream os;
  os << "segment_id,video_id,start_sec,stop_sec,verb_class,noun_class,action_class,participant_id\n";
  for (const auto& a : table.rows) {
    os << a.segment_id << ',' << a.video_id << ',' << format_double(a.start) << ',' << format_double(a.stop) << ','
       << a.verb << ',' << a.noun << ',' << a.action << ',' << a.participant << '\n';
  }
  const std::string s = os.str();
  write_all(path, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

std::size_t ActionMap::verbs() const {
  int m = -1;
  for (auto [v, n] : verb_noun) m = std::max(m, v);
  return static_cast<std::size_t>(m + 1);
}

std::size_t ActionMap::nouns() const {
  int m = -1;
  for (auto [v, n] : verb_noun) m = std::max(m, n);
  return static_cast<std::size_t>(m + 1);
}

ActionMap load_action_map(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open action map " + path.string());
  std::string line;
  std::size_t line_no = 0;
  std::map<int, std::pair<int, int>> entries;
  bool header = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto f = split(line, ',');
    if (header) {
      header = false;
      if (f.size() != 3 || f[0] != "action_class" || f[1] != "verb_class" || f[2] != "noun_class") {
        throw ValidationError(path.string() + ": expected header action_class,verb_class,noun_class", line_no);
      }
      continue;
    }
    if (f.size() != 3) throw ValidationError(path.string() + ": expected 3 fields", line_no);
    const int action = parse_number<int>(f[0], "action_class", line_no);
    const int verb = parse_number<int>(f[1], "verb_class", line_no);
    const int noun = parse_number<int>(f[2], "noun_class", line_no);
    if (action < 0 || verb < 0 || noun < 0) throw ValidationError(path.string() + ": negative class id", line_no);
    if (!entries.emplace(action, std::make_pair(verb, noun)).second) {
      throw ValidationError(path.string() + ": action " + f[0] + " listed twice", line_no);
    }
  }
  ActionMap map;
  int expected = 0;
  for (const auto& [action, vn] : entries) {
    if (action != expected++) {
      throw ValidationError(path.string() + ": action classes must be contiguous from 0, missing " +
                            std::to_string(expected - 1));
    }
    map.verb_noun.push_back(vn);
  }
  return map;
}

void write_action_map(const ActionMap& map, const fs::path& path) {
  std::ostringstream os;
  os << "action_class,verb_class,noun_class\n";
  for (std::size_t a = 0; a < map.verb_noun.size(); ++a) {
    os << a << ',' << map.verb_noun[a].first << ',' << map.verb_noun[a].second << '\n';
  }
  const std::string s = os.str();
  write_all(path, {reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

ActionMap action_map_from(const AnnotationTable& table, std::size_t num_actions) {
  std::vector<std::optional<std::pair<int, int>>> seen(num_actions);
  for (const auto& a : table.rows) {
    if (a.action < 0 || static_cast<std::size_t>(a.action) >= num_actions) {
      throw ValidationError("action " + std::to_string(a.action) + " outside " + std::to_string(num_actions));
    }
    auto& slot = seen[static_cast<std::size_t>(a.action)];
    const std::pair<int, int> vn{a.verb, a.noun};
    if (slot && *slot != vn) {
      throw ValidationError("action " + std::to_string(a.action) + " maps to two (verb, noun) pairs");
    }
    slot = vn;
  }
  ActionMap map;
  for (std::size_t i = 0; i < num_actions; ++i) {
    if (!seen[i]) throw ValidationError("action " + std::to_string(i) + " never appears; supply an action map file");
    map.verb_noun.push_back(*seen[i]);
  }
  return map;
}

// ---- subsets ----------------------------------------------------------------------------

SubsetLists parse_subsets(std::istream& in) {
  SubsetLists s;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) throw ValidationError("expected 'key: values'", line_no);
    const std::string key = trim(std::string_view(line).substr(0, colon));
    std::istringstream values(line.substr(colon + 1));
    std::vector<std::string> items{std::istream_iterator<std::string>(values), std::istream_iterator<std::string>()};
    auto ids = [&]() {
      std::set<int> out;
      for (const auto& v : items) out.insert(parse_number<int>(v, key.c_str(), line_no));
      return out;
    };
    if (key == "unseen_participants") {
      s.unseen_participants = std::set<std::string>(items.begin(), items.end());
    } else if (key == "tail_verbs") {
      s.tail_verbs = ids();
    } else if (key == "tail_nouns") {
      s.tail_nouns = ids();
    } else if (key == "tail_actions") {
      s.tail_actions = ids();
    } else {
      throw ValidationError("unknown subset key '" + key + "'", line_no);
    }
  }
  return s;
}

SubsetLists load_subsets(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open subsets " + path.string());
  return parse_subsets(in);
}

void write_subsets(const SubsetLists& s, const fs::path& path) {
  std::ostringstream os;
  if (s.unseen_participants) {
    os << "unseen_participants:";
    for (const auto& p : *s.unseen_participants) os << ' ' << p;
    os << '\n';
  }
  auto ids = [&os](const char* key, const std::optional<std::set<int>>& set) {
    if (!set) return;
    os << key << ':';
    for (int v : *set) os << ' ' << v;
    os << '\n';
  };
  ids("tail_verbs", s.tail_verbs);
  ids("tail_nouns", s.tail_nouns);
  ids("tail_actions", s.tail_actions);
  const std::string text = os.str();
  write_all(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

void validate_subsets(const SubsetLists& s, const AnnotationTable& table) {
  if (!s.unseen_participants) return;
  std::set<std::string> known;
  for (const auto& a : table.rows) known.insert(a.participant);
  for (const auto& p : *s.unseen_participants) {
    if (!known.count(p)) throw ValidationError("unseen participant '" + p + "' does not occur in the annotations");
  }
}

// ---- checkpoints ------------------------------------------------------------------------

std::string rng_state(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng rng_from_state(const std::string& state) {
  Rng rng;
  std::istringstream is(state);
  is >> rng;
  if (!is) throw FormatError("corrupt rng state");
  return rng;
}

namespace {

json sampling_to_json(const SamplingConfig& s) {
  json j;
  j["task"] = std::string(task_name(s.task));
  j["recent_offsets"] = s.recent_offsets;
  j["recent_expansions"] = s.recent_expansions;
  j["recent_partitions"] = s.recent_partitions;
  j["recent_snippets"] = s.recent_snippets;
  j["spanning_scales"] = s.spanning_scales;
  j["spanning_scope"] = s.spanning_scope ? json(*s.spanning_scope) : json(nullptr);
  j["anticipation_gap"] = s.anticipation_gap;
  return j;
}

SamplingConfig sampling_from_json(const json& j) {
  SamplingConfig s;
  s.task = parse_task(j.at("task").get<std::string>());
  s.recent_offsets = j.at("recent_offsets").get<std::vector<double>>();
  s.recent_expansions = j.at("recent_expansions").get<std::vector<double>>();
  s.recent_partitions = j.at("recent_partitions").get<std::size_t>();
  s.recent_snippets = j.at("recent_snippets").get<std::size_t>();
  s.spanning_scales = j.at("spanning_scales").get<std::vector<std::size_t>>();
  if (!j.at("spanning_scope").is_null()) s.spanning_scope = j.at("spanning_scope").get<double>();
  s.anticipation_gap = j.at("anticipation_gap").get<double>();
  return s;
}

json info_to_json(const CheckpointInfo& info) {
  json j;
  const auto& m = info.model;
  j["model"] = {{"input_dim", m.input_dim},        {"hidden_dim", m.hidden_dim},
                {"repr_dim", m.repr_dim},          {"num_classes", m.num_classes},
                {"num_recent", m.num_recent},      {"recent_snippets", m.recent_snippets},
                {"spanning_scales", m.spanning_scales}, {"dropout", m.dropout}};
  const auto& t = info.train;
  j["train"] = {{"batch_size", t.batch_size}, {"lr0", t.lr0},
                {"dropout", t.dropout},       {"epochs", t.epochs},
                {"decay_every", t.decay_every}, {"decay_divisor", t.decay_divisor},
                {"seed", t.seed}};
  j["sampling"] = sampling_to_json(info.sampling);
  j["modality"] = std::string(modality_name(info.modality));
  j["epoch"] = info.epoch;
  j["rng_state"] = info.rng_state;
  return j;
}

CheckpointInfo info_from_json(const json& j) {
  CheckpointInfo info;
  const auto& m = j.at("model");
  info.model.input_dim = m.at("input_dim");
  info.model.hidden_dim = m.at("hidden_dim");
  info.model.repr_dim = m.at("repr_dim");
  info.model.num_classes = m.at("num_classes");
  info.model.num_recent = m.at("num_recent");
  info.model.recent_snippets = m.at("recent_snippets");
  info.model.spanning_scales = m.at("spanning_scales").get<std::vector<std::size_t>>();
  info.model.dropout = m.at("dropout");
  const auto& t = j.at("train");
  info.train.batch_size = t.at("batch_size");
  info.train.lr0 = t.at("lr0");
  info.train.dropout = t.at("dropout");
  info.train.epochs = t.at("epochs");
  info.train.decay_every = t.at("decay_every");
  info.train.decay_divisor = t.at("decay_divisor");
  info.train.seed = t.at("seed");
  info.sampling = sampling_from_json(j.at("sampling"));
  info.modality = parse_modality(j.at("modality").get<std::string>());
  info.epoch = j.at("epoch");
  info.rng_state = j.at("rng_state");
  return info;
}

template <typename T>
constexpr std::uint8_t dtype_tag() {
  return sizeof(T) == 4 ? 0 : 1;
}

}  // namespace

template <typename T>
void save_checkpoint(const fs::path& path, const Model<T>& model, const CheckpointInfo& info) {
  CheckpointInfo meta = info;
  meta.model = model.config();
  const std::string text = info_to_json(meta).dump();
  const auto params = model.named_parameters();
  ByteWriter w;
  w.raw("TAGC", 4);
  w.uint<std::uint32_t>(1);
  w.uint<std::uint64_t>(text.size());
  w.raw(text.data(), text.size());
  w.uint<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
    w.raw(name.data(), name.size());
    w.uint<std::uint8_t>(dtype_tag<T>());
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.uint<std::uint64_t>(d);
    for (T v : t.data()) {
      if constexpr (sizeof(T) == 4) {
        w.f32(v);
      } else {
        w.f64(v);
      }
    }
  }
  // Write to a sibling and rename so a crash never leaves a torn checkpoint.
  fs::path tmp = path;
  tmp += ".tmp";
  write_all(tmp, w.bytes());
  fs::rename(tmp, path);
}

template <typename T>
Model<T> load_checkpoint(const fs::path& path, CheckpointInfo* info_out) {
  const auto bytes = read_all(path);
  ByteReader r(bytes, "checkpoint " + path.string());
  auto magic = r.take(4, "magic");
  if (std::memcmp(magic.data(), "TAGC", 4) != 0) throw BadMagicError(path.string() + ": not a checkpoint");
  const auto version = r.uint<std::uint32_t>("version");
  if (version != 1) throw UnsupportedVersionError(path.string() + ": checkpoint version " + std::to_string(version));
  const auto meta_len = r.uint<std::uint64_t>("metadata length");
  auto meta = r.take(static_cast<std::size_t>(meta_len), "metadata");
  CheckpointInfo info;
  try {
    info = info_from_json(json::parse(meta.begin(), meta.end()));
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": bad checkpoint metadata: " + e.what());
  }

  Rng scratch(0);
  Model<T> model = Model<T>::init(info.model, scratch);
  auto params = model.named_parameters();
  const auto count = r.uint<std::uint32_t>("tensor count");
  if (count != params.size()) {
    throw ShapeMismatchError(path.string() + ": " + std::to_string(count) + " tensors stored, model has " +
                             std::to_string(params.size()));
  }
  std::map<std::string, Tensor<T>> by_name(params.begin(), params.end());
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.uint<std::uint32_t>("name length");
    auto name_bytes = r.take(name_len, "name");
    const std::string name(name_bytes.begin(), name_bytes.end());
    const auto dtype = r.uint<std::uint8_t>("dtype");
    if (dtype > 1) throw FormatError(path.string() + ": unknown dtype for " + name);
    const auto rank = r.uint<std::uint32_t>("rank");
    Shape shape(rank);
    for (auto& d : shape) d = static_cast<std::size_t>(r.uint<std::uint64_t>("dims"));
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ShapeMismatchError(path.string() + ": unexpected tensor " + name);
    if (it->second.shape() != shape) {
      throw ShapeMismatchError(path.string() + ": tensor " + name + " stored as " + shape_str(shape) +
                               ", model expects " + shape_str(it->second.shape()));
    }
    auto dst = it->second.mutable_data();
    for (auto& v : dst) v = static_cast<T>(dtype == 0 ? static_cast<double>(r.f32("tensor data")) : r.f64("tensor data"));
    by_name.erase(it);
  }
  if (r.remaining() != 0) throw ShapeMismatchError(path.string() + ": trailing bytes after tensors");
  if (info_out) *info_out = info;
  return model;
}

template void save_checkpoint(const fs::path&, const Model<float>&, const CheckpointInfo&);
template void save_checkpoint(const fs::path&, const Model<double>&, const CheckpointInfo&);
template Model<float> load_checkpoint(const fs::path&, CheckpointInfo*);
template Model<double> load_checkpoint(const fs::path&, CheckpointInfo*);

// ---- synthetic data -----------------------------------------------------------------------

namespace {

constexpr double kLeadSeconds = 3.0;
constexpr double kGapSeconds = 10.0;
constexpr double kTailSeconds = 2.0;

std::set<int> rarest_third(const std::vector<std::size_t>& counts) {
  std::vector<int> ids(counts.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = static_cast<int>(i);
  std::stable_sort(ids.begin(), ids.end(), [&](int a, int b) { return counts[a] < counts[b]; });
  const std::size_t n = std::max<std::size_t>(1, ids.size() / 3);
  return {ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n)};
}

}  // namespace

SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  if (spec.classes < 2) throw ValueError("synthetic data needs at least 2 classes");
  if (spec.videos == 0 || spec.segments_per_video == 0) throw ValueError("synthetic data needs videos and segments");
  if (!(spec.fps >= 5.0)) throw ValueError("synthetic fps must be >= 5 so every 0.4 s recent scope holds frames");
  if (spec.modalities.empty()) throw ValueError("synthetic data needs at least one modality");
  if (spec.participants == 0) throw ValueError("synthetic data needs at least one participant");

  SyntheticData data;
  data.spec = spec;
  data.dim = spec.dim ? spec.dim : std::max<std::size_t>(16, 4 * spec.classes);
  data.block = data.dim / spec.classes;
  if (data.block == 0) throw ValueError("dim must be at least the class count");

  const std::size_t verbs = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(spec.classes))));
  for (std::size_t c = 0; c < spec.classes; ++c) {
    data.actions.verb_noun.emplace_back(static_cast<int>(c % verbs), static_cast<int>(c / verbs));
  }

  Rng layout(spec.seed);
  std::uniform_int_distribution<int> label_dist(0, static_cast<int>(spec.classes) - 1);
  std::uniform_real_distribution<double> jitter(0.0, 2.0);
  std::uniform_real_distribution<double> duration(1.0, 3.0);
  std::uniform_real_distribution<float> noise(0.0f, 0.5f);

  const auto train_videos = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(spec.videos)));
  for (std::size_t v = 0; v < spec.videos; ++v) {
    char id[32];
    std::snprintf(id, sizeof id, "vid%05zu", v);
    char participant[32];
    std::snprintf(participant, sizeof participant, "P%02zu", v % spec.participants);

    struct Seg {
      double start, stop;
      int label;
    };
    std::vector<Seg> segs;
    double cursor = kLeadSeconds + 4.0 + jitter(layout);
    for (std::size_t s = 0; s < spec.segments_per_video; ++s) {
      const double start = cursor;
      const double stop = start + duration(layout);
      segs.push_back({start, stop, label_dist(layout)});
      cursor = stop + kGapSeconds + jitter(layout);
    }
    const double length = segs.back().stop + kTailSeconds;
    const auto frames = static_cast<std::size_t>(std::ceil(length * spec.fps));

    for (std::size_t s = 0; s < segs.size(); ++s) {
      Annotation a;
      a.video_id = id;
      a.segment_id = std::string(id) + "_" + std::to_string(s);
      a.start = segs[s].start;
      a.stop = segs[s].stop;
      a.action = segs[s].label;
      a.verb = data.actions.verb_noun[static_cast<std::size_t>(a.action)].first;
      a.noun = data.actions.verb_noun[static_cast<std::size_t>(a.action)].second;
      a.participant = participant;
      data.annotations.rows.push_back(std::move(a));
    }
    if (v + 1 == train_videos) data.train_rows = data.annotations.rows.size();

    for (std::size_t mi = 0; mi < spec.modalities.size(); ++mi) {
      Rng frame_rng(spec.seed * 1000003ULL + v * 97ULL + mi + 1);
      std::vector<float> features(frames * data.dim);
      for (auto& x : features) x = noise(frame_rng);
      for (const auto& seg : segs) {
        for (std::size_t f = 0; f < frames; ++f) {
          const double t = static_cast<double>(f) / spec.fps;
          if (t < seg.start - kLeadSeconds || t >= seg.stop) continue;
          const std::size_t lo = static_cast<std::size_t>(seg.label) * data.block;
          for (std::size_t d = lo; d < lo + data.block; ++d) features[f * data.dim + d] += 1.0f;
        }
      }
      data.sequences.push_back(
          FrameFeatureSequence::uniform(id, spec.modalities[mi], spec.fps, data.dim, std::move(features)));
    }
  }
  if (train_videos >= spec.videos) data.train_rows = data.annotations.rows.size();

  // Subsets: the last participant is "unseen"; the rarest third of each
  // vocabulary in the train split forms the tail.
  SubsetLists& sub = data.subsets;
  char unseen[32];
  std::snprintf(unseen, sizeof unseen, "P%02zu", spec.participants - 1);
  sub.unseen_participants = std::set<std::string>{unseen};
  std::vector<std::size_t> vc(data.actions.verbs()), nc(data.actions.nouns()), ac(spec.classes);
  for (std::size_t i = 0; i < data.train_rows; ++i) {
    const auto& a = data.annotations.rows[i];
    ++vc[static_cast<std::size_t>(a.verb)];
    ++nc[static_cast<std::size_t>(a.noun)];
    ++ac[static_cast<std::size_t>(a.action)];
  }
  sub.tail_verbs = rarest_third(vc);
  sub.tail_nouns = rarest_third(nc);
  sub.tail_actions = rarest_third(ac);
  return data;
}

int synthetic_oracle(std::span<const float> pooled, std::size_t classes, std::size_t block) {
  int best = 0;
  float best_value = -1.0f;
  for (std::size_t c = 0; c < classes; ++c) {
    float m = pooled[c * block];
    for (std::size_t d = c * block; d < (c + 1) * block; ++d) m = std::max(m, pooled[d]);
    if (m > best_value) {
      best_value = m;
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t file_checksum(const fs::path& path) {
  return fnv1a64(read_all(path));
}

std::vector<ManifestEntry> write_synthetic(const SyntheticData& data, const fs::path& dir) {
  std::vector<fs::path> written;
  for (const auto& seq : data.sequences) {
    const auto rel = fs::path("features") / std::string(modality_name(seq.modality)) / (seq.video_id + ".tagf");
    write_feature_file(seq, data.spec.fps, dir / rel);
    written.push_back(rel);
  }
  AnnotationTable train, val;
  train.rows.assign(data.annotations.rows.begin(), data.annotations.rows.begin() + static_cast<std::ptrdiff_t>(data.train_rows));
  val.rows.assign(data.annotations.rows.begin() + static_cast<std::ptrdiff_t>(data.train_rows), data.annotations.rows.end());
  write_annotations(data.annotations, dir / "annotations.csv");
  write_annotations(train, dir / "train.csv");
  write_annotations(val, dir / "val.csv");
  write_action_map(data.actions, dir / "actions.csv");
  write_subsets(data.subsets, dir / "subsets.txt");
  for (const char* f : {"annotations.csv", "train.csv", "val.csv", "actions.csv", "subsets.txt"}) written.emplace_back(f);

  std::vector<ManifestEntry> manifest;
  std::ostringstream os;
  for (const auto& rel : written) {
    ManifestEntry e{rel.generic_string(), file_checksum(dir / rel), fs::file_size(dir / rel)};
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(e.checksum));
    os << hex << "  " << e.bytes << "  " << e.path << '\n';
    manifest.push_back(std::move(e));
  }
  const std::string text = os.str();
  write_all(dir / "manifest.txt", {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
  return manifest;
}

}  // namespace tempagg
