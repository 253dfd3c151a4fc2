#pragma once

// Persistence and ingestion: feature files, annotation tables, evaluation
// subset lists, checkpoints and the synthetic data generator. On-disk
// layouts are documented in docs/formats.md.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tempagg/model.hpp"
#include "tempagg/sampler.hpp"
#include "tempagg/trainer.hpp"

namespace tempagg {

// ---- feature files ----------------------------------------------------------------

inline constexpr std::uint16_t kFeatureFileVersion = 1;
inline constexpr std::size_t kFeatureHeaderBytes = 20;

// Encodes a uniformly sampled sequence (seq.fps > 0). Rejects T == 0.
std::vector<std::uint8_t> encode_feature_file(const FrameFeatureSequence& seq, double fps);
// video_id is taken from the caller (usually the file stem).
FrameFeatureSequence decode_feature_file(std::span<const std::uint8_t> bytes, std::string video_id);

void write_feature_file(const FrameFeatureSequence& seq, double fps, const std::filesystem::path& path);
// Returns the sequence together with its frame rate.
std::pair<FrameFeatureSequence, double> read_feature_file(const std::filesystem::path& path);

// <root>/<modality>/<video_id>.tagf
std::filesystem::path feature_path(const std::filesystem::path& root, Modality m, const std::string& video_id);

// ---- annotations --------------------------------------------------------------------

struct Vocabulary {
  std::size_t verbs = 0;
  std::size_t nouns = 0;
  std::size_t actions = 0;
  static Vocabulary epic100() { return {97, 300, 4025}; }
};

struct Annotation {
  std::string segment_id;
  std::string video_id;
  double start = 0.0;
  double stop = 0.0;
  int verb = 0;
  int noun = 0;
  int action = 0;
  std::string participant;
};

struct AnnotationTable {
  std::vector<Annotation> rows;
  std::size_t size() const { return rows.size(); }
};

// Comma-separated with a header row naming the columns video_id, start_sec,
// stop_sec, verb_class, noun_class, action_class, participant_id, and
// optionally segment_id (otherwise "<video_id>_<row>"). Errors carry the
// 1-based file line.
AnnotationTable parse_annotations(std::istream& in, std::optional<Vocabulary> vocab = std::nullopt);
AnnotationTable load_annotations(const std::filesystem::path& path, std::optional<Vocabulary> vocab = std::nullopt);
void write_annotations(const AnnotationTable& table, const std::filesystem::path& path);

// action class -> (verb, noun)
struct ActionMap {
  std::vector<std::pair<int, int>> verb_noun;
  std::size_t actions() const { return verb_noun.size(); }
  std::size_t verbs() const;
  std::size_t nouns() const;
};

ActionMap load_action_map(const std::filesystem::path& path);
void write_action_map(const ActionMap& map, const std::filesystem::path& path);
// Built from the (action, verb, noun) triples present in the table; throws
// ValidationError if one action maps to two pairs.
ActionMap action_map_from(const AnnotationTable& table, std::size_t num_actions);

// ---- evaluation subsets ---------------------------------------------------------------

struct SubsetLists {
  std::optional<std::set<std::string>> unseen_participants;
  std::optional<std::set<int>> tail_verbs, tail_nouns, tail_actions;
};

// "key: value value ..." lines; '#' starts a comment.
SubsetLists parse_subsets(std::istream& in);
SubsetLists load_subsets(const std::filesystem::path& path);
void write_subsets(const SubsetLists& s, const std::filesystem::path& path);
// Throws ValidationError for participant ids absent from the table.
void validate_subsets(const SubsetLists& s, const AnnotationTable& table);

// ---- checkpoints ------------------------------------------------------------------------

struct CheckpointInfo {
  ModelConfig model;
  TrainConfig train;
  SamplingConfig sampling;
  Modality modality = Modality::rgb;
  std::size_t epoch = 0;
  std::string rng_state;  // textual std::mt19937_64 state
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const Model<T>& model, const CheckpointInfo& info);

// Converts stored tensors to T when the stored precision differs.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

std::string rng_state(const Rng& rng);
Rng rng_from_state(const std::string& state);

// ---- synthetic data -----------------------------------------------------------------------

struct SyntheticSpec {
  std::size_t classes = 4;
  std::size_t videos = 40;
  std::size_t segments_per_video = 1;
  double fps = 8.0;
  std::size_t dim = 0;  // 0: 4 coordinates per class, at least 16
  std::uint64_t seed = 0;
  std::vector<Modality> modalities{Modality::rgb};
  std::size_t participants = 5;
  double train_fraction = 0.8;  // leading videos go to train.csv
};

// Generative rule: frame features are uniform noise in [0, 0.5); from 3 s
// before a segment starts until it stops, the `block` coordinates
// [c * block, (c + 1) * block) of its action class c are raised by 1.
// Segments are at least 10 s apart, so every sampler scope of the presets
// sees exactly one class.
struct SyntheticData {
  SyntheticSpec spec;
  std::size_t dim = 0;
  std::size_t block = 0;
  std::vector<FrameFeatureSequence> sequences;  // video-major, then modality order
  AnnotationTable annotations;
  std::size_t train_rows = 0;  // rows [0, train_rows) form the train split
  ActionMap actions;
  SubsetLists subsets;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec);

// Inverse of the generative rule applied to a max-pooled feature vector.
int synthetic_oracle(std::span<const float> pooled, std::size_t classes, std::size_t block);

struct ManifestEntry {
  std::string path;  // relative to the output directory
  std::uint64_t checksum = 0;
  std::uintmax_t bytes = 0;
};

// Writes features/<modality>/<video>.tagf, annotations.csv, train.csv,
// val.csv, actions.csv, subsets.txt and manifest.txt under `dir`.
std::vector<ManifestEntry> write_synthetic(const SyntheticData& data, const std::filesystem::path& dir);

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace tempagg
