#pragma once

// Turns per-frame feature sequences into the snippet sets the model consumes:
// "recent" sets over short windows near the observation boundary and
// "spanning" sets over a long scope at several granularities. Every snippet
// vector is the coordinatewise max of the frames inside its extent.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tempagg {

enum class Modality { rgb, flow, obj, roi };

std::string_view modality_name(Modality m);
Modality parse_modality(std::string_view name);
// Feature widths of the pre-extracted EPIC-KITCHENS-100 features.
std::size_t reference_feature_dim(Modality m);

struct FrameFeatureSequence {
  std::string video_id;
  Modality modality = Modality::rgb;
  std::vector<double> timestamps;  // seconds, strictly increasing, >= 0
  std::size_t dim = 0;
  std::vector<float> features;  // frames() x dim, row-major

  // Frame k at k / fps.
  static FrameFeatureSequence uniform(std::string video_id, Modality modality, double fps,
                                      std::size_t dim, std::vector<float> features);

  std::size_t frames() const { return timestamps.size(); }
  std::span<const float> frame(std::size_t k) const { return {features.data() + k * dim, dim}; }
  // Last timestamp plus one (mean) frame period; 1 s period for single frames.
  double end_time() const;
  void validate() const;
};

struct TimeSpan {
  double start = 0.0;
  double end = 0.0;
  double width() const { return end - start; }
  bool operator==(const TimeSpan&) const = default;
};

enum class SnippetKind { recent, spanning };

// Whether a frame exactly at scope.end belongs to the scope. Causal
// (anticipation) scopes are open so the observation boundary is never read.
enum class ScopeEnd { closed, open };

struct SnippetSet {
  SnippetKind kind = SnippetKind::spanning;
  std::size_t dim = 0;
  std::vector<float> vectors;     // count() x dim
  std::vector<TimeSpan> extents;  // one per snippet, contiguous, equal width
  bool clipped = false;           // scope was cut to the available footage

  std::size_t count() const { return extents.size(); }
  std::span<const float> vector(std::size_t k) const { return {vectors.data() + k * dim, dim}; }
};

struct SampledInput {
  std::vector<SnippetSet> recent;    // one per recent scope (one per TAB)
  std::vector<SnippetSet> spanning;  // one per spanning scale
};

enum class Task { anticipation, recognition, activity };

std::string_view task_name(Task t);
Task parse_task(std::string_view name);

struct SamplingConfig {
  Task task = Task::anticipation;
  // anticipation: recent scope i starts recent_offsets[i] seconds before t.
  std::vector<double> recent_offsets;
  // recognition: recent window i is (s - x, e + x) for x = recent_expansions[i].
  std::vector<double> recent_expansions;
  // activity: the video is split into this many equal recent scopes.
  std::size_t recent_partitions = 3;
  std::size_t recent_snippets = 2;  // K_R
  std::vector<std::size_t> spanning_scales;
  // anticipation: length before t; recognition: margin on both sides of the
  // segment; unset: the entire video.
  std::optional<double> spanning_scope;
  double anticipation_gap = 1.0;  // seconds between observation end and action start

  std::size_t num_recent_scopes() const;
  void validate() const;

  static SamplingConfig epic_anticipation();
  static SamplingConfig epic_recognition();
  static SamplingConfig breakfast_activity();
};

// Test hook: every frame index whose features a sampler reads is appended.
struct FrameAccessLog {
  std::vector<std::size_t> frames;
};

SnippetSet pool_snippets(const FrameFeatureSequence& seq, TimeSpan scope, std::size_t count,
                         SnippetKind kind = SnippetKind::spanning,
                         ScopeEnd end = ScopeEnd::closed, FrameAccessLog* audit = nullptr);

// Observation boundary t = action_start - anticipation_gap; nothing at or
// after t is read.
SampledInput sample_anticipation(const FrameFeatureSequence& seq, double action_start,
                                 const SamplingConfig& cfg, FrameAccessLog* audit = nullptr);

SampledInput sample_recognition(const FrameFeatureSequence& seq, TimeSpan segment,
                                const SamplingConfig& cfg, FrameAccessLog* audit = nullptr);

SampledInput sample_activity(const FrameFeatureSequence& seq, const SamplingConfig& cfg,
                             FrameAccessLog* audit = nullptr);

// Dispatches on cfg.task; `segment` is the annotated (start, stop).
SampledInput sample_for_task(const FrameFeatureSequence& seq, TimeSpan segment,
                             const SamplingConfig& cfg, FrameAccessLog* audit = nullptr);

}  // namespace tempagg
