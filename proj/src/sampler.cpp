#include "tempagg/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "tempagg/error.hpp"

namespace tempagg {

std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::rgb: return "rgb";
    case Modality::flow: return "flow";
    case Modality::obj: return "obj";
    case Modality::roi: return "roi";
  }
  return "?";
}

Modality parse_modality(std::string_view name) {
  for (auto m : {Modality::rgb, Modality::flow, Modality::obj, Modality::roi}) {
    if (modality_name(m) == name) return m;
  }
  throw ValueError("unknown modality '" + std::string(name) + "' (expected rgb, flow, obj or roi)");
}

std::size_t reference_feature_dim(Modality m) {
  return m == Modality::obj ? 352 : 1024;
}

std::string_view task_name(Task t) {
  switch (t) {
    case Task::anticipation: return "anticipation";
    case Task::recognition: return "recognition";
    case Task::activity: return "activity";
  }
  return "?";
}

Task parse_task(std::string_view name) {
  for (auto t : {Task::anticipation, Task::recognition, Task::activity}) {
    if (task_name(t) == name) return t;
  }
  throw ValueError("unknown task '" + std::string(name) +
                   "' (expected anticipation, recognition or activity)");
}

// ---- FrameFeatureSequence ----------------------------------------------------

FrameFeatureSequence FrameFeatureSequence::uniform(std::string video_id, Modality modality,
                                                   double fps, std::size_t dim,
                                                   std::vector<float> features) {
  if (!(fps > 0.0)) throw ValueError("fps must be positive");
  if (dim == 0 || features.size() % dim != 0) {
    throw DimensionError("feature buffer of " + std::to_string(features.size()) +
                         " values is not a multiple of dim " + std::to_string(dim));
  }
  FrameFeatureSequence seq;
  seq.video_id = std::move(video_id);
  seq.modality = modality;
  seq.dim = dim;
  const std::size_t frames = features.size() / dim;
  seq.timestamps.resize(frames);
  for (std::size_t k = 0; k < frames; ++k) seq.timestamps[k] = static_cast<double>(k) / fps;
  seq.features = std::move(features);
  return seq;
}

double FrameFeatureSequence::end_time() const {
  if (timestamps.empty()) return 0.0;
  const std::size_t n = timestamps.size();
  const double period = n > 1 ? (timestamps.back() - timestamps.front()) / static_cast<double>(n - 1) : 1.0;
  return timestamps.back() + period;
}

void FrameFeatureSequence::validate() const {
  if (dim == 0) throw DimensionError("video " + video_id + ": feature dim must be positive");
  if (features.size() != timestamps.size() * dim) {
    throw DimensionError("video " + video_id + ": " + std::to_string(timestamps.size()) +
                         " timestamps but " + std::to_string(features.size()) + " feature values at dim " +
                         std::to_string(dim));
  }
  for (std::size_t k = 0; k < timestamps.size(); ++k) {
    if (!(timestamps[k] >= 0.0) || (k > 0 && !(timestamps[k] > timestamps[k - 1]))) {
      throw ValueError("video " + video_id + ": timestamps must be non-negative and strictly increasing");
    }
  }
}

// ---- SamplingConfig -----------------------------------------------------------

std::size_t SamplingConfig::num_recent_scopes() const {
  switch (task) {
    case Task::anticipation: return recent_offsets.size();
    case Task::recognition: return recent_expansions.size();
    case Task::activity: return recent_partitions;
  }
  return 0;
}

void SamplingConfig::validate() const {
  if (recent_snippets == 0) throw ConfigError("recent_snippets (K_R) must be >= 1");
  if (spanning_scales.empty()) throw ConfigError("spanning_scales must not be empty");
  std::set<std::size_t> seen;
  for (auto k : spanning_scales) {
    if (k == 0) throw ConfigError("every spanning scale must be >= 1");
    if (!seen.insert(k).second) throw ConfigError("spanning scales must be distinct");
  }
  if (num_recent_scopes() == 0) throw ConfigError("at least one recent scope is required");
  switch (task) {
    case Task::anticipation:
      for (double o : recent_offsets) {
        if (!(o > 0.0)) throw ConfigError("recent_offsets must be positive (window (t - o, t) needs i < j)");
      }
      if (!spanning_scope || !(*spanning_scope > 0.0)) {
        throw ConfigError("anticipation needs a positive spanning_scope in seconds");
      }
      if (!(anticipation_gap >= 0.0)) throw ConfigError("anticipation_gap must be >= 0");
      break;
    case Task::recognition:
      for (double x : recent_expansions) {
        if (!(x >= 0.0)) throw ConfigError("recent_expansions must be >= 0");
      }
      if (spanning_scope && !(*spanning_scope >= 0.0)) throw ConfigError("spanning_scope must be >= 0");
      break;
    case Task::activity:
      break;
  }
}

SamplingConfig SamplingConfig::epic_anticipation() {
  SamplingConfig c;
  c.task = Task::anticipation;
  c.recent_offsets = {1.6, 1.2, 0.8, 0.4};
  c.recent_snippets = 2;
  c.spanning_scales = {2, 3, 5};
  c.spanning_scope = 6.0;
  c.anticipation_gap = 1.0;
  return c;
}

SamplingConfig SamplingConfig::epic_recognition() {
  SamplingConfig c;
  c.task = Task::recognition;
  c.recent_expansions = {0.0, 1.0, 2.0, 3.0};
  c.recent_snippets = 5;
  c.spanning_scales = {2, 3, 5};
  c.spanning_scope = 6.0;
  return c;
}

SamplingConfig SamplingConfig::breakfast_activity() {
  SamplingConfig c;
  c.task = Task::activity;
  c.recent_partitions = 3;
  c.recent_snippets = 5;
  c.spanning_scales = {10, 15, 20};
  c.spanning_scope.reset();
  return c;
}

// ---- pooling --------------------------------------------------------------------

namespace {

std::string scope_str(TimeSpan s) {
  std::ostringstream os;
  os << '[' << s.start << ", " << s.end << ']';
  return os.str();
}

void max_into(std::span<float> dst, std::span<const float> src) {
  for (std::size_t d = 0; d < dst.size(); ++d) dst[d] = std::max(dst[d], src[d]);
}

}  // namespace

SnippetSet pool_snippets(const FrameFeatureSequence& seq, TimeSpan scope, std::size_t count,
                         SnippetKind kind, ScopeEnd end, FrameAccessLog* audit) {
  if (count == 0) throw ValueError("pool_snippets: snippet count must be >= 1");
  if (!(scope.start < scope.end)) {
    throw ValueError("pool_snippets: scope " + scope_str(scope) + " of video " + seq.video_id +
                     " must have start < end");
  }
  const auto& ts = seq.timestamps;
  const auto first = std::lower_bound(ts.begin(), ts.end(), scope.start);
  const auto last = end == ScopeEnd::closed ? std::upper_bound(first, ts.end(), scope.end)
                                            : std::lower_bound(first, ts.end(), scope.end);
  if (first == last) {
    throw DataCoverageError("video " + seq.video_id + " has no frames in scope " + scope_str(scope));
  }
  const auto lo = static_cast<std::size_t>(first - ts.begin());
  const auto hi = static_cast<std::size_t>(last - ts.begin());

  SnippetSet out;
  out.kind = kind;
  out.dim = seq.dim;
  out.vectors.assign(count * seq.dim, 0.0f);
  out.extents.resize(count);

  auto boundary = [&](std::size_t k) {
    return k == count ? scope.end
                      : scope.start + (scope.end - scope.start) * static_cast<double>(k) / static_cast<double>(count);
  };
  auto read = [&](std::size_t f) {
    if (audit) audit->frames.push_back(f);
    return seq.frame(f);
  };

  std::size_t cur = lo;
  for (std::size_t k = 0; k < count; ++k) {
    const TimeSpan ext{boundary(k), boundary(k + 1)};
    out.extents[k] = ext;
    std::size_t stop = hi;
    if (k + 1 < count) {
      stop = static_cast<std::size_t>(std::lower_bound(ts.begin() + cur, ts.begin() + hi, ext.end) - ts.begin());
    }
    std::span<float> dst(out.vectors.data() + k * seq.dim, seq.dim);
    if (cur < stop) {
      auto v = read(cur);
      std::copy(v.begin(), v.end(), dst.begin());
      for (std::size_t f = cur + 1; f < stop; ++f) max_into(dst, read(f));
    } else {
      // Empty sub-interval: borrow the nearest frame in scope, earlier on ties.
      std::size_t pick;
      if (cur == lo) {
        pick = cur;
      } else if (cur == hi) {
        pick = cur - 1;
      } else {
        const double before = ext.start - ts[cur - 1];
        const double after = ts[cur] - ext.end;
        pick = after < before ? cur : cur - 1;
      }
      auto v = read(pick);
      std::copy(v.begin(), v.end(), dst.begin());
    }
    cur = stop;
  }
  return out;
}

// ---- task samplers --------------------------------------------------------------

namespace {

// Clips `want` to [lo, hi]; marks the set when anything was cut.
TimeSpan clip(TimeSpan want, double lo, double hi, bool& clipped) {
  TimeSpan s{std::max(want.start, lo), std::min(want.end, hi)};
  clipped = s.start != want.start || s.end != want.end;
  return s;
}

std::vector<SnippetSet> spanning_sets(const FrameFeatureSequence& seq, TimeSpan scope, bool clipped,
                                      const SamplingConfig& cfg, ScopeEnd end, FrameAccessLog* audit) {
  std::vector<SnippetSet> sets;
  sets.reserve(cfg.spanning_scales.size());
  for (auto k : cfg.spanning_scales) {
    sets.push_back(pool_snippets(seq, scope, k, SnippetKind::spanning, end, audit));
    sets.back().clipped = clipped;
  }
  return sets;
}

}  // namespace

SampledInput sample_anticipation(const FrameFeatureSequence& seq, double action_start,
                                 const SamplingConfig& cfg, FrameAccessLog* audit) {
  if (cfg.task != Task::anticipation) throw ConfigError("sample_anticipation needs an anticipation config");
  cfg.validate();
  const double t = action_start - cfg.anticipation_gap;
  if (!(t > 0.0) || seq.timestamps.empty() || !(seq.timestamps.front() < t)) {
    throw DataCoverageError("video " + seq.video_id + ": no history before observation boundary t=" +
                            std::to_string(t) + " (action start " + std::to_string(action_start) + ")");
  }
  SampledInput out;
  for (double offset : cfg.recent_offsets) {
    bool clipped = false;
    const TimeSpan scope = clip({t - offset, t}, 0.0, t, clipped);
    out.recent.push_back(pool_snippets(seq, scope, cfg.recent_snippets, SnippetKind::recent, ScopeEnd::open, audit));
    out.recent.back().clipped = clipped;
  }
  bool clipped = false;
  const TimeSpan span = clip({t - *cfg.spanning_scope, t}, 0.0, t, clipped);
  out.spanning = spanning_sets(seq, span, clipped, cfg, ScopeEnd::open, audit);
  return out;
}

SampledInput sample_recognition(const FrameFeatureSequence& seq, TimeSpan segment,
                                const SamplingConfig& cfg, FrameAccessLog* audit) {
  if (cfg.task != Task::recognition) throw ConfigError("sample_recognition needs a recognition config");
  cfg.validate();
  if (!(segment.start < segment.end)) {
    throw ValueError("video " + seq.video_id + ": segment " + scope_str(segment) + " needs start < end");
  }
  const auto& ts = seq.timestamps;
  const auto inside = std::lower_bound(ts.begin(), ts.end(), segment.start);
  if (inside == ts.end() || *inside > segment.end) {
    throw DataCoverageError("video " + seq.video_id + " has no frames in segment " + scope_str(segment));
  }
  const double video_end = seq.end_time();
  SampledInput out;
  for (double x : cfg.recent_expansions) {
    bool clipped = false;
    const TimeSpan scope = clip({segment.start - x, segment.end + x}, 0.0, video_end, clipped);
    out.recent.push_back(pool_snippets(seq, scope, cfg.recent_snippets, SnippetKind::recent, ScopeEnd::closed, audit));
    out.recent.back().clipped = clipped;
  }
  bool clipped = false;
  const TimeSpan span = cfg.spanning_scope
                            ? clip({segment.start - *cfg.spanning_scope, segment.end + *cfg.spanning_scope}, 0.0,
                                   video_end, clipped)
                            : TimeSpan{0.0, video_end};
  out.spanning = spanning_sets(seq, span, clipped, cfg, ScopeEnd::closed, audit);
  return out;
}

SampledInput sample_activity(const FrameFeatureSequence& seq, const SamplingConfig& cfg, FrameAccessLog* audit) {
  if (cfg.task != Task::activity) throw ConfigError("sample_activity needs an activity config");
  cfg.validate();
  if (seq.frames() == 0) throw DataCoverageError("video " + seq.video_id + " has no frames");
  const double video_end = seq.end_time();
  const std::size_t parts = cfg.recent_partitions;
  SampledInput out;
  for (std::size_t p = 0; p < parts; ++p) {
    const double a = p == 0 ? 0.0 : video_end * static_cast<double>(p) / static_cast<double>(parts);
    const double b = p + 1 == parts ? video_end : video_end * static_cast<double>(p + 1) / static_cast<double>(parts);
    // Partitions share boundaries; only the last one owns its end frame.
    const ScopeEnd end = p + 1 == parts ? ScopeEnd::closed : ScopeEnd::open;
    TimeSpan scope{a, b};
    const auto& ts = seq.timestamps;
    const auto first = std::lower_bound(ts.begin(), ts.end(), a);
    const bool empty = first == ts.end() || (end == ScopeEnd::open ? *first >= b : *first > b);
    if (empty) {
      // Very short videos: widen to the whole video rather than fail.
      scope = {0.0, video_end};
    }
    out.recent.push_back(pool_snippets(seq, scope, cfg.recent_snippets, SnippetKind::recent,
                                       empty ? ScopeEnd::closed : end, audit));
    out.recent.back().clipped = empty;
  }
  out.spanning = spanning_sets(seq, {0.0, video_end}, false, cfg, ScopeEnd::closed, audit);
  return out;
}

SampledInput sample_for_task(const FrameFeatureSequence& seq, TimeSpan segment, const SamplingConfig& cfg,
                             FrameAccessLog* audit) {
  switch (cfg.task) {
    case Task::anticipation: return sample_anticipation(seq, segment.start, cfg, audit);
    case Task::recognition: return sample_recognition(seq, segment, cfg, audit);
    case Task::activity: return sample_activity(seq, cfg, audit);
  }
  throw ConfigError("unknown task");
}

}  // namespace tempagg
