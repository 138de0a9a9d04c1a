#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spotkit/binary_io.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/geometry.hpp"

namespace spotkit {

/// A timestamped class occurrence; ground truth uses confidence 1.
struct SpotEvent {
  std::size_t class_id = 0;
  double time_s = 0.0;
  double confidence = 1.0;

  bool operator==(const SpotEvent&) const = default;
};

/// Per-token label grid y [T_l x C].
struct LabelMatrix {
  std::size_t tokens = 0, classes = 0;
  std::vector<double> y;

  LabelMatrix() = default;
  LabelMatrix(std::size_t t, std::size_t c) : tokens(t), classes(c), y(t * c, 0.0) {}
  double& at(std::size_t t, std::size_t c) { return y[t * classes + c]; }
  double at(std::size_t t, std::size_t c) const { return y[t * classes + c]; }
};

inline double frame_time(std::size_t frame, double fps) { return static_cast<double>(frame) / fps; }

/// Mean frame timestamp of each small window of a global window.
inline std::vector<double> token_timestamps(double window_start_s, const WindowGeometry& g) {
  std::vector<double> out(g.tokens_per_window());
  const double offset = static_cast<double>(g.small_frames - 1) / (2.0 * g.fps);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = window_start_s + static_cast<double>(i * g.small_frames) / g.fps + offset;
  }
  return out;
}

/// y[i][c] = 1 iff some frame of small window i lies within `radius_s` of a
/// class-c event that itself falls inside the global window.
inline LabelMatrix assign_labels(std::span<const SpotEvent> events, double window_start_s, const WindowGeometry& g,
                                 double radius_s, std::size_t num_classes) {
  if (!(radius_s >= 0.0)) throw ParameterError("assign_labels: radius must be non-negative");
  LabelMatrix labels(g.tokens_per_window(), num_classes);
  const double window_end = window_start_s + g.global_window_seconds();
  for (const auto& e : events) {
    if (e.class_id >= num_classes) throw ParameterError("assign_labels: class id out of range");
    if (e.time_s < window_start_s || e.time_s >= window_end) continue;
    for (std::size_t f = 0; f < g.global_frames; ++f) {
      const double t = window_start_s + frame_time(f, g.fps);
      if (std::abs(t - e.time_s) <= radius_s) labels.at(f / g.small_frames, e.class_id) = 1.0;
    }
  }
  return labels;
}

/// Half-overlapping window starts (seconds) covering a video, with a final
/// window clamped to the video end when the stride leaves a remainder.
inline std::vector<double> sliding_windows(double video_duration_s, const WindowGeometry& g) {
  const double window = g.global_window_seconds();
  const double stride = static_cast<double>(g.global_frames / 2) / g.fps;
  if (video_duration_s <= window) return {0.0};
  std::vector<double> starts;
  double s = 0.0;
  for (; s + window <= video_duration_s + 1e-9; s += stride) starts.push_back(s);
  if (starts.back() + window < video_duration_s - 1e-9) starts.push_back(video_duration_s - window);
  return starts;
}

/// Frame-index variant used by inference; identical layout to sliding_windows.
inline std::vector<std::size_t> sliding_window_frames(std::size_t frame_count, const WindowGeometry& g) {
  if (frame_count <= g.global_frames) return {0};
  const std::size_t stride = std::max<std::size_t>(g.global_frames / 2, 1);
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + g.global_frames <= frame_count; s += stride) starts.push_back(s);
  if (starts.back() + g.global_frames < frame_count) starts.push_back(frame_count - g.global_frames);
  return starts;
}

/// Token predictions of one global window.
struct WindowPrediction {
  double start_s = 0.0;
  double end_s = 0.0;
  std::vector<double> times;   // T_l
  std::vector<double> scores;  // T_l x C
  std::size_t classes = 0;
  // Edges that coincide with the video boundary have no context to gain from
  // neighbouring windows and are never trimmed.
  bool at_video_start = false;
  bool at_video_end = false;
};

/// Drops tokens within `ignore_s` of the window start or end.
inline std::vector<WindowPrediction> ignore_edges(std::vector<WindowPrediction> windows, double ignore_s) {
  if (!(ignore_s >= 0.0)) throw ParameterError("ignore_edges: ignore seconds must be non-negative");
  for (auto& w : windows) {
    if (2.0 * ignore_s >= w.end_s - w.start_s && ignore_s > 0.0) {
      throw ParameterError("ignore_edges: ignoring " + std::to_string(ignore_s) + " s on each side removes the whole " +
                           std::to_string(w.end_s - w.start_s) + " s window");
    }
    WindowPrediction kept = w;
    kept.times.clear();
    kept.scores.clear();
    for (std::size_t i = 0; i < w.times.size(); ++i) {
      const double t = w.times[i];
      const bool head = !w.at_video_start && t - w.start_s < ignore_s;
      const bool tail = !w.at_video_end && w.end_s - t <= ignore_s;
      if (head || tail) continue;
      kept.times.push_back(t);
      kept.scores.insert(kept.scores.end(), w.scores.begin() + static_cast<std::ptrdiff_t>(i * w.classes),
                         w.scores.begin() + static_cast<std::ptrdiff_t>((i + 1) * w.classes));
    }
    w = std::move(kept);
  }
  return windows;
}

enum class MergeMode { Max, Average };

/// One score per (timestamp, class) across all windows.
struct ScoreTrack {
  std::size_t classes = 0;
  std::vector<double> times;   // ascending
  std::vector<double> scores;  // times.size() x classes

  std::vector<SpotEvent> events() const {
    std::vector<SpotEvent> out;
    for (std::size_t i = 0; i < times.size(); ++i)
      for (std::size_t c = 0; c < classes; ++c) out.push_back({c, times[i], scores[i * classes + c]});
    return out;
  }
};

// Timestamps are compared on a half-frame grid so values computed along
// different arithmetic paths coincide.
inline std::int64_t time_key(double t, double fps) { return std::llround(t * fps * 2.0); }

inline ScoreTrack merge_overlaps(std::span<const WindowPrediction> windows, MergeMode mode, double fps) {
  std::size_t classes = 0;
  for (const auto& w : windows) {
    if (classes && w.classes != classes) throw ShapeError("merge_overlaps: windows disagree on class count");
    classes = w.classes;
  }
  struct Acc {
    double time;
    std::vector<double> value;
    std::vector<std::size_t> count;
  };
  std::map<std::int64_t, Acc> acc;
  for (const auto& w : windows) {
    for (std::size_t i = 0; i < w.times.size(); ++i) {
      auto [it, inserted] = acc.try_emplace(time_key(w.times[i], fps),
                                            Acc{w.times[i], std::vector<double>(classes, 0.0),
                                                std::vector<std::size_t>(classes, 0)});
      for (std::size_t c = 0; c < classes; ++c) {
        const double s = w.scores[i * classes + c];
        auto& v = it->second.value[c];
        auto& n = it->second.count[c];
        if (mode == MergeMode::Max) {
          v = n == 0 ? s : std::max(v, s);
        } else {
          v += s;
        }
        ++n;
      }
    }
  }
  ScoreTrack track;
  track.classes = classes;
  for (auto& [key, a] : acc) {
    track.times.push_back(a.time);
    for (std::size_t c = 0; c < classes; ++c) {
      track.scores.push_back(mode == MergeMode::Average ? a.value[c] / static_cast<double>(a.count[c]) : a.value[c]);
    }
  }
  return track;
}

/// Mean of k tracks per (timestamp, class); a point absent from a track
/// contributes 0.
inline ScoreTrack ensemble_average(std::span<const ScoreTrack> tracks, double fps) {
  if (tracks.empty()) throw ParameterError("ensemble_average: no tracks");
  const std::size_t classes = tracks.front().classes;
  std::map<std::int64_t, std::pair<double, std::vector<double>>> acc;
  for (const auto& t : tracks) {
    if (t.classes != classes) throw ShapeError("ensemble_average: tracks disagree on class count");
    for (std::size_t i = 0; i < t.times.size(); ++i) {
      auto [it, _] = acc.try_emplace(time_key(t.times[i], fps), t.times[i], std::vector<double>(classes, 0.0));
      for (std::size_t c = 0; c < classes; ++c) it->second.second[c] += t.scores[i * classes + c];
    }
  }
  ScoreTrack out;
  out.classes = classes;
  const double k = static_cast<double>(tracks.size());
  for (auto& [key, v] : acc) {
    out.times.push_back(v.first);
    for (double s : v.second) out.scores.push_back(s / k);
  }
  return out;
}

enum class NmsMode { Hard, Soft };

namespace detail {

// Higher confidence first; ties by earlier time, then lower class id.
inline bool nms_priority(const SpotEvent& a, const SpotEvent& b) {
  if (a.confidence != b.confidence) return a.confidence > b.confidence;
  if (a.time_s != b.time_s) return a.time_s < b.time_s;
  return a.class_id < b.class_id;
}

inline bool by_time(const SpotEvent& a, const SpotEvent& b) {
  if (a.time_s != b.time_s) return a.time_s < b.time_s;
  if (a.class_id != b.class_id) return a.class_id < b.class_id;
  return a.confidence > b.confidence;
}

}  // namespace detail

/// Temporal non-maximum suppression, independently per class.
///
/// Hard: keep the best remaining event and drop same-class events with
/// |dt| < window. Soft: keep every event but scale the others within the
/// window by |dt| / window, re-ranking after each pick. Output sorted by time.
inline std::vector<SpotEvent> nms(std::vector<SpotEvent> events, NmsMode mode, double window_s) {
  if (!(window_s > 0.0)) throw ParameterError("nms: window must be positive");
  std::map<std::size_t, std::vector<SpotEvent>> per_class;
  for (const auto& e : events) per_class[e.class_id].push_back(e);
  std::vector<SpotEvent> out;
  for (auto& [cls, pending] : per_class) {
    while (!pending.empty()) {
      auto best = std::min_element(pending.begin(), pending.end(), detail::nms_priority);
      const SpotEvent picked = *best;
      pending.erase(best);
      out.push_back(picked);
      if (mode == NmsMode::Hard) {
        std::erase_if(pending, [&](const SpotEvent& e) { return std::abs(e.time_s - picked.time_s) < window_s; });
      } else {
        for (auto& e : pending) {
          const double dt = std::abs(e.time_s - picked.time_s);
          if (dt < window_s) e.confidence *= dt / window_s;
        }
      }
    }
  }
  std::sort(out.begin(), out.end(), detail::by_time);
  return out;
}

// ---------------------------------------------------------------------------
// JSON documents

/// Ordered class names; position defines class_id.
struct ClassVocabulary {
  std::vector<std::string> names;

  std::size_t size() const { return names.size(); }
  std::size_t id_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    throw LookupError("unknown class '" + name + "'");
  }
  const std::string& name_of(std::size_t id) const {
    if (id >= names.size()) throw LookupError("class id " + std::to_string(id) + " out of range");
    return names[id];
  }
};

/// Annotations (ground truth) or predictions for one video.
struct VideoEvents {
  std::string video_id;
  double duration_s = 0.0;
  std::vector<SpotEvent> events;
};

inline nlohmann::json parse_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

inline ClassVocabulary vocabulary_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("class vocabulary must be a JSON array of names");
  ClassVocabulary v;
  for (const auto& n : j) {
    if (!n.is_string()) throw FormatError("class vocabulary entries must be strings");
    v.names.push_back(n.get<std::string>());
  }
  return v;
}

inline nlohmann::json to_json(const ClassVocabulary& v) { return v.names; }

inline nlohmann::json to_json(const VideoEvents& v, const ClassVocabulary& vocab, bool with_confidence) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : v.events) {
    nlohmann::json j = {{"class", vocab.name_of(e.class_id)}, {"time_s", e.time_s}};
    if (with_confidence) j["confidence"] = e.confidence;
    events.push_back(std::move(j));
  }
  return {{"video_id", v.video_id}, {"duration_s", v.duration_s}, {"events", std::move(events)}};
}

inline VideoEvents video_events_from_json(const nlohmann::json& j, const ClassVocabulary& vocab) {
  try {
    VideoEvents v;
    v.video_id = j.at("video_id").get<std::string>();
    v.duration_s = j.at("duration_s").get<double>();
    for (const auto& e : j.at("events")) {
      SpotEvent ev;
      ev.class_id = vocab.id_of(e.at("class").get<std::string>());
      ev.time_s = e.at("time_s").get<double>();
      ev.confidence = e.contains("confidence") ? e.at("confidence").get<double>() : 1.0;
      if (ev.time_s < 0.0 || ev.confidence < 0.0 || ev.confidence > 1.0) {
        throw FormatError("event out of range in video " + v.video_id);
      }
      v.events.push_back(ev);
    }
    return v;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed events document: ") + e.what());
  }
}

/// Predictions file: one document per video in a JSON array (a single
/// object is accepted too).
inline std::vector<VideoEvents> load_predictions(const std::filesystem::path& path, const ClassVocabulary& vocab) {
  const auto j = parse_json_file(path);
  std::vector<VideoEvents> out;
  if (j.is_array()) {
    for (const auto& v : j) out.push_back(video_events_from_json(v, vocab));
  } else {
    out.push_back(video_events_from_json(j, vocab));
  }
  return out;
}

inline void save_predictions(const std::filesystem::path& path, std::span<const VideoEvents> videos,
                             const ClassVocabulary& vocab) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& v : videos) arr.push_back(to_json(v, vocab, true));
  bin::write_text_atomic(path, arr.dump(1) + "\n");
}

}  // namespace spotkit
