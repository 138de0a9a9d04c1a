#pragma once

#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "spotkit/data_synth.hpp"
#include "spotkit/encoders.hpp"
#include "spotkit/feature_bank.hpp"
#include "spotkit/pipeline.hpp"
#include "spotkit/spotting.hpp"

namespace spotkit {

enum class BankSource { Spatial, SpatioTemporal };

/// One unit-norm feature row every `stride_s` seconds per video, timestamped
/// at the mean frame time of the small window starting there.
///
/// Spatial: the spatial embedding of that small window. SpatioTemporal: the
/// temporal token of that small window inside a global window, which needs
/// the stride to equal one small window.
inline FeatureBank extract_bank(const SpotModel& model, std::span<const Video> videos, double stride_s,
                                BankSource source = BankSource::Spatial, std::size_t batch_windows = 64) {
  const WindowGeometry& g = model.geometry;
  const double stride_frames_real = stride_s * g.fps;
  const auto stride_frames = static_cast<std::size_t>(std::llround(stride_frames_real));
  if (!(stride_s > 0.0) || stride_frames == 0 || std::abs(stride_frames_real - double(stride_frames)) > 1e-9) {
    throw ParameterError("extract_bank: stride must be a positive whole number of frames");
  }
  if (source == BankSource::SpatioTemporal && stride_frames != g.small_frames) {
    throw ParameterError("extract_bank: spatio-temporal rows need the stride to equal one small window");
  }
  const double offset = static_cast<double>(g.small_frames - 1) / (2.0 * g.fps);
  NoGradGuard ng;
  FeatureBank bank;
  bank.dim = source == BankSource::Spatial ? model.spatial.dim() : model.config.temporal_dim;
  for (const auto& v : videos) {
    if (v.channels != g.channels || v.height != g.height || v.width != g.width || v.fps != g.fps) {
      throw ConfigError("video " + v.id + " does not match the checkpoint geometry");
    }
    const std::size_t frames = v.frame_count();
    if (frames < g.small_frames) continue;
    if (source == BankSource::Spatial) {
      std::vector<std::size_t> starts;
      for (std::size_t s = 0; s + g.small_frames <= frames; s += stride_frames) starts.push_back(s);
      for (std::size_t lo = 0; lo < starts.size(); lo += batch_windows) {
        const std::size_t hi = std::min(starts.size(), lo + batch_windows);
        std::vector<double> rows;
        for (std::size_t i = lo; i < hi; ++i) append_tubelets(v.frames_at(starts[i], g.small_frames), g, rows);
        const Tensor h = model.spatial.forward(tubelet_tensor(std::move(rows), g), hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
          bank.append(v.id, frame_time(starts[i], g.fps) + offset, h.data().subspan((i - lo) * bank.dim, bank.dim));
        }
      }
    } else {
      if (frames < g.global_frames) continue;
      const std::size_t tl = g.tokens_per_window();
      const std::size_t slots = frames / g.small_frames;
      std::vector<std::vector<double>> feature(slots);
      std::vector<std::size_t> starts;
      for (std::size_t s = 0; s + g.global_frames <= frames; s += g.global_frames) starts.push_back(s);
      const std::size_t last = (frames - g.global_frames) / g.small_frames * g.small_frames;
      if (starts.back() != last) starts.push_back(last);
      for (std::size_t s : starts) {
        std::vector<double> rows;
        append_window_tubelets(v.frames_at(s, g.global_frames), g, rows);
        const Tensor z = model.encode(tubelet_tensor(std::move(rows), g), 1, 0.0, nullptr);
        for (std::size_t j = 0; j < tl; ++j) {
          auto& slot = feature[s / g.small_frames + j];
          if (slot.empty()) slot.assign(z.data().begin() + j * bank.dim, z.data().begin() + (j + 1) * bank.dim);
        }
      }
      for (std::size_t k = 0; k < slots; ++k) {
        if (!feature[k].empty()) bank.append(v.id, frame_time(k * g.small_frames, g.fps) + offset, feature[k]);
      }
    }
  }
  bank.normalize_rows();
  return bank;
}

inline FeatureBank extract_bank(const Checkpoint& ck, const Dataset& ds, double stride_s,
                                BankSource source = BankSource::Spatial) {
  const SpotModel model = model_from_checkpoint(ck);
  std::vector<Video> videos;
  for (const auto& m : ds.matches) videos.push_back(m.video);
  return extract_bank(model, videos, stride_s, source);
}

struct InferenceOptions {
  std::optional<NmsMode> nms = NmsMode::Hard;  // nullopt keeps the merged track
  double nms_window_s = 5.0;
  double ignore_s = 6.0;
  MergeMode merge = MergeMode::Max;
  std::size_t batch_windows = 8;
};

/// Upper bound on the edge-ignore setting; settings must also stay below half
/// a window so some tokens survive.
inline double max_ignore_s(const WindowGeometry& g) {
  return static_cast<double>(g.global_frames) * static_cast<double>(g.small_frames) / (4.0 * g.fps);
}

/// Largest edge-ignore setting for which half-overlapping windows still
/// cover every token of a video; larger settings leave gaps between windows.
inline double coverage_ignore_s(const WindowGeometry& g) {
  return static_cast<double>(g.global_frames) / (4.0 * g.fps);
}

inline void validate_inference(const InferenceOptions& o, const WindowGeometry& g) {
  if (!(o.ignore_s >= 0.0) || o.ignore_s > max_ignore_s(g) || 2.0 * o.ignore_s >= g.global_window_seconds()) {
    throw ConfigError("ignore must be in [0, " + std::to_string(std::min(max_ignore_s(g), g.global_window_seconds() / 2.0)) +
                      ") s for this geometry");
  }
  if (o.nms && !(o.nms_window_s > 0.0)) throw ConfigError("nms window must be positive");
  if (o.batch_windows == 0) throw ConfigError("batch size must be positive");
}

/// Raw per-window token probabilities over half-overlapping windows.
inline std::vector<WindowPrediction> predict_windows(const SpotModel& model, const Video& video,
                                                     std::size_t batch_windows = 8) {
  const WindowGeometry& g = model.geometry;
  if (video.channels != g.channels || video.height != g.height || video.width != g.width || video.fps != g.fps) {
    throw ConfigError("video " + video.id + " does not match the checkpoint geometry");
  }
  if (video.frame_count() < g.global_frames) throw ConfigError("video " + video.id + " is shorter than one window");
  const auto starts = sliding_window_frames(video.frame_count(), g);
  const std::size_t tl = g.tokens_per_window(), classes = model.config.num_classes;
  std::vector<WindowPrediction> out;
  NoGradGuard ng;
  for (std::size_t lo = 0; lo < starts.size(); lo += batch_windows) {
    const std::size_t hi = std::min(starts.size(), lo + batch_windows);
    std::vector<double> rows;
    for (std::size_t i = lo; i < hi; ++i) append_window_tubelets(video.frames_at(starts[i], g.global_frames), g, rows);
    const Tensor probs = classify(model.encode(tubelet_tensor(std::move(rows), g), hi - lo, 0.0, nullptr), model.classifier);
    for (std::size_t i = lo; i < hi; ++i) {
      WindowPrediction w;
      w.start_s = frame_time(starts[i], g.fps);
      w.end_s = w.start_s + g.global_window_seconds();
      w.times = token_timestamps(w.start_s, g);
      w.classes = classes;
      const auto src = probs.data().subspan((i - lo) * tl * classes, tl * classes);
      w.scores.assign(src.begin(), src.end());
      w.at_video_start = starts[i] == 0;
      w.at_video_end = starts[i] + g.global_frames == video.frame_count();
      out.push_back(std::move(w));
    }
  }
  return out;
}

inline ScoreTrack predict_track(const SpotModel& model, const Video& video, const InferenceOptions& o) {
  validate_inference(o, model.geometry);
  const auto windows = ignore_edges(predict_windows(model, video, o.batch_windows), o.ignore_s);
  return merge_overlaps(windows, o.merge, model.geometry.fps);
}

inline std::vector<SpotEvent> finalize_events(const ScoreTrack& track, const InferenceOptions& o) {
  auto events = track.events();
  if (o.nms) return nms(std::move(events), *o.nms, o.nms_window_s);
  std::sort(events.begin(), events.end(), detail::by_time);
  return events;
}

inline VideoEvents predict_video(const SpotModel& model, const Video& video, const InferenceOptions& o) {
  return {video.id, video.duration_s(), finalize_events(predict_track(model, video, o), o)};
}

inline std::vector<VideoEvents> predict_dataset(const SpotModel& model, const Dataset& ds, const InferenceOptions& o) {
  std::vector<VideoEvents> out;
  for (const auto& m : ds.matches) out.push_back(predict_video(model, m.video, o));
  return out;
}

/// Inverse of ScoreTrack::events for one video's raw predictions: a point
/// absent for some class scores 0.
inline ScoreTrack track_from_events(std::span<const SpotEvent> events, std::size_t classes, double fps) {
  std::map<std::int64_t, std::pair<double, std::vector<double>>> acc;
  for (const auto& e : events) {
    if (e.class_id >= classes) throw LookupError("prediction class id out of range");
    auto [it, _] = acc.try_emplace(time_key(e.time_s, fps), e.time_s, std::vector<double>(classes, 0.0));
    it->second.second[e.class_id] = e.confidence;
  }
  ScoreTrack t;
  t.classes = classes;
  for (auto& [key, v] : acc) {
    t.times.push_back(v.first);
    t.scores.insert(t.scores.end(), v.second.begin(), v.second.end());
  }
  return t;
}

}  // namespace spotkit
