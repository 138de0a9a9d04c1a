#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spotkit/binary_io.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/geometry.hpp"
#include "spotkit/rng.hpp"
#include "spotkit/spotting.hpp"

namespace spotkit {

inline constexpr std::string_view kVideoMagic = "CMDVID01";

/// Decoded frame stream, frames laid out [frame][channel][y][x].
struct Video {
  std::string id;
  double fps = 2.0;
  std::size_t channels = 3, height = 32, width = 32;
  std::vector<float> frames;

  std::size_t frame_size() const { return channels * height * width; }
  std::size_t frame_count() const { return frame_size() ? frames.size() / frame_size() : 0; }
  double duration_s() const { return static_cast<double>(frame_count()) / fps; }

  std::span<const float> frames_at(std::size_t first, std::size_t count) const {
    if (first + count > frame_count()) throw ShapeError("frame range past end of video " + id);
    return {frames.data() + first * frame_size(), count * frame_size()};
  }

  // Header: magic, u32 frame count, f64 fps, u32 channels, u32 height, u32 width.
  std::vector<char> serialize() const {
    bin::Writer w;
    w.magic(kVideoMagic);
    w.u32(static_cast<std::uint32_t>(frame_count()));
    w.f64(fps);
    w.u32(static_cast<std::uint32_t>(channels));
    w.u32(static_cast<std::uint32_t>(height));
    w.u32(static_cast<std::uint32_t>(width));
    w.bytes(frames.data(), frames.size() * sizeof(float));
    return w.buffer();
  }

  static Video deserialize(std::vector<char> bytes, std::string id, const std::string& what) {
    bin::Reader r(std::move(bytes), what);
    r.expect_magic(kVideoMagic);
    Video v;
    v.id = std::move(id);
    const std::uint32_t count = r.u32();
    v.fps = r.f64();
    v.channels = r.u32();
    v.height = r.u32();
    v.width = r.u32();
    if (!(v.fps > 0.0) || v.frame_size() == 0) throw FormatError(what + ": invalid geometry header");
    const std::uint64_t expected = std::uint64_t{count} * v.frame_size() * sizeof(float);
    if (expected != r.remaining()) {
      throw FormatError(what + ": payload has " + std::to_string(r.remaining()) + " bytes, header implies " +
                        std::to_string(expected));
    }
    v.frames.resize(std::size_t{count} * v.frame_size());
    r.bytes(v.frames.data(), v.frames.size() * sizeof(float));
    return v;
  }
};

inline void save_video(const Video& v, const std::filesystem::path& path) { bin::write_file_atomic(path, v.serialize()); }

inline Video load_video(const std::filesystem::path& path) {
  return Video::deserialize(bin::read_file(path), path.stem().string(), path.string());
}

/// Parameters of the planted-event generator.
struct SyntheticSpec {
  std::size_t n_classes = 5;
  double duration_s = 600.0;
  double events_per_class = 6.0;  // per match
  double min_gap_s = 8.0;         // between any two events of a match
  double amplitude = 2.0;
  double noise_sigma = 1.0;
  std::uint64_t seed = 0;
  WindowGeometry geometry;

  std::size_t events_per_match() const {
    return static_cast<std::size_t>(std::llround(events_per_class * static_cast<double>(n_classes)));
  }

  void validate() const {
    geometry.validate();
    if (n_classes == 0) throw ConfigError("synthetic spec: n_classes must be positive");
    if (!(duration_s > 0.0)) throw ConfigError("synthetic spec: duration must be positive");
    if (events_per_match() < 1) throw ConfigError("synthetic spec: at least one event per match is required");
    if (!(min_gap_s > 0.0)) throw ConfigError("synthetic spec: min_gap_s must be positive");
    if (!(noise_sigma >= 0.0)) throw ConfigError("synthetic spec: noise_sigma must be non-negative");
  }
};

inline constexpr double kMotifHalfWidthS = 0.5;

/// Class-specific oriented grating, flip-distinguishable: angles span
/// [0, pi/2] so a horizontal flip never maps one class onto another.
inline std::vector<float> class_motif(std::size_t cls, std::size_t n_classes, const WindowGeometry& g) {
  const double angle = n_classes > 1 ? (std::numbers::pi / 2.0) * static_cast<double>(cls) / static_cast<double>(n_classes - 1) : 0.0;
  const double cycles = 2.0 + static_cast<double>(cls % 3);
  std::vector<float> m(g.frame_size());
  for (std::size_t c = 0; c < g.channels; ++c) {
    const double phase = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(g.channels);
    const double tint = std::cos(2.0 * std::numbers::pi * static_cast<double>(cls) / static_cast<double>(n_classes) + phase);
    for (std::size_t y = 0; y < g.height; ++y) {
      for (std::size_t x = 0; x < g.width; ++x) {
        const double u = (static_cast<double>(x) * std::cos(angle) + static_cast<double>(y) * std::sin(angle)) /
                         static_cast<double>(g.width);
        m[(c * g.height + y) * g.width + x] =
            static_cast<float>(0.5 * std::cos(2.0 * std::numbers::pi * cycles * u + phase) + 0.5 * tint);
      }
    }
  }
  return m;
}

struct GeneratedMatch {
  Video video;
  VideoEvents annotations;
};

inline std::string match_name(std::size_t match_id) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "match_%03zu", match_id);
  return buf;
}

/// Gaussian-noise frames with class motifs blended around each event time;
/// fully determined by (spec.seed, match_id).
inline GeneratedMatch generate_match(const SyntheticSpec& spec, std::size_t match_id) {
  spec.validate();
  const auto& g = spec.geometry;
  const std::size_t n_events = spec.events_per_match();
  const double margin = 1.0;
  const double usable = spec.duration_s - 2.0 * margin;
  if (usable <= 0.0 || static_cast<double>(n_events - 1) * spec.min_gap_s >= usable) {
    throw ConfigError("synthetic spec infeasible: " + std::to_string(n_events) + " events with " +
                      std::to_string(spec.min_gap_s) + " s gaps do not fit in " + std::to_string(spec.duration_s) + " s");
  }
  Rng rng = make_rng(spec.seed, "match", match_id);

  // Event times: sorted uniform draws in the slack, then spaced by the gap,
  // which samples uniformly among gap-respecting layouts.
  const double slack = usable - static_cast<double>(n_events - 1) * spec.min_gap_s;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> offsets(n_events);
  for (auto& o : offsets) o = unit(rng) * slack;
  std::sort(offsets.begin(), offsets.end());
  std::vector<std::size_t> classes(n_events);
  for (std::size_t i = 0; i < n_events; ++i) classes[i] = i % spec.n_classes;
  std::shuffle(classes.begin(), classes.end(), rng);

  GeneratedMatch out;
  out.annotations.video_id = match_name(match_id);
  out.annotations.duration_s = spec.duration_s;
  for (std::size_t i = 0; i < n_events; ++i) {
    const double t = margin + offsets[i] + static_cast<double>(i) * spec.min_gap_s;
    // Millisecond resolution keeps the JSON round trip exact.
    out.annotations.events.push_back({classes[i], std::round(t * 1000.0) / 1000.0, 1.0});
  }

  Video& v = out.video;
  v.id = out.annotations.video_id;
  v.fps = g.fps;
  v.channels = g.channels;
  v.height = g.height;
  v.width = g.width;
  const auto frame_count = static_cast<std::size_t>(std::llround(spec.duration_s * g.fps));
  v.frames.resize(frame_count * g.frame_size());
  std::normal_distribution<float> noise(0.0f, static_cast<float>(spec.noise_sigma));
  for (auto& px : v.frames) px = noise(rng);

  std::vector<std::vector<float>> motifs;
  for (std::size_t c = 0; c < spec.n_classes; ++c) motifs.push_back(class_motif(c, spec.n_classes, g));
  for (const auto& e : out.annotations.events) {
    const auto lo = static_cast<long>(std::floor((e.time_s - kMotifHalfWidthS) * g.fps));
    const auto hi = static_cast<long>(std::ceil((e.time_s + kMotifHalfWidthS) * g.fps));
    for (long f = std::max(lo, 0L); f <= hi && f < static_cast<long>(frame_count); ++f) {
      const double dt = std::abs(frame_time(static_cast<std::size_t>(f), g.fps) - e.time_s);
      const double w = spec.amplitude * std::max(0.0, 1.0 - dt / kMotifHalfWidthS);
      if (w <= 0.0) continue;
      float* frame = v.frames.data() + static_cast<std::size_t>(f) * g.frame_size();
      const auto& m = motifs[e.class_id];
      for (std::size_t i = 0; i < m.size(); ++i) frame[i] += static_cast<float>(w) * m[i];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Augmentations

enum class TransformKind { ResizedCrop, HorizontalFlip, ColorJitter, GaussianBlur };

struct Transform {
  TransformKind kind;
  double probability = 0.0;
  double strength = 0.0;  // jitter magnitude / minimum crop area fraction / max blur sigma
  double hue = 0.0;       // jitter only
};

/// Ordered random transforms; parameters are drawn once per clip so every
/// frame of a clip sees the same transform.
struct AugmentationPolicy {
  std::string id;
  std::vector<Transform> transforms;

  static std::size_t blur_kernel(const WindowGeometry& g) {
    // 23 px at 224 px frames, scaled to the frame height, odd, at least 3.
    auto k = static_cast<std::size_t>(std::lround(23.0 * static_cast<double>(g.height) / 224.0));
    k = std::max<std::size_t>(k, 3);
    return k % 2 ? k : k + 1;
  }

  // Strong contrastive views; blur probability differs between the two.
  static AugmentationPolicy a1() {
    return {"A1",
            {{TransformKind::ResizedCrop, 1.0, 0.2},
             {TransformKind::HorizontalFlip, 0.5},
             {TransformKind::ColorJitter, 0.8, 0.4, 0.1},
             {TransformKind::GaussianBlur, 0.8, 2.0}}};
  }
  static AugmentationPolicy a2() {
    return {"A2",
            {{TransformKind::ResizedCrop, 1.0, 0.2},
             {TransformKind::HorizontalFlip, 0.5},
             {TransformKind::ColorJitter, 0.8, 0.4, 0.1},
             {TransformKind::GaussianBlur, 0.2, 2.0}}};
  }
  // Spatio-temporal pretraining: no cropping.
  static AugmentationPolicy a3() {
    return {"A3", {{TransformKind::ColorJitter, 0.8, 0.4, 0.1}, {TransformKind::HorizontalFlip, 0.5}}};
  }
  // Fine-tuning: no hue shift.
  static AugmentationPolicy a4() {
    return {"A4",
            {{TransformKind::ColorJitter, 0.8, 0.4, 0.0},
             {TransformKind::GaussianBlur, 0.5, 2.0},
             {TransformKind::HorizontalFlip, 0.5}}};
  }
  static AugmentationPolicy by_id(const std::string& id) {
    if (id == "A1") return a1();
    if (id == "A2") return a2();
    if (id == "A3") return a3();
    if (id == "A4") return a4();
    throw ConfigError("unknown augmentation policy '" + id + "'");
  }

  AugmentationPolicy with_probability(double p) const {
    AugmentationPolicy out = *this;
    for (auto& t : out.transforms) t.probability = p;
    return out;
  }
};

namespace augment_detail {

inline void flip(std::vector<float>& px, const WindowGeometry& g, std::size_t frames) {
  for (std::size_t f = 0; f < frames * g.channels; ++f)
    for (std::size_t y = 0; y < g.height; ++y) {
      float* row = px.data() + (f * g.height + y) * g.width;
      std::reverse(row, row + g.width);
    }
}

inline void jitter(std::vector<float>& px, const WindowGeometry& g, std::size_t frames, double brightness,
                   double contrast, double saturation, double hue) {
  const std::size_t plane = g.height * g.width;
  for (std::size_t f = 0; f < frames; ++f) {
    float* frame = px.data() + f * g.frame_size();
    for (std::size_t i = 0; i < g.frame_size(); ++i) frame[i] = static_cast<float>(frame[i] * brightness);
    double mean = 0.0;
    for (std::size_t i = 0; i < g.frame_size(); ++i) mean += frame[i];
    mean /= static_cast<double>(g.frame_size());
    for (std::size_t i = 0; i < g.frame_size(); ++i) frame[i] = static_cast<float>((frame[i] - mean) * contrast + mean);
    if (g.channels == 3) {
      const double ca = std::cos(hue * 2.0 * std::numbers::pi), sa = std::sin(hue * 2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < plane; ++i) {
        double r = frame[i], gr = frame[plane + i], b = frame[2 * plane + i];
        const double gray = 0.299 * r + 0.587 * gr + 0.114 * b;
        r = gray + (r - gray) * saturation;
        gr = gray + (gr - gray) * saturation;
        b = gray + (b - gray) * saturation;
        if (hue != 0.0) {
          // Rotate chroma in YIQ space.
          const double yy = 0.299 * r + 0.587 * gr + 0.114 * b;
          const double ii = 0.596 * r - 0.274 * gr - 0.322 * b;
          const double qq = 0.211 * r - 0.523 * gr + 0.312 * b;
          const double i2 = ii * ca - qq * sa, q2 = ii * sa + qq * ca;
          r = yy + 0.956 * i2 + 0.621 * q2;
          gr = yy - 0.272 * i2 - 0.647 * q2;
          b = yy - 1.106 * i2 + 1.703 * q2;
        }
        frame[i] = static_cast<float>(r);
        frame[plane + i] = static_cast<float>(gr);
        frame[2 * plane + i] = static_cast<float>(b);
      }
    }
  }
}

inline void blur(std::vector<float>& px, const WindowGeometry& g, std::size_t frames, double sigma) {
  const std::size_t k = AugmentationPolicy::blur_kernel(g);
  const long r = static_cast<long>(k / 2);
  std::vector<double> w(k);
  double z = 0.0;
  for (long i = -r; i <= r; ++i) z += (w[static_cast<std::size_t>(i + r)] = std::exp(-0.5 * double(i * i) / (sigma * sigma)));
  for (auto& x : w) x /= z;
  const long H = static_cast<long>(g.height), W = static_cast<long>(g.width);
  std::vector<float> tmp(g.height * g.width);
  auto clampi = [](long v, long hi) { return std::clamp(v, 0L, hi - 1); };
  for (std::size_t p = 0; p < frames * g.channels; ++p) {
    float* img = px.data() + p * g.height * g.width;
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0.0;
        for (long i = -r; i <= r; ++i) s += w[static_cast<std::size_t>(i + r)] * img[y * W + clampi(x + i, W)];
        tmp[static_cast<std::size_t>(y * W + x)] = static_cast<float>(s);
      }
    for (long y = 0; y < H; ++y)
      for (long x = 0; x < W; ++x) {
        double s = 0.0;
        for (long i = -r; i <= r; ++i) s += w[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(clampi(y + i, H) * W + x)];
        img[y * W + x] = static_cast<float>(s);
      }
  }
}

// Crop box (top, left, h, w) resized back with bilinear sampling.
inline void resized_crop(std::vector<float>& px, const WindowGeometry& g, std::size_t frames, double top, double left,
                         double ch, double cw) {
  std::vector<float> out(px.size());
  const std::size_t H = g.height, W = g.width;
  for (std::size_t p = 0; p < frames * g.channels; ++p) {
    const float* src = px.data() + p * H * W;
    float* dst = out.data() + p * H * W;
    for (std::size_t y = 0; y < H; ++y) {
      const double sy = std::clamp(top + (static_cast<double>(y) + 0.5) * ch / static_cast<double>(H) - 0.5, 0.0, double(H - 1));
      const auto y0 = static_cast<std::size_t>(sy);
      const std::size_t y1 = std::min(y0 + 1, H - 1);
      const double fy = sy - static_cast<double>(y0);
      for (std::size_t x = 0; x < W; ++x) {
        const double sx = std::clamp(left + (static_cast<double>(x) + 0.5) * cw / static_cast<double>(W) - 0.5, 0.0, double(W - 1));
        const auto x0 = static_cast<std::size_t>(sx);
        const std::size_t x1 = std::min(x0 + 1, W - 1);
        const double fx = sx - static_cast<double>(x0);
        const double v = (1 - fy) * ((1 - fx) * src[y0 * W + x0] + fx * src[y0 * W + x1]) +
                         fy * ((1 - fx) * src[y1 * W + x0] + fx * src[y1 * W + x1]);
        dst[y * W + x] = static_cast<float>(v);
      }
    }
  }
  px = std::move(out);
}

}  // namespace augment_detail

/// Applies `policy` to a clip of whole frames with one parameter draw per clip.
inline std::vector<float> augment(std::span<const float> frames, const WindowGeometry& g,
                                  const AugmentationPolicy& policy, Rng& rng) {
  if (frames.size() % g.frame_size() != 0) throw ShapeError("augment: clip is not a whole number of frames");
  const std::size_t n = frames.size() / g.frame_size();
  std::vector<float> px(frames.begin(), frames.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (const auto& t : policy.transforms) {
    // Draw the coin even when probability is 0 so streams stay aligned.
    const bool apply = unit(rng) < t.probability;
    switch (t.kind) {
      case TransformKind::HorizontalFlip:
        if (apply) augment_detail::flip(px, g, n);
        break;
      case TransformKind::ColorJitter: {
        const double b = 1.0 + t.strength * (2.0 * unit(rng) - 1.0);
        const double c = 1.0 + t.strength * (2.0 * unit(rng) - 1.0);
        const double s = 1.0 + t.strength * (2.0 * unit(rng) - 1.0);
        const double h = t.hue * (2.0 * unit(rng) - 1.0);
        if (apply) augment_detail::jitter(px, g, n, b, c, s, h);
        break;
      }
      case TransformKind::GaussianBlur: {
        const double sigma = 0.1 + (t.strength - 0.1) * unit(rng);
        if (apply) augment_detail::blur(px, g, n, sigma);
        break;
      }
      case TransformKind::ResizedCrop: {
        const double area = t.strength + (1.0 - t.strength) * unit(rng);
        const double log_ratio = std::log(3.0 / 4.0) + (std::log(4.0 / 3.0) - std::log(3.0 / 4.0)) * unit(rng);
        const double ratio = std::exp(log_ratio);
        const double H = static_cast<double>(g.height), W = static_cast<double>(g.width);
        const double cw = std::min(W, std::sqrt(area * H * W * ratio));
        const double ch = std::min(H, std::sqrt(area * H * W / ratio));
        const double top = unit(rng) * (H - ch), left = unit(rng) * (W - cw);
        if (apply) augment_detail::resized_crop(px, g, n, top, left, ch, cw);
        break;
      }
    }
  }
  return px;
}

inline std::vector<float> augment(std::span<const float> frames, const WindowGeometry& g,
                                  const AugmentationPolicy& policy, std::uint64_t rng_seed) {
  Rng rng(rng_seed);
  return augment(frames, g, policy, rng);
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json to_json(const WindowGeometry& g) {
  return {{"fps", g.fps},       {"small_frames", g.small_frames}, {"global_frames", g.global_frames},
          {"height", g.height}, {"width", g.width},               {"channels", g.channels},
          {"patch", g.patch},   {"temporal_patch", g.temporal_patch}};
}

namespace json_detail {

// Reads known keys into `target`; any other key is an error.
template <class F>
void read_object(const nlohmann::json& j, const std::string& what, const std::vector<std::string>& keys, F&& assign) {
  if (!j.is_object()) throw ConfigError(what + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(keys.begin(), keys.end(), it.key()) == keys.end()) {
      throw ConfigError(what + ": unknown key '" + it.key() + "'");
    }
    try {
      assign(it.key(), it.value());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(what + ": bad value for '" + it.key() + "': " + e.what());
    }
  }
}

}  // namespace json_detail

inline WindowGeometry geometry_from_json(const nlohmann::json& j, WindowGeometry g = {}) {
  json_detail::read_object(j, "geometry",
                           {"fps", "small_frames", "global_frames", "height", "width", "channels", "patch", "temporal_patch"},
                           [&](const std::string& k, const nlohmann::json& v) {
                             if (k == "fps") g.fps = v.get<double>();
                             else if (k == "small_frames") g.small_frames = v.get<std::size_t>();
                             else if (k == "global_frames") g.global_frames = v.get<std::size_t>();
                             else if (k == "height") g.height = v.get<std::size_t>();
                             else if (k == "width") g.width = v.get<std::size_t>();
                             else if (k == "channels") g.channels = v.get<std::size_t>();
                             else if (k == "patch") g.patch = v.get<std::size_t>();
                             else if (k == "temporal_patch") g.temporal_patch = v.get<std::size_t>();
                           });
  g.validate();
  return g;
}

inline nlohmann::json to_json(const SyntheticSpec& s) {
  return {{"n_classes", s.n_classes},     {"duration_s", s.duration_s}, {"events_per_class", s.events_per_class},
          {"min_gap_s", s.min_gap_s},     {"amplitude", s.amplitude},   {"noise_sigma", s.noise_sigma},
          {"seed", s.seed},               {"geometry", to_json(s.geometry)}};
}

inline SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  json_detail::read_object(j, "synthetic spec",
                           {"n_classes", "duration_s", "events_per_class", "min_gap_s", "amplitude", "noise_sigma", "seed",
                            "geometry"},
                           [&](const std::string& k, const nlohmann::json& v) {
                             if (k == "n_classes") s.n_classes = v.get<std::size_t>();
                             else if (k == "duration_s") s.duration_s = v.get<double>();
                             else if (k == "events_per_class") s.events_per_class = v.get<double>();
                             else if (k == "min_gap_s") s.min_gap_s = v.get<double>();
                             else if (k == "amplitude") s.amplitude = v.get<double>();
                             else if (k == "noise_sigma") s.noise_sigma = v.get<double>();
                             else if (k == "seed") s.seed = v.get<std::uint64_t>();
                             else if (k == "geometry") s.geometry = geometry_from_json(v);
                           });
  s.validate();
  return s;
}

inline ClassVocabulary synthetic_vocabulary(std::size_t n_classes) {
  ClassVocabulary v;
  for (std::size_t c = 0; c < n_classes; ++c) v.names.push_back("class_" + std::to_string(c));
  return v;
}

// ---------------------------------------------------------------------------
// Dataset directories: classes.json plus <id>.vid / <id>.json per match.

struct Match {
  Video video;
  VideoEvents annotations;
};

struct Dataset {
  ClassVocabulary vocab;
  std::vector<Match> matches;

  std::size_t num_classes() const { return vocab.size(); }
};

inline void write_match(const std::filesystem::path& dir, const GeneratedMatch& m, const ClassVocabulary& vocab) {
  save_video(m.video, dir / (m.video.id + ".vid"));
  bin::write_text_atomic(dir / (m.video.id + ".json"), to_json(m.annotations, vocab, false).dump(1) + "\n");
}

inline ClassVocabulary load_vocabulary(const std::filesystem::path& dir) {
  return vocabulary_from_json(parse_json_file(dir / "classes.json"));
}

inline std::vector<VideoEvents> load_annotations(const std::filesystem::path& dir, const ClassVocabulary& vocab) {
  if (!std::filesystem::is_directory(dir)) throw IoError("not a directory: " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.path().extension() == ".json" && e.path().filename() != "classes.json" &&
        std::filesystem::exists(std::filesystem::path(e.path()).replace_extension(".vid"))) {
      files.push_back(e.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<VideoEvents> out;
  for (const auto& f : files) out.push_back(video_events_from_json(parse_json_file(f), vocab));
  return out;
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  ds.vocab = load_vocabulary(dir);
  for (auto& ann : load_annotations(dir, ds.vocab)) {
    Match m;
    m.video = load_video(dir / (ann.video_id + ".vid"));
    m.annotations = std::move(ann);
    ds.matches.push_back(std::move(m));
  }
  if (ds.matches.empty()) throw IoError("no matches found in " + dir.string());
  return ds;
}

}  // namespace spotkit
