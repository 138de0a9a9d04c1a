#pragma once

#include <cstddef>
#include <string>

#include "spotkit/errors.hpp"

namespace spotkit {

/// Frame rate, window lengths and frame shape shared by every temporal
/// computation. Lengths are in frames unless the name says seconds.
struct WindowGeometry {
  double fps = 2.0;
  std::size_t small_frames = 2;   // frames per small window (one spatial token)
  std::size_t global_frames = 64; // frames per global window
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::size_t patch = 8;           // spatial patch side in pixels
  std::size_t temporal_patch = 2;  // frames per tubelet

  std::size_t tokens_per_window() const { return global_frames / small_frames; }
  std::size_t frame_size() const { return channels * height * width; }
  std::size_t tubelets_per_small_window() const {
    return (height / patch) * (width / patch) * (small_frames / temporal_patch);
  }
  std::size_t spatial_tokens() const { return tubelets_per_small_window() + 1; }
  std::size_t patch_dim() const { return temporal_patch * channels * patch * patch; }
  double small_window_seconds() const { return static_cast<double>(small_frames) / fps; }
  double global_window_seconds() const { return static_cast<double>(global_frames) / fps; }

  void validate() const {
    if (!(fps > 0.0)) throw ConfigError("geometry: fps must be positive");
    if (small_frames == 0 || global_frames == 0) throw ConfigError("geometry: window lengths must be positive");
    if (global_frames % small_frames != 0) {
      throw ConfigError("geometry: global_frames (" + std::to_string(global_frames) +
                        ") must be a multiple of small_frames (" + std::to_string(small_frames) + ")");
    }
    if (patch == 0 || height % patch != 0 || width % patch != 0) {
      throw ConfigError("geometry: frame size must be a multiple of the patch size");
    }
    if (temporal_patch == 0 || small_frames % temporal_patch != 0) {
      throw ConfigError("geometry: small_frames must be a multiple of temporal_patch");
    }
    if (channels == 0) throw ConfigError("geometry: channels must be positive");
  }

  bool operator==(const WindowGeometry&) const = default;
};

}  // namespace spotkit
