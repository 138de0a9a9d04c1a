#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spotkit/binary_io.hpp"
#include "spotkit/encoders.hpp"
#include "spotkit/tensor.hpp"

namespace spotkit {

inline constexpr std::string_view kCheckpointMagic = "CMDNCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Named parameter tensors in insertion order. Records named "meta.*" carry
/// geometry and architecture so a checkpoint is self-describing. The header
/// stores the record count so a cut between records is still detected.
struct Checkpoint {
  std::vector<std::pair<std::string, Tensor>> records;

  void put(const std::string& name, const Tensor& t) {
    for (auto& r : records) {
      if (r.first == name) {
        r.second = t.detach();
        return;
      }
    }
    records.emplace_back(name, t.detach());
  }
  void put_all(const NamedParams& params) {
    for (const auto& [name, t] : params) put(name, t);
  }
  bool contains(const std::string& name) const {
    for (const auto& r : records)
      if (r.first == name) return true;
    return false;
  }
  const Tensor& get(const std::string& name) const {
    for (const auto& r : records)
      if (r.first == name) return r.second;
    throw LookupError("checkpoint has no record '" + name + "'");
  }
  bool has_prefix(const std::string& prefix) const {
    for (const auto& r : records)
      if (r.first.rfind(prefix, 0) == 0) return true;
    return false;
  }

  /// Copies stored values into `params` (matched by name, shapes must agree).
  void load_into(const NamedParams& params) const {
    for (const auto& [name, t] : params) {
      const Tensor& src = get(name);
      if (src.shape() != t.shape()) {
        throw ShapeError("checkpoint record '" + name + "' has shape " + shape_str(src.shape()) + ", model expects " +
                         shape_str(t.shape()));
      }
      Tensor dst = t;
      std::copy(src.data().begin(), src.data().end(), dst.mutable_data().begin());
    }
  }

  std::vector<char> serialize() const {
    bin::Writer w;
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, t] : records) {
      w.str(name);
      w.u32(static_cast<std::uint32_t>(t.rank()));
      for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
      for (double v : t.data()) w.f64(v);
    }
    return w.buffer();
  }

  static Checkpoint deserialize(std::vector<char> bytes, const std::string& what = "checkpoint") {
    bin::Reader r(std::move(bytes), what);
    r.expect_magic(kCheckpointMagic);
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
    const std::uint32_t count = r.u32();
    Checkpoint ck;
    for (std::uint32_t k = 0; k < count; ++k) {
      std::string name = r.str();
      const std::uint32_t rank = r.u32();
      if (rank > 8) throw FormatError(what + ": implausible rank for '" + name + "'");
      Shape shape(rank);
      for (auto& d : shape) d = r.u32();
      const std::size_t n = numel(shape);
      if (n * sizeof(double) > r.remaining()) throw FormatError(what + ": truncated payload for '" + name + "'");
      std::vector<double> v(n);
      for (auto& x : v) x = r.f64();
      ck.records.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(v)));
    }
    if (!r.at_end()) throw FormatError(what + ": trailing bytes after " + std::to_string(count) + " records");
    return ck;
  }

  void save(const std::filesystem::path& path) const { bin::write_file_atomic(path, serialize()); }
  static Checkpoint load(const std::filesystem::path& path) {
    return deserialize(bin::read_file(path), path.string());
  }
};

inline void put_meta(Checkpoint& ck, const WindowGeometry& g, const ModelConfig& m) {
  ck.put("meta.geometry", Tensor::from({8}, {g.fps, double(g.small_frames), double(g.global_frames), double(g.height),
                                             double(g.width), double(g.channels), double(g.patch),
                                             double(g.temporal_patch)}));
  ck.put("meta.model", Tensor::from({10}, {double(m.dim), double(m.temporal_dim), double(m.spatial_depth),
                                           double(m.temporal_depth), double(m.heads), double(m.mlp_ratio),
                                           double(m.projector_hidden), double(m.projector_out), double(m.kd_hidden),
                                           double(m.num_classes)}));
}

inline WindowGeometry meta_geometry(const Checkpoint& ck) {
  const Tensor& t = ck.get("meta.geometry");
  if (t.size() != 8) throw FormatError("checkpoint meta.geometry has wrong length");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  WindowGeometry g{t[0], u(1), u(2), u(3), u(4), u(5), u(6), u(7)};
  g.validate();
  return g;
}

inline ModelConfig meta_model(const Checkpoint& ck) {
  const Tensor& t = ck.get("meta.model");
  if (t.size() != 10) throw FormatError("checkpoint meta.model has wrong length");
  auto u = [&](std::size_t i) { return static_cast<std::size_t>(t[i]); };
  ModelConfig m{u(0), u(1), u(2), u(3), u(4), u(5), u(6), u(7), u(8), u(9)};
  m.validate();
  return m;
}

}  // namespace spotkit
