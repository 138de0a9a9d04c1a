#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "spotkit/binary_io.hpp"
#include "spotkit/errors.hpp"
#include "spotkit/tensor.hpp"

namespace spotkit {

inline constexpr std::string_view kBankMagic = "CMDBANK1";

/// Distillation targets: one feature row per (video, timestamp).
struct FeatureBank {
  std::size_t dim = 0;
  std::vector<double> rows;  // size() x dim, row-major
  std::vector<double> timestamps;
  std::vector<std::string> video_ids;

  std::size_t size() const { return timestamps.size(); }
  std::span<const double> row(std::size_t i) const { return {rows.data() + i * dim, dim}; }

  void append(const std::string& video_id, double time_s, std::span<const double> feature) {
    if (size() == 0 && dim == 0) dim = feature.size();
    if (feature.size() != dim) throw ShapeError("feature bank row has width " + std::to_string(feature.size()) +
                                                ", bank width is " + std::to_string(dim));
    rows.insert(rows.end(), feature.begin(), feature.end());
    timestamps.push_back(time_s);
    video_ids.push_back(video_id);
  }

  Tensor matrix() const { return Tensor::from({size(), dim}, rows); }

  /// Row indices of one video, in ascending time.
  std::vector<std::size_t> rows_of(const std::string& video_id) const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < size(); ++i)
      if (video_ids[i] == video_id) idx.push_back(i);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return timestamps[a] < timestamps[b]; });
    return idx;
  }

  void validate() const {
    if (rows.size() != size() * dim || video_ids.size() != size()) throw FormatError("feature bank arrays disagree in length");
    std::map<std::string, double> last;
    for (std::size_t i = 0; i < size(); ++i) {
      auto it = last.find(video_ids[i]);
      if (it != last.end() && !(timestamps[i] > it->second)) {
        throw FormatError("feature bank timestamps not strictly increasing for video " + video_ids[i]);
      }
      last[video_ids[i]] = timestamps[i];
    }
  }

  void normalize_rows() {
    for (std::size_t i = 0; i < size(); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim; ++j) sq += rows[i * dim + j] * rows[i * dim + j];
      const double n = std::sqrt(sq);
      if (!(n > 0.0)) throw NumericError("feature bank row " + std::to_string(i) + " has zero norm");
      for (std::size_t j = 0; j < dim; ++j) rows[i * dim + j] /= n;
    }
  }

  std::vector<char> serialize() const {
    bin::Writer w;
    w.magic(kBankMagic);
    w.u32(static_cast<std::uint32_t>(size()));
    w.u32(static_cast<std::uint32_t>(dim));
    for (std::size_t i = 0; i < size(); ++i) {
      w.str(video_ids[i]);
      w.f64(timestamps[i]);
      for (std::size_t j = 0; j < dim; ++j) w.f32(static_cast<float>(rows[i * dim + j]));
    }
    return w.buffer();
  }

  static FeatureBank deserialize(std::vector<char> bytes, const std::string& what = "bank") {
    bin::Reader r(std::move(bytes), what);
    r.expect_magic(kBankMagic);
    FeatureBank b;
    const std::uint32_t count = r.u32();
    b.dim = r.u32();
    if (count > 0 && static_cast<std::uint64_t>(count) * (4 + 8 + 4 * b.dim) > r.remaining()) {
      throw FormatError(what + ": truncated file (header promises " + std::to_string(count) + " rows)");
    }
    b.rows.reserve(std::size_t{count} * b.dim);
    for (std::uint32_t i = 0; i < count; ++i) {
      b.video_ids.push_back(r.str());
      b.timestamps.push_back(r.f64());
      for (std::size_t j = 0; j < b.dim; ++j) b.rows.push_back(static_cast<double>(r.f32()));
    }
    if (!r.at_end()) throw FormatError(what + ": trailing bytes after last row");
    return b;
  }
};

inline void save_bank(const FeatureBank& bank, const std::filesystem::path& path) {
  bin::write_file_atomic(path, bank.serialize());
}

inline FeatureBank load_bank(const std::filesystem::path& path) {
  return FeatureBank::deserialize(bin::read_file(path), path.string());
}

/// Nearest bank row (by timestamp) of `video_id` for each query time.
/// Ties go to the earlier timestamp.
inline std::vector<std::size_t> align(const FeatureBank& bank, const std::string& video_id,
                                      std::span<const double> middle_times) {
  const auto idx = bank.rows_of(video_id);
  if (idx.empty()) throw LookupError("feature bank has no rows for video '" + video_id + "'");
  std::vector<double> times(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) times[i] = bank.timestamps[idx[i]];
  std::vector<std::size_t> out;
  out.reserve(middle_times.size());
  for (double t : middle_times) {
    auto it = std::lower_bound(times.begin(), times.end(), t);
    std::size_t hi = static_cast<std::size_t>(it - times.begin());
    std::size_t best;
    if (hi == 0) {
      best = 0;
    } else if (hi == times.size()) {
      best = hi - 1;
    } else {
      best = (t - times[hi - 1] <= times[hi] - t) ? hi - 1 : hi;
    }
    out.push_back(idx[best]);
  }
  return out;
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues descending and matching eigenvectors as columns of
/// `vectors` (row-major n x n).
struct SymmetricEigen {
  std::vector<double> values;
  std::vector<double> vectors;
};

inline SymmetricEigen jacobi_eigen(std::vector<double> a, std::size_t n, double tol = 1e-15,
                                   int max_sweeps = 100) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  auto A = [&](std::size_t i, std::size_t j) -> double& { return a[i * n + j]; };
  double total = 0.0;
  for (double x : a) total += x * x;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += 2.0 * A(i, j) * A(i, j);
    if (off <= tol * tol * std::max(total, 1e-300)) break;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = A(p, q);
        if (apq == 0.0) continue;
        const double theta = (A(q, q) - A(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = A(k, p), akq = A(k, q);
          A(k, p) = c * akp - s * akq;
          A(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = A(p, k), aqk = A(q, k);
          A(p, k) = c * apk - s * aqk;
          A(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k * n + p], vkq = v[k * n + q];
          v[k * n + p] = c * vkp - s * vkq;
          v[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return A(x, x) > A(y, y); });
  SymmetricEigen out;
  out.values.resize(n);
  out.vectors.resize(n * n);
  for (std::size_t c = 0; c < n; ++c) {
    out.values[c] = A(order[c], order[c]);
    // Sign convention: largest-magnitude entry of each eigenvector is positive.
    std::size_t arg = 0;
    for (std::size_t k = 1; k < n; ++k)
      if (std::abs(v[k * n + order[c]]) > std::abs(v[arg * n + order[c]])) arg = k;
    const double sign = v[arg * n + order[c]] < 0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < n; ++k) out.vectors[k * n + c] = sign * v[k * n + order[c]];
  }
  return out;
}

/// Principal axes of a set of rows (mean-centered covariance).
struct Pca {
  std::size_t input_dim = 0;
  std::vector<double> mean;
  std::vector<double> eigenvalues;  // all of them, descending
  std::vector<double> axes;         // input_dim x input_dim, column c = axis c

  std::vector<double> explained_variance_ratio() const {
    double total = 0.0;
    for (double e : eigenvalues) total += std::max(e, 0.0);
    std::vector<double> r;
    for (double e : eigenvalues) r.push_back(total > 0 ? std::max(e, 0.0) / total : 0.0);
    return r;
  }

  /// Coordinates of centered `rows` on the top `d` axes.
  std::vector<double> project(std::span<const double> rows, std::size_t d) const {
    if (d > input_dim) throw ParameterError("PCA target dimension exceeds input dimension");
    const std::size_t n = rows.size() / input_dim;
    std::vector<double> out(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) {
        double s = 0.0;
        for (std::size_t k = 0; k < input_dim; ++k) s += (rows[i * input_dim + k] - mean[k]) * axes[k * input_dim + c];
        out[i * d + c] = s;
      }
    return out;
  }

  std::vector<double> reconstruct(std::span<const double> coords, std::size_t d) const {
    const std::size_t n = coords.size() / d;
    std::vector<double> out(n * input_dim);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t k = 0; k < input_dim; ++k) {
        double s = mean[k];
        for (std::size_t c = 0; c < d; ++c) s += coords[i * d + c] * axes[k * input_dim + c];
        out[i * input_dim + k] = s;
      }
    return out;
  }
};

inline Pca fit_pca(std::span<const double> rows, std::size_t dim) {
  if (dim == 0 || rows.size() % dim != 0) throw ShapeError("fit_pca: rows do not match dimension");
  const std::size_t n = rows.size() / dim;
  if (n < 2) throw ParameterError("fit_pca: need at least two rows");
  Pca p;
  p.input_dim = dim;
  p.mean.assign(dim, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dim; ++k) p.mean[k] += rows[i * dim + k];
  for (auto& m : p.mean) m /= static_cast<double>(n);
  RowMat centered(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dim; ++k) centered(Eigen::Index(i), Eigen::Index(k)) = rows[i * dim + k] - p.mean[k];
  std::vector<double> cov(dim * dim);
  MatMap(cov.data(), Eigen::Index(dim), Eigen::Index(dim)).noalias() =
      centered.transpose() * centered / static_cast<double>(n - 1);
  auto eig = jacobi_eigen(std::move(cov), dim);
  p.eigenvalues = std::move(eig.values);
  p.axes = std::move(eig.vectors);
  return p;
}

/// Projects bank rows on their top-`d` principal axes (no whitening), then
/// rescales each row to unit norm.
inline FeatureBank pca_reduce(const FeatureBank& bank, std::size_t d) {
  if (d == 0 || d > bank.dim) {
    throw ParameterError("pca_reduce: target dimension " + std::to_string(d) + " must be in [1, " +
                         std::to_string(bank.dim) + "]");
  }
  if (bank.size() <= d) throw ParameterError("pca_reduce: need more rows than target dimensions");
  const Pca p = fit_pca(bank.rows, bank.dim);
  FeatureBank out;
  out.dim = d;
  out.rows = p.project(bank.rows, d);
  out.timestamps = bank.timestamps;
  out.video_ids = bank.video_ids;
  out.normalize_rows();
  return out;
}

}  // namespace spotkit
