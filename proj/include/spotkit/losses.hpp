#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "spotkit/errors.hpp"
#include "spotkit/feature_bank.hpp"
#include "spotkit/rng.hpp"
#include "spotkit/tensor.hpp"

namespace spotkit {

/// FIFO ring of unit-norm target embeddings used as contrastive negatives.
class MomentumQueue {
 public:
  MomentumQueue(std::size_t capacity, std::size_t dim) : capacity_(capacity), dim_(dim), storage_(capacity * dim, 0.0) {
    if (capacity == 0 || dim == 0) throw ParameterError("momentum queue needs positive capacity and width");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t dim() const { return dim_; }
  std::size_t size() const { return fill_; }
  bool empty() const { return fill_ == 0; }

  /// Appends each row of `batch` [B x dim] (normalized on entry), evicting
  /// the oldest entries once full.
  void enqueue(const Tensor& batch) {
    if (batch.rank() != 2 || batch.dim(1) != dim_) {
      throw ShapeError("queue_update: batch " + shape_str(batch.shape()) + " vs queue width " + std::to_string(dim_));
    }
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
      double sq = 0.0;
      for (std::size_t j = 0; j < dim_; ++j) sq += batch.at(i, j) * batch.at(i, j);
      const double n = std::sqrt(sq);
      if (!(n > 0.0)) throw NumericError("queue_update: zero-norm row");
      double* dst = storage_.data() + head_ * dim_;
      for (std::size_t j = 0; j < dim_; ++j) dst[j] = batch.at(i, j) / n;
      head_ = (head_ + 1) % capacity_;
      fill_ = std::min(fill_ + 1, capacity_);
    }
  }

  /// Stored rows, oldest first.
  Tensor contents() const {
    std::vector<double> out;
    out.reserve(fill_ * dim_);
    const std::size_t start = fill_ < capacity_ ? 0 : head_;
    for (std::size_t k = 0; k < fill_; ++k) {
      const double* src = storage_.data() + ((start + k) % capacity_) * dim_;
      out.insert(out.end(), src, src + dim_);
    }
    return Tensor::from({fill_, dim_}, std::move(out));
  }

 private:
  std::size_t capacity_, dim_;
  std::vector<double> storage_;
  std::size_t head_ = 0;
  std::size_t fill_ = 0;
};

inline void queue_update(MomentumQueue& queue, const Tensor& target_batch) { queue.enqueue(target_batch); }

namespace detail {

// Mean over rows of log( e^{z.k/t} / (e^{z.k/t} + sum_j e^{z.Q_j/t}) ).
inline Tensor moco_log_prob(const Tensor& z, const Tensor& k, const Tensor& negatives, double tau) {
  Tensor pos = sum_lastdim(mul(z, k));
  Tensor neg = matmul_nt(z, negatives);
  Tensor logp = log_softmax_lastdim(concat({pos, neg}, 1), tau);
  return mean(slice(logp, 1, 0, 1));
}

}  // namespace detail

/// Symmetric momentum-contrast loss over a batch.
///
/// Inputs are [B x d]; every row is L2-normalized here. The queue supplies
/// the negatives for both terms.
inline Tensor moco_loss(const Tensor& z1s, const Tensor& z2s, const Tensor& z1t, const Tensor& z2t,
                        const MomentumQueue& queue, double tau) {
  if (!(tau > 0.0)) throw ParameterError("moco_loss: temperature must be positive");
  if (queue.empty()) throw StateError("moco_loss: momentum queue is empty");
  for (const Tensor* t : {&z2s, &z1t, &z2t}) detail::require_same_shape(z1s, *t, "moco_loss");
  if (z1s.rank() != 2 || z1s.dim(1) != queue.dim()) throw ShapeError("moco_loss: embedding width differs from queue");
  const Tensor negatives = queue.contents();
  const Tensor a = detail::moco_log_prob(l2_normalize(z1s, 1), l2_normalize(z2t, 1), negatives, tau);
  const Tensor b = detail::moco_log_prob(l2_normalize(z2s, 1), l2_normalize(z1t, 1), negatives, tau);
  return scale(add(a, b), -0.5);
}

/// Soft distillation targets for T_l aligned bank rows.
struct SceTargets {
  Tensor w2;  // [T_l x M_P], rows are distributions
  std::vector<std::size_t> aligned_idx;
};

namespace detail {

// Bank rows scaled to unit norm (copy only when needed).
inline Tensor unit_rows(const Tensor& bank) {
  for (std::size_t i = 0; i < bank.dim(0); ++i) {
    double sq = 0.0;
    for (std::size_t j = 0; j < bank.dim(1); ++j) sq += bank.at(i, j) * bank.at(i, j);
    if (std::abs(sq - 1.0) > 1e-12) {
      NoGradGuard ng;
      return l2_normalize(bank.detach(), 1);
    }
  }
  return bank;
}

}  // namespace detail

/// Target relation distribution mixed with the aligned one-hot.
///
/// s2[i] is the softmax over the bank of P[a_i].P_k / tau_m with the aligned
/// row itself excluded (by index); w2[i] = lambda * onehot(a_i) + (1 - lambda) * s2[i].
inline SceTargets sce_targets(std::span<const std::size_t> aligned_idx, const Tensor& bank, double tau_m,
                              double lambda) {
  if (!(tau_m > 0.0)) throw ParameterError("sce_targets: tau_m must be positive");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ParameterError("sce_targets: lambda must be in [0, 1]");
  if (bank.rank() != 2 || bank.dim(0) < 2) throw NumericError("sce_targets: bank needs at least two rows");
  const std::size_t m = bank.dim(0);
  for (std::size_t a : aligned_idx)
    if (a >= m) throw ShapeError("sce_targets: aligned index out of range");
  const Tensor p = detail::unit_rows(bank);
  const std::size_t tl = aligned_idx.size();
  RowMat anchors(static_cast<Eigen::Index>(tl), static_cast<Eigen::Index>(p.dim(1)));
  for (std::size_t i = 0; i < tl; ++i) anchors.row(Eigen::Index(i)) = p.mat().row(Eigen::Index(aligned_idx[i]));
  RowMat sim = anchors * p.mat().transpose() / tau_m;
  std::vector<double> w(tl * m);
  for (std::size_t i = 0; i < tl; ++i) {
    const std::size_t self = aligned_idx[i];
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < m; ++k)
      if (k != self) mx = std::max(mx, sim(Eigen::Index(i), Eigen::Index(k)));
    double z = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
      const double e = k == self ? 0.0 : std::exp(sim(Eigen::Index(i), Eigen::Index(k)) - mx);
      w[i * m + k] = e;
      z += e;
    }
    for (std::size_t k = 0; k < m; ++k) w[i * m + k] = (1.0 - lambda) * w[i * m + k] / z;
    w[i * m + self] += lambda;
  }
  return {Tensor::from({tl, m}, std::move(w)), {aligned_idx.begin(), aligned_idx.end()}};
}

inline SceTargets sce_targets(std::span<const std::size_t> aligned_idx, const FeatureBank& bank, double tau_m,
                              double lambda) {
  return sce_targets(aligned_idx, bank.matrix(), tau_m, lambda);
}

/// Cross-entropy of the token/bank similarity softmax under the SCE targets,
/// averaged over tokens. `z` rows are L2-normalized here.
inline Tensor sce_kd_loss(const Tensor& z, const SceTargets& targets, const Tensor& bank, double tau) {
  if (!(tau > 0.0)) throw ParameterError("sce_kd_loss: temperature must be positive");
  if (z.rank() != 2 || bank.rank() != 2 || z.dim(1) != bank.dim(1)) {
    throw ShapeError("sce_kd_loss: tokens " + shape_str(z.shape()) + " vs bank " + shape_str(bank.shape()));
  }
  if (targets.w2.shape() != Shape{z.dim(0), bank.dim(0)}) {
    throw ShapeError("sce_kd_loss: targets " + shape_str(targets.w2.shape()) + " do not match tokens x bank");
  }
  const Tensor p = detail::unit_rows(bank);
  Tensor log_s1 = log_softmax_lastdim(matmul_nt(l2_normalize(z, 1), p), tau);
  return scale(sum(mul(targets.w2, log_s1)), -1.0 / static_cast<double>(z.dim(0)));
}

inline Tensor sce_kd_loss(const Tensor& z, const SceTargets& targets, const FeatureBank& bank, double tau) {
  return sce_kd_loss(z, targets, bank.matrix(), tau);
}

inline constexpr double kProbabilityClamp = 1e-7;

/// Mean binary cross-entropy over every (token, class) cell. Probabilities
/// are clamped to [1e-7, 1 - 1e-7].
inline Tensor bce_spotting_loss(const Tensor& probs, const Tensor& labels) {
  detail::require_same_shape(probs, labels, "bce_spotting_loss");
  Tensor p = clamp(probs, kProbabilityClamp, 1.0 - kProbabilityClamp);
  Tensor one_minus_y = add_scalar(scale(labels, -1.0), 1.0);
  Tensor pos = mul(labels, log(p));
  Tensor neg = mul(one_minus_y, log(add_scalar(scale(p, -1.0), 1.0)));
  return scale(mean(add(pos, neg)), -1.0);
}

/// Convex combination lambda * a + (1 - lambda) * b.
template <class T>
std::vector<T> mix(std::span<const T> a, std::span<const T> b, double lambda) {
  if (a.size() != b.size()) throw ShapeError("mixup: operands differ in size");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = static_cast<T>(lambda * a[i] + (1.0 - lambda) * b[i]);
  return out;
}

struct MixupSample {
  std::vector<float> frames;
  std::vector<double> labels;
};

inline MixupSample mixup(const MixupSample& a, const MixupSample& b, double lambda) {
  return {mix<float>(a.frames, b.frames, lambda), mix<double>(a.labels, b.labels, lambda)};
}

/// Draws lambda ~ Beta(alpha, alpha) and mixes sample i with sample
/// perm(i) for a seeded permutation of the batch. Returns lambda.
inline double mixup_batch(std::vector<MixupSample>& batch, double alpha, Rng& rng) {
  if (!(alpha > 0.0)) throw ParameterError("mixup: alpha must be positive");
  const double lambda = sample_beta(alpha, alpha, rng);
  std::vector<std::size_t> perm(batch.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<MixupSample> mixed;
  mixed.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) mixed.push_back(mixup(batch[i], batch[perm[i]], lambda));
  batch = std::move(mixed);
  return lambda;
}

}  // namespace spotkit
