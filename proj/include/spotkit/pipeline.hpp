#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "spotkit/checkpoint.hpp"
#include "spotkit/data_synth.hpp"
#include "spotkit/encoders.hpp"
#include "spotkit/feature_bank.hpp"
#include "spotkit/losses.hpp"
#include "spotkit/spotting.hpp"

namespace spotkit {

/// Hyperparameters of one training step.
struct TrainConfig {
  int step = 3;
  double base_lr = 5e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 5;
  std::size_t warmup_epochs = 1;
  double weight_decay = 0.05;
  double ema_momentum = 0.99;
  double tau = 0.1;
  double tau_m = 0.07;
  double lambda = 0.5;
  double alpha1 = 0.25;
  double alpha2 = 0.25;
  double epsilon_s = 0.5;
  double mixup_alpha = 0.1;
  std::uint64_t seed = 0;
  WindowGeometry geometry;
  ModelConfig model;
  // Samples drawn per match per epoch; 0 in step 1 means every
  // non-overlapping small-window clip.
  std::size_t windows_per_match = 100;
  std::size_t classifier_epochs = 5;  // step 3 phase A
  std::size_t queue_size = 4096;

  static TrainConfig defaults(int step) {
    TrainConfig c;
    c.step = step;
    switch (step) {
      case 1:
        c.base_lr = 5e-4;
        c.batch_size = 256;
        c.epochs = 10;
        c.windows_per_match = 0;
        break;
      case 2:
        c.base_lr = 2e-3;
        c.batch_size = 64;
        c.epochs = 10;
        c.windows_per_match = 150;
        break;
      case 3:
        c.base_lr = 5e-4;
        c.batch_size = 128;
        c.epochs = 5;
        c.classifier_epochs = 5;
        c.windows_per_match = 100;
        break;
      default:
        throw ConfigError("step must be 1, 2 or 3 (got " + std::to_string(step) + ")");
    }
    return c;
  }

  void validate() const {
    if (step < 1 || step > 3) throw ConfigError("step must be 1, 2 or 3");
    geometry.validate();
    model.validate();
    if (!(base_lr > 0.0)) throw ConfigError("base_lr must be positive");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (warmup_epochs > epochs) throw ConfigError("warmup_epochs must not exceed epochs");
    if (step == 3 && warmup_epochs > 0 && classifier_epochs > 0 && warmup_epochs > classifier_epochs) {
      throw ConfigError("warmup_epochs must not exceed classifier_epochs");
    }
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be non-negative");
    if (!(ema_momentum >= 0.0 && ema_momentum <= 1.0)) throw ConfigError("ema_momentum must be in [0, 1]");
    if (!(tau > 0.0) || !(tau_m > 0.0)) throw ConfigError("temperatures must be positive");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
    if (!(alpha1 >= 0.0 && alpha1 <= 1.0) || !(alpha2 >= 0.0 && alpha2 <= 1.0)) {
      throw ConfigError("masking ratios must be in [0, 1]");
    }
    if (!(epsilon_s >= 0.0)) throw ConfigError("epsilon_s must be non-negative");
    if (!(mixup_alpha >= 0.0)) throw ConfigError("mixup_alpha must be non-negative (0 disables mixup)");
    if (step == 2 && windows_per_match == 0) throw ConfigError("windows_per_match must be positive for step 2");
    if (step == 3 && windows_per_match == 0) throw ConfigError("windows_per_match must be positive for step 3");
    if (queue_size == 0) throw ConfigError("queue_size must be positive");
  }
};

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"dim", m.dim},
          {"temporal_dim", m.temporal_dim},
          {"spatial_depth", m.spatial_depth},
          {"temporal_depth", m.temporal_depth},
          {"heads", m.heads},
          {"mlp_ratio", m.mlp_ratio},
          {"projector_hidden", m.projector_hidden},
          {"projector_out", m.projector_out},
          {"kd_hidden", m.kd_hidden},
          {"num_classes", m.num_classes}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig m = {}) {
  json_detail::read_object(j, "model",
                           {"dim", "temporal_dim", "spatial_depth", "temporal_depth", "heads", "mlp_ratio",
                            "projector_hidden", "projector_out", "kd_hidden", "num_classes"},
                           [&](const std::string& k, const nlohmann::json& v) {
                             const auto n = v.get<std::size_t>();
                             if (k == "dim") m.dim = n;
                             else if (k == "temporal_dim") m.temporal_dim = n;
                             else if (k == "spatial_depth") m.spatial_depth = n;
                             else if (k == "temporal_depth") m.temporal_depth = n;
                             else if (k == "heads") m.heads = n;
                             else if (k == "mlp_ratio") m.mlp_ratio = n;
                             else if (k == "projector_hidden") m.projector_hidden = n;
                             else if (k == "projector_out") m.projector_out = n;
                             else if (k == "kd_hidden") m.kd_hidden = n;
                             else if (k == "num_classes") m.num_classes = n;
                           });
  m.validate();
  return m;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"step", c.step},
          {"base_lr", c.base_lr},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"warmup_epochs", c.warmup_epochs},
          {"weight_decay", c.weight_decay},
          {"ema_momentum", c.ema_momentum},
          {"tau", c.tau},
          {"tau_m", c.tau_m},
          {"lambda", c.lambda},
          {"alpha1", c.alpha1},
          {"alpha2", c.alpha2},
          {"epsilon_s", c.epsilon_s},
          {"mixup_alpha", c.mixup_alpha},
          {"seed", c.seed},
          {"geometry", to_json(c.geometry)},
          {"model", to_json(c.model)},
          {"windows_per_match", c.windows_per_match},
          {"classifier_epochs", c.classifier_epochs},
          {"queue_size", c.queue_size}};
}

inline const std::vector<std::string>& train_config_keys() {
  static const std::vector<std::string> keys{
      "step",        "base_lr", "batch_size", "epochs",   "warmup_epochs",     "weight_decay",      "ema_momentum",
      "tau",         "tau_m",   "lambda",     "alpha1",   "alpha2",            "epsilon_s",         "mixup_alpha",
      "seed",        "geometry", "model",     "windows_per_match", "classifier_epochs", "queue_size"};
  return keys;
}

/// Parses a config document. Missing keys take the defaults of the
/// document's step (or `step` when the document omits it); unknown keys and
/// a step other than `step` are errors.
inline TrainConfig train_config_from_json(const nlohmann::json& j, int step) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (j.contains("step") && j["step"] != step) {
    throw ConfigError("config is for step " + j["step"].dump() + ", this command runs step " + std::to_string(step));
  }
  TrainConfig c = TrainConfig::defaults(step);
  json_detail::read_object(j, "config", train_config_keys(), [&](const std::string& k, const nlohmann::json& v) {
    if (k == "step") c.step = v.get<int>();
    else if (k == "base_lr") c.base_lr = v.get<double>();
    else if (k == "batch_size") c.batch_size = v.get<std::size_t>();
    else if (k == "epochs") c.epochs = v.get<std::size_t>();
    else if (k == "warmup_epochs") c.warmup_epochs = v.get<std::size_t>();
    else if (k == "weight_decay") c.weight_decay = v.get<double>();
    else if (k == "ema_momentum") c.ema_momentum = v.get<double>();
    else if (k == "tau") c.tau = v.get<double>();
    else if (k == "tau_m") c.tau_m = v.get<double>();
    else if (k == "lambda") c.lambda = v.get<double>();
    else if (k == "alpha1") c.alpha1 = v.get<double>();
    else if (k == "alpha2") c.alpha2 = v.get<double>();
    else if (k == "epsilon_s") c.epsilon_s = v.get<double>();
    else if (k == "mixup_alpha") c.mixup_alpha = v.get<double>();
    else if (k == "seed") c.seed = v.get<std::uint64_t>();
    else if (k == "geometry") c.geometry = geometry_from_json(v);
    else if (k == "model") c.model = model_config_from_json(v);
    else if (k == "windows_per_match") c.windows_per_match = v.get<std::size_t>();
    else if (k == "classifier_epochs") c.classifier_epochs = v.get<std::size_t>();
    else if (k == "queue_size") c.queue_size = v.get<std::size_t>();
  });
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Schedules and optimizer

/// Linear scaling: batch/256, and additionally T_g/64 for steps 2 and 3.
inline double scaled_lr(const TrainConfig& c) {
  const double by_batch = c.base_lr * static_cast<double>(c.batch_size) / 256.0;
  if (c.step == 1) return by_batch;
  return by_batch * static_cast<double>(c.geometry.global_frames) / 64.0;
}

inline double lr_floor(const TrainConfig& c) { return c.step == 1 ? 0.0 : 0.01 * scaled_lr(c); }

/// Learning rate at training progress t in [0, 1] over `epochs` epochs with
/// `warmup` of them spent ramping linearly from 0.
inline double lr_at(const TrainConfig& c, double t, std::size_t epochs, std::size_t warmup) {
  if (!(t >= 0.0 && t <= 1.0)) throw ParameterError("lr_at: progress must be in [0, 1]");
  const double peak = scaled_lr(c);
  const double floor = lr_floor(c);
  const double w = epochs ? static_cast<double>(std::min(warmup, epochs)) / static_cast<double>(epochs) : 0.0;
  if (w > 0.0 && t < w) return peak * t / w;
  if (w >= 1.0) return peak;
  const double p = (t - w) / (1.0 - w);
  return floor + (peak - floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * p));
}

inline double lr_at(const TrainConfig& c, double t) { return lr_at(c, t, c.epochs, c.warmup_epochs); }

struct OptimizerState {
  std::vector<std::vector<double>> first, second;
  std::uint64_t steps = 0;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Decoupled weight decay followed by a bias-corrected Adam step. A
/// parameter without an accumulated gradient is treated as having zero
/// gradient.
inline void adamw_step(const NamedParams& params, OptimizerState& state, double lr, double weight_decay,
                       const AdamHyper& h = {}) {
  if (state.first.empty()) {
    for (const auto& [name, p] : params) {
      state.first.emplace_back(p.size(), 0.0);
      state.second.emplace_back(p.size(), 0.0);
    }
  }
  if (state.first.size() != params.size()) throw ShapeError("adamw_step: optimizer state has a different parameter count");
  ++state.steps;
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(state.steps));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i].second;
    auto& m = state.first[i];
    auto& v = state.second[i];
    if (m.size() != p.size()) throw ShapeError("adamw_step: state buffer misaligned with " + params[i].first);
    auto x = p.mutable_data();
    const bool has = p.has_grad();
    auto g = p.grad();
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double gk = has ? g[k] : 0.0;
      x[k] -= lr * weight_decay * x[k];
      m[k] = h.beta1 * m[k] + (1.0 - h.beta1) * gk;
      v[k] = h.beta2 * v[k] + (1.0 - h.beta2) * gk * gk;
      x[k] -= lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + h.eps);
    }
  }
}

inline void zero_grads(const NamedParams& params) {
  for (const auto& [name, p] : params) {
    Tensor t = p;
    t.zero_grad();
  }
}

// ---------------------------------------------------------------------------
// Sampling

struct WindowRef {
  std::size_t match = 0;
  std::size_t start_frame = 0;
};

/// Per match: `per_match` uniformly drawn window starts (0 = every
/// non-overlapping window); with `include_ends` the first and last possible
/// windows are always among them. The combined list is shuffled.
inline std::vector<WindowRef> sample_windows(const Dataset& ds, std::size_t length, std::size_t per_match,
                                             bool include_ends, Rng& rng) {
  std::vector<WindowRef> refs;
  for (std::size_t m = 0; m < ds.matches.size(); ++m) {
    const std::size_t frames = ds.matches[m].video.frame_count();
    if (frames < length) throw ConfigError("match " + ds.matches[m].video.id + " is shorter than one window");
    const std::size_t last = frames - length;
    if (per_match == 0) {
      for (std::size_t s = 0; s <= last; s += length) refs.push_back({m, s});
      continue;
    }
    std::uniform_int_distribution<std::size_t> pick(0, last);
    for (std::size_t k = 0; k < per_match; ++k) {
      std::size_t s;
      if (include_ends && k == 0) s = 0;
      else if (include_ends && k == 1) s = last;
      else s = pick(rng);
      refs.push_back({m, s});
    }
  }
  std::shuffle(refs.begin(), refs.end(), rng);
  return refs;
}

/// Tubelet matrix rows for consecutive small windows of a frame buffer.
inline void append_window_tubelets(std::span<const float> frames, const WindowGeometry& g, std::vector<double>& out) {
  const std::size_t span_len = g.small_frames * g.frame_size();
  if (frames.size() % span_len != 0) throw ShapeError("frame buffer is not a whole number of small windows");
  for (std::size_t o = 0; o < frames.size(); o += span_len) append_tubelets(frames.subspan(o, span_len), g, out);
}

inline Tensor tubelet_tensor(std::vector<double> rows, const WindowGeometry& g) {
  const std::size_t n = rows.size() / g.patch_dim();
  return Tensor::from({n, g.patch_dim()}, std::move(rows));
}

// ---------------------------------------------------------------------------
// Training steps

struct LossRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double lr = 0.0;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<LossRecord> log;
  std::size_t queue_fill = 0;  // step 1 only
  // Not written to disk: the step-1 target branch, and the step-3 backbone
  // as it stood after the classifier-only phase.
  Checkpoint internals;
};

inline std::string loss_log_csv(const std::vector<LossRecord>& log) {
  std::ostringstream os;
  os.precision(17);
  os << "epoch,loss,lr\n";
  for (const auto& r : log) os << r.epoch << ',' << r.loss << ',' << r.lr << '\n';
  return os.str();
}

namespace detail {

inline void check_dataset(const TrainConfig& c, const Dataset& ds) {
  if (ds.matches.empty()) throw ConfigError("dataset has no matches");
  for (const auto& m : ds.matches) {
    const auto& v = m.video;
    if (v.channels != c.geometry.channels || v.height != c.geometry.height || v.width != c.geometry.width ||
        v.fps != c.geometry.fps) {
      throw ConfigError("video " + v.id + " does not match the configured geometry");
    }
  }
}

inline void report(std::ostream* progress, int step, const LossRecord& r) {
  if (progress) *progress << "step " << step << " epoch " << r.epoch << " loss " << r.loss << " lr " << r.lr << '\n';
}

inline NamedParams with_prefix(const NamedParams& all, const std::string& prefix) {
  NamedParams out;
  for (const auto& p : all)
    if (p.first.rfind(prefix, 0) == 0) out.push_back(p);
  return out;
}

inline void load_backbone(const Checkpoint& ck, const SpotModel& model) {
  if (!(meta_geometry(ck) == model.geometry)) throw ConfigError("checkpoint geometry differs from the configured geometry");
  const NamedParams all = model.backbone_parameters();
  bool any = false;
  for (const char* prefix : {"spatial.", "temporal."}) {
    if (ck.has_prefix(prefix)) {
      ck.load_into(with_prefix(all, prefix));
      any = true;
    }
  }
  if (!any) throw ConfigError("checkpoint has no backbone parameters");
}

inline NamedParams concat_params(NamedParams a, const NamedParams& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace detail

/// Contrastive pretraining of the spatial encoder on small-window clips.
inline TrainResult run_step1(const TrainConfig& cfg, const Dataset& ds, std::ostream* progress = nullptr) {
  if (cfg.step != 1) throw ConfigError("run_step1 needs a step-1 config");
  cfg.validate();
  detail::check_dataset(cfg, ds);
  const WindowGeometry& g = cfg.geometry;
  Rng init = make_rng(cfg.seed, "init");
  SiameseModel model(g, cfg.model, init);
  const NamedParams params = model.trainable();
  const NamedParams online = model.online_branch(), target = model.target_branch();
  OptimizerState opt;
  MomentumQueue queue(cfg.queue_size, cfg.model.projector_out);
  const auto a1 = AugmentationPolicy::a1(), a2 = AugmentationPolicy::a2();

  TrainResult result;
  std::uint64_t sample_counter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng srng = make_rng(cfg.seed, "step1.sample", epoch);
    const auto refs = sample_windows(ds, g.small_frames, cfg.windows_per_match, false, srng);
    const std::size_t batches = (refs.size() + cfg.batch_size - 1) / cfg.batch_size;
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    const double epoch_lr = lr_at(cfg, static_cast<double>(epoch) / static_cast<double>(cfg.epochs));
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(refs.size(), lo + cfg.batch_size);
      const std::size_t n = hi - lo;
      std::vector<double> r1, r2;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto clip = ds.matches[refs[i].match].video.frames_at(refs[i].start_frame, g.small_frames);
        Rng arng = make_rng(cfg.seed, "step1.augment", sample_counter++);
        append_tubelets(augment(clip, g, a1, arng), g, r1);
        append_tubelets(augment(clip, g, a2, arng), g, r2);
      }
      const Tensor x1 = tubelet_tensor(std::move(r1), g), x2 = tubelet_tensor(std::move(r2), g);
      Tensor z1t, z2t;
      {
        NoGradGuard ng;
        z1t = model.target_projector(model.target.forward(x1, n));
        z2t = model.target_projector(model.target.forward(x2, n));
      }
      if (queue.empty()) {
        queue_update(queue, z1t);
        continue;
      }
      const double t = (static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches)) /
                       static_cast<double>(cfg.epochs);
      const double lr = lr_at(cfg, t);
      const Tensor z1s = model.predictor(model.projector(model.online.forward(x1, n)));
      const Tensor z2s = model.predictor(model.projector(model.online.forward(x2, n)));
      const Tensor loss = moco_loss(z1s, z2s, z1t, z2t, queue, cfg.tau);
      backward(loss);
      adamw_step(params, opt, lr, cfg.weight_decay);
      zero_grads(params);
      ema_update(online, target, cfg.ema_momentum);
      queue_update(queue, z1t);
      loss_sum += loss.item();
      ++loss_count;
    }
    const double mean_loss = loss_count ? loss_sum / static_cast<double>(loss_count)
                                        : std::numeric_limits<double>::quiet_NaN();
    result.log.push_back({epoch + 1, mean_loss, epoch_lr});
    detail::report(progress, 1, result.log.back());
  }
  put_meta(result.checkpoint, g, cfg.model);
  NamedParams spatial;
  model.online.collect("spatial", spatial);
  result.checkpoint.put_all(spatial);
  result.queue_fill = queue.size();
  result.internals.put_all(target);
  return result;
}

/// Spatio-temporal pretraining by distillation of `bank` onto the temporal
/// tokens; the spatial (and temporal) encoder is initialised from `init`
/// when given.
inline TrainResult run_step2(const TrainConfig& cfg, const Dataset& ds, const FeatureBank& bank,
                             const Checkpoint* init = nullptr, std::ostream* progress = nullptr) {
  if (cfg.step != 2) throw ConfigError("run_step2 needs a step-2 config");
  cfg.validate();
  detail::check_dataset(cfg, ds);
  const WindowGeometry& g = cfg.geometry;
  if (bank.size() < 2 || bank.dim == 0) throw ConfigError("feature bank needs at least two rows");
  for (const auto& m : ds.matches) {
    if (bank.rows_of(m.video.id).empty()) throw ConfigError("feature bank has no rows for video " + m.video.id);
  }
  Rng init_rng = make_rng(cfg.seed, "init");
  SpotModel model(g, cfg.model, init_rng);
  if (init) detail::load_backbone(*init, model);
  Mlp kd(cfg.model.temporal_dim, cfg.model.kd_hidden, bank.dim, 3, init_rng);
  NamedParams kd_params;
  kd.collect("kd_projector", kd_params);
  const NamedParams params = detail::concat_params(model.backbone_parameters(), kd_params);
  OptimizerState opt;
  Tensor unit_bank;
  {
    NoGradGuard ng;
    unit_bank = l2_normalize(bank.matrix(), 1);
  }
  const auto a3 = AugmentationPolicy::a3();

  TrainResult result;
  std::uint64_t sample_counter = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng srng = make_rng(cfg.seed, "step2.sample", epoch);
    Rng mask_rng = make_rng(cfg.seed, "step2.mask", epoch);
    const auto refs = sample_windows(ds, g.global_frames, cfg.windows_per_match, false, srng);
    const std::size_t batches = (refs.size() + cfg.batch_size - 1) / cfg.batch_size;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::size_t lo = b * cfg.batch_size, hi = std::min(refs.size(), lo + cfg.batch_size);
      std::vector<double> rows;
      std::vector<std::size_t> aligned;
      for (std::size_t i = lo; i < hi; ++i) {
        const auto& match = ds.matches[refs[i].match];
        Rng arng = make_rng(cfg.seed, "step2.augment", sample_counter++);
        append_window_tubelets(augment(match.video.frames_at(refs[i].start_frame, g.global_frames), g, a3, arng), g,
                               rows);
        const auto times = token_timestamps(frame_time(refs[i].start_frame, g.fps), g);
        const auto idx = align(bank, match.video.id, times);
        aligned.insert(aligned.end(), idx.begin(), idx.end());
      }
      const double t = (static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches)) /
                       static_cast<double>(cfg.epochs);
      const double lr = lr_at(cfg, t);
      const std::size_t n = hi - lo;
      const Tensor z = kd(model.encode(tubelet_tensor(std::move(rows), g), n, cfg.alpha1, &mask_rng));
      const SceTargets targets = sce_targets(aligned, unit_bank, cfg.tau_m, cfg.lambda);
      const Tensor loss = sce_kd_loss(z, targets, unit_bank, cfg.tau);
      backward(loss);
      adamw_step(params, opt, lr, cfg.weight_decay);
      zero_grads(params);
      loss_sum += loss.item();
    }
    result.log.push_back({epoch + 1, loss_sum / static_cast<double>(batches),
                          lr_at(cfg, static_cast<double>(epoch) / static_cast<double>(cfg.epochs))});
    detail::report(progress, 2, result.log.back());
  }
  put_meta(result.checkpoint, g, cfg.model);
  result.checkpoint.put_all(model.backbone_parameters());
  return result;
}

/// Fine-tuning for spotting: phase A trains the classifier on a frozen
/// backbone for `classifier_epochs`, phase B trains everything for `epochs`
/// with a fresh schedule and optimizer. Without `init` the backbone starts
/// from random weights.
inline TrainResult run_step3(const TrainConfig& cfg, const Dataset& ds, const Checkpoint* init = nullptr,
                             std::ostream* progress = nullptr) {
  if (cfg.step != 3) throw ConfigError("run_step3 needs a step-3 config");
  cfg.validate();
  detail::check_dataset(cfg, ds);
  if (ds.num_classes() != cfg.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(ds.num_classes()) + " classes, model.num_classes is " +
                      std::to_string(cfg.model.num_classes));
  }
  const WindowGeometry& g = cfg.geometry;
  Rng init_rng = make_rng(cfg.seed, "init");
  SpotModel model(g, cfg.model, init_rng);
  if (init) detail::load_backbone(*init, model);
  NamedParams head;
  model.classifier.collect("classifier", head);
  const auto a4 = AugmentationPolicy::a4();
  const std::size_t classes = cfg.model.num_classes;

  TrainResult result;
  std::uint64_t sample_counter = 0;
  std::size_t logged = 0;
  auto run_phase = [&](std::size_t phase_epochs, bool frozen_backbone, const NamedParams& params, const char* tag) {
    OptimizerState opt;
    for (std::size_t epoch = 0; epoch < phase_epochs; ++epoch) {
      Rng srng = make_rng(cfg.seed, std::string("step3.sample.") + tag, epoch);
      Rng mask_rng = make_rng(cfg.seed, std::string("step3.mask.") + tag, epoch);
      Rng mix_rng = make_rng(cfg.seed, std::string("step3.mixup.") + tag, epoch);
      const auto refs = sample_windows(ds, g.global_frames, cfg.windows_per_match, true, srng);
      const std::size_t batches = (refs.size() + cfg.batch_size - 1) / cfg.batch_size;
      double loss_sum = 0.0;
      for (std::size_t b = 0; b < batches; ++b) {
        const std::size_t lo = b * cfg.batch_size, hi = std::min(refs.size(), lo + cfg.batch_size);
        std::vector<MixupSample> batch;
        for (std::size_t i = lo; i < hi; ++i) {
          const auto& match = ds.matches[refs[i].match];
          Rng arng = make_rng(cfg.seed, "step3.augment", sample_counter++);
          const double start_s = frame_time(refs[i].start_frame, g.fps);
          LabelMatrix y = assign_labels(match.annotations.events, start_s, g, cfg.epsilon_s, classes);
          batch.push_back({augment(match.video.frames_at(refs[i].start_frame, g.global_frames), g, a4, arng),
                           std::move(y.y)});
        }
        if (cfg.mixup_alpha > 0.0) mixup_batch(batch, cfg.mixup_alpha, mix_rng);
        std::vector<double> rows, labels;
        for (auto& s : batch) {
          append_window_tubelets(s.frames, g, rows);
          labels.insert(labels.end(), s.labels.begin(), s.labels.end());
        }
        const std::size_t n = batch.size();
        const Tensor x = tubelet_tensor(std::move(rows), g);
        const std::size_t label_rows = labels.size() / classes;
        const Tensor y = Tensor::from({label_rows, classes}, std::move(labels));
        const double t = (static_cast<double>(epoch) + static_cast<double>(b) / static_cast<double>(batches)) /
                         static_cast<double>(phase_epochs);
        const double lr = lr_at(cfg, t, phase_epochs, cfg.warmup_epochs);
        Tensor tokens;
        if (frozen_backbone) {
          NoGradGuard ng;
          tokens = model.encode(x, n, cfg.alpha2, &mask_rng);
        } else {
          tokens = model.encode(x, n, cfg.alpha2, &mask_rng);
        }
        const Tensor loss = bce_spotting_loss(classify(tokens, model.classifier), y);
        backward(loss);
        adamw_step(params, opt, lr, cfg.weight_decay);
        zero_grads(params);
        loss_sum += loss.item();
      }
      result.log.push_back({++logged, loss_sum / static_cast<double>(batches),
                            lr_at(cfg, static_cast<double>(epoch) / static_cast<double>(phase_epochs), phase_epochs,
                                  cfg.warmup_epochs)});
      detail::report(progress, 3, result.log.back());
    }
  };
  if (cfg.classifier_epochs > 0) {
    run_phase(cfg.classifier_epochs, true, head, "classifier");
    for (const auto& [name, t] : model.backbone_parameters()) result.internals.put("after_classifier." + name, t);
  }
  run_phase(cfg.epochs, false, model.parameters(), "full");

  put_meta(result.checkpoint, g, cfg.model);
  result.checkpoint.put_all(model.parameters());
  return result;
}

/// Rebuilds a model from a self-describing checkpoint; every parameter
/// record must be present.
inline SpotModel model_from_checkpoint(const Checkpoint& ck) {
  const WindowGeometry g = meta_geometry(ck);
  const ModelConfig m = meta_model(ck);
  Rng rng(0);
  SpotModel model(g, m, rng);
  if (ck.has_prefix("classifier.")) {
    ck.load_into(model.parameters());
  } else {
    ck.load_into(detail::with_prefix(model.backbone_parameters(), "spatial."));
    if (ck.has_prefix("temporal.")) ck.load_into(detail::with_prefix(model.backbone_parameters(), "temporal."));
  }
  return model;
}

}  // namespace spotkit
