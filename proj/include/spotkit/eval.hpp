#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "spotkit/spotting.hpp"

namespace spotkit {

/// Ranked predictions of one class with their match outcome.
struct MatchResult {
  std::vector<SpotEvent> ranked;
  std::vector<bool> true_positive;
  std::size_t ground_truth = 0;
};

/// Events of one class for one video.
struct ClassTrack {
  std::vector<SpotEvent> preds;
  std::vector<SpotEvent> gts;
};

/// Greedy one-to-one matching at tolerance delta across several videos.
///
/// Predictions are ranked by confidence (ties: earlier time, then video
/// order); each takes the nearest unmatched ground truth of its own video
/// with |dt| <= delta.
inline MatchResult match_predictions(std::span<const ClassTrack> videos, double delta_s) {
  if (!(delta_s > 0.0)) throw ParameterError("tolerance must be positive");
  struct Ranked {
    SpotEvent e;
    std::size_t video;
  };
  std::vector<Ranked> all;
  MatchResult r;
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (const auto& p : videos[v].preds) all.push_back({p, v});
    r.ground_truth += videos[v].gts.size();
  }
  std::stable_sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) {
    if (a.e.confidence != b.e.confidence) return a.e.confidence > b.e.confidence;
    if (a.e.time_s != b.e.time_s) return a.e.time_s < b.e.time_s;
    return a.video < b.video;
  });
  std::vector<std::vector<char>> used(videos.size());
  for (std::size_t v = 0; v < videos.size(); ++v) used[v].assign(videos[v].gts.size(), 0);
  for (const auto& p : all) {
    const auto& gts = videos[p.video].gts;
    std::size_t best = gts.size();
    double best_dt = std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[p.video][g]) continue;
      const double dt = std::abs(gts[g].time_s - p.e.time_s);
      if (dt <= delta_s && dt < best_dt) {
        best = g;
        best_dt = dt;
      }
    }
    r.ranked.push_back(p.e);
    r.true_positive.push_back(best != gts.size());
    if (best != gts.size()) used[p.video][best] = 1;
  }
  return r;
}

/// Non-interpolated AP: mean of precision at each true-positive rank,
/// divided by the number of ground truths.
inline double average_precision(const MatchResult& m) {
  if (m.ground_truth == 0) return m.ranked.empty() ? 1.0 : 0.0;
  double total = 0.0;
  std::size_t tp = 0;
  for (std::size_t r = 0; r < m.ranked.size(); ++r) {
    if (m.true_positive[r]) {
      ++tp;
      total += static_cast<double>(tp) / static_cast<double>(r + 1);
    }
  }
  return total / static_cast<double>(m.ground_truth);
}

inline double average_precision(std::span<const SpotEvent> preds, std::span<const SpotEvent> gts, double delta_s) {
  const ClassTrack t{{preds.begin(), preds.end()}, {gts.begin(), gts.end()}};
  return average_precision(match_predictions(std::span<const ClassTrack>(&t, 1), delta_s));
}

struct TamapReport {
  double t_amap = 0.0;  // fraction in [0, 1]
  double t_amap_percent = 0.0;
  std::vector<double> tolerances;
  std::vector<double> per_tolerance;        // mAP at each tolerance
  std::map<std::string, double> per_class;  // AP averaged over tolerances
};

/// Tight average-mAP: per tolerance, mean AP over classes with at least one
/// ground truth; then mean over tolerances. Videos are paired by video_id.
inline TamapReport tamap(std::span<const VideoEvents> predictions, std::span<const VideoEvents> ground_truth,
                         const ClassVocabulary& vocab, std::span<const double> tolerances = {}) {
  static const std::vector<double> kDefault{1, 2, 3, 4, 5};
  std::vector<double> tols(tolerances.begin(), tolerances.end());
  if (tols.empty()) tols = kDefault;
  std::map<std::string, const VideoEvents*> pred_by_id;
  for (const auto& p : predictions) pred_by_id[p.video_id] = &p;

  // Videos are visited in id order so rank ties across videos do not depend
  // on the order of the input documents.
  std::vector<const VideoEvents*> videos;
  for (const auto& g : ground_truth) videos.push_back(&g);
  std::sort(videos.begin(), videos.end(), [](auto* a, auto* b) { return a->video_id < b->video_id; });

  std::vector<std::vector<ClassTrack>> per_class(vocab.size(), std::vector<ClassTrack>(videos.size()));
  std::vector<std::size_t> gt_count(vocab.size(), 0);
  for (std::size_t v = 0; v < videos.size(); ++v) {
    for (const auto& e : videos[v]->events) {
      if (e.class_id >= vocab.size()) throw LookupError("ground-truth class id out of range");
      per_class[e.class_id][v].gts.push_back(e);
      ++gt_count[e.class_id];
    }
    auto it = pred_by_id.find(videos[v]->video_id);
    if (it == pred_by_id.end()) continue;
    for (const auto& e : it->second->events) {
      if (e.class_id >= vocab.size()) throw LookupError("prediction class id out of range");
      per_class[e.class_id][v].preds.push_back(e);
    }
  }

  TamapReport report;
  report.tolerances = tols;
  std::vector<double> class_sum(vocab.size(), 0.0);
  for (double delta : tols) {
    double sum_ap = 0.0;
    std::size_t counted = 0;
    for (std::size_t c = 0; c < vocab.size(); ++c) {
      if (gt_count[c] == 0) continue;
      const double ap = average_precision(match_predictions(per_class[c], delta));
      sum_ap += ap;
      class_sum[c] += ap;
      ++counted;
    }
    report.per_tolerance.push_back(counted ? sum_ap / static_cast<double>(counted) : 0.0);
  }
  double total = 0.0;
  for (double m : report.per_tolerance) total += m;
  report.t_amap = total / static_cast<double>(tols.size());
  report.t_amap_percent = 100.0 * total / static_cast<double>(tols.size());
  for (std::size_t c = 0; c < vocab.size(); ++c) {
    if (gt_count[c] > 0) report.per_class[vocab.names[c]] = class_sum[c] / static_cast<double>(tols.size());
  }
  return report;
}

inline nlohmann::json to_json(const TamapReport& r) {
  nlohmann::json per_tol = nlohmann::json::object();
  for (std::size_t i = 0; i < r.tolerances.size(); ++i) {
    std::ostringstream key;
    key << r.tolerances[i];
    per_tol[key.str()] = 100.0 * r.per_tolerance[i];
  }
  nlohmann::json per_class = nlohmann::json::object();
  for (const auto& [name, ap] : r.per_class) per_class[name] = 100.0 * ap;
  return {{"t_amap_percent", r.t_amap_percent}, {"per_tolerance", per_tol}, {"per_class", per_class}};
}

}  // namespace spotkit
