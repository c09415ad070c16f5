#pragma once

// Simplified association metrics. Not comparable to benchmark HOTA/MOTA.

#include <cstdint>
#include <map>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsat/io/sequence.hpp"

namespace dsat::io {

inline constexpr double kEvalIou = 0.5;

struct EvalReport {
  int id_switches = 0;
  double association_accuracy = 1.0;
  double mota_lite = 1.0;
  int gt_instances = 0;
  int matches = 0;
  int misses = 0;
  int false_positives = 0;
  std::vector<double> precision;  // per frame
  std::vector<double> recall;     // per frame
};

/// Ground truth: non-duplicate detections carrying an identity. Hypotheses:
/// detections the results gave a track id. Per frame they are paired by
/// Hungarian on 1 - IoU, keeping pairs with IoU > 0.5.
inline EvalReport evaluate(const std::vector<FrameResult>& results, const SequenceFile& gt) {
  if (results.size() != gt.frames.size())
    throw Error("evaluate: " + std::to_string(results.size()) + " result frames for " +
                std::to_string(gt.frames.size()) + " ground-truth frames");
  EvalReport r;
  std::map<int, std::int64_t> last_track;
  std::map<int, std::map<std::int64_t, int>> votes;
  for (std::size_t f = 0; f < results.size(); ++f) {
    const auto& dets = gt.frames[f].detections;
    std::vector<int> gts;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (dets[i].identity && !dets[i].duplicate) gts.push_back(static_cast<int>(i));
    std::vector<std::pair<int, std::int64_t>> hyps = results[f].assignments;
    hyps.insert(hyps.end(), results[f].new_tracks.begin(), results[f].new_tracks.end());
    for (const auto& [det, _] : hyps)
      if (det < 0 || det >= static_cast<int>(dets.size()))
        throw Error("evaluate: frame " + std::to_string(f) + " references detection " +
                    std::to_string(det) + " out of range");

    Mat cost(static_cast<Eigen::Index>(gts.size()), static_cast<Eigen::Index>(hyps.size()));
    for (std::size_t g = 0; g < gts.size(); ++g)
      for (std::size_t h = 0; h < hyps.size(); ++h) {
        const double o = iou(dets[gts[g]].box, dets[hyps[h].first].box);
        cost(g, h) = o > kEvalIou ? 1.0 - o : kForbiddenCost;
      }
    const auto a = hungarian(cost);
    int matched = 0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      const int h = a.row_to_col[g];
      if (h < 0 || cost(g, h) >= kForbiddenCost) continue;
      ++matched;
      const int id = *dets[gts[g]].identity;
      const std::int64_t track = hyps[h].second;
      if (auto it = last_track.find(id); it != last_track.end() && it->second != track) ++r.id_switches;
      last_track[id] = track;
      ++votes[id][track];
    }
    r.gt_instances += static_cast<int>(gts.size());
    r.matches += matched;
    r.misses += static_cast<int>(gts.size()) - matched;
    r.false_positives += static_cast<int>(hyps.size()) - matched;
    r.precision.push_back(hyps.empty() ? 1.0 : static_cast<double>(matched) / hyps.size());
    r.recall.push_back(gts.empty() ? 1.0 : static_cast<double>(matched) / gts.size());
  }
  int modal = 0;
  for (const auto& [_, counts] : votes) {
    int best = 0;
    for (const auto& [__, c] : counts) best = std::max(best, c);
    modal += best;
  }
  r.association_accuracy = r.matches ? static_cast<double>(modal) / r.matches : 1.0;
  r.mota_lite = r.gt_instances
                    ? 1.0 - static_cast<double>(r.misses + r.false_positives + r.id_switches) /
                                r.gt_instances
                    : 1.0;
  return r;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"id_switches", r.id_switches},
          {"association_accuracy", r.association_accuracy},
          {"mota_lite", r.mota_lite},
          {"gt_instances", r.gt_instances},
          {"matches", r.matches},
          {"misses", r.misses},
          {"false_positives", r.false_positives},
          {"precision", r.precision},
          {"recall", r.recall}};
}

/// Runs a fresh tracker over every frame of a sequence.
inline std::vector<FrameResult> track_sequence(Tracker& tracker, const SequenceFile& seq) {
  std::vector<FrameResult> out;
  for (const auto& f : seq.frames) {
    auto r = tracker.step(f.detections);
    r.frame = f.index;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dsat::io
