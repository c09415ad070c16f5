#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <utility>

#include "dsat/core_types.hpp"

namespace dsat {

inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x_max, b.x_max) - std::max(a.x_min, b.x_min));
  const double iy = std::max(0.0, std::min(a.y_max, b.y_max) - std::max(a.y_min, b.y_min));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

using OksTriplet = std::array<double, 3>;

/// Three OKS variants between p (track side) and q (detection side):
/// [0] over keypoints visible in both, [1] over p's visible keypoints,
/// [2] over q's visible keypoints. Keypoints missing on the partner side
/// contribute 0; an empty averaging set gives 0.
inline OksTriplet oks_triplet(const Pose& p, const Pose& q, const Box& scale_box,
                              std::span<const double> kappas) {
  if (p.size() != q.size()) throw ShapeError("oks: poses have different keypoint counts");
  if (kappas.size() != p.size()) throw ShapeError("oks: kappa count does not match K");
  const double s = std::max(scale_box.area(), 1e-12);

  double shared = 0.0, over_p = 0.0, over_q = 0.0;
  int n_shared = 0, n_p = 0, n_q = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const bool vp = p.keypoints[i].is_visible();
    const bool vq = q.keypoints[i].is_visible();
    n_p += vp;
    n_q += vq;
    if (!(vp && vq)) continue;
    const double dx = p.keypoints[i].x - q.keypoints[i].x;
    const double dy = p.keypoints[i].y - q.keypoints[i].y;
    const double k = kappas[i];
    const double sim = std::exp(-(dx * dx + dy * dy) / (2.0 * s * k * k));
    shared += sim;
    ++n_shared;
  }
  over_p = shared;
  over_q = shared;
  return {n_shared ? shared / n_shared : 0.0, n_p ? over_p / n_p : 0.0,
          n_q ? over_q / n_q : 0.0};
}

using WarpFunction = std::function<std::pair<Pose, Box>(const Track&)>;

/// Moves a track's last pose and box into the current frame.
inline std::pair<Pose, Box> warp_track(const Track& t, WarpMode mode,
                                       const WarpFunction& warper = {}) {
  if (mode == WarpMode::identity) return {t.last_pose, t.last_box};
  if (!warper) throw ConfigError("pluggable warp mode requires a registered warper");
  return warper(t);
}

/// Raw temporal similarities, one 4-vector per (track, detection) pair.
/// Row j * dets + i holds [IoU, OKS_shared, OKS_over_track, OKS_over_det].
struct EdgeFeatureMatrix {
  int tracks = 0;
  int dets = 0;
  Mat raw;  // (tracks * dets) x 4

  auto at(int j, int i) const { return raw.row(static_cast<Eigen::Index>(j) * dets + i); }
};

inline EdgeFeatureMatrix edge_features(std::span<const Track> tracks,
                                       std::span<const Detection> dets,
                                       const EngineConfig& cfg,
                                       const WarpFunction& warper = {}) {
  EdgeFeatureMatrix out;
  out.tracks = static_cast<int>(tracks.size());
  out.dets = static_cast<int>(dets.size());
  out.raw = Mat::Zero(static_cast<Eigen::Index>(out.tracks) * out.dets, 4);
  const auto kappas = resolved_kappas(cfg);
  for (int j = 0; j < out.tracks; ++j) {
    const auto [pose, box] = warp_track(tracks[j], cfg.warp_mode, warper);
    for (int i = 0; i < out.dets; ++i) {
      const auto oks = oks_triplet(pose, dets[i].pose, box, kappas);
      auto row = out.raw.row(static_cast<Eigen::Index>(j) * out.dets + i);
      row << iou(box, dets[i].box), oks[0], oks[1], oks[2];
    }
  }
  return out;
}

}  // namespace dsat
