#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "dsat/core_types.hpp"

namespace dsat::test {

inline Pose pose_at(const std::vector<std::pair<double, double>>& pts, double confidence = 0.9) {
  Pose p;
  for (auto [x, y] : pts) p.keypoints.push_back({x, y, confidence, false});
  return p;
}

/// K keypoints spread over the box on a fixed pattern.
inline Pose pose_in_box(const Box& b, int k) {
  Pose p;
  for (int i = 0; i < k; ++i) {
    const double u = 0.2 + 0.6 * ((i * 7) % k) / std::max(1, k - 1);
    const double v = (i + 0.5) / k;
    p.keypoints.push_back({b.x_min + u * b.width(), b.y_min + v * b.height(), 0.9, false});
  }
  return p;
}

inline Detection detection_at(double cx, double cy, int k, const Vec& appearance,
                              double w = 60.0, double h = 150.0) {
  Detection d;
  d.box = {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  d.pose = pose_in_box(d.box, k);
  d.appearance = appearance;
  return d;
}

inline Mat random_matrix(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng,
                         double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline Vec unit_axis(int d, int axis, double norm) {
  Vec v = Vec::Zero(d);
  v(axis) = norm;
  return v;
}

}  // namespace dsat::test
