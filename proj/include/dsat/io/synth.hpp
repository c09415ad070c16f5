#pragma once

// Seeded synthetic sequences with ground-truth identities and controlled
// appearance vectors.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsat/io/sequence.hpp"

namespace dsat::io {

enum class Scenario { crossing, occlusion, duplicates, crowd };

inline Scenario parse_scenario(const std::string& s) {
  if (s == "crossing") return Scenario::crossing;
  if (s == "occlusion") return Scenario::occlusion;
  if (s == "duplicates") return Scenario::duplicates;
  if (s == "crowd") return Scenario::crowd;
  throw ConfigError("unknown scenario \"" + s + "\" (crossing, occlusion, duplicates, crowd)");
}

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::crossing: return "crossing";
    case Scenario::occlusion: return "occlusion";
    case Scenario::duplicates: return "duplicates";
    case Scenario::crowd: return "crowd";
  }
  return "?";
}

struct SynthOptions {
  Scenario scenario = Scenario::crossing;
  int n_frames = 30;
  std::uint64_t seed = 0;
  int d = 16;
  int num_keypoints = 15;
  // 1 keeps identities on their own cluster centers, 0 puts everyone on a
  // shared center.
  double separation = 1.0;
  double appearance_noise = 0.1;
  double pose_noise = 1.0;   // px
  int gap = 10;              // occlusion length
  int occlusion_start = -1;  // -1: a third into the sequence
  double speed = 5.0;        // px per frame for crossing / occluded persons
  double duplicate_prob = 0.3;
  bool crops = false;
  int crop_height = 64;
  int crop_width = 32;
};

inline constexpr double kPersonWidth = 60.0;
inline constexpr double kPersonHeight = 150.0;

/// Keypoint positions as fractions of the box, PoseTrack order for K = 15.
inline std::vector<std::pair<double, double>> skeleton_template(int k) {
  if (k == 15)
    return {{0.50, 0.08}, {0.50, 0.16}, {0.50, 0.01}, {0.30, 0.22}, {0.70, 0.22},
            {0.22, 0.38}, {0.78, 0.38}, {0.18, 0.52}, {0.82, 0.52}, {0.38, 0.55},
            {0.62, 0.55}, {0.36, 0.75}, {0.64, 0.75}, {0.35, 0.97}, {0.65, 0.97}};
  std::vector<std::pair<double, double>> out;
  for (int i = 0; i < k; ++i) {
    const double u = 0.2 + 0.6 * std::fmod(i * 0.6180339887, 1.0);
    out.emplace_back(u, (i + 0.5) / k);
  }
  return out;
}

/// n unit-variance, zero-mean vectors of norm sqrt(d), mutually orthogonal
/// when n < d.
inline std::vector<Vec> cluster_centers(int n, int d, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec> out;
  const Vec ones = Vec::Ones(d) / std::sqrt(static_cast<double>(d));
  for (int k = 0; k < n; ++k) {
    Vec v(d);
    for (int i = 0; i < d; ++i) v(i) = g(rng);
    v -= ones.dot(v) * ones;
    if (k < d - 1)
      for (const auto& u : out) v -= u.dot(v) / u.squaredNorm() * u;
    out.push_back(v.normalized() * std::sqrt(static_cast<double>(d)));
  }
  return out;
}

/// Copy of a detection with box and pose rescaled by up to 5% about the box
/// center and shifted by up to 3 px. Keeps identity and appearance.
inline Detection jitter_duplicate(const Detection& det, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> scale(0.95, 1.05), shift(-3.0, 3.0);
  const double s = scale(rng), dx = shift(rng), dy = shift(rng);
  const double cx = 0.5 * (det.box.x_min + det.box.x_max);
  const double cy = 0.5 * (det.box.y_min + det.box.y_max);
  auto mx = [&](double x) { return cx + (x - cx) * s + dx; };
  auto my = [&](double y) { return cy + (y - cy) * s + dy; };
  Detection out = det;
  out.box = {mx(det.box.x_min), my(det.box.y_min), mx(det.box.x_max), my(det.box.y_max)};
  for (auto& kp : out.pose.keypoints) {
    kp.x = mx(kp.x);
    kp.y = my(kp.y);
  }
  out.heatmaps.reset();
  out.duplicate = true;
  return out;
}

namespace detail {

struct Person {
  int id;
  double cx, cy;
};

class Generator {
 public:
  explicit Generator(const SynthOptions& o) : o_(o), rng_(o.seed) {}

  std::vector<Vec> centers(int n) {
    auto c = cluster_centers(n + 1, o_.d, rng_);
    shared_ = c.back();
    c.pop_back();
    return c;
  }

  Detection person(int id, double cx, double cy, const Vec& center) {
    std::normal_distribution<double> g(0.0, 1.0);
    Detection d;
    d.identity = id;
    d.box = {cx - kPersonWidth / 2 + 0.5 * g(rng_), cy - kPersonHeight / 2 + 0.5 * g(rng_),
             cx + kPersonWidth / 2 + 0.5 * g(rng_), cy + kPersonHeight / 2 + 0.5 * g(rng_)};
    for (const auto& [u, v] : skeleton_template(o_.num_keypoints)) {
      Keypoint k;
      k.x = cx - kPersonWidth / 2 + u * kPersonWidth + o_.pose_noise * g(rng_);
      k.y = cy - kPersonHeight / 2 + v * kPersonHeight + o_.pose_noise * g(rng_);
      k.confidence = 0.9;
      k.visible = true;
      d.pose.keypoints.push_back(k);
    }
    d.score = 0.9;
    Vec a = o_.separation * center + (1.0 - o_.separation) * shared_;
    for (Eigen::Index i = 0; i < a.size(); ++i) a(i) += o_.appearance_noise * g(rng_);
    d.appearance = a;
    if (o_.crops) d.crop = crop(d, center);
    return d;
  }

  std::mt19937_64& rng() { return rng_; }

 private:
  // Person-shaped blob tinted by the first three appearance components.
  Crop crop(const Detection& d, const Vec& center) {
    std::normal_distribution<double> g(0.0, 0.05);
    Crop c;
    c.height = o_.crop_height;
    c.width = o_.crop_width;
    c.pixels = Mat::Zero(3, static_cast<Eigen::Index>(c.height) * c.width);
    const double sx = static_cast<double>(c.width) / d.box.width();
    const double sy = static_cast<double>(c.height) / d.box.height();
    const double sigma = 0.06 * c.height;
    for (int y = 0; y < c.height; ++y)
      for (int x = 0; x < c.width; ++x) {
        double mass = 0.0;
        for (const auto& k : d.pose.keypoints) {
          const double kx = (k.x - d.box.x_min) * sx - 0.5, ky = (k.y - d.box.y_min) * sy - 0.5;
          mass += std::exp(-((x - kx) * (x - kx) + (y - ky) * (y - ky)) / (2 * sigma * sigma));
        }
        mass = std::min(mass, 1.0);
        for (int ch = 0; ch < 3; ++ch)
          c.pixels(ch, y * c.width + x) = 0.5 + 0.25 * mass * center(ch % center.size()) + g(rng_);
      }
    return c;
  }

  SynthOptions o_;
  std::mt19937_64 rng_;
  Vec shared_;
};

}  // namespace detail

/// Scenarios:
///  crossing   two people walk toward each other (20 px vertical offset) and swap sides
///  occlusion  three people walking right; the middle one is faster and disappears
///             for `gap` frames
///  duplicates three people; frames carry a jittered duplicate with duplicate_prob
///  crowd      eight people on a tight grid, boxes overlapping, swaying sideways
inline SequenceFile synth_sequence(const SynthOptions& o) {
  if (o.n_frames <= 0) throw ConfigError("n_frames must be positive");
  if (o.d <= 0) throw ConfigError("embedding dim must be positive");
  detail::Generator gen(o);
  SequenceFile s;
  s.sequence_id = to_string(o.scenario) + "-" + std::to_string(o.seed);
  s.num_keypoints = o.num_keypoints;
  s.fps = 25.0;
  auto& rng = gen.rng();

  const int n_ids = o.scenario == Scenario::crossing ? 2 : o.scenario == Scenario::crowd ? 8 : 3;
  const auto centers = gen.centers(n_ids);
  const int occ_start = o.occlusion_start >= 0 ? o.occlusion_start : o.n_frames / 3;

  // crowd: grid slots, sway amplitude, period and phase per person
  std::vector<double> amp, period, phase;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  if (o.scenario == Scenario::crowd)
    for (int k = 0; k < n_ids; ++k) {
      amp.push_back(10.0 + 15.0 * u01(rng));
      period.push_back(20.0 + 20.0 * u01(rng));
      phase.push_back(2.0 * M_PI * u01(rng));
    }

  for (int f = 0; f < o.n_frames; ++f) {
    Frame fr;
    fr.index = f;
    fr.image_width = 640;
    fr.image_height = 480;
    std::vector<Detection>& dets = fr.detections;
    switch (o.scenario) {
      case Scenario::crossing: {
        const double mid = 320.0, half = o.speed * (o.n_frames - 1) / 2.0;
        const double xa = mid - half + o.speed * f, xb = mid + half - o.speed * f;
        dets.push_back(gen.person(1, xa, 230.0, centers[0]));
        dets.push_back(gen.person(2, xb, 250.0, centers[1]));
        break;
      }
      case Scenario::occlusion: {
        const double slow = 2.0;
        dets.push_back(gen.person(1, 120.0 + slow * f, 240.0, centers[0]));
        if (f < occ_start || f >= occ_start + o.gap)
          dets.push_back(gen.person(2, 260.0 + o.speed * f, 240.0, centers[1]));
        dets.push_back(gen.person(3, 540.0 + slow * f, 240.0, centers[2]));
        break;
      }
      case Scenario::duplicates: {
        for (int k = 0; k < n_ids; ++k)
          dets.push_back(gen.person(k + 1, 160.0 + 160.0 * k + 1.5 * f, 240.0, centers[k]));
        if (f > 0 && u01(rng) < o.duplicate_prob) {
          const int src = std::uniform_int_distribution<int>(0, n_ids - 1)(rng);
          dets.push_back(jitter_duplicate(dets[src], rng));
        }
        break;
      }
      case Scenario::crowd: {
        for (int k = 0; k < n_ids; ++k) {
          const double bx = 215.0 + 70.0 * (k % 4), by = 200.0 + 60.0 * (k / 4);
          const double x = bx + amp[k] * std::sin(2.0 * M_PI * f / period[k] + phase[k]);
          dets.push_back(gen.person(k + 1, x, by, centers[k]));
        }
        break;
      }
    }
    std::shuffle(dets.begin(), dets.end(), rng);
    s.frames.push_back(std::move(fr));
  }
  return s;
}

}  // namespace dsat::io
