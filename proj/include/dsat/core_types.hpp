#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dsat {

// Row-major so that reshapes between (T*D) x k and T x D*k are free.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : Error {
  using Error::Error;
};

struct ShapeError : Error {
  using Error::Error;
};

// A keypoint is visible if its confidence clears this floor or it carries
// an explicit visible flag (ground truth).
inline constexpr double kVisibilityConfidence = 0.05;

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
  bool visible = false;

  bool is_visible() const { return visible || confidence > kVisibilityConfidence; }
  bool operator==(const Keypoint&) const = default;
};

struct Pose {
  std::vector<Keypoint> keypoints;

  std::size_t size() const { return keypoints.size(); }
  bool any_visible() const {
    for (const auto& k : keypoints)
      if (k.is_visible()) return true;
    return false;
  }
  bool operator==(const Pose&) const = default;
};

struct Box {
  double x_min = 0.0;
  double y_min = 0.0;
  double x_max = 0.0;
  double y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  double area() const { return width() * height(); }
  bool valid() const {
    return std::isfinite(x_min) && std::isfinite(y_min) && std::isfinite(x_max) &&
           std::isfinite(y_max) && x_min < x_max && y_min < y_max;
  }
  bool operator==(const Box&) const = default;
};

// K x H x W grid, stored channel-major as K rows of H*W values.
struct HeatmapSet {
  int channels = 0;
  int height = 0;
  int width = 0;
  double kernel_width = 0.0;
  Mat grid;  // channels x (height * width)

  bool operator==(const HeatmapSet& o) const {
    return channels == o.channels && height == o.height && width == o.width &&
           kernel_width == o.kernel_width && grid == o.grid;
  }
};

// 3 x H x W image crop, channel-major like HeatmapSet.
struct Crop {
  int height = 0;
  int width = 0;
  Mat pixels;  // 3 x (height * width)

  bool operator==(const Crop&) const = default;
};

struct Detection {
  Box box;
  Pose pose;
  std::optional<HeatmapSet> heatmaps;
  std::optional<Vec> appearance;
  std::optional<Crop> crop;
  double score = 1.0;
  // Ground-truth annotations; ignored by the tracker.
  std::optional<int> identity;
  bool duplicate = false;

  bool operator==(const Detection&) const = default;
};

struct Track {
  std::int64_t id = 0;
  Vec embedding;
  Pose last_pose;
  Box last_box;
  int frames_since_match = 0;
  bool active = true;

  bool operator==(const Track&) const = default;
};

enum class WarpMode { identity, pluggable };

// How the decoder refreshes edge embeddings between stages.
enum class EdgeUpdate {
  gated_logits,   // FFN_E(alpha * O_A + (1 - alpha) * O_E)
  gated_weights,  // FFN_E(A[:, :-1]) ablation
};

struct EngineConfig {
  int d = 256;
  int n_encoder_stages = 2;
  int n_decoder_stages = 2;
  double alpha = 0.3;
  double tau_dup = 0.4;
  int tau_age = 60;
  int ffn_hidden = 1024;
  double heatmap_kernel_width = 10.0;
  int num_keypoints = 15;
  std::vector<double> oks_kappas;  // empty -> defaults for num_keypoints
  WarpMode warp_mode = WarpMode::identity;
  EdgeUpdate edge_update = EdgeUpdate::gated_logits;
  int crop_height = 64;
  int crop_width = 32;

  int edge_dim() const { return d; }
  bool operator==(const EngineConfig&) const = default;
};

/// Small configuration used by tests and the toy training loop.
inline EngineConfig test_config() {
  EngineConfig cfg;
  cfg.d = 16;
  cfg.ffn_hidden = 32;
  return cfg;
}

// COCO per-keypoint sigmas, COCO ordering (17 keypoints).
inline const std::vector<double>& coco_sigmas() {
  static const std::vector<double> s = {0.026, 0.025, 0.025, 0.035, 0.035, 0.079,
                                        0.079, 0.072, 0.072, 0.062, 0.062, 0.107,
                                        0.107, 0.087, 0.087, 0.089, 0.089};
  return s;
}

/// Per-keypoint OKS constants for K keypoints. K = 17 is COCO order, K = 15 is
/// the PoseTrack order (nose, head_bottom, head_top, then shoulders to ankles);
/// the two head landmarks borrow the ear constant. Anything else is uniform.
inline std::vector<double> default_kappas(int k) {
  const auto& coco = coco_sigmas();
  if (k == 17) return coco;
  if (k == 15) {
    std::vector<double> out = {coco[0], coco[3], coco[3]};
    out.insert(out.end(), coco.begin() + 5, coco.end());
    return out;
  }
  return std::vector<double>(static_cast<std::size_t>(std::max(k, 0)), 0.07);
}

inline std::vector<double> resolved_kappas(const EngineConfig& cfg) {
  return cfg.oks_kappas.empty() ? default_kappas(cfg.num_keypoints) : cfg.oks_kappas;
}

/// Returns cfg unchanged if every invariant holds, otherwise throws ConfigError
/// naming the first violation.
inline EngineConfig validate_config(const EngineConfig& cfg) {
  auto fail = [](const std::string& what) { throw ConfigError(what); };
  if (!(cfg.alpha >= 0.0 && cfg.alpha <= 1.0)) fail("alpha out of range");
  if (!(cfg.tau_dup >= 0.0 && cfg.tau_dup <= 1.0)) fail("tau_dup out of range");
  if (cfg.tau_age < 0) fail("tau_age must be non-negative");
  if (cfg.d <= 0) fail("embedding dim must be positive");
  if (cfg.n_encoder_stages < 0) fail("encoder stage count must be non-negative");
  if (cfg.n_decoder_stages <= 0) fail("decoder stage count must be positive");
  if (cfg.ffn_hidden <= 0) fail("ffn hidden width must be positive");
  if (!(cfg.heatmap_kernel_width > 0.0)) fail("heatmap kernel width must be positive");
  if (cfg.num_keypoints <= 0) fail("keypoint count must be positive");
  if (cfg.crop_height <= 0 || cfg.crop_width <= 0) fail("crop dims must be positive");
  if (!cfg.oks_kappas.empty()) {
    if (static_cast<int>(cfg.oks_kappas.size()) != cfg.num_keypoints)
      fail("oks kappas must have one entry per keypoint");
    for (double k : cfg.oks_kappas)
      if (!(k > 0.0)) fail("oks kappas must be strictly positive");
  }
  return cfg;
}

}  // namespace dsat
