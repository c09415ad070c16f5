#pragma once

// Pose-conditioned appearance features: Gaussian keypoint heatmaps and the
// spatially adaptive pose de-normalization (SPAPDE) layer, wired into a small
// three-stage convolutional backbone.

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dsat/core_types.hpp"
#include "dsat/nn/conv.hpp"
#include "dsat/nn/layers.hpp"

namespace dsat {

/// Unit-peak Gaussian per keypoint on an H x W grid whose pixel centers sit at
/// integer coordinates. Invisible keypoints give all-zero channels.
inline HeatmapSet render_heatmaps(const Pose& pose, int height, int width, double kernel_width) {
  HeatmapSet h;
  h.channels = static_cast<int>(pose.size());
  h.height = height;
  h.width = width;
  h.kernel_width = kernel_width;
  h.grid = Mat::Zero(h.channels, static_cast<Eigen::Index>(height) * width);
  const double inv = 1.0 / (2.0 * kernel_width * kernel_width);
  for (int k = 0; k < h.channels; ++k) {
    const Keypoint& kp = pose.keypoints[k];
    if (!kp.is_visible()) continue;
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = x - kp.x, dy = y - kp.y;
        h.grid(k, y * width + x) = std::exp(-(dx * dx + dy * dy) * inv);
      }
  }
  return h;
}

/// Maps image-space keypoints into the H x W crop of `box`.
inline Pose to_crop_frame(const Pose& pose, const Box& box, int height, int width) {
  Pose out = pose;
  for (auto& kp : out.keypoints) {
    kp.x = (kp.x - box.x_min) / box.width() * width - 0.5;
    kp.y = (kp.y - box.y_min) / box.height() * height - 0.5;
  }
  return out;
}

/// Heatmaps for a detection at the configured crop size. The configured kernel
/// width refers to a 256 px tall crop and is rescaled to the actual crop height.
inline HeatmapSet detection_heatmaps(const Detection& det, const EngineConfig& cfg) {
  const double sigma = cfg.heatmap_kernel_width * cfg.crop_height / 256.0;
  return render_heatmaps(to_crop_frame(det.pose, det.box, cfg.crop_height, cfg.crop_width),
                         cfg.crop_height, cfg.crop_width, sigma);
}

// ---------------------------------------------------------------------------
// SPAPDE layer

inline constexpr int kSpapdeHidden = 16;

inline void add_spapde(nn::ParamStore& p, const std::string& prefix, int keypoints,
                       int channels, std::mt19937_64& rng, int hidden = kSpapdeHidden) {
  p.add(prefix + ".shared.w", nn::uniform_init(hidden, keypoints * 9, keypoints * 9, rng));
  p.add(prefix + ".shared.b", nn::uniform_init(1, hidden, keypoints * 9, rng));
  p.add(prefix + ".gamma.w", nn::uniform_init(channels, hidden * 9, hidden * 9, rng));
  p.add(prefix + ".gamma.b", nn::uniform_init(1, channels, hidden * 9, rng));
  p.add(prefix + ".beta.w", nn::uniform_init(channels, hidden * 9, hidden * 9, rng));
  p.add(prefix + ".beta.b", nn::uniform_init(1, channels, hidden * 9, rng));
}

struct Modulation {
  nn::Var gamma;
  nn::Var beta;
};

/// a = ReLU(conv(h)); gamma = conv(a); beta = conv(a).
inline Modulation spapde_modulation(nn::Tape& t, const nn::ParamStore& p,
                                    const std::string& prefix, nn::Var heatmaps,
                                    nn::MapShape shape) {
  using namespace nn;
  Var a = relu(conv3x3(heatmaps, p.bind(t, prefix + ".shared.w"), p.bind(t, prefix + ".shared.b"),
                       shape));
  return {conv3x3(a, p.bind(t, prefix + ".gamma.w"), p.bind(t, prefix + ".gamma.b"), shape),
          conv3x3(a, p.bind(t, prefix + ".beta.w"), p.bind(t, prefix + ".beta.b"), shape)};
}

/// gamma * (f - mu_c) / sigma_c + beta, with per-channel statistics taken over
/// every person and pixel of the batch (rows of f are channels).
inline nn::Var spapde_forward(nn::Var f, nn::Var gamma, nn::Var beta) {
  return nn::add(nn::hadamard(gamma, nn::layer_norm(f, nn::kNormEps)), beta);
}

// ---------------------------------------------------------------------------
// Toy backbone: three conv stages (8, 16, 32 channels), each conv -> 2x2
// average pool -> SPAPDE -> ReLU, then global average pool and a linear map to d.

inline constexpr std::array<int, 3> kBackboneChannels = {8, 16, 32};
inline const std::string kBackbonePrefix = "backbone";

inline void add_backbone(nn::ParamStore& p, const EngineConfig& cfg, std::mt19937_64& rng) {
  int in = 3;
  for (std::size_t s = 0; s < kBackboneChannels.size(); ++s) {
    const int out = kBackboneChannels[s];
    const std::string pre = kBackbonePrefix + ".stage" + std::to_string(s);
    p.add(pre + ".conv.w", nn::uniform_init(out, in * 9, in * 9, rng));
    p.add(pre + ".conv.b", nn::uniform_init(1, out, in * 9, rng));
    add_spapde(p, pre + ".spapde", cfg.num_keypoints, out, rng);
    in = out;
  }
  nn::add_linear(p, kBackbonePrefix + ".head", in, cfg.d, rng);
}

struct Embedding {
  nn::Var embeddings;  // N x d
  bool plain_normalization = false;
};

/// crops: 3 x (N * H * W); heatmaps: K x (N * H * W) or absent. Without
/// heatmaps every SPAPDE layer degrades to plain normalization.
inline Embedding appearance_embed(nn::Tape& t, const nn::ParamStore& p, nn::Var crops,
                                  std::optional<nn::Var> heatmaps, nn::MapShape shape) {
  using namespace nn;
  Var x = crops;
  std::optional<Var> h = heatmaps;
  MapShape s = shape;
  for (std::size_t st = 0; st < kBackboneChannels.size(); ++st) {
    const std::string pre = kBackbonePrefix + ".stage" + std::to_string(st);
    x = conv3x3(x, p.bind(t, pre + ".conv.w"), p.bind(t, pre + ".conv.b"), s);
    x = avg_pool2(x, s);
    if (h) h = avg_pool2(*h, s);
    s = {s.n, s.h / 2, s.w / 2};
    if (h) {
      auto mod = spapde_modulation(t, p, pre + ".spapde", *h, s);
      x = spapde_forward(x, mod.gamma, mod.beta);
    } else {
      x = layer_norm(x, kNormEps);
    }
    x = relu(x);
  }
  return {linear(t, p, kBackbonePrefix + ".head", global_avg_pool(x, s)), !heatmaps.has_value()};
}

/// Appearance vectors for a batch of detections that carry crops. Heatmaps are
/// taken from the detection or rendered from its pose; statistics are per call.
inline std::vector<Vec> embed_detections(const nn::ParamStore& p, const EngineConfig& cfg,
                                         std::span<const Detection* const> dets,
                                         bool* plain_normalization = nullptr) {
  if (dets.empty()) return {};
  const nn::MapShape shape{static_cast<int>(dets.size()), cfg.crop_height, cfg.crop_width};
  Mat crops(3, shape.columns());
  Mat heat(cfg.num_keypoints, shape.columns());
  bool have_heat = true;
  for (std::size_t n = 0; n < dets.size(); ++n) {
    const Detection& d = *dets[n];
    if (!d.crop || d.crop->height != shape.h || d.crop->width != shape.w)
      throw ShapeError("detection crop missing or not " + std::to_string(shape.h) + "x" +
                       std::to_string(shape.w));
    crops.middleCols(n * shape.pixels(), shape.pixels()) = d.crop->pixels;
    HeatmapSet hm;
    if (d.heatmaps) {
      hm = *d.heatmaps;
    } else if (d.pose.any_visible()) {
      hm = detection_heatmaps(d, cfg);
    } else {
      have_heat = false;
      continue;
    }
    if (hm.channels != cfg.num_keypoints || hm.height != shape.h || hm.width != shape.w)
      throw ShapeError("heatmap grid does not match configured crop");
    heat.middleCols(n * shape.pixels(), shape.pixels()) = hm.grid;
  }
  nn::Tape t;
  std::optional<nn::Var> hv;
  if (have_heat) hv = t.constant(heat);
  auto out = appearance_embed(t, p, t.constant(crops), hv, shape);
  if (plain_normalization) *plain_normalization = out.plain_normalization;
  std::vector<Vec> res;
  for (Eigen::Index n = 0; n < out.embeddings.rows(); ++n)
    res.push_back(out.embeddings.value().row(n).transpose());
  return res;
}

}  // namespace dsat
