#pragma once

// Online association: matching layer, Hungarian assignment with duplicate
// removal, confidence-guided track update and the per-frame track lifecycle.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dsat/geometry.hpp"
#include "dsat/transformer.hpp"

namespace dsat {

// ---------------------------------------------------------------------------
// Hungarian assignment

struct Assignment {
  std::vector<int> row_to_col;  // -1 when a row is left unassigned
  double cost = 0.0;
};

/// Minimum-cost one-to-one assignment of min(n, m) pairs (shortest augmenting
/// path with potentials, O(n^2 m)).
inline Assignment hungarian(const Mat& cost) {
  const int rows = static_cast<int>(cost.rows()), cols = static_cast<int>(cost.cols());
  Assignment out;
  out.row_to_col.assign(rows, -1);
  if (rows == 0 || cols == 0) return out;
  const bool flip = rows > cols;
  const Mat a = flip ? Mat(cost.transpose()) : cost;
  const int n = static_cast<int>(a.rows()), m = static_cast<int>(a.cols());
  constexpr double inf = std::numeric_limits<double>::infinity();

  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, false);
    do {
      used[j0] = true;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = a(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  for (int j = 1; j <= m; ++j) {
    if (p[j] == 0) continue;
    const int r = p[j] - 1, c = j - 1;
    if (flip)
      out.row_to_col[c] = r;
    else
      out.row_to_col[r] = c;
  }
  for (int r = 0; r < rows; ++r)
    if (out.row_to_col[r] >= 0) out.cost += cost(r, out.row_to_col[r]);
  return out;
}

// ---------------------------------------------------------------------------
// Matching layer

struct MatchOutput {
  Var o_a;  // D x T
  Var o_e;  // D x T
  Var m;    // D x (T + 1), last column = no match
};

/// Detection-major dual-source attention without the value projection: rows
/// are detections, columns are tracks plus the no-match column.
inline MatchOutput matching_layer(Tape& t, const nn::ParamStore& p, const EngineConfig& cfg,
                                  Var e_t, Var e_d, Var e_edge, double alpha) {
  MatchOutput out;
  out.o_a = appearance_logits(t, p, names::match, e_d, e_t, cfg.d);
  out.o_e = nn::transpose(edge_logits(t, p, names::match, e_edge, e_t.rows(), e_d.rows()));
  out.m = alpha_gate(nn::softmax_null(out.o_a), nn::softmax_null(out.o_e), alpha);
  return out;
}

// ---------------------------------------------------------------------------
// Assignment with duplicate removal

struct Partition {
  std::vector<std::pair<int, int>> matched;  // (detection, track index)
  std::vector<int> duplicates;
  std::vector<int> fresh;
};

inline constexpr double kForbiddenCost = 1e6;
inline constexpr double kLogEps = 1e-12;

/// Hungarian on -log M over pairs that beat their own no-match probability;
/// leftover detections are duplicates if they exceed tau_dup on a track that
/// was matched this frame, otherwise they start new tracks.
inline Partition assign_and_filter(const Mat& match, double tau_dup) {
  const Eigen::Index dets = match.rows(), tracks = match.cols() - 1;
  Partition out;
  Mat cost(dets, tracks);
  for (Eigen::Index i = 0; i < dets; ++i)
    for (Eigen::Index j = 0; j < tracks; ++j)
      cost(i, j) = match(i, j) > match(i, tracks) ? -std::log(match(i, j) + kLogEps)
                                                    : kForbiddenCost;
  const auto assignment = hungarian(cost);
  std::vector<char> track_taken(static_cast<std::size_t>(tracks), false);
  std::vector<char> det_taken(static_cast<std::size_t>(dets), false);
  for (Eigen::Index i = 0; i < dets; ++i) {
    const int j = assignment.row_to_col[i];
    if (j < 0 || cost(i, j) >= kForbiddenCost) continue;
    out.matched.emplace_back(static_cast<int>(i), j);
    track_taken[j] = det_taken[i] = true;
  }
  for (Eigen::Index i = 0; i < dets; ++i) {
    if (det_taken[i]) continue;
    double best = 0.0;
    bool any = false;
    for (Eigen::Index j = 0; j < tracks; ++j)
      if (track_taken[j]) {
        best = std::max(best, match(i, j));
        any = true;
      }
    if (any && best > tau_dup)
      out.duplicates.push_back(static_cast<int>(i));
    else
      out.fresh.push_back(static_cast<int>(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Confidence-guided track update

struct ConfidenceUpdate {
  Var embeddings;  // T x d
  Var weights;     // T x 1, in (0, 1)
};

/// w_j = sigmoid(sum_n w_n * max_i A^n[j, i] + b) over detection columns of every
/// decoder stage; E_j <- (1 - w_j) E_j^old + w_j E_j^head.
inline ConfidenceUpdate confidence_update(Tape& t, const nn::ParamStore& p,
                                          const std::vector<AttentionBundle>& bundles, Var e_old,
                                          Var e_head) {
  std::vector<Var> maxima;
  for (const auto& b : bundles) maxima.push_back(nn::row_max(nn::slice_cols(b.a, 0, b.a.cols() - 1)));
  Var pooled = nn::concat_cols(maxima, e_old.rows());
  Var w = nn::sigmoid(nn::linear(t, p, names::confidence, pooled));
  return {nn::add(e_old, nn::mul_col(nn::sub(e_head, e_old), w)), w};
}

// ---------------------------------------------------------------------------
// One frame through the network

struct FrameForward {
  EncoderOutput encoder;
  Var edge_embeddings;
  DecoderState decoder;
  Var head;
  ConfidenceUpdate update;
  MatchOutput match;
};

/// track_embeddings: T x d; det_appearance: D x d; raw_edges: (T * D) x 4.
inline FrameForward frame_forward(Tape& t, const Model& model, Var track_embeddings,
                                  Var det_appearance, const Mat& raw_edges, double alpha) {
  const auto& p = model.params;
  const auto& cfg = model.cfg;
  FrameForward f;
  f.encoder = encoder_forward(t, p, cfg, det_appearance);
  f.edge_embeddings = edge_embedding_head(t, p, t.constant(raw_edges));
  f.decoder = DecoderState{track_embeddings, f.edge_embeddings, {}};
  for (int n = 0; n < cfg.n_decoder_stages; ++n)
    f.decoder = decoder_layer_forward(t, p, cfg, n, f.decoder, f.encoder.embeddings, alpha);
  f.head = track_embedding_head(t, p, f.decoder.e_t);
  f.update = confidence_update(t, p, f.decoder.bundles, track_embeddings, f.head);
  f.match = matching_layer(t, p, cfg, f.update.embeddings, f.encoder.embeddings,
                           f.decoder.e_edge, alpha);
  return f;
}

// ---------------------------------------------------------------------------
// Tracker

struct FrameResult {
  int frame = 0;
  std::vector<std::pair<int, std::int64_t>> assignments;  // (detection, track id)
  std::vector<int> duplicates;
  std::vector<std::pair<int, std::int64_t>> new_tracks;   // (detection, track id)
  std::vector<std::int64_t> closed_tracks;

  bool operator==(const FrameResult&) const = default;
};

/// Stacks appearance vectors as rows; throws if any length differs from d.
inline Mat stack_rows(std::span<const Vec> rows, int d, const char* what) {
  Mat m(static_cast<Eigen::Index>(rows.size()), d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d)
      throw ShapeError(std::string(what) + " has dimension " + std::to_string(rows[i].size()) +
                       ", expected " + std::to_string(d));
    m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  }
  return m;
}

/// Appearance for every detection: its own vector, or the backbone's output
/// when the model carries one and the detection has a crop.
inline std::vector<Vec> detection_appearance(const Model& model, std::span<const Detection> dets) {
  std::vector<Vec> out(dets.size());
  std::vector<const Detection*> pending;
  std::vector<std::size_t> slots;
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].appearance) {
      out[i] = *dets[i].appearance;
    } else if (model.has_backbone() && dets[i].crop) {
      pending.push_back(&dets[i]);
      slots.push_back(i);
    } else {
      throw Error("detection " + std::to_string(i) +
                  " has no appearance embedding and no backbone is configured");
    }
  }
  auto embedded = embed_detections(model.params, model.cfg, pending);
  for (std::size_t k = 0; k < slots.size(); ++k) out[slots[k]] = std::move(embedded[k]);
  return out;
}

class Tracker {
 public:
  explicit Tracker(Model model, WarpFunction warper = {})
      : model_(std::move(model)), warper_(std::move(warper)) {
    validate_config(model_.cfg);
  }

  const std::vector<Track>& tracks() const { return tracks_; }
  const EngineConfig& config() const { return model_.cfg; }
  const Model& model() const { return model_; }

  FrameResult step(std::span<const Detection> dets) {
    const auto& cfg = model_.cfg;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (static_cast<int>(dets[i].pose.size()) != cfg.num_keypoints)
        throw ShapeError("detection " + std::to_string(i) + " has " +
                         std::to_string(dets[i].pose.size()) + " keypoints, expected " +
                         std::to_string(cfg.num_keypoints));

    const auto appearance = detection_appearance(model_, dets);
    std::vector<Vec> track_vecs;
    for (const auto& tr : tracks_) track_vecs.push_back(tr.embedding);
    const Mat det_mat = stack_rows(appearance, cfg.d, "detection appearance");
    const Mat track_mat = stack_rows(track_vecs, cfg.d, "track embedding");
    const auto edges = edge_features(tracks_, dets, cfg, warper_);

    Tape t;
    auto f = frame_forward(t, model_, t.constant(track_mat), t.constant(det_mat), edges.raw,
                           cfg.alpha);
    const Partition part = assign_and_filter(f.match.m.value(), cfg.tau_dup);

    FrameResult result;
    result.frame = frame_++;
    const Mat& updated = f.update.embeddings.value();
    std::vector<char> matched(tracks_.size(), false);
    for (auto [det, j] : part.matched) {
      Track& tr = tracks_[j];
      tr.last_pose = dets[det].pose;
      tr.last_box = dets[det].box;
      tr.frames_since_match = 0;
      tr.active = true;
      matched[j] = true;
      result.assignments.emplace_back(det, tr.id);
    }
    std::vector<Track> kept;
    for (std::size_t j = 0; j < tracks_.size(); ++j) {
      Track& tr = tracks_[j];
      tr.embedding = updated.row(static_cast<Eigen::Index>(j)).transpose();
      if (!matched[j]) {
        ++tr.frames_since_match;
        tr.active = false;
      }
      if (tr.frames_since_match > cfg.tau_age)
        result.closed_tracks.push_back(tr.id);
      else
        kept.push_back(std::move(tr));
    }
    tracks_ = std::move(kept);

    if (!part.fresh.empty()) {
      Var fresh = new_track_embedding_head(
          t, model_.params, nn::gather_rows(f.encoder.embeddings, part.fresh));
      for (std::size_t k = 0; k < part.fresh.size(); ++k) {
        const int det = part.fresh[k];
        Track tr;
        tr.id = next_id_++;
        tr.embedding = fresh.value().row(static_cast<Eigen::Index>(k)).transpose();
        tr.last_pose = dets[det].pose;
        tr.last_box = dets[det].box;
        tracks_.push_back(std::move(tr));
        result.new_tracks.emplace_back(det, tracks_.back().id);
      }
    }
    result.duplicates = part.duplicates;
    return result;
  }

 private:
  Model model_;
  WarpFunction warper_;
  std::vector<Track> tracks_;
  std::int64_t next_id_ = 1;
  int frame_ = 0;
};

}  // namespace dsat
