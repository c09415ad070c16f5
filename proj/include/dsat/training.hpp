#pragma once

// Losses, ground-truth identity assignment, AdamW and the toy training loop.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "dsat/io/sequence.hpp"
#include "dsat/io/synth.hpp"
#include "dsat/tracker.hpp"

namespace dsat {

inline constexpr double kLossEps = 1e-12;
inline constexpr double kGreedyOksFloor = 0.3;

// ---------------------------------------------------------------------------
// Ground-truth identities

/// Global greedy matching on shared-keypoint OKS (gt box as scale): the best
/// remaining (detection, gt) pair above `floor` is fixed, then both leave the
/// pool. Ties go to the lower detection index, then the lower gt index.
inline std::vector<std::optional<int>> greedy_identity_assignment(
    std::span<const Pose> det_poses, std::span<const Pose> gt_poses, std::span<const Box> gt_boxes,
    std::span<const int> gt_ids, std::span<const double> kappas, double floor = kGreedyOksFloor) {
  if (gt_poses.size() != gt_boxes.size() || gt_poses.size() != gt_ids.size())
    throw ShapeError("greedy assignment: gt poses, boxes and ids differ in length");
  struct Pair {
    double oks;
    int det, gt;
  };
  std::vector<Pair> pairs;
  for (std::size_t i = 0; i < det_poses.size(); ++i)
    for (std::size_t g = 0; g < gt_poses.size(); ++g) {
      const double s = oks_triplet(gt_poses[g], det_poses[i], gt_boxes[g], kappas)[0];
      if (s >= floor) pairs.push_back({s, static_cast<int>(i), static_cast<int>(g)});
    }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.oks != b.oks) return a.oks > b.oks;
    return a.det != b.det ? a.det < b.det : a.gt < b.gt;
  });
  std::vector<std::optional<int>> out(det_poses.size());
  std::vector<char> gt_used(gt_poses.size(), false);
  for (const auto& p : pairs) {
    if (out[p.det] || gt_used[p.gt]) continue;
    out[p.det] = gt_ids[p.gt];
    gt_used[p.gt] = true;
  }
  return out;
}

/// Identities of one frame's detections and of the current tracks.
struct IdentityLabels {
  std::vector<std::optional<int>> detections;
  std::vector<int> tracks;

  /// Column of M each detection should pick: its track, or the no-match column T.
  std::vector<int> match_targets() const {
    std::vector<int> out;
    const int t = static_cast<int>(tracks.size());
    for (const auto& id : detections) {
      int col = t;
      if (id)
        for (int j = 0; j < t; ++j)
          if (tracks[j] == *id) col = j;
      out.push_back(col);
    }
    return out;
  }

  /// T x (D + 1): ones on every detection sharing the track's identity, or on
  /// the no-match column when there is none.
  Mat decoder_mask() const {
    const auto t = static_cast<Eigen::Index>(tracks.size());
    const auto d = static_cast<Eigen::Index>(detections.size());
    Mat m = Mat::Zero(t, d + 1);
    for (Eigen::Index j = 0; j < t; ++j) {
      bool any = false;
      for (Eigen::Index i = 0; i < d; ++i)
        if (detections[i] && *detections[i] == tracks[j]) m(j, i) = 1.0, any = true;
      if (!any) m(j, d) = 1.0;
    }
    return m;
  }

  /// D x (D + 1): each detection's own duplicate group, self included.
  Mat encoder_mask() const {
    const auto d = static_cast<Eigen::Index>(detections.size());
    Mat m = Mat::Zero(d, d + 1);
    for (Eigen::Index i = 0; i < d; ++i) {
      m(i, i) = 1.0;
      if (!detections[i]) continue;
      for (Eigen::Index k = 0; k < d; ++k)
        if (detections[k] == detections[i]) m(i, k) = 1.0;
    }
    return m;
  }
};

// ---------------------------------------------------------------------------
// Association losses

/// Cross-entropy on the detection-major match matrix. Default: -mean log M[i, target].
/// `literal` keeps the second term linear: -mean[y log p_ij + (1 - y) p_i0].
inline Var loss_match(Var m, std::span<const int> targets, bool literal = false) {
  const Eigen::Index d = m.rows(), null_col = m.cols() - 1;
  if (static_cast<Eigen::Index>(targets.size()) != d) throw ShapeError("loss_match: target count");
  if (d == 0) return m.tape->constant(Mat::Zero(1, 1));
  Mat onehot = Mat::Zero(d, m.cols());
  Mat labeled = Mat::Zero(d, 1), unlabeled = Mat::Zero(d, 1);
  for (Eigen::Index i = 0; i < d; ++i) {
    onehot(i, targets[i]) = 1.0;
    (targets[i] == null_col ? unlabeled : labeled)(i, 0) = 1.0;
  }
  Var picked = nn::row_sum(nn::mask(m, onehot));
  Var logp = nn::log_clamped(picked, kLossEps);
  if (!literal) return nn::scale(nn::sum(logp), -1.0 / static_cast<double>(d));
  Var total = nn::add(nn::dot_const(logp, labeled), nn::dot_const(picked, unlabeled));
  return nn::scale(total, -1.0 / static_cast<double>(d));
}

/// Duplicate-aware attention loss: -mean_j log(sum of A[j, .] over mask[j, .]).
inline Var loss_attn(Var a, const Mat& mask) {
  if (a.rows() == 0) return a.tape->constant(Mat::Zero(1, 1));
  Var p = nn::row_sum(nn::mask(a, mask));
  return nn::scale(nn::sum(nn::log_clamped(p, kLossEps)), -1.0 / static_cast<double>(a.rows()));
}

struct LossParts {
  Var match;
  std::vector<Var> enc;
  std::vector<Var> dec;
  Var total;
};

/// L_match + sum_k L_enc_k + sum_k L_dec_k, unweighted.
inline Var total_loss(Var match, const std::vector<Var>& enc, const std::vector<Var>& dec) {
  Var total = match;
  for (const Var& v : enc) total = nn::add(total, v);
  for (const Var& v : dec) total = nn::add(total, v);
  return total;
}

inline LossParts frame_losses(const FrameForward& f, const IdentityLabels& labels,
                              bool literal = false) {
  LossParts out;
  const auto targets = labels.match_targets();
  out.match = loss_match(f.match.m, targets, literal);
  const Mat enc_mask = labels.encoder_mask(), dec_mask = labels.decoder_mask();
  for (const Var& a : f.encoder.attention) out.enc.push_back(loss_attn(a, enc_mask));
  for (const auto& b : f.decoder.bundles) out.dec.push_back(loss_attn(b.a, dec_mask));
  out.total = total_loss(out.match, out.enc, out.dec);
  return out;
}

// ---------------------------------------------------------------------------
// Re-identification losses

/// max(0, margin + |a - p| - |a - n|) per row, averaged. Rows are embeddings.
inline Var triplet_loss(Var anchor, Var pos, Var neg, double margin) {
  auto dist = [](Var x, Var y) {
    Var diff = nn::sub(x, y);
    return nn::sqrt_eps(nn::row_sum(nn::hadamard(diff, diff)), kLossEps);
  };
  Var hinge = nn::relu(nn::add_scalar(nn::sub(dist(anchor, pos), dist(anchor, neg)), margin));
  return nn::mean(hinge);
}

/// Mean over rows of the squared distance to the row's class center.
inline Var center_loss(Var embeds, std::span<const int> ids, Var centers) {
  if (embeds.rows() == 0) return embeds.tape->constant(Mat::Zero(1, 1));
  Var diff = nn::sub(embeds, nn::gather_rows(centers, std::vector<int>(ids.begin(), ids.end())));
  return nn::scale(nn::sum(nn::hadamard(diff, diff)), 1.0 / static_cast<double>(embeds.rows()));
}

/// Cross-entropy against (1 - eps) one-hot + eps / C, averaged over rows.
inline Var ce_label_smooth(Var logits, std::span<const int> ids, double eps) {
  const Eigen::Index n = logits.rows(), c = logits.cols();
  if (n == 0) return logits.tape->constant(Mat::Zero(1, 1));
  Mat q = Mat::Constant(n, c, eps / static_cast<double>(c));
  for (Eigen::Index i = 0; i < n; ++i) q(i, ids[i]) += 1.0 - eps;
  return nn::scale(nn::dot_const(nn::log_softmax(logits), q), -1.0 / static_cast<double>(n));
}

// ---------------------------------------------------------------------------
// AdamW with linear warm-up and a step decay

struct AdamWConfig {
  double lr = 5e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int warmup_steps = 20;
  int decay_step = 150;  // lr is multiplied by decay_factor from this step on
  double decay_factor = 0.1;

  double lr_at(int step) const {
    double lr_t = lr;
    if (warmup_steps > 0 && step < warmup_steps) lr_t *= static_cast<double>(step + 1) / warmup_steps;
    if (decay_step >= 0 && step >= decay_step) lr_t *= decay_factor;
    return lr_t;
  }
};

struct OptimState {
  std::map<std::string, Mat> m;
  std::map<std::string, Mat> v;
  int step = 0;
};

/// One decoupled-weight-decay step over every parameter, using the stored grads.
inline void adamw_step(nn::ParamStore& p, OptimState& s, const AdamWConfig& c) {
  const double lr = c.lr_at(s.step);
  ++s.step;
  const double bc1 = 1.0 - std::pow(c.beta1, s.step);
  const double bc2 = 1.0 - std::pow(c.beta2, s.step);
  for (const auto& name : p.names()) {
    Mat& w = p.value(name);
    const Mat& g = p.grad(name);
    auto [mi, fresh_m] = s.m.try_emplace(name, Mat::Zero(w.rows(), w.cols()));
    auto [vi, fresh_v] = s.v.try_emplace(name, Mat::Zero(w.rows(), w.cols()));
    Mat& m = mi->second;
    Mat& v = vi->second;
    m = c.beta1 * m + (1.0 - c.beta1) * g;
    v = c.beta2 * v + (1.0 - c.beta2) * g.cwiseProduct(g);
    const Mat update = (m.array() / bc1) / ((v.array() / bc2).sqrt() + c.eps) + c.weight_decay * w.array();
    w -= lr * update;
  }
}

// ---------------------------------------------------------------------------
// Toy training loop

struct TrainOptions {
  int iterations = 200;
  std::uint64_t seed = 0;
  AdamWConfig optim;
  double duplicate_prob = 0.3;
  int window = 3;
  int window_stride = 2;  // length-3 windows overlapping by one frame
  int eval_windows = 12;
  bool eq11_literal = false;
  std::optional<Model> init;  // defaults to make_model(cfg, seed)
};

struct CurvePoint {
  int iteration = 0;
  double match = 0.0;
  std::vector<double> enc;
  std::vector<double> dec;
  double total = 0.0;
};

struct TrainResult {
  Model model;
  std::vector<CurvePoint> curve;
  double initial_eval_loss = 0.0;
  double final_eval_loss = 0.0;
};

inline std::string curve_csv(const std::vector<CurvePoint>& curve) {
  std::ostringstream os;
  os.precision(10);
  os << "iteration,L_match";
  const std::size_t ne = curve.empty() ? 0 : curve.front().enc.size();
  const std::size_t nd = curve.empty() ? 0 : curve.front().dec.size();
  for (std::size_t k = 0; k < ne; ++k) os << ",L_attn_enc" << k;
  for (std::size_t k = 0; k < nd; ++k) os << ",L_attn_dec" << k;
  os << ",total\n";
  for (const auto& c : curve) {
    os << c.iteration << ',' << c.match;
    for (double v : c.enc) os << ',' << v;
    for (double v : c.dec) os << ',' << v;
    os << ',' << c.total << '\n';
  }
  return os.str();
}

namespace detail {

struct Window {
  std::size_t sequence = 0;
  std::size_t start = 0;  // frame position within the sequence
};

/// Detections of one frame after optional duplicate injection, with labels
/// from greedy OKS matching against the annotated detections.
struct LabeledFrame {
  std::vector<Detection> dets;
  std::vector<std::optional<int>> ids;
};

inline LabeledFrame label_frame(const io::Frame& frame, const EngineConfig& cfg, double dup_prob,
                                std::mt19937_64& rng) {
  LabeledFrame out;
  out.dets = frame.detections;
  std::vector<Pose> gt_poses;
  std::vector<Box> gt_boxes;
  std::vector<int> gt_ids;
  for (const auto& d : frame.detections)
    if (d.identity && !d.duplicate) {
      gt_poses.push_back(d.pose);
      gt_boxes.push_back(d.box);
      gt_ids.push_back(*d.identity);
    }
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int source = -1;
  if (!out.dets.empty() && u(rng) < dup_prob) {
    source = std::uniform_int_distribution<int>(0, static_cast<int>(out.dets.size()) - 1)(rng);
    out.dets.push_back(io::jitter_duplicate(out.dets[source], rng));
  }
  std::vector<Pose> det_poses;
  for (const auto& d : out.dets) det_poses.push_back(d.pose);
  const auto kappas = resolved_kappas(cfg);
  out.ids = greedy_identity_assignment(det_poses, gt_poses, gt_boxes, gt_ids, kappas);
  // Detections already flagged as duplicates, and the one just injected,
  // inherit their source identity.
  for (std::size_t i = 0; i < out.dets.size(); ++i)
    if (out.dets[i].duplicate && out.dets[i].identity) out.ids[i] = out.dets[i].identity;
  if (source >= 0) out.ids.back() = out.ids[source];
  return out;
}

struct TeacherTrack {
  int identity;
  Var embedding;  // 1 x d
  Track state;    // pose, box and age; embedding unused
};

/// Tracks alive at the start of a window: every identity seen in the
/// preceding tau_age frames, initialized from its last observation the way the
/// tracker initializes new tracks.
inline std::vector<TeacherTrack> history_tracks(Tape& t, const Model& model, const io::SequenceFile& seq,
                                                std::size_t start) {
  const auto& cfg = model.cfg;
  std::map<int, std::pair<std::size_t, std::size_t>> last;  // identity -> (frame pos, det idx)
  for (std::size_t f = 0; f < start; ++f) {
    if (seq.frames[start].index - seq.frames[f].index > cfg.tau_age + 1) continue;
    const auto& dets = seq.frames[f].detections;
    for (std::size_t i = 0; i < dets.size(); ++i)
      if (dets[i].identity && !dets[i].duplicate) last[*dets[i].identity] = {f, i};
  }
  std::map<std::size_t, std::vector<std::pair<int, std::size_t>>> by_frame;
  for (const auto& [id, loc] : last) by_frame[loc.first].emplace_back(id, loc.second);
  std::vector<TeacherTrack> out;
  for (const auto& [f, members] : by_frame) {
    const auto& dets = seq.frames[f].detections;
    const auto app = detection_appearance(model, dets);
    auto enc = encoder_forward(t, model.params, cfg, t.constant(stack_rows(app, cfg.d, "appearance")));
    std::vector<int> rows;
    for (const auto& [_, i] : members) rows.push_back(static_cast<int>(i));
    Var emb = new_track_embedding_head(t, model.params, nn::gather_rows(enc.embeddings, rows));
    const int age = seq.frames[start].index - seq.frames[f].index - 1;
    for (std::size_t k = 0; k < members.size(); ++k) {
      const auto& det = dets[members[k].second];
      TeacherTrack tt{members[k].first, nn::gather_rows(emb, {static_cast<int>(k)}), {}};
      tt.state.last_pose = det.pose;
      tt.state.last_box = det.box;
      tt.state.frames_since_match = age;
      tt.state.active = age == 0;
      out.push_back(std::move(tt));
    }
  }
  return out;
}

struct WindowLoss {
  Var total;
  CurvePoint parts;
  int frames = 0;
};

/// Unrolls one window with teacher-forced track states and accumulates the
/// per-frame loss, averaged over frames that carry detections.
inline WindowLoss window_loss(Tape& t, const Model& model, const io::SequenceFile& seq,
                              std::size_t start, int length, double dup_prob, bool literal,
                              std::mt19937_64& rng) {
  const auto& cfg = model.cfg;
  auto tracks = history_tracks(t, model, seq, start);
  WindowLoss out;
  out.total = t.constant(Mat::Zero(1, 1));
  out.parts.enc.assign(cfg.n_encoder_stages, 0.0);
  out.parts.dec.assign(cfg.n_decoder_stages, 0.0);
  const std::size_t end = std::min(seq.frames.size(), start + static_cast<std::size_t>(length));
  for (std::size_t f = start; f < end; ++f) {
    if (f > start) {
      const int gap = seq.frames[f].index - seq.frames[f - 1].index;
      for (auto& tr : tracks) tr.state.frames_since_match += gap - 1;
    }
    auto lf = label_frame(seq.frames[f], cfg, dup_prob, rng);
    if (lf.dets.empty()) {
      for (auto& tr : tracks) ++tr.state.frames_since_match, tr.state.active = false;
      continue;
    }
    std::vector<Track> states;
    std::vector<Var> emb;
    IdentityLabels labels{lf.ids, {}};
    for (const auto& tr : tracks) {
      states.push_back(tr.state);
      emb.push_back(tr.embedding);
      labels.tracks.push_back(tr.identity);
    }
    const auto app = detection_appearance(model, lf.dets);
    Var e_t = emb.empty() ? t.constant(Mat::Zero(0, cfg.d)) : nn::concat_rows(emb, cfg.d);
    const auto edges = edge_features(states, lf.dets, cfg);
    auto fwd = frame_forward(t, model, e_t, t.constant(stack_rows(app, cfg.d, "appearance")),
                             edges.raw, cfg.alpha);
    auto loss = frame_losses(fwd, labels, literal);
    out.total = nn::add(out.total, loss.total);
    out.parts.match += loss.match.scalar();
    for (std::size_t k = 0; k < loss.enc.size(); ++k) out.parts.enc[k] += loss.enc[k].scalar();
    for (std::size_t k = 0; k < loss.dec.size(); ++k) out.parts.dec[k] += loss.dec[k].scalar();
    ++out.frames;

    // Teacher forcing: tracks follow their identity's first detection; unseen
    // identities start new tracks.
    std::map<int, int> first_det;
    for (std::size_t i = 0; i < lf.ids.size(); ++i)
      if (lf.ids[i] && !first_det.count(*lf.ids[i])) first_det[*lf.ids[i]] = static_cast<int>(i);
    std::vector<TeacherTrack> next;
    for (std::size_t j = 0; j < tracks.size(); ++j) {
      TeacherTrack tr = tracks[j];
      tr.embedding = nn::gather_rows(fwd.update.embeddings, {static_cast<int>(j)});
      if (auto it = first_det.find(tr.identity); it != first_det.end()) {
        tr.state.last_pose = lf.dets[it->second].pose;
        tr.state.last_box = lf.dets[it->second].box;
        tr.state.frames_since_match = 0;
        tr.state.active = true;
        first_det.erase(it);
      } else {
        ++tr.state.frames_since_match;
        tr.state.active = false;
      }
      if (tr.state.frames_since_match <= cfg.tau_age) next.push_back(std::move(tr));
    }
    std::vector<int> rows;
    std::vector<int> ids;
    for (const auto& [id, i] : first_det) rows.push_back(i), ids.push_back(id);
    if (!rows.empty()) {
      Var fresh = new_track_embedding_head(t, model.params, nn::gather_rows(fwd.encoder.embeddings, rows));
      for (std::size_t k = 0; k < rows.size(); ++k) {
        TeacherTrack tr{ids[k], nn::gather_rows(fresh, {static_cast<int>(k)}), {}};
        tr.state.last_pose = lf.dets[rows[k]].pose;
        tr.state.last_box = lf.dets[rows[k]].box;
        next.push_back(std::move(tr));
      }
    }
    tracks = std::move(next);
  }
  if (out.frames > 0) {
    const double inv = 1.0 / out.frames;
    out.total = nn::scale(out.total, inv);
    out.parts.match *= inv;
    for (double& v : out.parts.enc) v *= inv;
    for (double& v : out.parts.dec) v *= inv;
  }
  out.parts.total = out.total.scalar();
  return out;
}

inline std::vector<Window> make_windows(std::span<const io::SequenceFile> sequences, int length,
                                        int stride) {
  std::vector<Window> out;
  for (std::size_t s = 0; s < sequences.size(); ++s) {
    const std::size_t n = sequences[s].frames.size();
    const std::size_t len = static_cast<std::size_t>(length), step = static_cast<std::size_t>(stride);
    const std::size_t before = out.size();
    for (std::size_t f = 0; f + len <= n; f += step) out.push_back({s, f});
    if (out.size() == before && n > 0) out.push_back({s, 0});  // shorter than one window
  }
  return out;
}

}  // namespace detail

/// Mean window loss over a fixed, evenly spaced subset of windows; duplicate
/// injection uses a fixed seed so the measurement is repeatable.
inline double evaluation_loss(const Model& model, std::span<const io::SequenceFile> sequences,
                              const TrainOptions& opt) {
  const auto windows = detail::make_windows(sequences, opt.window, opt.window_stride);
  if (windows.empty()) return 0.0;
  const std::size_t n = std::min<std::size_t>(windows.size(), std::max(opt.eval_windows, 1));
  std::mt19937_64 rng(0x5eed);
  double total = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const auto& w = windows[k * windows.size() / n];
    Tape t;
    total += detail::window_loss(t, model, sequences[w.sequence], w.start, opt.window,
                                 opt.duplicate_prob, opt.eq11_literal, rng)
                 .parts.total;
  }
  return total / static_cast<double>(n);
}

/// Trains on sub-sequence windows, one window per iteration. Deterministic
/// under opt.seed; throws if a loss turns non-finite, naming the batch.
inline TrainResult train_toy(std::span<const io::SequenceFile> sequences, const EngineConfig& cfg,
                             const TrainOptions& opt) {
  TrainResult r{opt.init ? *opt.init : make_model(cfg, opt.seed), {}, 0.0, 0.0};
  validate_config(r.model.cfg);
  const auto windows = detail::make_windows(sequences, opt.window, opt.window_stride);
  if (windows.empty()) throw Error("train: no training windows (empty sequences?)");
  std::mt19937_64 rng(opt.seed);
  std::vector<std::size_t> order(windows.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;

  r.initial_eval_loss = evaluation_loss(r.model, sequences, opt);
  OptimState state;
  std::size_t cursor = order.size();
  for (int it = 0; it < opt.iterations; ++it) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto& w = windows[order[cursor++]];
    Tape t;
    auto wl = detail::window_loss(t, r.model, sequences[w.sequence], w.start, opt.window,
                                  opt.duplicate_prob, opt.eq11_literal, rng);
    if (!std::isfinite(wl.parts.total))
      throw Error("non-finite loss at batch " + std::to_string(it) + " (sequence " +
                  std::to_string(w.sequence) + ", frame " + std::to_string(w.start) + ")");
    wl.parts.iteration = it;
    r.curve.push_back(wl.parts);
    r.model.params.zero_grad();
    if (wl.frames > 0 && t.requires_grad(wl.total.id)) {
      t.backward(wl.total);
      r.model.params.accumulate_grads(t);
    }
    adamw_step(r.model.params, state, opt.optim);
  }
  r.final_eval_loss = evaluation_loss(r.model, sequences, opt);
  return r;
}

}  // namespace dsat
