#pragma once

// Dual-source attention transformer: detection encoder, edge embedding head,
// dual-source attention / decoder layers and the two track embedding heads.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dsat/core_types.hpp"
#include "dsat/nn/layers.hpp"
#include "dsat/spapde.hpp"

namespace dsat {

using nn::Tape;
using nn::Var;

struct Model {
  EngineConfig cfg;
  nn::ParamStore params;

  bool has_backbone() const { return params.contains(kBackbonePrefix + ".head.w"); }
};

namespace names {
inline std::string enc(int k) { return "enc." + std::to_string(k); }
inline std::string dec(int n) { return "dec." + std::to_string(n); }
inline const std::string edge_head = "edge_head";
inline const std::string track_head = "track_head";
inline const std::string new_track_head = "new_track_head";
inline const std::string confidence = "confidence";
inline const std::string match = "match";
}  // namespace names

inline void add_embedding_head(nn::ParamStore& p, const std::string& prefix, int d,
                               std::mt19937_64& rng) {
  nn::add_linear(p, prefix + ".l1", d, d, rng);
  nn::add_layer_norm(p, prefix + ".ln", d);
  nn::add_linear(p, prefix + ".l2", d, d, rng);
}

/// Registers every transformer parameter with uniform(+-1/sqrt(fan_in)) init.
/// Registration order is fixed, so a seed fully determines the weights.
inline Model make_model(const EngineConfig& config, std::uint64_t seed, bool with_backbone = false) {
  const EngineConfig cfg = validate_config(config);
  Model m{cfg, {}};
  auto& p = m.params;
  std::mt19937_64 rng(seed);
  const int d = cfg.d, de = cfg.edge_dim(), h = cfg.ffn_hidden;

  for (int k = 0; k < cfg.n_encoder_stages; ++k) {
    const auto pre = names::enc(k);
    nn::add_linear(p, pre + ".wq", d, d, rng, false);
    nn::add_linear(p, pre + ".wk", d, d, rng, false);
    nn::add_linear(p, pre + ".wv", d, d, rng, false);
    nn::add_layer_norm(p, pre + ".ln1", d);
    nn::add_ffn(p, pre + ".ffn", d, h, d, rng);
    nn::add_layer_norm(p, pre + ".ln2", d);
  }

  nn::add_linear(p, names::edge_head + ".l1", 4, de, rng);
  nn::add_layer_norm(p, names::edge_head + ".ln1", de);
  nn::add_linear(p, names::edge_head + ".l2", de, de, rng);
  nn::add_layer_norm(p, names::edge_head + ".ln2", de);
  nn::add_linear(p, names::edge_head + ".l3", de, de, rng);

  for (int n = 0; n < cfg.n_decoder_stages; ++n) {
    const auto pre = names::dec(n);
    nn::add_linear(p, pre + ".wq", d, d, rng, false);
    nn::add_linear(p, pre + ".wk", d, d, rng, false);
    nn::add_linear(p, pre + ".we", de, 1, rng, false);
    nn::add_linear(p, pre + ".wa", d, d, rng, false);
    nn::add_layer_norm(p, pre + ".ln1", d);
    nn::add_ffn(p, pre + ".ffn", d, h, d, rng);
    nn::add_layer_norm(p, pre + ".ln2", d);
    nn::add_ffn(p, pre + ".ffn_e", 1, h, de, rng);
  }

  add_embedding_head(p, names::track_head, d, rng);
  add_embedding_head(p, names::new_track_head, d, rng);
  nn::add_linear(p, names::confidence, cfg.n_decoder_stages, 1, rng);

  nn::add_linear(p, names::match + ".wq", d, d, rng, false);
  nn::add_linear(p, names::match + ".wk", d, d, rng, false);
  nn::add_linear(p, names::match + ".we", de, 1, rng, false);

  if (with_backbone) add_backbone(p, cfg, rng);
  return m;
}

// ---------------------------------------------------------------------------
// Encoder

struct EncoderOutput {
  Var embeddings;              // D x d
  std::vector<Var> attention;  // per stage, D x (D + 1)
};

/// Self-attention stages without positional encoding. Attention rows carry
/// the same no-match column as the decoder so both can be supervised alike.
inline EncoderOutput encoder_forward(Tape& t, const nn::ParamStore& p, const EngineConfig& cfg,
                                     Var x) {
  EncoderOutput out;
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(cfg.d));
  for (int k = 0; k < cfg.n_encoder_stages; ++k) {
    const auto pre = names::enc(k);
    Var q = nn::linear(t, p, pre + ".wq", x);
    Var key = nn::linear(t, p, pre + ".wk", x);
    Var s = nn::softmax_null(nn::scale(nn::matmul_nt(q, key), inv_sqrt_d));
    Var delta = nn::linear(t, p, pre + ".wv", nn::matmul(nn::slice_cols(s, 0, x.rows()), x));
    Var x1 = nn::layer_norm(t, p, pre + ".ln1", nn::add(x, delta));
    x = nn::layer_norm(t, p, pre + ".ln2", nn::add(x1, nn::ffn(t, p, pre + ".ffn", x1)));
    out.attention.push_back(s);
  }
  out.embeddings = x;
  return out;
}

// ---------------------------------------------------------------------------
// Edge embeddings and heads

/// Per-pair MLP on raw [IoU, OKS x3] rows: (linear -> LN -> GELU) x2 -> linear.
inline Var edge_embedding_head(Tape& t, const nn::ParamStore& p, Var raw) {
  const auto& pre = names::edge_head;
  Var h = nn::gelu(nn::layer_norm(t, p, pre + ".ln1", nn::linear(t, p, pre + ".l1", raw)));
  h = nn::gelu(nn::layer_norm(t, p, pre + ".ln2", nn::linear(t, p, pre + ".l2", h)));
  return nn::linear(t, p, pre + ".l3", h);
}

/// linear -> LN -> GELU -> linear
inline Var embedding_head(Tape& t, const nn::ParamStore& p, const std::string& prefix, Var x) {
  Var h = nn::gelu(nn::layer_norm(t, p, prefix + ".ln", nn::linear(t, p, prefix + ".l1", x)));
  return nn::linear(t, p, prefix + ".l2", h);
}

inline Var track_embedding_head(Tape& t, const nn::ParamStore& p, Var x) {
  return embedding_head(t, p, names::track_head, x);
}

inline Var new_track_embedding_head(Tape& t, const nn::ParamStore& p, Var x) {
  return embedding_head(t, p, names::new_track_head, x);
}

// ---------------------------------------------------------------------------
// Dual-source attention and decoder

struct AttentionBundle {
  Var o_a;  // T x D appearance logits
  Var o_e;  // T x D edge logits
  Var s_a;  // T x (D + 1)
  Var s_e;  // T x (D + 1)
  Var a;    // alpha * s_a + (1 - alpha) * s_e
};

/// alpha * x + (1 - alpha) * y
inline Var alpha_gate(Var x, Var y, double alpha) {
  return nn::add(nn::scale(x, alpha), nn::scale(y, 1.0 - alpha));
}

/// Cross-attention logits (E_q Wq^T)(E_k Wk^T)^T / sqrt(d).
inline Var appearance_logits(Tape& t, const nn::ParamStore& p, const std::string& prefix,
                             Var queries, Var keys, int d) {
  return nn::scale(nn::matmul_nt(nn::linear(t, p, prefix + ".wq", queries),
                                 nn::linear(t, p, prefix + ".wk", keys)),
                   1.0 / std::sqrt(static_cast<double>(d)));
}

/// Edge logits E_edge W_E^T reshaped to tracks x dets.
inline Var edge_logits(Tape& t, const nn::ParamStore& p, const std::string& prefix, Var e_edge,
                       Eigen::Index tracks, Eigen::Index dets) {
  return nn::reshape(nn::linear(t, p, prefix + ".we", e_edge), tracks, dets);
}

struct DualSourceOutput {
  Var delta;  // T x d proposed track update
  AttentionBundle bundle;
};

inline DualSourceOutput dual_source_attention(Tape& t, const nn::ParamStore& p,
                                              const std::string& prefix, const EngineConfig& cfg,
                                              Var e_t, Var e_d, Var e_edge, double alpha) {
  const Eigen::Index dets = e_d.rows();
  AttentionBundle b;
  b.o_a = appearance_logits(t, p, prefix, e_t, e_d, cfg.d);
  b.o_e = edge_logits(t, p, prefix, e_edge, e_t.rows(), dets);
  b.s_a = nn::softmax_null(b.o_a);
  b.s_e = nn::softmax_null(b.o_e);
  b.a = alpha_gate(b.s_a, b.s_e, alpha);
  Var delta = nn::linear(t, p, prefix + ".wa", nn::matmul(nn::slice_cols(b.a, 0, dets), e_d));
  return {delta, b};
}

struct DecoderState {
  Var e_t;     // T x d
  Var e_edge;  // (T * D) x d_e
  std::vector<AttentionBundle> bundles;
};

inline DecoderState decoder_layer_forward(Tape& t, const nn::ParamStore& p,
                                          const EngineConfig& cfg, int stage, DecoderState state,
                                          Var e_d, double alpha) {
  const auto pre = names::dec(stage);
  const Eigen::Index tracks = state.e_t.rows(), dets = e_d.rows();
  auto att = dual_source_attention(t, p, pre, cfg, state.e_t, e_d, state.e_edge, alpha);
  Var e1 = nn::layer_norm(t, p, pre + ".ln1", nn::add(state.e_t, att.delta));
  Var e2 = nn::layer_norm(t, p, pre + ".ln2", nn::add(e1, nn::ffn(t, p, pre + ".ffn", e1)));

  Var fused = cfg.edge_update == EdgeUpdate::gated_logits
                  ? alpha_gate(att.bundle.o_a, att.bundle.o_e, alpha)
                  : nn::slice_cols(att.bundle.a, 0, dets);
  state.e_edge = nn::ffn(t, p, pre + ".ffn_e", nn::reshape(fused, tracks * dets, 1));
  state.e_t = e2;
  state.bundles.push_back(att.bundle);
  return state;
}

// ---------------------------------------------------------------------------
// Hand-set reference weights

namespace reference {
inline constexpr double kShift = 20.0;          // GELU(x + shift) - shift ~ x
inline constexpr double kAppearanceLogit = 10.0;  // O_A for two identical unit-variance embeddings
inline constexpr double kEdgeFloor = -4.0;      // O_E with no spatial evidence
inline constexpr double kEdgeThreshold = 1.0;   // weighted evidence where O_E crosses 0
inline constexpr double kMatchEdgeGain = 2.0;
inline const std::array<double, 4> kEvidenceWeights = {1.0, 1.0, 0.5, 0.5};
}  // namespace reference

/// Deterministic weights that make the engine usable without training: the
/// encoder and heads pass normalized appearance through, appearance logits are
/// scaled inner products, the edge head maps weighted IoU/OKS evidence to a
/// monotone logit and FFN_E carries the gated logit to the next stage.
inline Model reference_model(const EngineConfig& config) {
  Model m = make_model(config, 0);
  const EngineConfig& cfg = m.cfg;
  if (cfg.edge_dim() < 4) throw ConfigError("reference weights need an edge dim of at least 4");
  auto& p = m.params;
  const int d = cfg.d;
  const double gain = std::sqrt(reference::kAppearanceLogit / std::sqrt(static_cast<double>(d)));
  auto eye = [](int n) { return Mat::Identity(n, n); };
  auto zero_all = [&](const std::string& prefix) {
    for (const auto& name : p.names())
      if (name.rfind(prefix, 0) == 0) p.value(name).setZero();
  };
  auto identity_ln = [&](const std::string& prefix) {
    p.value(prefix + ".g").setOnes();
    p.value(prefix + ".b").setZero();
  };

  for (int k = 0; k < cfg.n_encoder_stages; ++k) {
    const auto pre = names::enc(k);
    zero_all(pre + ".");
    identity_ln(pre + ".ln1");
    identity_ln(pre + ".ln2");
  }

  // Edge head: component 0 carries a monotone function of the weighted
  // evidence s; +-s and +-1 in four slots keep LayerNorm from erasing it.
  const auto& eh = names::edge_head;
  zero_all(eh + ".");
  identity_ln(eh + ".ln1");
  identity_ln(eh + ".ln2");
  for (int c = 0; c < 4; ++c) {
    p.value(eh + ".l1.w")(0, c) = reference::kEvidenceWeights[c];
    p.value(eh + ".l1.w")(1, c) = -reference::kEvidenceWeights[c];
  }
  p.value(eh + ".l1.b")(0, 2) = 1.0;
  p.value(eh + ".l1.b")(0, 3) = -1.0;
  p.value(eh + ".l2.w")(0, 0) = 1.0;
  p.value(eh + ".l2.w")(1, 0) = -1.0;
  p.value(eh + ".l2.b")(0, 2) = 1.0;
  p.value(eh + ".l2.b")(0, 3) = -1.0;
  p.value(eh + ".l3.w")(0, 0) = 1.0;
  auto head_at = [&](double s) {
    Tape t;
    Mat raw = Mat::Zero(1, 4);
    raw(0, 0) = s;  // evidence weight on IoU is 1
    return edge_embedding_head(t, p, t.constant(raw)).value()(0, 0);
  };
  const double h0 = head_at(0.0), h_thr = head_at(reference::kEdgeThreshold);
  const double slope = -reference::kEdgeFloor / (h_thr - h0);
  p.value(eh + ".l3.w")(0, 0) = slope;
  p.value(eh + ".l3.b")(0, 0) = -slope * h_thr;

  for (int n = 0; n < cfg.n_decoder_stages; ++n) {
    const auto pre = names::dec(n);
    zero_all(pre + ".");
    p.value(pre + ".wq.w") = gain * eye(d);
    p.value(pre + ".wk.w") = gain * eye(d);
    p.value(pre + ".wa.w") = eye(d);
    p.value(pre + ".we.w")(0, 0) = 1.0;
    identity_ln(pre + ".ln1");
    identity_ln(pre + ".ln2");
    p.value(pre + ".ffn_e.l1.w")(0, 0) = 1.0;
    p.value(pre + ".ffn_e.l1.b")(0, 0) = reference::kShift;
    p.value(pre + ".ffn_e.l2.w")(0, 0) = 1.0;
    p.value(pre + ".ffn_e.l2.b")(0, 0) = -reference::kShift;
  }

  for (const auto& head : {names::track_head, names::new_track_head}) {
    zero_all(head + ".");
    p.value(head + ".l1.w") = eye(d);
    p.value(head + ".ln.g").setOnes();
    p.value(head + ".ln.b").setConstant(reference::kShift);
    p.value(head + ".l2.w") = eye(d);
    p.value(head + ".l2.b").setConstant(-reference::kShift);
  }

  // Update weight ~0.95 when every stage attends confidently, ~0.05 when none does.
  p.value(names::confidence + ".w").setConstant(6.0 / cfg.n_decoder_stages);
  p.value(names::confidence + ".b").setConstant(-3.0);

  zero_all(names::match + ".");
  p.value(names::match + ".wq.w") = gain * eye(d);
  p.value(names::match + ".wk.w") = gain * eye(d);
  p.value(names::match + ".we.w")(0, 0) = reference::kMatchEdgeGain;
  return m;
}

}  // namespace dsat
