#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dsat/gradient_suite.hpp"
#include "dsat/transformer.hpp"
#include "helpers.hpp"

namespace dsat {
namespace {

using test::random_matrix;

EngineConfig small_config(int d = 4) {
  EngineConfig cfg = test_config();
  cfg.d = d;
  cfg.ffn_hidden = 6;
  return cfg;
}

void zero_prefix(nn::ParamStore& p, const std::string& prefix) {
  for (const auto& n : p.names())
    if (n.rfind(prefix, 0) == 0) p.value(n).setZero();
}

Mat permute_rows(const Mat& m, const std::vector<int>& perm) {
  Mat out(m.rows(), m.cols());
  for (std::size_t i = 0; i < perm.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(perm[i]);
  return out;
}

TEST(Model, SeedDeterminesWeights) {
  const auto cfg = small_config();
  EXPECT_EQ(make_model(cfg, 3).params, make_model(cfg, 3).params);
  EXPECT_FALSE(make_model(cfg, 3).params == make_model(cfg, 4).params);
  EXPECT_FALSE(make_model(cfg, 3).has_backbone());
  EXPECT_TRUE(make_model(cfg, 3, true).has_backbone());
}

TEST(Model, InvalidConfigRejected) {
  auto cfg = small_config();
  cfg.alpha = 2.0;
  EXPECT_THROW(make_model(cfg, 0), ConfigError);
}

// ---------------------------------------------------------------------------
// Edge embedding head

TEST(EdgeHead, ZeroWeightsZeroOutput) {
  Model m = make_model(small_config(), 1);
  zero_prefix(m.params, names::edge_head + ".");
  std::mt19937_64 rng(1);
  Tape t;
  const Mat e = edge_embedding_head(t, m.params, t.constant(random_matrix(6, 4, rng, 0, 1))).value();
  EXPECT_EQ(e, Mat::Zero(6, 4));
}

TEST(EdgeHead, IdenticalRowsIdenticalEmbeddings) {
  Model m = make_model(small_config(), 2);
  std::mt19937_64 rng(2);
  Mat raw = random_matrix(6, 4, rng, 0, 1);
  raw.row(4) = raw.row(1);
  Tape t;
  const Mat e = edge_embedding_head(t, m.params, t.constant(raw)).value();
  EXPECT_EQ(e.row(4), e.row(1));
  EXPECT_NE(e.row(0), e.row(1));
}

TEST(EdgeHead, ReferenceWeightsMonotoneInOks) {
  // With the hand-set weights every decoder stage's O_E grows with the
  // pair's OKS evidence.
  const Model m = reference_model(test_config());
  double prev = -1e9;
  for (double oks = 0.0; oks <= 1.0; oks += 0.05) {
    Mat raw(2, 4);
    raw << 0.2, oks, oks, oks, 0.9, 0.9, 0.9, 0.9;
    Tape t;
    Var e = edge_embedding_head(t, m.params, t.constant(raw));
    const double o_e = edge_logits(t, m.params, names::dec(0), e, 1, 2).value()(0, 0);
    EXPECT_GT(o_e, prev);
    prev = o_e;
  }
}

// ---------------------------------------------------------------------------
// Encoder

TEST(Encoder, NoDetections) {
  const Model m = make_model(small_config(), 3);
  Tape t;
  const auto out = encoder_forward(t, m.params, m.cfg, t.constant(Mat::Zero(0, 4)));
  EXPECT_EQ(out.embeddings.rows(), 0);
  ASSERT_EQ(out.attention.size(), 2u);
  EXPECT_EQ(out.attention[0].cols(), 1);
}

TEST(Encoder, PermutationEquivariant) {
  const Model m = make_model(small_config(), 4);
  std::mt19937_64 rng(4);
  const Mat x = random_matrix(5, 4, rng, -2, 2);
  const std::vector<int> perm = {3, 0, 4, 1, 2};
  Tape t;
  const Mat y = encoder_forward(t, m.params, m.cfg, t.constant(x)).embeddings.value();
  const Mat yp = encoder_forward(t, m.params, m.cfg, t.constant(permute_rows(x, perm))).embeddings.value();
  EXPECT_LT((yp - permute_rows(y, perm)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, SingleDetectionScalarRecomputation) {
  auto cfg = small_config();
  cfg.n_encoder_stages = 1;
  const Model m = make_model(cfg, 5);
  const auto& p = m.params;
  std::mt19937_64 rng(5);
  const Mat x = random_matrix(1, 4, rng, -2, 2);
  Tape t;
  const auto out = encoder_forward(t, p, cfg, t.constant(x));

  // self logit q.k / sqrt(d) against the zero null logit
  const Vec xv = x.row(0).transpose();
  const Vec q = p.value("enc.0.wq.w") * xv, k = p.value("enc.0.wk.w") * xv;
  const double logit = q.dot(k) / 2.0;
  const double w_self = std::exp(logit) / (std::exp(logit) + 1.0);
  EXPECT_NEAR(out.attention[0].value()(0, 0), w_self, 1e-14);
  EXPECT_NEAR(out.attention[0].value()(0, 1), 1.0 - w_self, 1e-14);

  auto ln = [](const Vec& v, const Mat& g, const Mat& b) {
    const double mu = v.mean();
    const double var = (v.array() - mu).square().mean();
    return Vec(((v.array() - mu) / std::sqrt(var + 1e-5)) * g.row(0).transpose().array() +
               b.row(0).transpose().array());
  };
  auto gelu = [](const Vec& v) {
    return Vec(v.unaryExpr([](double z) { return 0.5 * z * (1.0 + std::erf(z / std::sqrt(2.0))); }));
  };
  const Vec delta = p.value("enc.0.wv.w") * (w_self * xv);
  const Vec x1 = ln(xv + delta, p.value("enc.0.ln1.g"), p.value("enc.0.ln1.b"));
  const Vec h = gelu(p.value("enc.0.ffn.l1.w") * x1 + p.value("enc.0.ffn.l1.b").row(0).transpose());
  const Vec f = p.value("enc.0.ffn.l2.w") * h + p.value("enc.0.ffn.l2.b").row(0).transpose();
  const Vec y = ln(x1 + f, p.value("enc.0.ln2.g"), p.value("enc.0.ln2.b"));
  EXPECT_LT((out.embeddings.value().row(0).transpose() - y).cwiseAbs().maxCoeff(), 1e-12);
}

// ---------------------------------------------------------------------------
// Dual-source attention

struct AttentionInputs {
  Mat e_t, e_d, e_edge;
};

AttentionInputs random_inputs(int tracks, int dets, int d, std::mt19937_64& rng) {
  return {random_matrix(tracks, d, rng, -2, 2), random_matrix(dets, d, rng, -2, 2),
          random_matrix(tracks * dets, d, rng, -2, 2)};
}

TEST(DualSource, AlphaEndpointsExact) {
  const Model m = make_model(small_config(), 6);
  std::mt19937_64 rng(6);
  const auto in = random_inputs(3, 4, 4, rng);
  for (double alpha : {0.0, 1.0}) {
    Tape t;
    auto out = dual_source_attention(t, m.params, "dec.0", m.cfg, t.constant(in.e_t), t.constant(in.e_d),
                                     t.constant(in.e_edge), alpha);
    const Mat& expected = alpha == 1.0 ? out.bundle.s_a.value() : out.bundle.s_e.value();
    EXPECT_EQ(out.bundle.a.value(), expected);
  }
}

TEST(DualSource, GateIsConvexCombinationAndRowsSumToOne) {
  const Model m = make_model(small_config(), 7);
  std::mt19937_64 rng(7);
  const auto in = random_inputs(3, 4, 4, rng);
  Tape t;
  auto out = dual_source_attention(t, m.params, "dec.0", m.cfg, t.constant(in.e_t), t.constant(in.e_d),
                                   t.constant(in.e_edge), 0.3);
  const auto& b = out.bundle;
  const Mat gate = 0.3 * b.s_a.value() + (1.0 - 0.3) * b.s_e.value();
  EXPECT_EQ(b.a.value(), gate);
  for (const Mat* m2 : {&b.a.value(), &b.s_a.value(), &b.s_e.value()})
    for (Eigen::Index r = 0; r < m2->rows(); ++r) EXPECT_NEAR(m2->row(r).sum(), 1.0, 1e-6);
}

TEST(DualSource, NoDetections) {
  const Model m = make_model(small_config(), 8);
  std::mt19937_64 rng(8);
  Tape t;
  auto out = dual_source_attention(t, m.params, "dec.0", m.cfg, t.constant(random_matrix(2, 4, rng)),
                                   t.constant(Mat::Zero(0, 4)), t.constant(Mat::Zero(0, 4)), 0.3);
  EXPECT_EQ(out.bundle.a.value(), Mat::Ones(2, 1));
  EXPECT_EQ(out.delta.value(), Mat::Zero(2, 4));
}

TEST(DualSource, HandChainOneTrackTwoDetections) {
  auto cfg = small_config(2);
  Model m = make_model(cfg, 9);
  auto& p = m.params;
  p.value("dec.0.wq.w") << 1.0, 0.5, 0.0, 1.0;
  p.value("dec.0.wk.w") << 2.0, 0.0, -1.0, 1.0;
  p.value("dec.0.we.w") << 1.0, -1.0;
  p.value("dec.0.wa.w") << 0.0, 1.0, 1.0, 0.0;
  Mat e_t(1, 2), e_d(2, 2), e_edge(2, 2);
  e_t << 1.0, 2.0;
  e_d << 0.5, -1.0, 1.5, 0.25;
  e_edge << 0.3, 0.1, -0.2, 0.6;
  const double alpha = 0.4;
  Tape t;
  auto out = dual_source_attention(t, p, "dec.0", cfg, t.constant(e_t), t.constant(e_d), t.constant(e_edge), alpha);

  // q = Wq e_t = [1*1 + .5*2, 2] = [2, 2]
  // k_0 = Wk d_0 = [1, -1.5], k_1 = [3, -1.25]
  // O_A = [2*1 + 2*-1.5, 2*3 + 2*-1.25] / sqrt(2) = [-1, 3.5] / sqrt(2)
  // O_E = [0.3 - 0.1, -0.2 - 0.6] = [0.2, -0.8]
  const double r2 = std::sqrt(2.0);
  const double oa0 = -1.0 / r2, oa1 = 3.5 / r2, oe0 = 0.2, oe1 = -0.8;
  const double za = std::exp(oa0) + std::exp(oa1) + 1.0, ze = std::exp(oe0) + std::exp(oe1) + 1.0;
  const double a0 = alpha * std::exp(oa0) / za + (1 - alpha) * std::exp(oe0) / ze;
  const double a1 = alpha * std::exp(oa1) / za + (1 - alpha) * std::exp(oe1) / ze;
  // aggregate = a0 * d_0 + a1 * d_1, then W_A swaps the components
  const double g0 = a0 * 0.5 + a1 * 1.5, g1 = a0 * -1.0 + a1 * 0.25;
  EXPECT_NEAR(out.bundle.o_a.value()(0, 0), oa0, 1e-14);
  EXPECT_NEAR(out.bundle.o_a.value()(0, 1), oa1, 1e-14);
  EXPECT_NEAR(out.bundle.o_e.value()(0, 0), oe0, 1e-14);
  EXPECT_NEAR(out.bundle.o_e.value()(0, 1), oe1, 1e-14);
  EXPECT_NEAR(out.delta.value()(0, 0), g1, 1e-14);
  EXPECT_NEAR(out.delta.value()(0, 1), g0, 1e-14);
}

TEST(DualSource, OneHotAttentionCopiesDetection) {
  auto cfg = small_config();
  Model m = make_model(cfg, 10);
  auto& p = m.params;
  p.value("dec.0.wa.w") = Mat::Identity(4, 4);
  p.value("dec.0.we.w") << 1.0, 0.0, 0.0, 0.0;
  std::mt19937_64 rng(10);
  const Mat e_t = random_matrix(2, 4, rng), e_d = random_matrix(3, 4, rng);
  // track 0 -> detection 2, track 1 -> detection 0; everything else far below
  Mat e_edge = Mat::Constant(6, 4, -1000.0);
  e_edge(0 * 3 + 2, 0) = 1000.0;
  e_edge(1 * 3 + 0, 0) = 1000.0;
  Tape t;
  auto out = dual_source_attention(t, p, "dec.0", cfg, t.constant(e_t), t.constant(e_d), t.constant(e_edge), 0.0);
  EXPECT_EQ(out.delta.value().row(0), e_d.row(2));
  EXPECT_EQ(out.delta.value().row(1), e_d.row(0));
}

// ---------------------------------------------------------------------------
// Decoder layer

TEST(Decoder, DegenerateResidualIsDoubleLayerNorm) {
  auto cfg = small_config();
  Model m = make_model(cfg, 11);
  zero_prefix(m.params, "dec.0.wa.");
  zero_prefix(m.params, "dec.0.ffn.");
  std::mt19937_64 rng(11);
  const auto in = random_inputs(3, 2, 4, rng);
  Tape t;
  DecoderState s{t.constant(in.e_t), t.constant(in.e_edge), {}};
  s = decoder_layer_forward(t, m.params, cfg, 0, s, t.constant(in.e_d), 0.3);
  const Mat expected = nn::layer_norm(nn::layer_norm(t.constant(in.e_t))).value();
  EXPECT_LT((s.e_t.value() - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Decoder, EqualFusedLogitsEqualEdgeEmbeddings) {
  for (auto variant : {EdgeUpdate::gated_logits, EdgeUpdate::gated_weights}) {
    auto cfg = small_config();
    cfg.edge_update = variant;
    Model m = make_model(cfg, 12);
    std::mt19937_64 rng(12);
    auto in = random_inputs(2, 2, 4, rng);
    // Two tracks identical in every input see identical logits row by row.
    in.e_t.row(1) = in.e_t.row(0);
    in.e_edge.row(2) = in.e_edge.row(0);
    in.e_edge.row(3) = in.e_edge.row(1);
    Tape t;
    DecoderState s{t.constant(in.e_t), t.constant(in.e_edge), {}};
    s = decoder_layer_forward(t, m.params, cfg, 0, s, t.constant(in.e_d), 0.3);
    const Mat& e = s.e_edge.value();
    EXPECT_EQ(e.row(2), e.row(0));
    EXPECT_EQ(e.row(3), e.row(1));
    EXPECT_NE(e.row(0), e.row(1));
  }
}

TEST(Decoder, GatedWeightsVariantUsesAttentionProbabilities) {
  auto cfg = small_config();
  cfg.edge_update = EdgeUpdate::gated_weights;
  Model m = make_model(cfg, 13);
  std::mt19937_64 rng(13);
  const auto in = random_inputs(2, 3, 4, rng);
  Tape t;
  DecoderState s{t.constant(in.e_t), t.constant(in.e_edge), {}};
  s = decoder_layer_forward(t, m.params, cfg, 0, s, t.constant(in.e_d), 0.3);
  const Mat a = s.bundles[0].a.value().leftCols(3);
  const Mat expected = nn::ffn(t, m.params, "dec.0.ffn_e", t.constant(Eigen::Map<const Mat>(a.data(), 6, 1))).value();
  EXPECT_LT((s.e_edge.value() - expected).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Decoder, DetectionPermutationEquivariant) {
  auto cfg = small_config();
  Model m = make_model(cfg, 14);
  std::mt19937_64 rng(14);
  const auto in = random_inputs(2, 3, 4, rng);
  const std::vector<int> perm = {2, 0, 1};
  Mat e_edge_p(6, 4);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) e_edge_p.row(j * 3 + i) = in.e_edge.row(j * 3 + perm[i]);
  Tape t;
  DecoderState s{t.constant(in.e_t), t.constant(in.e_edge), {}}, sp{t.constant(in.e_t), t.constant(e_edge_p), {}};
  for (int n = 0; n < 2; ++n) {
    s = decoder_layer_forward(t, m.params, cfg, n, s, t.constant(in.e_d), 0.3);
    sp = decoder_layer_forward(t, m.params, cfg, n, sp, t.constant(permute_rows(in.e_d, perm)), 0.3);
  }
  EXPECT_LT((s.e_t.value() - sp.e_t.value()).cwiseAbs().maxCoeff(), 1e-12);
  for (int j = 0; j < 2; ++j)
    for (int i = 0; i < 3; ++i) {
      EXPECT_NEAR(sp.bundles[1].a.value()(j, i), s.bundles[1].a.value()(j, perm[i]), 1e-12);
      EXPECT_LT((sp.e_edge.value().row(j * 3 + i) - s.e_edge.value().row(j * 3 + perm[i])).cwiseAbs().maxCoeff(), 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Heads

TEST(Heads, ZeroWeightsZeroOutput) {
  Model m = make_model(small_config(), 15);
  zero_prefix(m.params, names::track_head + ".");
  zero_prefix(m.params, names::new_track_head + ".");
  std::mt19937_64 rng(15);
  const Mat x = random_matrix(3, 4, rng);
  Tape t;
  EXPECT_EQ(track_embedding_head(t, m.params, t.constant(x)).value(), Mat::Zero(3, 4));
  EXPECT_EQ(new_track_embedding_head(t, m.params, t.constant(x)).value(), Mat::Zero(3, 4));
}

TEST(Heads, IndependentParameters) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const Model m = make_model(small_config(), seed);
    std::mt19937_64 rng(seed);
    const Mat x = random_matrix(2, 4, rng);
    Tape t;
    const Mat a = track_embedding_head(t, m.params, t.constant(x)).value();
    const Mat b = new_track_embedding_head(t, m.params, t.constant(x)).value();
    EXPECT_GT((a - b).cwiseAbs().maxCoeff(), 1e-6) << "seed " << seed;
  }
}

TEST(Heads, ReferenceHeadsPassThrough) {
  // Hand-set heads reproduce a layer-normalized input.
  const Model m = reference_model(test_config());
  std::mt19937_64 rng(16);
  const Mat x = random_matrix(2, 16, rng, -2, 2);
  Tape t;
  const Mat y = track_embedding_head(t, m.params, t.constant(x)).value();
  const Mat expected = nn::layer_norm(t.constant(x)).value();
  EXPECT_LT((y - expected).cwiseAbs().maxCoeff(), 1e-3);
}

// ---------------------------------------------------------------------------
// Gradients for the composite layers

TEST(Gradients, CompositeLayersFiveSeeds) {
  for (const auto& c : gradcheck::detail::layer_cases()) {
    if (c.name == "appearance_backbone" || c.name == "frame_forward") continue;  // covered by acceptance
    for (std::uint64_t seed = 1; seed <= 5; ++seed)
      EXPECT_LE(c.run(seed).max_rel_error, 1e-4) << c.name << " seed " << seed;
  }
}

}  // namespace
}  // namespace dsat
