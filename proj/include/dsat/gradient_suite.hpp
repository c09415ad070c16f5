#pragma once

// Finite-difference checks over every differentiable op, composite layer and
// loss, each on several seeded random instances.

#include <chrono>
#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "dsat/nn/conv.hpp"
#include "dsat/nn/grad_check.hpp"
#include "dsat/training.hpp"

namespace dsat::gradcheck {

using nn::GradCheckOptions;
using nn::GradCheckResult;

struct Case {
  std::string group;  // op, layer or loss
  std::string name;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo = -1.0,
                      double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

/// Random values with |x| in [0.1, 1]: keeps kinked ops (ReLU, max) away
/// from their kinks at the probe step.
inline Mat away_from_zero(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng) {
  Mat m = random_mat(rows, cols, rng, 0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (sign(rng)) m.data()[i] = -m.data()[i];
  return m;
}

/// Checks d/d(inputs) of sum(op(inputs) .* W) for a random weight W.
inline GradCheckResult check_op(std::vector<Mat> inputs,
                                const std::function<Var(Tape&, const std::vector<Var>&)>& op,
                                std::mt19937_64& rng, GradCheckOptions opt = {}) {
  std::vector<Mat*> wrt;
  for (auto& m : inputs) wrt.push_back(&m);
  Mat weights;
  {
    Tape t;
    std::vector<Var> vs;
    for (auto* m : wrt) vs.push_back(t.leaf(m));
    const Mat& y = op(t, vs).value();
    weights = random_mat(y.rows(), y.cols(), rng);
  }
  return nn::grad_check(
      wrt,
      [&](Tape& t) {
        std::vector<Var> vs;
        for (auto* m : wrt) vs.push_back(t.leaf(m));
        return nn::dot_const(op(t, vs), weights);
      },
      opt);
}

/// A tiny configuration for layer checks.
inline EngineConfig tiny_config() {
  EngineConfig cfg;
  cfg.d = 4;
  cfg.ffn_hidden = 6;
  cfg.num_keypoints = 3;
  cfg.crop_height = 8;
  cfg.crop_width = 8;
  return cfg;
}

/// Model with random weights, including LayerNorm affine terms so their
/// gradients are exercised away from identity.
inline Model random_model(const EngineConfig& cfg, std::uint64_t seed, bool backbone = false) {
  Model m = make_model(cfg, seed, backbone);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (const auto& name : m.params.names())
    if (name.ends_with(".g")) m.params.value(name) = random_mat(1, m.params.value(name).cols(), rng, 0.5, 1.5);
    else if (name.ends_with(".ln.b") || name.ends_with("ln1.b") || name.ends_with("ln2.b"))
      m.params.value(name) = random_mat(1, m.params.value(name).cols(), rng, -0.3, 0.3);
  return m;
}

/// Pointers to every parameter whose name starts with one of `prefixes`.
inline std::vector<Mat*> params_of(Model& m, std::initializer_list<std::string> prefixes) {
  std::vector<Mat*> out;
  for (const auto& name : m.params.names())
    for (const auto& p : prefixes)
      if (name.rfind(p, 0) == 0) {
        out.push_back(&m.params.value(name));
        break;
      }
  return out;
}

/// Checks sum(layer(...) .* W) against the given parameters and inputs.
inline GradCheckResult check_layer(std::vector<Mat*> wrt, const std::function<Var(Tape&)>& layer,
                                   std::mt19937_64& rng, GradCheckOptions opt = {}) {
  Mat weights;
  {
    Tape t;
    const Mat& y = layer(t).value();
    weights = random_mat(y.rows(), y.cols(), rng);
  }
  return nn::grad_check(wrt, [&](Tape& t) { return nn::dot_const(layer(t), weights); }, opt);
}

namespace detail {

using Vars = std::vector<Var>;

inline Case op_case(std::string name, std::function<std::vector<Mat>(std::mt19937_64&)> make,
                    std::function<Var(Tape&, const Vars&)> op) {
  return {"op", std::move(name), [make, op](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            return check_op(make(rng), op, rng);
          }};
}

inline std::vector<Case> op_cases() {
  using M = std::vector<Mat>;
  std::vector<Case> c;
  auto r = [](Eigen::Index a, Eigen::Index b) {
    return [a, b](std::mt19937_64& g) { return random_mat(a, b, g); };
  };
  c.push_back(op_case("matmul", [r](auto& g) { return M{r(3, 4)(g), r(4, 2)(g)}; },
                      [](Tape&, const Vars& v) { return nn::matmul(v[0], v[1]); }));
  c.push_back(op_case("matmul_nt", [r](auto& g) { return M{r(3, 4)(g), r(2, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::matmul_nt(v[0], v[1]); }));
  c.push_back(op_case("transpose", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::transpose(v[0]); }));
  c.push_back(op_case("add", [r](auto& g) { return M{r(3, 4)(g), r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::add(v[0], v[1]); }));
  c.push_back(op_case("sub", [r](auto& g) { return M{r(3, 4)(g), r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::sub(v[0], v[1]); }));
  c.push_back(op_case("scale", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::scale(v[0], -1.7); }));
  c.push_back(op_case("add_scalar", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::add_scalar(v[0], 0.3); }));
  c.push_back(op_case("hadamard", [r](auto& g) { return M{r(3, 4)(g), r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::hadamard(v[0], v[1]); }));
  c.push_back(op_case("add_row", [r](auto& g) { return M{r(3, 4)(g), r(1, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::add_row(v[0], v[1]); }));
  c.push_back(op_case("mul_row", [r](auto& g) { return M{r(3, 4)(g), r(1, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::mul_row(v[0], v[1]); }));
  c.push_back(op_case("mul_col", [r](auto& g) { return M{r(3, 4)(g), r(3, 1)(g)}; },
                      [](Tape&, const Vars& v) { return nn::mul_col(v[0], v[1]); }));
  c.push_back(op_case("add_col", [r](auto& g) { return M{r(3, 4)(g), r(3, 1)(g)}; },
                      [](Tape&, const Vars& v) { return nn::add_col(v[0], v[1]); }));
  c.push_back(op_case("linear", [r](auto& g) { return M{r(3, 4)(g), r(5, 4)(g), r(1, 5)(g)}; },
                      [](Tape&, const Vars& v) { return nn::linear(v[0], v[1], &v[2]); }));
  c.push_back(op_case("relu", [](auto& g) { return M{away_from_zero(3, 4, g)}; },
                      [](Tape&, const Vars& v) { return nn::relu(v[0]); }));
  c.push_back(op_case("gelu", [](auto& g) { return M{random_mat(3, 4, g, -3, 3)}; },
                      [](Tape&, const Vars& v) { return nn::gelu(v[0]); }));
  c.push_back(op_case("sigmoid", [](auto& g) { return M{random_mat(3, 4, g, -4, 4)}; },
                      [](Tape&, const Vars& v) { return nn::sigmoid(v[0]); }));
  c.push_back(op_case("log_clamped", [](auto& g) { return M{random_mat(3, 4, g, 0.1, 2.0)}; },
                      [](Tape&, const Vars& v) { return nn::log_clamped(v[0], 1e-12); }));
  c.push_back(op_case("sqrt_eps", [](auto& g) { return M{random_mat(3, 4, g, 0.1, 2.0)}; },
                      [](Tape&, const Vars& v) { return nn::sqrt_eps(v[0], 1e-12); }));
  c.push_back(op_case("log_softmax", [](auto& g) { return M{random_mat(3, 5, g, -2, 2)}; },
                      [](Tape&, const Vars& v) { return nn::log_softmax(v[0]); }));
  c.push_back(op_case("layer_norm", [](auto& g) { return M{random_mat(3, 6, g, -2, 2)}; },
                      [](Tape&, const Vars& v) { return nn::layer_norm(v[0]); }));
  c.push_back(op_case("softmax_null", [](auto& g) { return M{random_mat(3, 4, g, -2, 2)}; },
                      [](Tape&, const Vars& v) { return nn::softmax_null(v[0]); }));
  c.push_back(op_case("slice_cols", [r](auto& g) { return M{r(3, 5)(g)}; },
                      [](Tape&, const Vars& v) { return nn::slice_cols(v[0], 1, 3); }));
  c.push_back(op_case("gather_rows", [r](auto& g) { return M{r(4, 3)(g)}; },
                      [](Tape&, const Vars& v) { return nn::gather_rows(v[0], {2, 0, 2}); }));
  c.push_back(op_case("concat_rows", [r](auto& g) { return M{r(2, 3)(g), r(1, 3)(g)}; },
                      [](Tape&, const Vars& v) { return nn::concat_rows({v[0], v[1]}, 3); }));
  c.push_back(op_case("concat_cols", [r](auto& g) { return M{r(3, 2)(g), r(3, 1)(g)}; },
                      [](Tape&, const Vars& v) { return nn::concat_cols({v[0], v[1]}, 3); }));
  c.push_back(op_case("reshape", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::reshape(v[0], 2, 6); }));
  c.push_back(op_case("sum", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::sum(v[0]); }));
  c.push_back(op_case("mean", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::mean(v[0]); }));
  c.push_back(op_case("row_sum", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) { return nn::row_sum(v[0]); }));
  c.push_back(op_case("row_max", [](auto& g) {
                        // distinct entries spaced well beyond the probe step
                        Mat m(3, 4);
                        std::vector<double> vals(12);
                        for (int i = 0; i < 12; ++i) vals[i] = -1.0 + 0.17 * i;
                        std::shuffle(vals.begin(), vals.end(), g);
                        for (int i = 0; i < 12; ++i) m.data()[i] = vals[i];
                        return M{m};
                      },
                      [](Tape&, const Vars& v) { return nn::row_max(v[0]); }));
  c.push_back(op_case("mask", [r](auto& g) { return M{r(3, 4)(g)}; },
                      [](Tape&, const Vars& v) {
                        Mat m = Mat::Zero(3, 4);
                        m(0, 1) = m(2, 3) = 1.0;
                        m(1, 0) = 0.5;
                        return nn::mask(v[0], m);
                      }));
  const nn::MapShape shape{2, 4, 5};
  c.push_back(op_case("conv3x3",
                      [r, shape](auto& g) { return M{r(2, shape.columns())(g), r(3, 18)(g), r(1, 3)(g)}; },
                      [shape](Tape&, const Vars& v) { return nn::conv3x3(v[0], v[1], v[2], shape); }));
  c.push_back(op_case("avg_pool2", [r, shape](auto& g) { return M{r(2, shape.columns())(g)}; },
                      [shape](Tape&, const Vars& v) { return nn::avg_pool2(v[0], shape); }));
  c.push_back(op_case("global_avg_pool", [r, shape](auto& g) { return M{r(2, shape.columns())(g)}; },
                      [shape](Tape&, const Vars& v) { return nn::global_avg_pool(v[0], shape); }));
  return c;
}

inline Case layer_case(std::string name, std::function<GradCheckResult(std::mt19937_64&, std::uint64_t)> f) {
  return {"layer", std::move(name), [f](std::uint64_t seed) {
            std::mt19937_64 rng(seed);
            return f(rng, seed);
          }};
}

inline std::vector<Case> layer_cases() {
  std::vector<Case> c;
  const EngineConfig cfg = tiny_config();
  const int d = cfg.d, de = cfg.edge_dim();

  c.push_back(layer_case("ffn", [](auto& rng, std::uint64_t seed) {
    nn::ParamStore p;
    nn::add_ffn(p, "f", 8, 6, 8, rng);
    Mat x = random_mat(4, 8, rng);
    std::vector<Mat*> wrt{&x};
    for (const auto& n : p.names()) wrt.push_back(&p.value(n));
    (void)seed;
    return check_layer(wrt, [&](Tape& t) { return nn::ffn(t, p, "f", t.leaf(&x)); }, rng);
  }));
  c.push_back(layer_case("layer_norm_affine", [](auto& rng, std::uint64_t) {
    nn::ParamStore p;
    nn::add_layer_norm(p, "ln", 5);
    p.value("ln.g") = random_mat(1, 5, rng, 0.5, 1.5);
    p.value("ln.b") = random_mat(1, 5, rng);
    Mat x = random_mat(3, 5, rng, -2, 2);
    return check_layer({&x, &p.value("ln.g"), &p.value("ln.b")},
                       [&](Tape& t) { return nn::layer_norm(t, p, "ln", t.leaf(&x)); }, rng);
  }));
  c.push_back(layer_case("edge_embedding_head", [cfg](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat raw = random_mat(6, 4, rng, 0.0, 1.0);
    auto wrt = params_of(m, {names::edge_head + "."});
    wrt.push_back(&raw);
    return check_layer(wrt, [&](Tape& t) { return edge_embedding_head(t, m.params, t.leaf(&raw)); }, rng);
  }));
  c.push_back(layer_case("encoder", [cfg, d](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat x = random_mat(3, d, rng, -2, 2);
    auto wrt = params_of(m, {"enc."});
    wrt.push_back(&x);
    return check_layer(wrt, [&](Tape& t) { return encoder_forward(t, m.params, m.cfg, t.leaf(&x)).embeddings; }, rng);
  }));
  c.push_back(layer_case("dual_source_attention", [cfg, d, de](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat et = random_mat(2, d, rng, -2, 2), ed = random_mat(3, d, rng, -2, 2), ee = random_mat(6, de, rng);
    auto wrt = params_of(m, {"dec.0.wq", "dec.0.wk", "dec.0.we", "dec.0.wa"});
    for (Mat* x : {&et, &ed, &ee}) wrt.push_back(x);
    return check_layer(wrt, [&](Tape& t) {
      auto out = dual_source_attention(t, m.params, names::dec(0), m.cfg, t.leaf(&et), t.leaf(&ed),
                                       t.leaf(&ee), 0.3);
      return nn::concat_cols({out.delta, out.bundle.a}, 2);
    }, rng);
  }));
  for (auto variant : {EdgeUpdate::gated_logits, EdgeUpdate::gated_weights}) {
    const std::string suffix = variant == EdgeUpdate::gated_logits ? "" : "_gated_weights";
    c.push_back(layer_case("decoder_layer" + suffix, [cfg, d, de, variant](auto& rng, std::uint64_t seed) {
      EngineConfig c2 = cfg;
      c2.edge_update = variant;
      Model m = random_model(c2, seed);
      Mat et = random_mat(2, d, rng, -2, 2), ed = random_mat(2, d, rng, -2, 2), ee = random_mat(4, de, rng);
      auto wrt = params_of(m, {"dec.0."});
      for (Mat* x : {&et, &ed, &ee}) wrt.push_back(x);
      return check_layer(wrt, [&](Tape& t) {
        DecoderState s{t.leaf(&et), t.leaf(&ee), {}};
        s = decoder_layer_forward(t, m.params, m.cfg, 0, s, t.leaf(&ed), 0.3);
        return nn::concat_rows({s.e_t, s.e_edge}, d);
      }, rng);
    }));
  }
  c.push_back(layer_case("track_embedding_head", [cfg, d](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat x = random_mat(3, d, rng, -2, 2);
    auto wrt = params_of(m, {names::track_head + "."});
    wrt.push_back(&x);
    return check_layer(wrt, [&](Tape& t) { return track_embedding_head(t, m.params, t.leaf(&x)); }, rng);
  }));
  c.push_back(layer_case("new_track_embedding_head", [cfg, d](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat x = random_mat(3, d, rng, -2, 2);
    auto wrt = params_of(m, {names::new_track_head + "."});
    wrt.push_back(&x);
    return check_layer(wrt, [&](Tape& t) { return new_track_embedding_head(t, m.params, t.leaf(&x)); }, rng);
  }));
  c.push_back(layer_case("matching_layer", [cfg, d, de](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat et = random_mat(2, d, rng, -2, 2), ed = random_mat(3, d, rng, -2, 2), ee = random_mat(6, de, rng);
    auto wrt = params_of(m, {names::match + "."});
    for (Mat* x : {&et, &ed, &ee}) wrt.push_back(x);
    return check_layer(wrt, [&](Tape& t) {
      return matching_layer(t, m.params, m.cfg, t.leaf(&et), t.leaf(&ed), t.leaf(&ee), 0.3).m;
    }, rng);
  }));
  c.push_back(layer_case("confidence_update", [cfg, d](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat old = random_mat(2, d, rng), head = random_mat(2, d, rng);
    std::vector<Mat> logits;
    for (int n = 0; n < cfg.n_decoder_stages; ++n) logits.push_back(random_mat(2, 3, rng, -2, 2));
    auto wrt = params_of(m, {names::confidence + "."});
    for (Mat* x : {&old, &head}) wrt.push_back(x);
    for (auto& l : logits) wrt.push_back(&l);
    return check_layer(wrt, [&](Tape& t) {
      std::vector<AttentionBundle> bundles;
      for (auto& l : logits) {
        AttentionBundle b;
        b.a = nn::softmax_null(t.leaf(&l));
        bundles.push_back(b);
      }
      return confidence_update(t, m.params, bundles, t.leaf(&old), t.leaf(&head)).embeddings;
    }, rng);
  }));
  c.push_back(layer_case("frame_forward", [cfg, d](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed);
    Mat et = random_mat(2, d, rng, -2, 2), ed = random_mat(3, d, rng, -2, 2);
    const Mat raw = random_mat(6, 4, rng, 0.0, 1.0);
    std::vector<Mat*> wrt{&et, &ed};
    for (const auto& n : m.params.names()) wrt.push_back(&m.params.value(n));
    return check_layer(wrt, [&](Tape& t) {
      return frame_forward(t, m, t.leaf(&et), t.leaf(&ed), raw, 0.3).match.m;
    }, rng, GradCheckOptions{1e-5, 1e-6, 8, seed});
  }));
  c.push_back(layer_case("spapde_stack", [](auto& rng, std::uint64_t) {
    // N = 2 persons, C = 2 channels, 4 x 4 maps, K = 2 heatmaps
    const nn::MapShape s{2, 4, 4};
    nn::ParamStore p;
    add_spapde(p, "sp", 2, 2, rng, 4);
    Mat f = random_mat(2, s.columns(), rng, -2, 2), h = random_mat(2, s.columns(), rng, 0, 1);
    std::vector<Mat*> wrt{&f, &h};
    for (const auto& n : p.names()) wrt.push_back(&p.value(n));
    return check_layer(wrt, [&](Tape& t) {
      auto mod = spapde_modulation(t, p, "sp", t.leaf(&h), s);
      return spapde_forward(t.leaf(&f), mod.gamma, mod.beta);
    }, rng, GradCheckOptions{.kink_aware = true});
  }));
  c.push_back(layer_case("appearance_backbone", [cfg](auto& rng, std::uint64_t seed) {
    Model m = random_model(cfg, seed, true);
    const nn::MapShape s{2, cfg.crop_height, cfg.crop_width};
    Mat crops = random_mat(3, s.columns(), rng, 0, 1), heat = random_mat(cfg.num_keypoints, s.columns(), rng, 0, 1);
    auto wrt = params_of(m, {kBackbonePrefix + "."});
    wrt.push_back(&crops);
    wrt.push_back(&heat);
    return check_layer(wrt, [&](Tape& t) {
      return appearance_embed(t, m.params, t.leaf(&crops), t.leaf(&heat), s).embeddings;
    }, rng, GradCheckOptions{.max_entries = 6, .seed = seed, .kink_aware = true});
  }));
  return c;
}

inline std::vector<Case> loss_cases() {
  std::vector<Case> c;
  auto loss_case = [](std::string name, std::function<GradCheckResult(std::mt19937_64&)> f) {
    return Case{"loss", std::move(name), [f](std::uint64_t seed) {
                  std::mt19937_64 rng(seed);
                  return f(rng);
                }};
  };
  for (bool literal : {false, true})
    c.push_back(loss_case(literal ? "loss_match_literal" : "loss_match", [literal](auto& rng) {
      Mat la = random_mat(4, 3, rng, -2, 2), le = random_mat(4, 3, rng, -2, 2);
      const std::vector<int> targets = {0, 3, 2, 0};
      return nn::grad_check({&la, &le}, [&](Tape& t) {
        Var m = alpha_gate(nn::softmax_null(t.leaf(&la)), nn::softmax_null(t.leaf(&le)), 0.3);
        return loss_match(m, targets, literal);
      });
    }));
  c.push_back(loss_case("loss_attn", [](auto& rng) {
    Mat logits = random_mat(3, 4, rng, -2, 2);
    Mat mask = Mat::Zero(3, 5);
    mask(0, 1) = mask(0, 3) = 1.0;  // duplicate pair
    mask(1, 4) = 1.0;               // no detection
    mask(2, 0) = 1.0;
    return nn::grad_check({&logits}, [&](Tape& t) { return loss_attn(nn::softmax_null(t.leaf(&logits)), mask); });
  }));
  c.push_back(loss_case("total_loss", [](auto& rng) {
    Model m = random_model(tiny_config(), rng());
    Mat et = random_mat(2, 4, rng, -2, 2), ed = random_mat(3, 4, rng, -2, 2);
    const Mat raw = random_mat(6, 4, rng, 0.0, 1.0);
    IdentityLabels labels{{7, 8, 7}, {7, 9}};
    std::vector<Mat*> wrt{&et, &ed};
    for (const auto& n : m.params.names()) wrt.push_back(&m.params.value(n));
    return nn::grad_check(wrt, [&](Tape& t) {
      auto f = frame_forward(t, m, t.leaf(&et), t.leaf(&ed), raw, 0.3);
      return frame_losses(f, labels).total;
    }, GradCheckOptions{1e-5, 1e-6, 8, rng()});
  }));
  c.push_back(loss_case("triplet_loss", [](auto& rng) {
    Mat a = random_mat(3, 4, rng), p = random_mat(3, 4, rng), n = random_mat(3, 4, rng);
    return nn::grad_check({&a, &p, &n}, [&](Tape& t) {
      return triplet_loss(t.leaf(&a), t.leaf(&p), t.leaf(&n), 5.0);  // hinge active
    });
  }));
  c.push_back(loss_case("center_loss", [](auto& rng) {
    Mat e = random_mat(4, 3, rng), centers = random_mat(2, 3, rng);
    const std::vector<int> ids = {0, 1, 1, 0};
    return nn::grad_check({&e, &centers}, [&](Tape& t) { return center_loss(t.leaf(&e), ids, t.leaf(&centers)); });
  }));
  c.push_back(loss_case("ce_label_smooth", [](auto& rng) {
    Mat logits = random_mat(3, 5, rng, -2, 2);
    const std::vector<int> ids = {4, 0, 2};
    return nn::grad_check({&logits}, [&](Tape& t) { return ce_label_smooth(t.leaf(&logits), ids, 0.1); });
  }));
  return c;
}

}  // namespace detail

inline std::vector<Case> all_cases() {
  auto c = detail::op_cases();
  for (auto& x : detail::layer_cases()) c.push_back(std::move(x));
  for (auto& x : detail::loss_cases()) c.push_back(std::move(x));
  return c;
}

struct Entry {
  std::string group;
  std::string name;
  std::uint64_t seed = 0;
  GradCheckResult result;
  bool passed = false;
};

struct Report {
  std::vector<Entry> entries;
  double seconds = 0.0;
  double tolerance = 1e-4;

  bool passed() const {
    for (const auto& e : entries)
      if (!e.passed) return false;
    return true;
  }
  double worst() const {
    double w = 0.0;
    for (const auto& e : entries) w = std::max(w, e.result.max_rel_error);
    return w;
  }
};

inline Report run(int seeds = 5, double tol = 1e-4, std::uint64_t base_seed = 1) {
  Report r;
  r.tolerance = tol;
  const auto start = std::chrono::steady_clock::now();
  for (const auto& c : all_cases())
    for (int s = 0; s < seeds; ++s) {
      const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(s);
      Entry e{c.group, c.name, seed, c.run(seed), false};
      e.passed = e.result.passed(tol);
      r.entries.push_back(std::move(e));
    }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace dsat::gradcheck
