#pragma once

// EngineConfig as JSON, and checkpoint loading checked against a config.

#include <algorithm>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dsat/io/sequence.hpp"
#include "dsat/spapde.hpp"
#include "dsat/transformer.hpp"

namespace dsat::io {

inline std::string to_string(EdgeUpdate e) {
  return e == EdgeUpdate::gated_logits ? "gated_logits" : "gated_weights";
}

inline EdgeUpdate parse_edge_update(const std::string& s) {
  if (s == "gated_logits") return EdgeUpdate::gated_logits;
  if (s == "gated_weights") return EdgeUpdate::gated_weights;
  throw ConfigError("edge_update must be gated_logits or gated_weights, got \"" + s + "\"");
}

inline json to_json(const EngineConfig& c) {
  json j = {{"d", c.d},
            {"n_encoder_stages", c.n_encoder_stages},
            {"n_decoder_stages", c.n_decoder_stages},
            {"alpha", c.alpha},
            {"tau_dup", c.tau_dup},
            {"tau_age", c.tau_age},
            {"ffn_hidden", c.ffn_hidden},
            {"heatmap_kernel_width", c.heatmap_kernel_width},
            {"num_keypoints", c.num_keypoints},
            {"warp_mode", c.warp_mode == WarpMode::identity ? "identity" : "pluggable"},
            {"edge_update", to_string(c.edge_update)},
            {"crop_height", c.crop_height},
            {"crop_width", c.crop_width}};
  if (!c.oks_kappas.empty()) j["oks_kappas"] = c.oks_kappas;
  return j;
}

/// Keys missing from `j` keep the value in `base`. Unknown keys are errors: a
/// typo in a config file should not silently fall back to a default.
inline EngineConfig config_from_json(const json& j, EngineConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  auto get = [&](const char* key, auto& field) {
    if (!j.contains(key)) return;
    try {
      j.at(key).get_to(field);
    } catch (const json::exception&) {
      throw ConfigError(std::string("config field \"") + key + "\" has the wrong type");
    }
  };
  static const std::vector<std::string> known = {
      "d", "n_encoder_stages", "n_decoder_stages", "alpha", "tau_dup", "tau_age", "ffn_hidden",
      "heatmap_kernel_width", "num_keypoints", "oks_kappas", "warp_mode", "edge_update",
      "crop_height", "crop_width"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw ConfigError("unknown config field \"" + key + "\"");
  get("d", base.d);
  get("n_encoder_stages", base.n_encoder_stages);
  get("n_decoder_stages", base.n_decoder_stages);
  get("alpha", base.alpha);
  get("tau_dup", base.tau_dup);
  get("tau_age", base.tau_age);
  get("ffn_hidden", base.ffn_hidden);
  get("heatmap_kernel_width", base.heatmap_kernel_width);
  get("num_keypoints", base.num_keypoints);
  get("oks_kappas", base.oks_kappas);
  get("crop_height", base.crop_height);
  get("crop_width", base.crop_width);
  if (j.contains("warp_mode")) {
    std::string w;
    get("warp_mode", w);
    if (w == "identity") base.warp_mode = WarpMode::identity;
    else if (w == "pluggable") base.warp_mode = WarpMode::pluggable;
    else throw ConfigError("warp_mode must be identity or pluggable, got \"" + w + "\"");
  }
  if (j.contains("edge_update")) {
    std::string e;
    get("edge_update", e);
    base.edge_update = parse_edge_update(e);
  }
  return base;
}

inline EngineConfig load_config(const std::string& path, EngineConfig base = {}) {
  json j;
  try {
    j = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    throw ConfigError("config " + path + ": malformed JSON: " + e.what());
  }
  return config_from_json(j, base);
}

/// Builds a model from checkpoint parameters. Every transformer parameter the
/// config implies must be present with the right shape; backbone parameters
/// are optional but checked the same way when present. Extra names are errors.
inline Model model_from_params(const EngineConfig& cfg, nn::ParamStore params) {
  const Model expected = make_model(cfg, 0, true);
  const bool backbone = params.contains(kBackbonePrefix + ".head.w");
  for (const auto& name : expected.params.names()) {
    const bool is_backbone = name.rfind(kBackbonePrefix + ".", 0) == 0;
    if (is_backbone && !backbone) continue;
    if (!params.contains(name))
      throw Error("checkpoint does not match config: missing parameter " + name);
    const Mat& want = expected.params.value(name);
    const Mat& got = params.value(name);
    if (want.rows() != got.rows() || want.cols() != got.cols())
      throw Error("checkpoint does not match config: " + name + " is " + std::to_string(got.rows()) +
                  "x" + std::to_string(got.cols()) + ", expected " + std::to_string(want.rows()) +
                  "x" + std::to_string(want.cols()));
  }
  for (const auto& name : params.names())
    if (!expected.params.contains(name))
      throw Error("checkpoint does not match config: unexpected parameter " + name);
  // Re-register in canonical order so the model is independent of file order.
  Model m{cfg, {}};
  for (const auto& name : expected.params.names())
    if (params.contains(name)) m.params.add(name, params.value(name));
  return m;
}

inline Model load_model(const EngineConfig& cfg, const std::string& path) {
  return model_from_params(validate_config(cfg), nn::load_checkpoint(path));
}

}  // namespace dsat::io
