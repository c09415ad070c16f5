#pragma once

// Command-line front end: synth, track, train, eval, gradcheck.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// The config file comes from --config, else from $DSAT_CONFIG; flags override
// values read from it.

#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "dsat/gradient_suite.hpp"
#include "dsat/io/config.hpp"
#include "dsat/io/eval.hpp"
#include "dsat/io/synth.hpp"
#include "dsat/training.hpp"

namespace dsat::cli {

inline constexpr const char* kConfigEnv = "DSAT_CONFIG";

struct EngineFlags {
  std::string config;
  std::optional<double> alpha, tau_dup;
  std::optional<int> tau_age;

  void add_to(CLI::App& app) {
    app.add_option("--config", config, "engine config JSON (default: $DSAT_CONFIG)");
    app.add_option("--alpha", alpha, "appearance weight of the alpha gate");
    app.add_option("--tau-dup", tau_dup, "duplicate-removal threshold");
    app.add_option("--tau-age", tau_age, "frames an unmatched track is kept");
  }

  EngineConfig resolve() const {
    EngineConfig cfg;
    std::string path = config;
    if (path.empty())
      if (const char* env = std::getenv(kConfigEnv); env && *env) path = env;
    if (!path.empty()) cfg = io::load_config(path);
    if (alpha) cfg.alpha = *alpha;
    if (tau_dup) cfg.tau_dup = *tau_dup;
    if (tau_age) cfg.tau_age = *tau_age;
    return validate_config(cfg);
  }
};

namespace detail {

inline void emit(const std::string& text, const std::string& path, std::ostream& out) {
  if (path.empty() || path == "-") out << text;
  else io::write_text(path, text);
}

inline std::string dump(const io::json& j) { return j.dump(2) + "\n"; }

inline Model engine_model(const EngineConfig& cfg, const std::string& weights) {
  if (weights.empty()) return reference_model(cfg);
  return io::load_model(cfg, weights);
}

}  // namespace detail

struct SynthArgs {
  std::string scenario = "crossing";
  io::SynthOptions opt;
  std::optional<int> dim, keypoints;
  std::string out;
};

struct TrackArgs {
  std::vector<std::string> inputs;
  std::string weights, out;
  bool backbone = false;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct TrainArgs {
  std::vector<std::string> inputs;
  std::string scenario = "crowd";
  int sequences = 2, frames = 40;
  std::string out, curve, match_loss = "standard";
  TrainOptions opt;
  std::optional<double> lr;
};

struct EvalArgs {
  std::string results, gt, out;
};

struct GradcheckArgs {
  int seeds = 5;
  double tol = 1e-4;
  std::uint64_t seed = 1;
};

inline int run_synth(const SynthArgs& a, const EngineFlags& flags, std::ostream& out) {
  const EngineConfig cfg = flags.resolve();
  io::SynthOptions o = a.opt;
  o.scenario = io::parse_scenario(a.scenario);
  o.d = a.dim.value_or(cfg.d);
  o.num_keypoints = a.keypoints.value_or(cfg.num_keypoints);
  o.crop_height = cfg.crop_height;
  o.crop_width = cfg.crop_width;
  detail::emit(detail::dump(io::to_json(io::synth_sequence(o))), a.out, out);
  return 0;
}

/// Tracks one sequence. With `backbone`, appearance vectors are dropped and
/// every detection is embedded from its crop by the toy backbone.
inline std::string track_one(const Model& model, const std::string& path, bool backbone,
                             std::vector<std::string>* warnings) {
  io::SequenceFile seq = io::load_sequence(path, model.cfg.num_keypoints, warnings);
  if (backbone)
    for (auto& f : seq.frames)
      for (std::size_t i = 0; i < f.detections.size(); ++i) {
        if (!f.detections[i].crop)
          throw Error(path + ": frame " + std::to_string(f.index) + " detection " + std::to_string(i) +
                      " has no crop for the backbone");
        f.detections[i].appearance.reset();
      }
  Tracker tracker(model);
  return io::to_jsonl(io::track_sequence(tracker, seq));
}

inline int run_track(const TrackArgs& a, const EngineFlags& flags, std::ostream& out, std::ostream& err) {
  const EngineConfig cfg = flags.resolve();
  Model model = detail::engine_model(cfg, a.weights);
  if (a.backbone && !model.has_backbone()) {
    std::mt19937_64 rng(a.seed);
    add_backbone(model.params, model.cfg, rng);
  }
  if (a.inputs.size() == 1) {
    std::vector<std::string> warnings;
    const std::string text = track_one(model, a.inputs[0], a.backbone, &warnings);
    for (const auto& w : warnings) err << "warning: " << w << "\n";
    detail::emit(text, a.out, out);
    return 0;
  }
  // Several sequences: one independent tracker per sequence, results written
  // to <out>/<stem>.jsonl.
  if (a.out.empty() || a.out == "-") throw ConfigError("--out must name a directory when tracking several sequences");
  std::filesystem::create_directories(a.out);
  std::vector<std::string> errors(a.inputs.size()), texts(a.inputs.size());
  std::vector<std::vector<std::string>> warnings(a.inputs.size());
  std::size_t next = 0;
  std::mutex m;
  auto worker = [&] {
    for (;;) {
      std::size_t k;
      {
        std::lock_guard lock(m);
        if (next >= a.inputs.size()) return;
        k = next++;
      }
      try {
        texts[k] = track_one(model, a.inputs[k], a.backbone, &warnings[k]);
        const auto stem = std::filesystem::path(a.inputs[k]).stem().string();
        io::write_text((std::filesystem::path(a.out) / (stem + ".jsonl")).string(), texts[k]);
      } catch (const std::exception& e) {
        errors[k] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const int n = std::max(1, std::min<int>(a.jobs, static_cast<int>(a.inputs.size())));
  for (int i = 0; i < n; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  int status = 0;
  for (std::size_t k = 0; k < a.inputs.size(); ++k) {
    for (const auto& w : warnings[k]) err << "warning: " << a.inputs[k] << ": " << w << "\n";
    if (!errors[k].empty()) {
      err << "error: " << errors[k] << "\n";
      status = 1;
    }
  }
  return status;
}

inline int run_train(const TrainArgs& a, const EngineFlags& flags, std::ostream& out, std::ostream& err) {
  const EngineConfig cfg = flags.resolve();
  if (a.out.empty()) throw ConfigError("train needs --out for the checkpoint");
  if (a.match_loss != "standard" && a.match_loss != "literal")
    throw ConfigError("--match-loss must be standard or literal");
  TrainOptions opt = a.opt;
  if (a.lr) opt.optim.lr = *a.lr;
  opt.eq11_literal = a.match_loss == "literal";
  if (opt.iterations < 0) throw ConfigError("iterations must be non-negative");
  if (!(opt.optim.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");

  std::vector<io::SequenceFile> seqs;
  for (const auto& path : a.inputs) {
    std::vector<std::string> warnings;
    seqs.push_back(io::load_sequence(path, cfg.num_keypoints, &warnings));
    for (const auto& w : warnings) err << "warning: " << path << ": " << w << "\n";
  }
  if (seqs.empty()) {
    io::SynthOptions o;
    o.scenario = io::parse_scenario(a.scenario);
    o.n_frames = a.frames;
    o.d = cfg.d;
    o.num_keypoints = cfg.num_keypoints;
    for (int k = 0; k < a.sequences; ++k) {
      o.seed = 100 * opt.seed + static_cast<std::uint64_t>(k);
      seqs.push_back(io::synth_sequence(o));
    }
  }
  const TrainResult r = train_toy(seqs, cfg, opt);
  nn::save_checkpoint(a.out, r.model.params);
  io::write_text(a.curve.empty() ? a.out + ".csv" : a.curve, curve_csv(r.curve));
  out << detail::dump({{"iterations", opt.iterations},
                       {"initial_eval_loss", r.initial_eval_loss},
                       {"final_eval_loss", r.final_eval_loss},
                       {"config", io::to_json(cfg)}});
  return 0;
}

inline int run_eval(const EvalArgs& a, std::ostream& out) {
  const auto results = io::parse_jsonl(io::read_text(a.results));
  const auto gt = io::load_sequence(a.gt);
  detail::emit(detail::dump(io::to_json(io::evaluate(results, gt))), a.out, out);
  return 0;
}

inline int run_gradcheck(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  if (a.seeds <= 0) throw ConfigError("--seeds must be positive");
  if (!(a.tol > 0.0)) throw ConfigError("--tol must be positive");
  const auto report = gradcheck::run(a.seeds, a.tol, a.seed);
  std::map<std::string, std::pair<double, bool>> worst;
  std::vector<std::string> order;
  for (const auto& e : report.entries) {
    const std::string key = e.group + "/" + e.name;
    auto [it, fresh] = worst.try_emplace(key, 0.0, true);
    if (fresh) order.push_back(key);
    it->second.first = std::max(it->second.first, e.result.max_rel_error);
    it->second.second = it->second.second && e.passed;
  }
  std::ostringstream s;
  for (const auto& key : order) {
    const auto& [err_max, ok] = worst[key];
    s << (ok ? "PASS " : "FAIL ") << key << " max_rel_error=" << std::scientific
      << std::setprecision(3) << err_max << "\n";
  }
  out << s.str();
  out << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (" << order.size()
      << " cases x " << a.seeds << " seeds, tol " << a.tol << ")\n";
  err << "gradcheck took " << std::fixed << std::setprecision(2) << report.seconds << " s\n";
  return report.passed() ? 0 : 1;
}

/// Runs the CLI; returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout,
               std::ostream& err = std::cerr) {
  CLI::App app{"dual-source attention pose tracker"};
  app.require_subcommand(1);
  EngineFlags flags;

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "write a synthetic sequence");
  flags.add_to(*synth);
  synth->add_option("--scenario", sa.scenario, "crossing | occlusion | duplicates | crowd");
  synth->add_option("--frames", sa.opt.n_frames, "number of frames");
  synth->add_option("--seed", sa.opt.seed, "generator seed");
  synth->add_option("--separation", sa.opt.separation, "1: distinct appearance clusters, 0: shared");
  synth->add_option("--appearance-noise", sa.opt.appearance_noise, "per-detection appearance noise");
  synth->add_option("--gap", sa.opt.gap, "occlusion length in frames");
  synth->add_option("--occlusion-start", sa.opt.occlusion_start, "first occluded frame (-1: a third in)");
  synth->add_option("--speed", sa.opt.speed, "px per frame of the moving persons");
  synth->add_option("--dup-prob", sa.opt.duplicate_prob, "duplicate probability per frame");
  synth->add_option("--dim", sa.dim, "appearance dimension (default: config d)");
  synth->add_option("--keypoints", sa.keypoints, "keypoints per pose (default: config)");
  synth->add_flag("--crops", sa.opt.crops, "render image crops for the backbone");
  synth->add_option("--out", sa.out, "output file (default: stdout)");

  TrackArgs ta;
  auto* track = app.add_subcommand("track", "track sequences, FrameResult JSONL out");
  flags.add_to(*track);
  track->add_option("inputs", ta.inputs, "sequence files")->required();
  track->add_option("--weights", ta.weights, "checkpoint (default: reference weights)");
  track->add_flag("--backbone", ta.backbone, "embed crops with the toy backbone");
  track->add_option("--seed", ta.seed, "backbone init seed when the weights carry none");
  track->add_option("--jobs", ta.jobs, "worker threads for several sequences");
  track->add_option("--out", ta.out, "output file, or directory for several inputs");

  TrainArgs tr;
  auto* train = app.add_subcommand("train", "toy training, checkpoint and CSV loss curve out");
  flags.add_to(*train);
  train->add_option("inputs", tr.inputs, "sequence files with identities (default: synthetic)");
  train->add_option("--scenario", tr.scenario, "synthetic scenario when no inputs are given");
  train->add_option("--sequences", tr.sequences, "synthetic sequence count");
  train->add_option("--frames", tr.frames, "frames per synthetic sequence");
  train->add_option("--iterations", tr.opt.iterations, "optimizer steps");
  train->add_option("--lr", tr.lr, "peak learning rate");
  train->add_option("--seed", tr.opt.seed, "init and sampling seed");
  train->add_option("--match-loss", tr.match_loss, "standard | literal");
  train->add_option("--out", tr.out, "checkpoint path")->required();
  train->add_option("--curve", tr.curve, "loss curve CSV (default: <out>.csv)");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "score tracking results against ground truth");
  eval->add_option("results", ea.results, "FrameResult JSONL")->required();
  eval->add_option("gt", ea.gt, "ground-truth sequence")->required();
  eval->add_option("--out", ea.out, "report file (default: stdout)");

  GradcheckArgs ga;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  grad->add_option("--seeds", ga.seeds, "random instances per case");
  grad->add_option("--tol", ga.tol, "max relative error");
  grad->add_option("--seed", ga.seed, "first instance seed");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([&](const CLI::App* a) { return a->get_name() == name; });
    if (subs.empty()) {
      err << "error: unknown subcommand \"" << name << "\"\n" << app.help();
      return 2;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (*synth) return run_synth(sa, flags, out);
    if (*track) return run_track(ta, flags, out, err);
    if (*train) return run_train(tr, flags, out, err);
    if (*eval) return run_eval(ea, out);
    if (*grad) return run_gradcheck(ga, out, err);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace dsat::cli
