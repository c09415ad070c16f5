#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "dsat/nn/tape.hpp"

namespace dsat::nn {

struct GradCheckResult {
  double max_rel_error = 0.0;
  bool skipped = false;
  std::string note;
  int kinks = 0;

  bool passed(double tol = 1e-4) const { return skipped || max_rel_error <= tol; }
};

struct GradCheckOptions {
  double h = 1e-5;
  double floor = 1e-6;
  // Entries probed per tensor; 0 probes all of them, otherwise a seeded
  // random subset of this size.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  // When an entry misses `kink_tolerance` and the differences at h and h/10
  // disagree with each other, the probe straddles a non-smooth point (ReLU,
  // max); it is re-probed at h/10 and h/100 and counted in `kinks`.
  bool kink_aware = false;
  double kink_tolerance = 1e-4;
};

/// Compares the tape's analytic gradients of a scalar function against central
/// differences, entry by entry, for every matrix in `wrt`. The function must
/// bind each of them via Tape::leaf. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult grad_check(const std::vector<Mat*>& wrt,
                                  const std::function<Var(Tape&)>& f,
                                  const GradCheckOptions& opt) {
  std::vector<Mat> analytic;
  {
    Tape t;
    Var y = f(t);
    t.backward(y);
    for (Mat* m : wrt) analytic.push_back(t.grad_of(m));
  }
  auto eval = [&]() {
    Tape t;
    return f(t).scalar();
  };
  std::mt19937_64 rng(opt.seed);
  GradCheckResult r;
  for (std::size_t k = 0; k < wrt.size(); ++k) {
    Mat& m = *wrt[k];
    std::vector<Eigen::Index> entries(static_cast<std::size_t>(m.size()));
    std::iota(entries.begin(), entries.end(), Eigen::Index{0});
    if (opt.max_entries > 0 && entries.size() > opt.max_entries) {
      std::shuffle(entries.begin(), entries.end(), rng);
      entries.resize(opt.max_entries);
    }
    for (Eigen::Index i : entries) {
      const double saved = m.data()[i];
      auto central = [&](double step) {
        m.data()[i] = saved + step;
        const double up = eval();
        m.data()[i] = saved - step;
        const double down = eval();
        m.data()[i] = saved;
        return (up - down) / (2.0 * step);
      };
      const double a = analytic[k].data()[i];
      auto rel = [&](double numeric) {
        return std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opt.floor});
      };
      const double numeric = central(opt.h);
      double err = rel(numeric);
      if (opt.kink_aware && err > opt.kink_tolerance) {
        const double finer = central(opt.h / 10.0);
        const double spread = std::abs(numeric - finer) /
                              std::max({std::abs(numeric), std::abs(finer), opt.floor});
        if (spread > 1e-3) {
          ++r.kinks;
          err = std::min(rel(finer), rel(central(opt.h / 100.0)));
        }
      }
      r.max_rel_error = std::max(r.max_rel_error, err);
    }
  }
  if (r.kinks > 0) r.note = std::to_string(r.kinks) + " probe(s) re-taken at a non-smooth point";
  return r;
}

inline GradCheckResult grad_check(const std::vector<Mat*>& wrt,
                                  const std::function<Var(Tape&)>& f, double h = 1e-5,
                                  double floor = 1e-6) {
  return grad_check(wrt, f, GradCheckOptions{h, floor, 0, 0});
}

/// Gradient check of row-wise layer_norm; rows with (near) zero variance are
/// not differentiable in any useful sense and are reported as skipped.
inline GradCheckResult grad_check_layer_norm(Mat& x, const Mat& weights, double h = 1e-5) {
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    if (var < 1e-8) return {0.0, true, "degenerate row: zero variance"};
  }
  return grad_check({&x}, [&](Tape& t) { return dot_const(layer_norm(t.leaf(&x)), weights); }, h);
}

}  // namespace dsat::nn
