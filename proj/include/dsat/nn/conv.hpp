#pragma once

// Spatial ops over batched feature maps. A batch of N maps with C channels
// and H x W pixels is a C x (N * H * W) matrix; person n occupies columns
// [n * H * W, (n + 1) * H * W), row-major over (y, x).

#include "dsat/nn/tape.hpp"

namespace dsat::nn {

struct MapShape {
  int n = 1;
  int h = 0;
  int w = 0;

  Eigen::Index pixels() const { return static_cast<Eigen::Index>(h) * w; }
  Eigen::Index columns() const { return pixels() * n; }
};

/// 3x3 cross-correlation, stride 1, zero padding 1.
/// weight is C_out x (C_in * 9) with column c * 9 + ky * 3 + kx; bias is 1 x C_out.
inline Mat conv3x3_forward(const Mat& x, const Mat& weight, const Mat& bias, MapShape s) {
  const Eigen::Index cin = x.rows(), cout = weight.rows();
  Mat y(cout, s.columns());
  for (Eigen::Index o = 0; o < cout; ++o) y.row(o).setConstant(bias(0, o));
  for (int n = 0; n < s.n; ++n) {
    const Eigen::Index base = n * s.pixels();
    for (Eigen::Index c = 0; c < cin; ++c) {
      for (int ky = 0; ky < 3; ++ky) {
        for (int kx = 0; kx < 3; ++kx) {
          const Eigen::Index wcol = c * 9 + ky * 3 + kx;
          for (int yy = 0; yy < s.h; ++yy) {
            const int sy = yy + ky - 1;
            if (sy < 0 || sy >= s.h) continue;
            for (int xx = 0; xx < s.w; ++xx) {
              const int sx = xx + kx - 1;
              if (sx < 0 || sx >= s.w) continue;
              const double v = x(c, base + sy * s.w + sx);
              if (v == 0.0) continue;
              y.col(base + yy * s.w + xx) += weight.col(wcol) * v;
            }
          }
        }
      }
    }
  }
  return y;
}

inline Var conv3x3(Var x, Var weight, Var bias, MapShape s) {
  if (x.cols() != s.columns()) throw ShapeError("conv3x3: input does not match map shape");
  if (weight.cols() != x.rows() * 9) throw ShapeError("conv3x3: channel mismatch");
  if (bias.rows() != 1 || bias.cols() != weight.rows()) throw ShapeError("conv3x3: bias shape");
  Mat y = conv3x3_forward(x.value(), weight.value(), bias.value(), s);
  return x.tape->record(std::move(y), {x, weight, bias}, [x, weight, bias, s](Tape& t, const Mat& g) {
    const Mat& xv = x.value();
    const Mat& wv = weight.value();
    const Eigen::Index cin = xv.rows();
    const bool need_x = t.requires_grad(x.id), need_w = t.requires_grad(weight.id);
    Mat gx = Mat::Zero(xv.rows(), xv.cols());
    Mat gw = Mat::Zero(wv.rows(), wv.cols());
    for (int n = 0; n < s.n; ++n) {
      const Eigen::Index base = n * s.pixels();
      for (Eigen::Index c = 0; c < cin; ++c) {
        for (int ky = 0; ky < 3; ++ky) {
          for (int kx = 0; kx < 3; ++kx) {
            const Eigen::Index wcol = c * 9 + ky * 3 + kx;
            for (int yy = 0; yy < s.h; ++yy) {
              const int sy = yy + ky - 1;
              if (sy < 0 || sy >= s.h) continue;
              for (int xx = 0; xx < s.w; ++xx) {
                const int sx = xx + kx - 1;
                if (sx < 0 || sx >= s.w) continue;
                const Eigen::Index out = base + yy * s.w + xx;
                const Eigen::Index in = base + sy * s.w + sx;
                if (need_w) gw.col(wcol) += g.col(out) * xv(c, in);
                if (need_x) gx(c, in) += wv.col(wcol).dot(g.col(out));
              }
            }
          }
        }
      }
    }
    t.accumulate(x.id, gx);
    t.accumulate(weight.id, gw);
    t.accumulate_expr(bias.id, g.rowwise().sum().transpose());
  });
}

/// 2x2 average pooling with stride 2; odd trailing rows/columns are dropped.
inline Var avg_pool2(Var x, MapShape s) {
  if (x.cols() != s.columns()) throw ShapeError("avg_pool2: input does not match map shape");
  const MapShape o{s.n, s.h / 2, s.w / 2};
  Mat y = Mat::Zero(x.rows(), o.columns());
  for (int n = 0; n < s.n; ++n)
    for (int yy = 0; yy < o.h; ++yy)
      for (int xx = 0; xx < o.w; ++xx) {
        const Eigen::Index dst = n * o.pixels() + yy * o.w + xx;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx)
            y.col(dst) += 0.25 * x.value().col(n * s.pixels() + (2 * yy + dy) * s.w + 2 * xx + dx);
      }
  return x.tape->record(std::move(y), {x}, [x, s, o](Tape& t, const Mat& g) {
    Mat gx = Mat::Zero(x.rows(), x.cols());
    for (int n = 0; n < s.n; ++n)
      for (int yy = 0; yy < o.h; ++yy)
        for (int xx = 0; xx < o.w; ++xx) {
          const Eigen::Index src = n * o.pixels() + yy * o.w + xx;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              gx.col(n * s.pixels() + (2 * yy + dy) * s.w + 2 * xx + dx) += 0.25 * g.col(src);
        }
    t.accumulate(x.id, gx);
  });
}

inline Mat avg_pool2(const Mat& x, MapShape s) {
  Tape t;
  return avg_pool2(t.constant(x), s).value();
}

/// Per-person spatial mean: C x (N * H * W) -> N x C.
inline Var global_avg_pool(Var x, MapShape s) {
  if (x.cols() != s.columns()) throw ShapeError("global_avg_pool: shape mismatch");
  Mat y(s.n, x.rows());
  for (int n = 0; n < s.n; ++n)
    y.row(n) = x.value().middleCols(n * s.pixels(), s.pixels()).rowwise().mean().transpose();
  return x.tape->record(std::move(y), {x}, [x, s](Tape& t, const Mat& g) {
    Mat gx(x.rows(), x.cols());
    const double inv = 1.0 / static_cast<double>(s.pixels());
    for (int n = 0; n < s.n; ++n)
      for (Eigen::Index p = 0; p < s.pixels(); ++p)
        gx.col(n * s.pixels() + p) = g.row(n).transpose() * inv;
    t.accumulate(x.id, gx);
  });
}

}  // namespace dsat::nn
