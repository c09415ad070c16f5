#pragma once

// Parameterized building blocks over a ParamStore. Each block has a
// registration function (creates named tensors under a prefix) and a forward
// function (binds them on a tape).

#include <random>
#include <string>

#include "dsat/nn/param_store.hpp"

namespace dsat::nn {

inline void add_linear(ParamStore& p, const std::string& prefix, int in, int out,
                       std::mt19937_64& rng, bool bias = true) {
  p.add(prefix + ".w", uniform_init(out, in, in, rng));
  if (bias) p.add(prefix + ".b", uniform_init(1, out, in, rng));
}

inline Var linear(Tape& t, const ParamStore& p, const std::string& prefix, Var x) {
  Var w = p.bind(t, prefix + ".w");
  if (!p.contains(prefix + ".b")) return matmul_nt(x, w);
  Var b = p.bind(t, prefix + ".b");
  return linear(x, w, &b);
}

/// LayerNorm affine terms start at identity.
inline void add_layer_norm(ParamStore& p, const std::string& prefix, int dim) {
  p.add(prefix + ".g", Mat::Ones(1, dim));
  p.add(prefix + ".b", Mat::Zero(1, dim));
}

inline Var layer_norm(Tape& t, const ParamStore& p, const std::string& prefix, Var x) {
  return add_row(mul_row(layer_norm(x), p.bind(t, prefix + ".g")), p.bind(t, prefix + ".b"));
}

inline void add_ffn(ParamStore& p, const std::string& prefix, int in, int hidden, int out,
                    std::mt19937_64& rng) {
  add_linear(p, prefix + ".l1", in, hidden, rng);
  add_linear(p, prefix + ".l2", hidden, out, rng);
}

/// linear -> GELU -> linear
inline Var ffn(Tape& t, const ParamStore& p, const std::string& prefix, Var x) {
  return linear(t, p, prefix + ".l2", gelu(linear(t, p, prefix + ".l1", x)));
}

}  // namespace dsat::nn
