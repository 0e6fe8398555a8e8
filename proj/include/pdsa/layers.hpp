#pragma once

#include <string>

#include "pdsa/rng.hpp"
#include "pdsa/tape.hpp"
#include "pdsa/tensor.hpp"

namespace pdsa {

/// Parameter-store entry ids for the small layer stacks used throughout the
/// model. Creation order is fixed by the add_* helpers so parameter
/// iteration (updates, checkpoints) is deterministic.
struct LinearIds {
  int w = -1;
  int b = -1;
};

/// linear -> layer norm -> relu
struct EmbedIds {
  LinearIds lin;
  int gamma = -1;
  int beta = -1;
};

/// linear -> layer norm -> relu -> linear
struct MlpIds {
  EmbedIds hidden;
  LinearIds out;
};

template <typename T>
LinearIds add_linear(ParamStore<T>& store, const std::string& prefix, std::int64_t out,
                     std::int64_t in, Rng& rng) {
  LinearIds ids;
  ids.w = add_linear_weight(store, prefix + ".w", out, in, rng);
  ids.b = add_zeros(store, prefix + ".b", {out});
  return ids;
}

/// Correction-emitting projection: starts at zero so the surrounding block
/// initially computes its uncorrected form and training decides when the
/// branch participates.
template <typename T>
LinearIds add_linear_zero(ParamStore<T>& store, const std::string& prefix, std::int64_t out,
                          std::int64_t in) {
  LinearIds ids;
  ids.w = add_zeros(store, prefix + ".w", {out, in});
  ids.b = add_zeros(store, prefix + ".b", {out});
  return ids;
}

template <typename T>
EmbedIds add_embed(ParamStore<T>& store, const std::string& prefix, std::int64_t out,
                   std::int64_t in, Rng& rng) {
  EmbedIds ids;
  ids.lin = add_linear(store, prefix + ".lin", out, in, rng);
  ids.gamma = add_ones(store, prefix + ".gamma", {out});
  ids.beta = add_zeros(store, prefix + ".beta", {out});
  return ids;
}

template <typename T>
MlpIds add_mlp(ParamStore<T>& store, const std::string& prefix, std::int64_t hidden,
               std::int64_t out, std::int64_t in, Rng& rng) {
  MlpIds ids;
  ids.hidden = add_embed(store, prefix + ".h", hidden, in, rng);
  ids.out = add_linear(store, prefix + ".out", out, hidden, rng);
  return ids;
}

template <typename T>
MlpIds add_mlp_zero_out(ParamStore<T>& store, const std::string& prefix, std::int64_t hidden,
                        std::int64_t out, std::int64_t in, Rng& rng) {
  MlpIds ids;
  ids.hidden = add_embed(store, prefix + ".h", hidden, in, rng);
  ids.out = add_linear_zero(store, prefix + ".out", out, hidden);
  return ids;
}

template <typename T>
Var apply_linear(Tape<T>& tape, const ParamStore<T>& store, const LinearIds& ids, Var x) {
  return tape.linear(x, tape.param(store, ids.w), tape.param(store, ids.b));
}

template <typename T>
Var apply_embed(Tape<T>& tape, const ParamStore<T>& store, const EmbedIds& ids, Var x) {
  Var y = apply_linear(tape, store, ids.lin, x);
  y = tape.layer_norm(y, tape.param(store, ids.gamma), tape.param(store, ids.beta));
  return tape.relu(y);
}

template <typename T>
Var apply_mlp(Tape<T>& tape, const ParamStore<T>& store, const MlpIds& ids, Var x) {
  return apply_linear(tape, store, ids.out, apply_embed(tape, store, ids.hidden, x));
}

}  // namespace pdsa
