#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/layers.hpp"
#include "pdsa/point_cloud.hpp"
#include "pdsa/tape.hpp"
#include "pdsa/tensor.hpp"

namespace pdsa {

/// Point-count threshold below which full self-attention is used; larger
/// stages switch to the key-point scheme.
inline constexpr std::int64_t kSatFullMaxPoints = 256;

struct SatIds {
  LinearIds q;
  LinearIds k;
  LinearIds v;
  LinearIds out;
};

template <typename T>
SatIds add_sat_params(ParamStore<T>& store, const std::string& prefix, std::int64_t d_width,
                      std::int64_t d_attn, std::int64_t c, Rng& rng) {
  SatIds ids;
  ids.q = add_linear(store, prefix + ".q", d_attn, d_width, rng);
  ids.k = add_linear(store, prefix + ".k", d_attn, d_width, rng);
  ids.v = add_linear(store, prefix + ".v", d_attn, d_width, rng);
  // zero-started output projection, same rationale as the member correction
  ids.out = add_linear_zero(store, prefix + ".out", c, d_attn);
  return ids;
}

/// Single-head scaled dot-product self-attention over all descriptor rows,
/// projected to the feature width. Optionally exposes the row-stochastic
/// attention matrix for diagnostics.
template <typename T>
Var sat_full(Tape<T>& tape, const ParamStore<T>& store, const SatIds& ids, Var d_all,
             Tensor<T>* attn_out = nullptr) {
  Var q = apply_linear(tape, store, ids.q, d_all);
  Var k = apply_linear(tape, store, ids.k, d_all);
  Var v = apply_linear(tape, store, ids.v, d_all);
  const std::int64_t d_attn = tape.value(q).cols();
  Var scores = tape.scale(tape.matmul_nt(q, k), T(1) / static_cast<T>(std::sqrt(double(d_attn))));
  Var attn = tape.softmax(scores, 1);
  if (attn_out) *attn_out = tape.value(attn);
  return apply_linear(tape, store, ids.out, tape.matmul_nn(attn, v));
}

struct KeySelection {
  std::vector<int> keys;      // ascending center ordinals, ⌈rho·N⌉ of them
  std::vector<int> assign;    // per center: the key whose correction it receives
  std::vector<double> score;  // per center, for diagnostics and ranking tests
  double rho = 1.0;
};

/// Ranks centers by the total attention weight their point receives as a
/// member across all neighborhoods (channel-mean of w_re per occurrence;
/// plain occurrence counts when no weights are given). Keys are the
/// top-⌈rho·N⌉ by score, ties to the lowest index. Each center is assigned
/// its own correction if it is a key, else the highest-scoring key found
/// inside its neighborhood, else the nearest key in 3D.
template <typename T>
KeySelection select_key_points(const Tensor<T>* w_re, const std::vector<Neighborhood>& nbhs,
                               const std::vector<int>& center_points,
                               const std::vector<Vec3>& center_coords, double rho) {
  if (!(rho > 0.0 && rho <= 1.0))
    throw std::invalid_argument("select_key_points: rho must be in (0,1]");
  const int m = static_cast<int>(nbhs.size());
  if (static_cast<int>(center_points.size()) != m || static_cast<int>(center_coords.size()) != m)
    throw std::invalid_argument("select_key_points: center list sizes disagree");

  int max_point = -1;
  for (int p : center_points) max_point = std::max(max_point, p);
  std::vector<int> point_to_center(static_cast<std::size_t>(max_point + 1), -1);
  for (int c = 0; c < m; ++c) point_to_center[static_cast<std::size_t>(center_points[c])] = c;

  KeySelection sel;
  sel.rho = rho;
  sel.score.assign(static_cast<std::size_t>(m), 0.0);
  std::int64_t flat = 0;
  const std::int64_t c_width = w_re ? w_re->cols() : 0;
  for (const auto& nbh : nbhs) {
    for (std::size_t slot = 0; slot < nbh.members.size(); ++slot, ++flat) {
      const int p = nbh.members[slot];
      if (p > max_point) continue;
      const int c = point_to_center[static_cast<std::size_t>(p)];
      if (c < 0) continue;
      double w = 1.0;
      if (w_re) {
        double s = 0.0;
        for (std::int64_t ch = 0; ch < c_width; ++ch)
          s += static_cast<double>(w_re->at(flat, ch));
        w = s / static_cast<double>(c_width);
      }
      sel.score[static_cast<std::size_t>(c)] += w;
    }
  }

  const int n_keys = std::max(1, static_cast<int>(std::ceil(rho * m)));
  std::vector<int> order(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (sel.score[static_cast<std::size_t>(a)] != sel.score[static_cast<std::size_t>(b)])
      return sel.score[static_cast<std::size_t>(a)] > sel.score[static_cast<std::size_t>(b)];
    return a < b;
  });
  sel.keys.assign(order.begin(), order.begin() + n_keys);
  std::sort(sel.keys.begin(), sel.keys.end());

  std::vector<char> is_key(static_cast<std::size_t>(m), 0);
  for (int k : sel.keys) is_key[static_cast<std::size_t>(k)] = 1;

  sel.assign.assign(static_cast<std::size_t>(m), -1);
  for (int i = 0; i < m; ++i) {
    if (is_key[static_cast<std::size_t>(i)]) {
      sel.assign[static_cast<std::size_t>(i)] = i;
      continue;
    }
    int best = -1;
    for (int p : nbhs[static_cast<std::size_t>(i)].members) {
      if (p > max_point) continue;
      const int c = point_to_center[static_cast<std::size_t>(p)];
      if (c < 0 || !is_key[static_cast<std::size_t>(c)] || c == best) continue;
      if (best < 0 || sel.score[static_cast<std::size_t>(c)] > sel.score[static_cast<std::size_t>(best)] ||
          (sel.score[static_cast<std::size_t>(c)] == sel.score[static_cast<std::size_t>(best)] && c < best))
        best = c;
    }
    if (best < 0) {
      double best_d = 0.0;
      for (int k : sel.keys) {
        const double d = sq_dist(center_coords[static_cast<std::size_t>(i)],
                                 center_coords[static_cast<std::size_t>(k)]);
        if (best < 0 || d < best_d) {
          best = k;
          best_d = d;
        }
      }
    }
    sel.assign[static_cast<std::size_t>(i)] = best;
  }
  return sel;
}

/// Attention restricted to the key rows; every center receives a copy of its
/// assigned key's correction. Gradients flow into key descriptor rows only.
template <typename T>
Var sat_keypoint(Tape<T>& tape, const ParamStore<T>& store, const SatIds& ids, Var d_all,
                 const KeySelection& sel, Tensor<T>* attn_out = nullptr) {
  const std::int64_t n = tape.value(d_all).rows();
  if (static_cast<std::int64_t>(sel.assign.size()) != n)
    throw std::invalid_argument("sat_keypoint: selection does not match row count");
  std::vector<std::int64_t> key_rows(sel.keys.begin(), sel.keys.end());
  Var key_corr = sat_full(tape, store, ids, tape.gather_rows(d_all, std::move(key_rows)), attn_out);

  std::vector<int> key_pos(static_cast<std::size_t>(n), -1);
  for (std::size_t p = 0; p < sel.keys.size(); ++p)
    key_pos[static_cast<std::size_t>(sel.keys[p])] = static_cast<int>(p);
  std::vector<std::int64_t> broadcast(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    const int a = sel.assign[static_cast<std::size_t>(i)];
    if (a < 0 || key_pos[static_cast<std::size_t>(a)] < 0)
      throw std::invalid_argument("sat_keypoint: assignment targets a non-key center");
    broadcast[static_cast<std::size_t>(i)] = key_pos[static_cast<std::size_t>(a)];
  }
  return tape.gather_rows(key_corr, std::move(broadcast));
}

/// Pooled features plus the global correction.
template <typename T>
Var apply_cics(Tape<T>& tape, Var f_pooled, Var corrections) {
  return tape.add(f_pooled, corrections);
}

}  // namespace pdsa
