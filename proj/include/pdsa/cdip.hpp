#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pdsa/layers.hpp"
#include "pdsa/tape.hpp"
#include "pdsa/tensor.hpp"

namespace pdsa {

/// Learned pieces of the per-neighborhood correction: query/key embeddings of
/// the neighborhood-level and member-level descriptors plus the two MLPs
/// producing member weights and corrective codes.
struct CdipIds {
  LinearIds lq;
  LinearIds lk;
  MlpIds mw;
  MlpIds mv;
};

template <typename T>
CdipIds add_cdip_params(ParamStore<T>& store, const std::string& prefix, std::int64_t d_next_width,
                        std::int64_t d_member_width, std::int64_t h, std::int64_t c, Rng& rng) {
  CdipIds ids;
  ids.lq = add_linear(store, prefix + ".lq", h, d_next_width, rng);
  ids.lk = add_linear(store, prefix + ".lk", h, d_member_width, rng);
  ids.mw = add_mlp(store, prefix + ".mw", h, c, h, rng);
  // zero-started value path: the member correction begins as the identity and
  // only deviates where training pushes it
  ids.mv = add_mlp_zero_out(store, prefix + ".mv", h, c, h, rng);
  return ids;
}

struct CdipOut {
  Var w_re;  // [M*k x c], columns sum to 1 over each neighborhood's members
  Var v_st;  // [M*k x c]
};

/// Correction from already-embedded descriptors: q = L_q(d^{l+1}) per center,
/// k_members = L_k(d^l) per member slot. Split out so callers may embed the
/// member descriptors once per point and gather rows afterwards (row-wise
/// linear and gather commute exactly).
template <typename T>
CdipOut cdip_from_embeddings(Tape<T>& tape, const ParamStore<T>& store, const CdipIds& ids,
                             Var q, Var k_members, std::int64_t k) {
  Var delta = tape.sub(tape.repeat_rows(q, k), k_members);
  CdipOut out;
  out.w_re = tape.softmax_groups(apply_mlp(tape, store, ids.mw, delta), k);
  out.v_st = apply_mlp(tape, store, ids.mv, delta);
  return out;
}

/// delta_j = L_q(d_center_next) - L_k(d_members[j]); w_re = member-axis
/// softmax (per channel) of M_W(delta); v_st = M_v(delta). d_next is [M x dn]
/// and d_members is the row-gathered [M*k x dm] member matrix.
template <typename T>
CdipOut cdip_correction(Tape<T>& tape, const ParamStore<T>& store, const CdipIds& ids, Var d_next,
                        Var d_members, std::int64_t k) {
  return cdip_from_embeddings(tape, store, ids, apply_linear(tape, store, ids.lq, d_next),
                              apply_linear(tape, store, ids.lk, d_members), k);
}

/// f_N[j] = base[j] + w_re[j] ⊙ v_st[j] — the corrective codes weighted into
/// the embedded neighbor matrix before pooling.
template <typename T>
Var corrected_neighbor_features(Tape<T>& tape, Var base, const CdipOut& corr) {
  return tape.add(base, tape.mul(corr.w_re, corr.v_st));
}

struct RowSpread {
  double mean_var = 0.0;       // mean squared row-to-centroid distance
  double max_pair_dist = 0.0;  // max pairwise row distance
};

/// Spread diagnostics of a k x c neighbor feature block (the variance proxy
/// used by the ablation reports).
template <typename T>
RowSpread neighbor_row_variance(const T* rows, std::int64_t k, std::int64_t c) {
  RowSpread s;
  std::vector<double> mean(static_cast<std::size_t>(c), 0.0);
  for (std::int64_t j = 0; j < k; ++j)
    for (std::int64_t ch = 0; ch < c; ++ch)
      mean[static_cast<std::size_t>(ch)] += static_cast<double>(rows[j * c + ch]);
  for (auto& m : mean) m /= static_cast<double>(k);
  for (std::int64_t j = 0; j < k; ++j) {
    double sq = 0.0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const double d = static_cast<double>(rows[j * c + ch]) - mean[static_cast<std::size_t>(ch)];
      sq += d * d;
    }
    s.mean_var += sq;
  }
  s.mean_var /= static_cast<double>(k);
  for (std::int64_t a = 0; a < k; ++a) {
    for (std::int64_t b = a + 1; b < k; ++b) {
      double sq = 0.0;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        const double d = static_cast<double>(rows[a * c + ch]) - static_cast<double>(rows[b * c + ch]);
        sq += d * d;
      }
      s.max_pair_dist = std::max(s.max_pair_dist, std::sqrt(sq));
    }
  }
  return s;
}

template <typename T>
RowSpread neighbor_row_variance(const Tensor<T>& m) {
  return neighbor_row_variance(m.data.data(), m.rows(), m.cols());
}

}  // namespace pdsa
