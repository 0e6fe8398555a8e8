#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <vector>

#include "pdsa/point_cloud.hpp"
#include "pdsa/tape.hpp"
#include "pdsa/tensor.hpp"

namespace pdsa {

/// Octant of an offset taken as member minus center. Zero coordinates fall
/// on the nonnegative side, giving a deterministic total partition.
inline int octant_index(const Vec3& offset) {
  return 4 * (offset[0] >= 0.0) + 2 * (offset[1] >= 0.0) + (offset[2] >= 0.0);
}

/// Linear decay 1 -> 0 from the center to the grouping radius; the center
/// itself gets 0. Clamped below at 0 for KNN groupings whose distances may
/// exceed the nominal radius.
inline double distance_weight(double dist, double radius, bool is_center) {
  if (is_center) return 0.0;
  return std::max(0.0, 1.0 - dist / radius);
}

namespace detail {

/// Slot visit order that makes neighborhood sums independent of the member
/// order handed in: ascending member index, then slot.
inline std::vector<int> sorted_slots(const Neighborhood& nbh) {
  std::vector<int> slots(nbh.members.size());
  std::iota(slots.begin(), slots.end(), 0);
  std::sort(slots.begin(), slots.end(), [&](int a, int b) {
    if (nbh.members[static_cast<std::size_t>(a)] != nbh.members[static_cast<std::size_t>(b)])
      return nbh.members[static_cast<std::size_t>(a)] < nbh.members[static_cast<std::size_t>(b)];
    return a < b;
  });
  return slots;
}

/// Radius used by the decay: the nominal grouping radius, or the
/// neighborhood's own max member distance when none applies (KNN mode,
/// radius <= 0).
inline double effective_radius(const Neighborhood& nbh, double radius) {
  if (radius > 0.0) return radius;
  double mx = 0.0;
  for (double d : nbh.dist) mx = std::max(mx, d);
  return mx > 0.0 ? mx : 1.0;
}

inline double member_weight(const Neighborhood& nbh, int slot, double eff_radius, bool use_dw) {
  if (!use_dw) return 1.0;
  const bool is_center = nbh.members[static_cast<std::size_t>(slot)] == nbh.center;
  return distance_weight(nbh.dist[static_cast<std::size_t>(slot)], eff_radius, is_center);
}

/// member - center offset; the stored rel rows are center - member.
inline Vec3 member_offset(const Neighborhood& nbh, int slot) {
  const Vec3& r = nbh.rel[static_cast<std::size_t>(slot)];
  return {-r[0], -r[1], -r[2]};
}

}  // namespace detail

/// Base descriptor d0: per point, the 8 per-octant sums of member weights
/// (the compressed descriptor of the level below taken as the scalar 1).
/// Expects one neighborhood per cloud point, in point order.
template <typename T>
Tensor<T> init_descriptor(const std::vector<Neighborhood>& nbhs, double radius,
                          bool use_dw = true) {
  const std::int64_t n = static_cast<std::int64_t>(nbhs.size());
  Tensor<T> d({n, 8});
  for (std::int64_t i = 0; i < n; ++i) {
    const Neighborhood& nbh = nbhs[static_cast<std::size_t>(i)];
    const double eff = detail::effective_radius(nbh, radius);
    for (int slot : detail::sorted_slots(nbh)) {
      const double w = detail::member_weight(nbh, slot, eff, use_dw);
      if (w == 0.0) continue;
      const int o = octant_index(detail::member_offset(nbh, slot));
      d.at(i, o) += static_cast<T>(w);
    }
  }
  return d;
}

/// Terms of the aggregation d^{l+1}_i[o·w .. o·w+w) += r_ij · a_j as a sparse
/// map over the compressed-descriptor rows, in deterministic sorted-member
/// order per neighborhood. Zero-weight terms (the center under the distance
/// decay) are dropped; this leaves sums bitwise unchanged.
inline std::vector<ScatterTerm> descriptor_scatter_terms(const std::vector<Neighborhood>& nbhs,
                                                         double radius, bool use_dw = true) {
  std::vector<ScatterTerm> terms;
  terms.reserve(nbhs.size() * (nbhs.empty() ? 0 : nbhs.front().k()));
  for (std::size_t i = 0; i < nbhs.size(); ++i) {
    const Neighborhood& nbh = nbhs[i];
    const double eff = detail::effective_radius(nbh, radius);
    for (int slot : detail::sorted_slots(nbh)) {
      const double w = detail::member_weight(nbh, slot, eff, use_dw);
      if (w == 0.0) continue;
      ScatterTerm t;
      t.src = nbh.members[static_cast<std::size_t>(slot)];
      t.dst = static_cast<std::int64_t>(i);
      t.block = octant_index(detail::member_offset(nbh, slot));
      t.weight = w;
      terms.push_back(t);
    }
  }
  return terms;
}

/// Next-stage descriptor from compressed member descriptors `a` (one row per
/// point of the stage input cloud): one 8-block row per neighborhood,
/// differentiable through `a`.
template <typename T>
Var aggregate_descriptor(Tape<T>& tape, Var a, const std::vector<Neighborhood>& nbhs,
                         double radius, bool use_dw = true) {
  return tape.scatter_blocks(a, descriptor_scatter_terms(nbhs, radius, use_dw),
                             static_cast<std::int64_t>(nbhs.size()), 8);
}

/// Alternative encoder used by the descriptor-ablation fixtures: per octant
/// the centroid of member-minus-center offsets (zeros when empty), giving a
/// constant 24-wide descriptor that ignores learned compression.
template <typename T>
Tensor<T> ph_centroid_descriptor(const std::vector<Neighborhood>& nbhs) {
  const std::int64_t n = static_cast<std::int64_t>(nbhs.size());
  Tensor<T> d({n, 24});
  for (std::int64_t i = 0; i < n; ++i) {
    const Neighborhood& nbh = nbhs[static_cast<std::size_t>(i)];
    double sums[8][3] = {};
    int counts[8] = {};
    for (std::size_t slot = 0; slot < nbh.members.size(); ++slot) {
      const Vec3 off = detail::member_offset(nbh, static_cast<int>(slot));
      const int o = octant_index(off);
      for (int ax = 0; ax < 3; ++ax) sums[o][ax] += off[static_cast<std::size_t>(ax)];
      ++counts[o];
    }
    for (int o = 0; o < 8; ++o) {
      if (counts[o] == 0) continue;
      for (int ax = 0; ax < 3; ++ax)
        d.at(i, o * 3 + ax) = static_cast<T>(sums[o][ax] / counts[o]);
    }
  }
  return d;
}

}  // namespace pdsa
