#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "pdsa/point_cloud.hpp"

namespace pdsa {

// Sampling and grouping. Brute-force scans throughout; inputs here are at
// most a few thousand points. Every tie breaks toward the lowest point
// index so results are reproducible across runs and implementations.

/// Greedy farthest point sampling. Each pick maximizes the minimum distance
/// to the already-selected set; deterministic given `start`.
inline std::vector<int> farthest_point_sample(const PointCloud& cloud, std::size_t m,
                                              int start = 0) {
  const std::size_t n = cloud.size();
  if (m < 1) throw std::invalid_argument("farthest_point_sample: m must be >= 1");
  if (m > n) throw std::invalid_argument("farthest_point_sample: sample count exceeds population");
  if (start < 0 || static_cast<std::size_t>(start) >= n)
    throw std::invalid_argument("farthest_point_sample: start index out of range");
  for (const auto& p : cloud.coords)
    for (double c : p)
      if (!std::isfinite(c))
        throw std::invalid_argument("farthest_point_sample: non-finite coordinate");

  std::vector<int> picked;
  picked.reserve(m);
  std::vector<double> min_sq(n, std::numeric_limits<double>::infinity());
  int current = start;
  picked.push_back(current);
  for (std::size_t step = 1; step < m; ++step) {
    const Vec3& c = cloud.coords[current];
    int best = -1;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = sq_dist(cloud.coords[i], c);
      if (d < min_sq[i]) min_sq[i] = d;
      if (min_sq[i] > best_d) {
        best_d = min_sq[i];
        best = static_cast<int>(i);
      }
    }
    current = best;
    picked.push_back(current);
  }
  return picked;
}

namespace detail {

inline Neighborhood make_neighborhood(const PointCloud& cloud, int center,
                                      std::vector<int> members, int refilled) {
  Neighborhood nbh;
  nbh.center = center;
  nbh.members = std::move(members);
  nbh.refilled = refilled;
  nbh.rel.reserve(nbh.members.size());
  nbh.dist.reserve(nbh.members.size());
  const Vec3& c = cloud.coords[center];
  for (int m : nbh.members) {
    const Vec3 r = c - cloud.coords[m];
    nbh.rel.push_back(r);
    nbh.dist.push_back(norm(r));
  }
  return nbh;
}

}  // namespace detail

/// Closed-ball grouping: up to k members with distance <= radius, scanned in
/// ascending point-index order. Short neighborhoods are refilled by
/// duplicating the first qualifying member (the center always qualifies).
inline std::vector<Neighborhood> ball_query_group(const PointCloud& cloud,
                                                  const std::vector<int>& centers,
                                                  double radius, std::size_t k) {
  if (radius <= 0.0) throw std::invalid_argument("ball_query_group: radius must be > 0");
  if (k < 1) throw std::invalid_argument("ball_query_group: k must be >= 1");
  const double r_sq = radius * radius;
  std::vector<Neighborhood> out;
  out.reserve(centers.size());
  for (int center : centers) {
    std::vector<int> members;
    members.reserve(k);
    for (std::size_t i = 0; i < cloud.size() && members.size() < k; ++i) {
      if (sq_dist(cloud.coords[i], cloud.coords[center]) <= r_sq)
        members.push_back(static_cast<int>(i));
    }
    const int refilled = static_cast<int>(k - members.size());
    const int first = members.front();  // center qualifies, so never empty
    while (members.size() < k) members.push_back(first);
    out.push_back(detail::make_neighborhood(cloud, center, std::move(members), refilled));
  }
  return out;
}

/// Exact k nearest neighbors by Euclidean distance, ties by lowest index.
inline std::vector<Neighborhood> knn_group(const PointCloud& cloud,
                                           const std::vector<int>& centers,
                                           std::size_t k) {
  if (k < 1) throw std::invalid_argument("knn_group: k must be >= 1");
  if (k > cloud.size()) throw std::invalid_argument("knn_group: k exceeds point count");
  std::vector<std::pair<double, int>> order(cloud.size());
  std::vector<Neighborhood> out;
  out.reserve(centers.size());
  for (int center : centers) {
    for (std::size_t i = 0; i < cloud.size(); ++i)
      order[i] = {sq_dist(cloud.coords[i], cloud.coords[center]), static_cast<int>(i)};
    std::partial_sort(order.begin(), order.begin() + k, order.end());
    std::vector<int> members(k);
    for (std::size_t j = 0; j < k; ++j) members[j] = order[j].second;
    out.push_back(detail::make_neighborhood(cloud, center, std::move(members), 0));
  }
  return out;
}

/// Center-minus-member offsets, recomputed from the cloud.
inline std::vector<Vec3> relative_coords(const Neighborhood& nbh, const PointCloud& cloud) {
  std::vector<Vec3> rel;
  rel.reserve(nbh.members.size());
  const Vec3& c = cloud.coords[nbh.center];
  for (int m : nbh.members) rel.push_back(c - cloud.coords[m]);
  return rel;
}

}  // namespace pdsa
