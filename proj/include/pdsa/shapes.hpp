#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "pdsa/point_cloud.hpp"
#include "pdsa/rng.hpp"

namespace pdsa {

enum class ShapeKind : int { sphere = 0, cube = 1, plane = 2, cylinder = 3 };
inline constexpr int kNumShapeKinds = 4;

inline const char* shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::sphere: return "sphere";
    case ShapeKind::cube: return "cube";
    case ShapeKind::plane: return "plane";
    case ShapeKind::cylinder: return "cylinder";
  }
  throw std::invalid_argument("shape_kind_name: bad kind");
}

inline ShapeKind shape_kind_from_name(const std::string& s) {
  for (int i = 0; i < kNumShapeKinds; ++i)
    if (s == shape_kind_name(static_cast<ShapeKind>(i))) return static_cast<ShapeKind>(i);
  throw std::invalid_argument("unknown shape kind '" + s + "'");
}

struct ShapeSpec {
  ShapeKind kind = ShapeKind::sphere;
  int n_points = 1024;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;
};

namespace detail {

inline Vec3 sample_sphere(Rng& rng) {
  for (;;) {
    Vec3 g{rng.normal(), rng.normal(), rng.normal()};
    const double n = norm(g);
    if (n > 1e-12) return {0.5 * g[0] / n, 0.5 * g[1] / n, 0.5 * g[2] / n};
  }
}

inline Vec3 sample_cube(Rng& rng) {
  const int face = static_cast<int>(rng.uniform_int(6));
  const double u = rng.uniform(-0.5, 0.5);
  const double v = rng.uniform(-0.5, 0.5);
  const double s = face % 2 == 0 ? -0.5 : 0.5;
  switch (face / 2) {
    case 0: return {s, u, v};
    case 1: return {u, s, v};
    default: return {u, v, s};
  }
}

inline Vec3 sample_plane(Rng& rng) {
  return {rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5), 0.0};
}

inline Vec3 sample_cylinder(Rng& rng) {
  constexpr double r = 0.35, h = 1.0;
  constexpr double side_area = 2.0 * 3.14159265358979323846 * r * h;
  constexpr double cap_area = 2.0 * 3.14159265358979323846 * r * r;
  if (rng.uniform() < side_area / (side_area + cap_area)) {
    const double th = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    return {r * std::cos(th), r * std::sin(th), rng.uniform(-0.5, 0.5)};
  }
  const double th = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double rr = r * std::sqrt(rng.uniform());
  const double z = rng.uniform() < 0.5 ? -0.5 : 0.5;
  return {rr * std::cos(th), rr * std::sin(th), z};
}

}  // namespace detail

/// Uniform surface sample of the requested primitive, centered at the origin
/// by construction, with isotropic Gaussian noise, rescaled so the farthest
/// point sits at distance 0.5 from the center (unit max-extent across the
/// shape). Deterministic in (kind, seed).
inline PointCloud generate_shape(const ShapeSpec& spec) {
  if (spec.n_points < 8) throw std::invalid_argument("generate_shape: n_points must be >= 8");
  if (spec.noise_sigma < 0) throw std::invalid_argument("generate_shape: negative noise_sigma");
  std::uint64_t stream = spec.seed;
  stream += 0x9e3779b97f4a7c15ull * (static_cast<std::uint64_t>(spec.kind) + 1);
  Rng rng(splitmix64(stream));

  PointCloud cloud;
  cloud.coords.reserve(static_cast<std::size_t>(spec.n_points));
  for (int i = 0; i < spec.n_points; ++i) {
    Vec3 p;
    switch (spec.kind) {
      case ShapeKind::sphere: p = detail::sample_sphere(rng); break;
      case ShapeKind::cube: p = detail::sample_cube(rng); break;
      case ShapeKind::plane: p = detail::sample_plane(rng); break;
      case ShapeKind::cylinder: p = detail::sample_cylinder(rng); break;
    }
    if (spec.noise_sigma > 0)
      for (auto& c : p) c += spec.noise_sigma * rng.normal();
    cloud.coords.push_back(p);
  }
  double max_r = 0.0;
  for (const auto& p : cloud.coords) max_r = std::max(max_r, norm(p));
  if (max_r > 0) {
    const double s = 0.5 / max_r;
    for (auto& p : cloud.coords)
      for (auto& c : p) c *= s;
  }
  cloud.labels.assign(cloud.coords.size(), static_cast<int>(spec.kind));
  return cloud;
}

struct OutlierResult {
  PointCloud cloud;
  std::vector<char> mask;  // 1 where the point was replaced
};

/// Replaces ⌊fraction·N⌋ randomly chosen points with draws from the uniform
/// box of half-width `spread` around the cloud centroid; labels are kept.
inline OutlierResult inject_outliers(const PointCloud& cloud, double fraction, double spread,
                                     std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0))
    throw std::invalid_argument("inject_outliers: fraction must be in [0,1)");
  OutlierResult out;
  out.cloud = cloud;
  out.mask.assign(cloud.size(), 0);
  const std::size_t n_out = static_cast<std::size_t>(fraction * static_cast<double>(cloud.size()));
  if (n_out == 0) return out;

  Vec3 centroid{0, 0, 0};
  for (const auto& p : cloud.coords)
    for (int ax = 0; ax < 3; ++ax) centroid[static_cast<std::size_t>(ax)] += p[static_cast<std::size_t>(ax)];
  for (auto& c : centroid) c /= static_cast<double>(cloud.size());

  Rng rng(splitmix64(seed += 0xbf58476d1ce4e5b9ull));
  std::vector<int> order(cloud.size());
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  for (std::size_t i = 0; i < n_out; ++i) {
    const auto idx = static_cast<std::size_t>(order[i]);
    for (int ax = 0; ax < 3; ++ax)
      out.cloud.coords[idx][static_cast<std::size_t>(ax)] =
          centroid[static_cast<std::size_t>(ax)] + rng.uniform(-spread, spread);
    out.mask[idx] = 1;
  }
  return out;
}

/// Training-time augmentation: random rotation about the vertical axis plus
/// small Gaussian jitter.
inline PointCloud augment_cloud(const PointCloud& cloud, Rng& rng, double jitter_sigma = 0.005) {
  PointCloud out = cloud;
  const double th = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double c = std::cos(th), s = std::sin(th);
  for (auto& p : out.coords) {
    const double x = p[0], y = p[1];
    p[0] = c * x - s * y;
    p[1] = s * x + c * y;
    if (jitter_sigma > 0)
      for (auto& v : p) v += jitter_sigma * rng.normal();
  }
  return out;
}

}  // namespace pdsa
