#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pdsa {

using Vec3 = std::array<double, 3>;

inline Vec3 operator-(const Vec3& a, const Vec3& b) {
  return {a[0] - b[0], a[1] - b[1], a[2] - b[2]};
}
inline Vec3 operator+(const Vec3& a, const Vec3& b) {
  return {a[0] + b[0], a[1] + b[1], a[2] + b[2]};
}
inline double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline double sq_dist(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// A point set with optional per-point feature rows and class labels.
/// Coordinates are kept in double regardless of the training scalar type so
/// grouping decisions never depend on the compute precision.
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<double> features;  // row-major, size() == coords.size() * feature_dim
  std::size_t feature_dim = 0;
  std::vector<int> labels;  // empty or one per point

  std::size_t size() const { return coords.size(); }
  bool has_features() const { return feature_dim > 0; }

  void validate() const {
    if (coords.empty()) throw std::invalid_argument("point cloud is empty");
    for (const auto& p : coords)
      for (double c : p)
        if (!std::isfinite(c))
          throw std::invalid_argument("point cloud has non-finite coordinate");
    if (feature_dim > 0 && features.size() != coords.size() * feature_dim)
      throw std::invalid_argument("feature rows do not match point count");
    if (!labels.empty() && labels.size() != coords.size())
      throw std::invalid_argument("label count does not match point count");
  }
};

/// One grouping result: a center point plus its k members.
/// rel[j] = coords[center] - coords[members[j]] and dist[j] = |rel[j]|.
/// `refilled` counts duplicated slots produced by ball-query refill.
struct Neighborhood {
  int center = 0;
  std::vector<int> members;
  std::vector<Vec3> rel;
  std::vector<double> dist;
  int refilled = 0;

  std::size_t k() const { return members.size(); }
};

}  // namespace pdsa
