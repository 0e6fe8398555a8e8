#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "pdsa/shapes.hpp"

namespace pdsa {

/// Synthetic four-class shape classification data. Object seeds are disjoint
/// between splits: train uses per-class seeds [0, train_per_class), test uses
/// seeds starting at max(200, train_per_class) so shrinking the train split
/// never leaks test objects.
struct DatasetConfig {
  int n_points = 1024;
  int train_per_class = 200;
  int test_per_class = 50;
  double noise_sigma = 0.02;
  double outlier_fraction = 0.0;
  double outlier_spread = 1.0;
};

struct LabeledCloud {
  PointCloud cloud;
  int label = 0;
};

inline std::vector<LabeledCloud> make_split(const DatasetConfig& cfg, bool test) {
  const int per_class = test ? cfg.test_per_class : cfg.train_per_class;
  const std::uint64_t seed0 =
      test ? static_cast<std::uint64_t>(std::max(200, cfg.train_per_class)) : 0u;
  std::vector<LabeledCloud> out;
  out.reserve(static_cast<std::size_t>(per_class) * kNumShapeKinds);
  for (int k = 0; k < kNumShapeKinds; ++k) {
    for (int i = 0; i < per_class; ++i) {
      ShapeSpec spec;
      spec.kind = static_cast<ShapeKind>(k);
      spec.n_points = cfg.n_points;
      spec.noise_sigma = cfg.noise_sigma;
      spec.seed = seed0 + static_cast<std::uint64_t>(i);
      PointCloud cloud = generate_shape(spec);
      if (cfg.outlier_fraction > 0.0) {
        const std::uint64_t oseed = 0x6f75746cu ^ (spec.seed * 4u + static_cast<std::uint64_t>(k));
        cloud = inject_outliers(cloud, cfg.outlier_fraction, cfg.outlier_spread, oseed).cloud;
      }
      out.push_back({std::move(cloud), k});
    }
  }
  return out;
}

inline std::vector<std::string> class_names() {
  std::vector<std::string> names;
  names.reserve(kNumShapeKinds);
  for (int k = 0; k < kNumShapeKinds; ++k) names.emplace_back(shape_kind_name(static_cast<ShapeKind>(k)));
  return names;
}

}  // namespace pdsa
