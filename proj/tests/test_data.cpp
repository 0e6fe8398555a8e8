#include <unistd.h>

#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "checks.hpp"
#include "pdsa/dataset.hpp"
#include "pdsa/metrics.hpp"
#include "pdsa/ply_io.hpp"
#include "pdsa/shapes.hpp"

using namespace pdsa;

namespace {

std::string temp_path(const std::string& stem) {
  return std::string("/tmp/pdsa_test_") + stem + "_" + std::to_string(::getpid()) + ".ply";
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::trunc);
  f << body;
}

}  // namespace

TEST_CASE("noiseless shapes sit on their defining surfaces", "[shapes]") {
  auto sphere = generate_shape({ShapeKind::sphere, 64, 0.0, 11});
  for (const auto& p : sphere.coords) REQUIRE(norm(p) == Catch::Approx(0.5).margin(1e-9));

  auto plane = generate_shape({ShapeKind::plane, 64, 0.0, 11});
  for (const auto& p : plane.coords) REQUIRE(p[2] == 0.0);

  auto cube = generate_shape({ShapeKind::cube, 64, 0.0, 11});
  double pre_max = 0.0;
  for (const auto& p : cube.coords) pre_max = std::max(pre_max, norm(p));
  REQUIRE(pre_max == Catch::Approx(0.5).margin(1e-12));  // farthest point pinned to 0.5
  for (const auto& p : cube.coords) {
    // after rescale the face structure survives: one coordinate is extremal
    const double m = std::max({std::abs(p[0]), std::abs(p[1]), std::abs(p[2])});
    REQUIRE(m <= 0.5 + 1e-12);
  }
}

TEST_CASE("every shape is normalized to max radius one half", "[shapes]") {
  for (int k = 0; k < kNumShapeKinds; ++k) {
    auto c = generate_shape({static_cast<ShapeKind>(k), 96, 0.05, 17});
    double mx = 0.0;
    for (const auto& p : c.coords) mx = std::max(mx, norm(p));
    REQUIRE(mx == Catch::Approx(0.5).margin(1e-9));
    REQUIRE(c.labels == std::vector<int>(96, k));
  }
}

TEST_CASE("shape generation is deterministic in kind and seed", "[shapes]") {
  auto a = generate_shape({ShapeKind::cylinder, 64, 0.03, 23});
  auto b = generate_shape({ShapeKind::cylinder, 64, 0.03, 23});
  REQUIRE(a.coords == b.coords);
  auto c = generate_shape({ShapeKind::cylinder, 64, 0.03, 24});
  REQUIRE(a.coords != c.coords);
  // same seed, different kind must give a different stream
  auto d = generate_shape({ShapeKind::sphere, 64, 0.03, 23});
  REQUIRE(a.coords != d.coords);
}

TEST_CASE("shape generator rejects degenerate requests", "[shapes]") {
  REQUIRE_THROWS_WITH(generate_shape({ShapeKind::sphere, 4, 0.0, 1}),
                      Catch::Matchers::ContainsSubstring("n_points"));
  REQUIRE_THROWS_WITH(generate_shape({ShapeKind::sphere, 64, -0.1, 1}),
                      Catch::Matchers::ContainsSubstring("noise_sigma"));
}

TEST_CASE("outlier injection replaces the advertised count inside the box", "[shapes]") {
  auto base = generate_shape({ShapeKind::sphere, 100, 0.0, 31});
  Vec3 centroid{0, 0, 0};
  for (const auto& p : base.coords)
    for (int ax = 0; ax < 3; ++ax) centroid[ax] += p[ax] / 100.0;
  auto res = inject_outliers(base, 0.1, 1.0, 7);
  REQUIRE(res.cloud.size() == base.size());
  REQUIRE(res.cloud.labels == base.labels);
  int flagged = 0, moved = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    if (res.mask[i]) {
      ++flagged;
      for (int ax = 0; ax < 3; ++ax) {
        REQUIRE(res.cloud.coords[i][ax] >= centroid[ax] - 1.0 - 1e-9);
        REQUIRE(res.cloud.coords[i][ax] <= centroid[ax] + 1.0 + 1e-9);
      }
    } else {
      REQUIRE(res.cloud.coords[i] == base.coords[i]);
    }
    if (res.cloud.coords[i] != base.coords[i]) ++moved;
  }
  REQUIRE(flagged == 10);  // floor(0.1 * 100)
  REQUIRE(moved == flagged);

  auto none = inject_outliers(base, 0.0, 1.0, 7);
  REQUIRE(none.cloud.coords == base.coords);
  REQUIRE_THROWS_AS(inject_outliers(base, 1.0, 1.0, 7), std::invalid_argument);
}

TEST_CASE("outlier injection is deterministic in its seed", "[shapes]") {
  auto base = generate_shape({ShapeKind::cube, 80, 0.0, 37});
  auto a = inject_outliers(base, 0.2, 0.8, 5);
  auto b = inject_outliers(base, 0.2, 0.8, 5);
  REQUIRE(a.cloud.coords == b.cloud.coords);
  REQUIRE(a.mask == b.mask);
  auto c = inject_outliers(base, 0.2, 0.8, 6);
  REQUIRE(a.cloud.coords != c.cloud.coords);
}

TEST_CASE("augmentation without jitter is a pure vertical-axis rotation", "[shapes]") {
  auto base = generate_shape({ShapeKind::cylinder, 64, 0.02, 41});
  Rng rng(43);
  auto rot = augment_cloud(base, rng, 0.0);
  REQUIRE(rot.size() == base.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    REQUIRE(norm(rot.coords[i]) == Catch::Approx(norm(base.coords[i])).margin(1e-12));
    REQUIRE(rot.coords[i][2] == base.coords[i][2]);
  }
  // recover (cos, sin) from the point farthest off the z axis, then demand
  // the same rotation maps every point
  std::size_t ref = 0;
  double best = -1.0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double r2 = base.coords[i][0] * base.coords[i][0] + base.coords[i][1] * base.coords[i][1];
    if (r2 > best) {
      best = r2;
      ref = i;
    }
  }
  const double x = base.coords[ref][0], y = base.coords[ref][1];
  const double xr = rot.coords[ref][0], yr = rot.coords[ref][1];
  const double c = (xr * x + yr * y) / best;
  const double s = (yr * x - xr * y) / best;
  REQUIRE(c * c + s * s == Catch::Approx(1.0).margin(1e-9));
  for (std::size_t i = 0; i < base.size(); ++i) {
    REQUIRE(rot.coords[i][0] ==
            Catch::Approx(c * base.coords[i][0] - s * base.coords[i][1]).margin(1e-9));
    REQUIRE(rot.coords[i][1] ==
            Catch::Approx(s * base.coords[i][0] + c * base.coords[i][1]).margin(1e-9));
  }
}

TEST_CASE("dataset splits have disjoint seeds and stable sizes", "[dataset]") {
  DatasetConfig cfg;
  cfg.n_points = 32;
  cfg.train_per_class = 3;
  cfg.test_per_class = 2;
  auto train = make_split(cfg, false);
  auto test = make_split(cfg, true);
  REQUIRE(train.size() == 12);
  REQUIRE(test.size() == 8);
  for (std::size_t i = 0; i < train.size(); ++i)
    REQUIRE(train[i].label == static_cast<int>(i / 3));
  // no train cloud equals any test cloud of the same class
  for (const auto& tr : train)
    for (const auto& te : test)
      if (tr.label == te.label) REQUIRE(tr.cloud.coords != te.cloud.coords);
  // deterministic
  auto again = make_split(cfg, false);
  for (std::size_t i = 0; i < train.size(); ++i)
    REQUIRE(train[i].cloud.coords == again[i].cloud.coords);
}

TEST_CASE("outlier-bearing splits perturb exactly the configured fraction", "[dataset]") {
  DatasetConfig clean;
  clean.n_points = 40;
  clean.train_per_class = 1;
  clean.test_per_class = 1;
  DatasetConfig noisy = clean;
  noisy.outlier_fraction = 0.1;
  noisy.outlier_spread = 1.0;
  auto a = make_split(clean, true);
  auto b = make_split(noisy, true);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    int moved = 0;
    for (std::size_t p = 0; p < a[i].cloud.size(); ++p)
      if (a[i].cloud.coords[p] != b[i].cloud.coords[p]) ++moved;
    REQUIRE(moved == 4);  // floor(0.1 * 40)
  }
}

TEST_CASE("class names follow the label encoding", "[dataset]") {
  auto names = class_names();
  REQUIRE(names == std::vector<std::string>{"sphere", "cube", "plane", "cylinder"});
  REQUIRE(shape_kind_from_name("plane") == ShapeKind::plane);
  REQUIRE_THROWS_WITH(shape_kind_from_name("torus"),
                      Catch::Matchers::ContainsSubstring("torus"));
}

TEST_CASE("metrics match the brute-force reference", "[metrics][oracle]") {
  auto r = checks::metrics_oracle(173, 120);
  INFO(r.detail << " (worst " << r.worst << ")");
  CHECK(r.ok);
  CHECK(r.instances >= 100);
}

TEST_CASE("metrics agree with a worked example", "[metrics]") {
  //            truth: 0 0 0 1 1 2 2 2 2
  std::vector<int> truth{0, 0, 0, 1, 1, 2, 2, 2, 2};
  std::vector<int> pred{0, 0, 1, 1, 1, 2, 2, 0, 3};
  auto r = compute_metrics(pred, truth, 4);
  REQUIRE(r.oa == Catch::Approx(6.0 / 9.0));
  REQUIRE(r.at(0, 0) == 2);
  REQUIRE(r.at(0, 1) == 1);
  REQUIRE(r.at(2, 0) == 1);
  REQUIRE(r.at(2, 3) == 1);
  REQUIRE(r.tp(1) == 2);
  REQUIRE(r.fp(1) == 1);
  REQUIRE(r.fn(1) == 0);
  REQUIRE(r.per_class_iou[0] == Catch::Approx(2.0 / 4.0));
  REQUIRE(r.per_class_iou[1] == Catch::Approx(2.0 / 3.0));
  REQUIRE(r.per_class_iou[2] == Catch::Approx(2.0 / 4.0));
  REQUIRE(r.per_class_iou[3] == 0.0);
  // class 3 appears in pred only: it still enters the iou mean with 0
  REQUIRE(r.miou == Catch::Approx((0.5 + 2.0 / 3.0 + 0.5 + 0.0) / 4.0));
  // macc averages over truth-present classes 0,1,2
  REQUIRE(r.macc == Catch::Approx((2.0 / 3.0 + 1.0 + 0.5) / 3.0));
}

TEST_CASE("metrics validate their inputs", "[metrics]") {
  REQUIRE_THROWS_WITH(compute_metrics({}, {}, 2), Catch::Matchers::ContainsSubstring("empty"));
  REQUIRE_THROWS_WITH(compute_metrics({0, 1}, {0}, 2),
                      Catch::Matchers::ContainsSubstring("mismatch"));
  REQUIRE_THROWS_WITH(compute_metrics({0, 2}, {0, 1}, 2),
                      Catch::Matchers::ContainsSubstring("out of range"));
}

TEST_CASE("metrics CSV pins its header and row shape", "[metrics]") {
  auto r = compute_metrics({0, 1, 1}, {0, 1, 0}, 2);
  auto csv = metrics_csv(r, {"sphere", "cube"});
  REQUIRE(csv.rfind("class,tp,fp,fn,iou\n", 0) == 0);
  REQUIRE(csv.find("sphere,1,0,1,0.500000\n") != std::string::npos);
  REQUIRE(csv.find("cube,1,1,0,0.500000\n") != std::string::npos);
  auto bare = metrics_csv(r);
  REQUIRE(bare.find("0,1,0,1,0.500000\n") != std::string::npos);
}

TEST_CASE("cloud files round-trip coordinates, labels, and heat", "[ply]") {
  auto cloud = generate_shape({ShapeKind::cube, 32, 0.01, 47});
  std::vector<double> heat(32);
  for (int i = 0; i < 32; ++i) heat[i] = i / 31.0;

  const auto path = temp_path("roundtrip");
  write_cloud(path, cloud, &heat);
  auto back = read_cloud(path);
  REQUIRE(back.cloud.size() == 32);
  REQUIRE(back.has_label);
  REQUIRE(back.has_heat);
  REQUIRE(back.cloud.labels == cloud.labels);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int ax = 0; ax < 3; ++ax)
      REQUIRE(back.cloud.coords[i][ax] ==
              Catch::Approx(cloud.coords[i][ax]).epsilon(1e-8).margin(1e-12));
    REQUIRE(back.heat[i] == Catch::Approx(heat[i]).epsilon(1e-8).margin(1e-12));
  }
  std::remove(path.c_str());

  // label-free, heat-free cloud omits both columns
  PointCloud bare;
  bare.coords = cloud.coords;
  const auto path2 = temp_path("bare");
  write_cloud(path2, bare);
  auto b = read_cloud(path2);
  REQUIRE_FALSE(b.has_label);
  REQUIRE_FALSE(b.has_heat);
  REQUIRE(b.cloud.labels.empty());
  std::remove(path2.c_str());
}

TEST_CASE("cloud writer validates its inputs and leaves no temp file", "[ply]") {
  PointCloud c;
  c.coords = {{0, 0, 0}, {1, 1, 1}};
  c.labels = {1};
  REQUIRE_THROWS_WITH(write_cloud("/tmp/pdsa_should_not_exist.ply", c),
                      Catch::Matchers::ContainsSubstring("label count"));
  c.labels = {1, 2};
  std::vector<double> heat{0.5};
  REQUIRE_THROWS_WITH(write_cloud("/tmp/pdsa_should_not_exist.ply", c, &heat),
                      Catch::Matchers::ContainsSubstring("heat count"));
  REQUIRE_FALSE(std::ifstream("/tmp/pdsa_should_not_exist.ply").good());

  const auto ok = temp_path("atomic");
  heat = {0.5, 0.25};
  write_cloud(ok, c, &heat);
  REQUIRE_FALSE(std::ifstream((ok + ".tmp")).good());
  std::remove(ok.c_str());
}

TEST_CASE("cloud reader reports malformed files with line numbers", "[ply]") {
  const auto path = temp_path("bad");

  write_text(path, "png\n");
  REQUIRE_THROWS_WITH(read_cloud(path), Catch::Matchers::ContainsSubstring(":1: not a PLY file"));

  write_text(path, "ply\nformat binary_little_endian 1.0\n");
  REQUIRE_THROWS_WITH(read_cloud(path), Catch::Matchers::ContainsSubstring("unsupported format"));

  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
             "property float z\nproperty float label\nend_header\n0 0 0 1\n");
  REQUIRE_THROWS_WITH(read_cloud(path),
                      Catch::Matchers::ContainsSubstring("'label' must be integer-typed"));

  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
             "property float z\nproperty float intensity\nend_header\n0 0 0 1\n");
  REQUIRE_THROWS_WITH(read_cloud(path),
                      Catch::Matchers::ContainsSubstring("unsupported property 'intensity'"));

  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\n"
             "property float z\nend_header\n0 0 0\n");
  REQUIRE_THROWS_WITH(read_cloud(path),
                      Catch::Matchers::ContainsSubstring("expected 2 vertex rows, found 1"));

  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
             "property float z\nend_header\n0 zero 0\n");
  REQUIRE_THROWS_WITH(read_cloud(path), Catch::Matchers::ContainsSubstring("malformed vertex row"));

  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float z\n"
             "property float y\nend_header\n0 0 0\n");
  REQUIRE_THROWS_WITH(read_cloud(path),
                      Catch::Matchers::ContainsSubstring("must start with x y z"));

  write_text(path,
             "ply\nformat ascii 1.0\nproperty float x\nproperty float y\nproperty float z\n"
             "end_header\n");
  REQUIRE_THROWS_WITH(read_cloud(path),
                      Catch::Matchers::ContainsSubstring("missing 'element vertex'"));

  // heat before label violates the column order
  write_text(path,
             "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\n"
             "property float z\nproperty float heat\nproperty int label\nend_header\n0 0 0 1 2\n");
  REQUIRE_THROWS_WITH(read_cloud(path),
                      Catch::Matchers::ContainsSubstring("unsupported property order"));

  REQUIRE_THROWS_WITH(read_cloud("/tmp/pdsa_no_such_file.ply"),
                      Catch::Matchers::ContainsSubstring("cannot open"));
  std::remove(path.c_str());
}

TEST_CASE("cloud reader accepts comments and tolerant numeric types", "[ply]") {
  const auto path = temp_path("tolerant");
  write_text(path,
             "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\n"
             "property double x\nproperty double y\nproperty double z\n"
             "property uchar label\nproperty double heat\nend_header\n"
             "0.25 -1 2 3 0.125\n1e-3 0 0 0 1\n");
  auto c = read_cloud(path);
  REQUIRE(c.cloud.size() == 2);
  REQUIRE(c.cloud.coords[0][0] == 0.25);
  REQUIRE(c.cloud.coords[1][0] == 1e-3);
  REQUIRE(c.cloud.labels == std::vector<int>{3, 0});
  REQUIRE(c.heat == std::vector<double>{0.125, 1.0});
  std::remove(path.c_str());
}
