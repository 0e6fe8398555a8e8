#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "checks.hpp"
#include "pdsa/cdip.hpp"

using namespace pdsa;

TEST_CASE("neighbor correction matches the brute-force reference", "[cdip][oracle]") {
  auto r = checks::cdip_oracle(67, 120);
  INFO(r.detail << " (worst " << r.worst << ")");
  CHECK(r.ok);
  CHECK(r.instances >= 100);
}

namespace {

struct CdipFixture {
  ParamStore<double> store;
  CdipIds ids;
  std::int64_t m = 5, k = 4, dn = 6, dm = 7, h = 8, c = 3;

  CdipFixture() {
    Rng rng(71);
    ids = add_cdip_params(store, "cd", dn, dm, h, c, rng);
    checks::detail::randomize_store(store, rng);
  }
};

}  // namespace

TEST_CASE("member weights sum to one per neighborhood and channel", "[cdip]") {
  CdipFixture fx;
  Rng rng(73);
  Tape<double> tape;
  Var dn = tape.input(checks::detail::random_tensor(rng, fx.m, fx.dn));
  Var dm = tape.input(checks::detail::random_tensor(rng, fx.m * fx.k, fx.dm));
  auto out = cdip_correction(tape, fx.store, fx.ids, dn, dm, fx.k);
  const auto& w = tape.value(out.w_re);
  REQUIRE(w.shape == std::vector<std::int64_t>{fx.m * fx.k, fx.c});
  for (std::int64_t g = 0; g < fx.m; ++g) {
    for (std::int64_t ch = 0; ch < fx.c; ++ch) {
      double s = 0.0;
      for (std::int64_t j = 0; j < fx.k; ++j) s += w.at(g * fx.k + j, ch);
      REQUIRE(s == Catch::Approx(1.0).epsilon(1e-12));
    }
  }
}

TEST_CASE("corrected features are base plus weighted codes", "[cdip]") {
  CdipFixture fx;
  Rng rng(79);
  Tape<double> tape;
  Var dn = tape.input(checks::detail::random_tensor(rng, fx.m, fx.dn));
  Var dm = tape.input(checks::detail::random_tensor(rng, fx.m * fx.k, fx.dm));
  Var base = tape.input(checks::detail::random_tensor(rng, fx.m * fx.k, fx.c));
  auto out = cdip_correction(tape, fx.store, fx.ids, dn, dm, fx.k);
  Var fn = corrected_neighbor_features(tape, base, out);
  const auto& b = tape.value(base);
  const auto& w = tape.value(out.w_re);
  const auto& v = tape.value(out.v_st);
  const auto& f = tape.value(fn);
  for (std::size_t i = 0; i < f.data.size(); ++i)
    REQUIRE(f.data[i] == Catch::Approx(b.data[i] + w.data[i] * v.data[i]).margin(1e-15));
}

TEST_CASE("a single-member neighborhood gets weight exactly one", "[cdip]") {
  CdipFixture fx;
  Rng rng(83);
  Tape<double> tape;
  Var dn = tape.input(checks::detail::random_tensor(rng, fx.m, fx.dn));
  Var dm = tape.input(checks::detail::random_tensor(rng, fx.m, fx.dm));
  auto out = cdip_correction(tape, fx.store, fx.ids, dn, dm, 1);
  for (double x : tape.value(out.w_re).data) REQUIRE(x == 1.0);
}

TEST_CASE("row spread diagnostics match a direct computation", "[cdip]") {
  Tensor<double> rows({4, 2});
  rows.data = {0, 0, 2, 0, 0, 2, 2, 2};  // unit square corners scaled by 2
  auto s = neighbor_row_variance(rows);
  // centroid (1,1); every corner at squared distance 2
  REQUIRE(s.mean_var == Catch::Approx(2.0));
  REQUIRE(s.max_pair_dist == Catch::Approx(std::sqrt(8.0)));

  Tensor<double> same({3, 3});
  same.data.assign(9, 0.4);
  auto z = neighbor_row_variance(same);
  // 0.4 is not representable, so the centroid reconstruction leaves ~1e-33
  REQUIRE(z.mean_var == Catch::Approx(0.0).margin(1e-30));
  REQUIRE(z.max_pair_dist == 0.0);
}

TEST_CASE("identical member descriptors give uniform weights", "[cdip]") {
  CdipFixture fx;
  Rng rng(89);
  Tape<double> tape;
  Var dn = tape.input(checks::detail::random_tensor(rng, 1, fx.dn));
  Tensor<double> dup({fx.k, fx.dm});
  Tensor<double> one_row = checks::detail::random_tensor(rng, 1, fx.dm);
  for (std::int64_t j = 0; j < fx.k; ++j)
    for (std::int64_t ch = 0; ch < fx.dm; ++ch) dup.at(j, ch) = one_row.at(0, ch);
  auto out = cdip_correction(tape, fx.store, fx.ids, dn, tape.input(dup), fx.k);
  for (double x : tape.value(out.w_re).data)
    REQUIRE(x == Catch::Approx(1.0 / static_cast<double>(fx.k)).epsilon(1e-12));
}
