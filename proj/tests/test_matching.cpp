#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "anchorcorr/matching.hpp"

using namespace anchorcorr;

namespace {

Tensor random_map(std::vector<int> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

FeaturePyramid random_pyramid(int image_size, int dc, int df, Rng& rng) {
  FeaturePyramid p;
  p.image_h = p.image_w = image_size;
  const int hc = image_size / 8, hf = image_size / 2;
  p.coarse = random_map({dc, hc, hc}, rng);
  p.fine = random_map({df, hf, hf}, rng);
  p.coarse_updated = random_map({dc, hc, hc}, rng);
  p.fine_updated = random_map({df, hf, hf}, rng);
  return p;
}

}  // namespace

TEST_CASE("uniform features give the grid centroid", "[matching]") {
  Tensor query = Tensor::full({1, 4}, 0.7);
  Tensor map = Tensor::full({4, 6, 9}, 0.3);
  ExpectationMatch m = expectation_match(query, map);
  CHECK(m.point.values()[0] == Catch::Approx(0.5).margin(1e-12));
  CHECK(m.point.values()[1] == Catch::Approx(0.5).margin(1e-12));
  for (double p : m.distribution.values())
    REQUIRE(p == Catch::Approx(1.0 / 54).margin(1e-13));
}

TEST_CASE("hand softmax-expectation oracle on a 1D slice", "[matching]") {
  // logits (0, ln 3) at coordinates 0 and 1 -> probabilities (1/4, 3/4),
  // expectation 0.75
  Tensor query = Tensor::from_values({1, 1}, {1.0});
  Tensor cells = Tensor::from_values({2, 1}, {0.0, std::log(3.0)});
  ExpectationMatch m = expectation_match(query, cells, {{0.0, 0.0}, {1.0, 0.0}});
  CHECK(m.point.values()[0] == Catch::Approx(0.75).margin(1e-12));
  CHECK(m.distribution.values()[0] == Catch::Approx(0.25).margin(1e-12));
}

TEST_CASE("a dominant logit saturates the expectation onto its cell", "[matching]") {
  Rng rng(50);
  Tensor map = random_map({3, 5, 7}, rng);
  // drive one cell's features to dominate every dot product by >= 40
  const int target_r = 2, target_c = 4;
  for (int c = 0; c < 3; ++c)
    map.values()[(static_cast<std::size_t>(c) * 5 + target_r) * 7 + target_c] = 100.0;
  Tensor query = Tensor::from_values({1, 3}, {1.0, 1.0, 1.0});
  ExpectationMatch m = expectation_match(query, map);
  CHECK(m.point.values()[0] == Catch::Approx(pixel_to_norm(target_c, 7)).margin(1e-10));
  CHECK(m.point.values()[1] == Catch::Approx(pixel_to_norm(target_r, 5)).margin(1e-10));
}

TEST_CASE("expectation agrees with a brute-force oracle", "[matching]") {
  for (int seed = 0; seed < 100; ++seed) {
    Rng rng(900 + seed);
    const int d = 2 + rng.next_int(6);
    const int h = 2 + rng.next_int(7), w = 2 + rng.next_int(7);
    Tensor map = random_map({d, h, w}, rng, -2.0, 2.0);
    Tensor query = random_map({1, d}, rng, -2.0, 2.0);

    ExpectationMatch m = expectation_match(query, map);

    // independent re-evaluation with plain loops
    std::vector<double> logits(static_cast<std::size_t>(h) * w, 0.0);
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j)
        for (int c = 0; c < d; ++c)
          logits[static_cast<std::size_t>(i) * w + j] +=
              query.values()[c] * map.at3(c, i, j);
    double mx = logits[0];
    for (double l : logits) mx = std::max(mx, l);
    double denom = 0.0;
    for (double l : logits) denom += std::exp(l - mx);
    double eu = 0.0, ev = 0.0;
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) {
        const double p = std::exp(logits[static_cast<std::size_t>(i) * w + j] - mx) / denom;
        eu += p * pixel_to_norm(j, w);
        ev += p * pixel_to_norm(i, h);
      }
    REQUIRE(std::abs(m.point.values()[0] - eu) < 1e-10);
    REQUIRE(std::abs(m.point.values()[1] - ev) < 1e-10);
  }
}

TEST_CASE("expectation point stays in the convex hull of the grid", "[matching]") {
  Rng rng(51);
  for (int trial = 0; trial < 40; ++trial) {
    Tensor map = random_map({4, 3, 4}, rng, -3.0, 3.0);
    Tensor query = random_map({1, 4}, rng, -3.0, 3.0);
    ExpectationMatch m = expectation_match(query, map);
    REQUIRE(m.point.values()[0] >= 0.0);
    REQUIRE(m.point.values()[0] <= 1.0);
    REQUIRE(m.point.values()[1] >= 0.0);
    REQUIRE(m.point.values()[1] <= 1.0);
  }
}

TEST_CASE("adding a constant to all logits does not move the match", "[matching]") {
  Rng rng(52);
  Tensor map = random_map({3, 4, 5}, rng);
  Tensor query = random_map({1, 3}, rng);

  // appending a constant channel (query c, cells 1) shifts every logit by c
  Tensor map_shifted = Tensor::zeros({4, 4, 5});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 20; ++i)
      map_shifted.values()[c * 20 + i] = map.values()[c * 20 + i];
  for (int i = 0; i < 20; ++i) map_shifted.values()[3 * 20 + i] = 1.0;
  Tensor query_shifted =
      Tensor::from_values({1, 4}, {query.values()[0], query.values()[1], query.values()[2], 37.5});

  ExpectationMatch m1 = expectation_match(query, map);
  ExpectationMatch m2 = expectation_match(query_shifted, map_shifted);
  CHECK(std::abs(m1.point.values()[0] - m2.point.values()[0]) < 1e-12);
  CHECK(std::abs(m1.point.values()[1] - m2.point.values()[1]) < 1e-12);
}

TEST_CASE("window covers 1/8 of the fine map", "[matching]") {
  Rng rng(53);
  FeaturePyramid a = random_pyramid(64, 8, 4, rng);  // fine 32x32
  FeaturePyramid b = random_pyramid(64, 8, 4, rng);
  QueryMatch qm = coarse_to_fine_query({0.5, 0.5}, a, b, 1.0 / 8.0);
  CHECK(qm.fine.coords.size() == 16);  // 4x4 cells
}

TEST_CASE("fine match stays inside the clamped window", "[matching]") {
  Rng rng(54);
  FeaturePyramid a = random_pyramid(64, 8, 4, rng);
  FeaturePyramid b = random_pyramid(64, 8, 4, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec2 x{rng.next_double(), rng.next_double()};
    QueryMatch qm = coarse_to_fine_query(x, a, b, 1.0 / 8.0);
    double lo_u = 1.0, hi_u = 0.0, lo_v = 1.0, hi_v = 0.0;
    for (const auto& c : qm.fine.coords) {
      lo_u = std::min(lo_u, c.u);
      hi_u = std::max(hi_u, c.u);
      lo_v = std::min(lo_v, c.v);
      hi_v = std::max(hi_v, c.v);
    }
    const Vec2 y = qm.fine_point();
    REQUIRE(y.u >= lo_u - 1e-12);
    REQUIRE(y.u <= hi_u + 1e-12);
    REQUIRE(y.v >= lo_v - 1e-12);
    REQUIRE(y.v <= hi_v + 1e-12);
    // window must contain the (clamped) coarse match
    const Vec2 yc = clamp_unit(qm.coarse_point());
    REQUIRE(yc.u >= lo_u - 0.25);
    REQUIRE(yc.u <= hi_u + 0.25);
  }
}

TEST_CASE("a degenerate window is rejected", "[matching]") {
  Rng rng(55);
  FeaturePyramid a = random_pyramid(16, 8, 4, rng);  // fine 8x8 -> window of 1
  FeaturePyramid b = random_pyramid(16, 8, 4, rng);
  CHECK_THROWS_AS(coarse_to_fine_query({0.5, 0.5}, a, b, 1.0 / 8.0), ResolutionError);
}

TEST_CASE("queries are deterministic and bit-identical across calls", "[matching]") {
  Rng rng(56);
  FeaturePyramid a = random_pyramid(64, 8, 4, rng);
  FeaturePyramid b = random_pyramid(64, 8, 4, rng);
  QueryMatch q1 = coarse_to_fine_query({0.3, 0.8}, a, b, 0.125);
  QueryMatch q2 = coarse_to_fine_query({0.3, 0.8}, a, b, 0.125);
  CHECK(q1.fine.point.values() == q2.fine.point.values());
  CHECK(q1.coarse.point.values() == q2.coarse.point.values());
}

TEST_CASE("cycle distance equals the manual two-query composition", "[matching]") {
  Rng rng(57);
  FeaturePyramid a = random_pyramid(64, 8, 4, rng);
  FeaturePyramid b = random_pyramid(64, 8, 4, rng);
  const Vec2 x{0.4, 0.6};
  const double lib = cycle_distance(x, a, b, 0.125);
  const Vec2 y = coarse_to_fine_query(x, a, b, 0.125).fine_point();
  const Vec2 back = coarse_to_fine_query(clamp_unit(y), b, a, 0.125).fine_point();
  const double manual = norm_dist_px(x, back, a.image_h, a.image_w);
  CHECK(lib == manual);
}

TEST_CASE("cycle distance vanishes for an engineered fixed point", "[matching]") {
  // one coarse cell and its fine neighborhood dominate every query in both
  // directions, so the match is an exact mutual inverse at that cell
  const int img = 64, dc = 4, df = 4;
  Rng rng(58);
  FeaturePyramid a = random_pyramid(img, dc, df, rng);
  FeaturePyramid b = random_pyramid(img, dc, df, rng);
  const int hc = 8, hf = 32;
  const int cr = 3, cc = 5;          // coarse cell
  const int fr = 14, fc = 22;        // fine cell near the same location

  auto spike = [](Tensor& map, int r, int c, double mag) {
    const int h = map.dim(1), w = map.dim(2);
    for (int ch = 0; ch < map.dim(0); ++ch)
      map.values()[(static_cast<std::size_t>(ch) * h + r) * w + c] = mag;
  };
  auto fill = [](Tensor& map, double v) {
    std::fill(map.values().begin(), map.values().end(), v);
  };
  fill(a.coarse_updated, 1.0);
  fill(b.coarse_updated, 1.0);
  fill(a.fine_updated, 1.0);
  fill(b.fine_updated, 1.0);
  spike(a.coarse_updated, cr, cc, 500.0);
  spike(b.coarse_updated, cr, cc, 500.0);
  spike(a.fine_updated, fr, fc, 500.0);
  spike(b.fine_updated, fr, fc, 500.0);

  const Vec2 x{pixel_to_norm(fc, hf), pixel_to_norm(fr, hf)};
  CHECK(cycle_distance(x, a, b, 0.125) == 0.0);
}

TEST_CASE("match_points filters, ranks and truncates", "[matching]") {
  Rng rng(59);
  FeaturePyramid a = random_pyramid(64, 8, 4, rng);
  FeaturePyramid b = random_pyramid(64, 8, 4, rng);
  std::vector<Vec2> queries;
  for (int i = 0; i < 25; ++i) queries.push_back({rng.next_double(), rng.next_double()});

  auto all = match_points(queries, a, b, 0.125, 1e18, 1000);
  REQUIRE(all.size() == queries.size());
  for (std::size_t i = 1; i < all.size(); ++i)
    REQUIRE(all[i - 1].peak_correlation >= all[i].peak_correlation);

  auto top5 = match_points(queries, a, b, 0.125, 1e18, 5);
  REQUIRE(top5.size() == 5);
  for (int i = 0; i < 5; ++i) REQUIRE(top5[i].query_index == all[i].query_index);

  // a zero threshold keeps only exact cycle fixed points
  auto strict = match_points(queries, a, b, 0.125, 0.0, 1000);
  for (const auto& m : strict) REQUIRE(m.cycle_px == 0.0);

  CHECK_THROWS_AS(match_points({}, a, b, 0.125, 5.0, 10), std::invalid_argument);
}

TEST_CASE("expectation match differentiates through both feature inputs", "[matching]") {
  Rng rng(60);
  Tensor map = Tensor::zeros({3, 4, 4}, true);
  Tensor query = Tensor::zeros({1, 3}, true);
  for (auto& v : map.values()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : query.values()) v = rng.uniform(-1.0, 1.0);

  Tensor readout_w = Tensor::from_values({2}, {0.7, -0.4});
  ExpectationMatch m = expectation_match(query, map);
  Tensor loss = sum(mul(m.point, readout_w));
  loss.backward();

  bool map_grad = false, query_grad = false;
  for (double g : map.grad()) map_grad = map_grad || g != 0.0;
  for (double g : query.grad()) query_grad = query_grad || g != 0.0;
  CHECK(map_grad);
  CHECK(query_grad);
}
