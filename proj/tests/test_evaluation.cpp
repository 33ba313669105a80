#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "anchorcorr/evaluation.hpp"

using namespace anchorcorr;

namespace {

GroundTruthField identity_field(int n) {
  GroundTruthField gt;
  gt.height = gt.width = n;
  gt.flow.resize(static_cast<std::size_t>(n) * n);
  gt.valid.assign(static_cast<std::size_t>(n) * n, 1);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      gt.flow[static_cast<std::size_t>(r) * n + c] = {pixel_to_norm(c, n), pixel_to_norm(r, n)};
  return gt;
}

MatchResult match_at(int r, int c, int n, Vec2 fine) {
  MatchResult m;
  m.query = {pixel_to_norm(c, n), pixel_to_norm(r, n)};
  m.fine_match = fine;
  return m;
}

}  // namespace

TEST_CASE("exact matches score one at every threshold", "[evaluation]") {
  const int n = 33;
  GroundTruthField gt = identity_field(n);
  std::vector<MatchResult> matches;
  for (int r = 0; r < n; r += 4)
    for (int c = 0; c < n; c += 4)
      matches.push_back(match_at(r, c, n, {pixel_to_norm(c, n), pixel_to_norm(r, n)}));
  MetricCurve curve = pck(matches, gt, {1, 2, 5});
  for (double v : curve.values) REQUIRE(v == 1.0);
  CHECK(curve.count == static_cast<long long>(matches.size()));
}

TEST_CASE("a three pixel error straddles thresholds one and five", "[evaluation]") {
  const int n = 33;
  GroundTruthField gt = identity_field(n);
  // fine match displaced by exactly 3 px horizontally
  std::vector<MatchResult> matches = {
      match_at(16, 10, n, {pixel_to_norm(13, n), pixel_to_norm(16, n)})};
  MetricCurve curve = pck(matches, gt, {1, 5});
  CHECK(curve.values[0] == 0.0);
  CHECK(curve.values[1] == 1.0);
}

TEST_CASE("pck equals an independent recount on random matches", "[evaluation]") {
  const int n = 65;
  GroundTruthField gt = identity_field(n);
  Rng rng(90);
  std::vector<MatchResult> matches;
  for (int i = 0; i < 300; ++i) {
    const int r = rng.next_int(n), c = rng.next_int(n);
    Vec2 fine{pixel_to_norm(c, n) + rng.uniform(-0.1, 0.1),
              pixel_to_norm(r, n) + rng.uniform(-0.1, 0.1)};
    matches.push_back(match_at(r, c, n, fine));
  }
  const std::vector<double> thresholds = {1, 2, 3, 5, 10};
  MetricCurve curve = pck(matches, gt, thresholds);

  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    int correct = 0;
    for (const auto& m : matches) {
      const double du = (m.fine_match.u - m.query.u) * (n - 1);
      const double dv = (m.fine_match.v - m.query.v) * (n - 1);
      if (std::sqrt(du * du + dv * dv) <= thresholds[t]) ++correct;
    }
    REQUIRE(curve.values[t] ==
            Catch::Approx(static_cast<double>(correct) / matches.size()).margin(1e-12));
  }
}

TEST_CASE("pck rejects empty input and invalid queries", "[evaluation]") {
  GroundTruthField gt = identity_field(17);
  CHECK_THROWS_AS(pck({}, gt, {1, 5}), std::invalid_argument);
  gt.valid[0] = 0;
  std::vector<MatchResult> matches = {match_at(0, 0, 17, {0, 0})};
  CHECK_THROWS_AS(pck(matches, gt, {1, 5}), std::invalid_argument);
}

TEST_CASE("pck is invariant to permuting the match list", "[evaluation]") {
  const int n = 33;
  GroundTruthField gt = identity_field(n);
  Rng rng(91);
  std::vector<MatchResult> matches;
  for (int i = 0; i < 64; ++i) {
    const int r = rng.next_int(n), c = rng.next_int(n);
    matches.push_back(match_at(r, c, n,
                               {pixel_to_norm(c, n) + rng.uniform(-0.05, 0.05),
                                pixel_to_norm(r, n) + rng.uniform(-0.05, 0.05)}));
  }
  MetricCurve base = pck(matches, gt, {1, 3, 5});
  std::vector<MatchResult> shuffled = matches;
  for (int i = 0; i < 64; ++i)
    std::swap(shuffled[i], shuffled[i + rng.next_int(64 - i)]);
  MetricCurve perm = pck(shuffled, gt, {1, 3, 5});
  CHECK(base.values == perm.values);
}

TEST_CASE("mma of identical curves is that curve", "[evaluation]") {
  MetricCurve c;
  c.thresholds = {1, 5};
  c.values = {0.25, 0.75};
  c.count = 10;
  MetricCurve out = mma({c, c, c});
  CHECK(out.values[0] == Catch::Approx(0.25));
  CHECK(out.values[1] == Catch::Approx(0.75));
  CHECK(out.count == 30);
}

TEST_CASE("mma averages pairs equally", "[evaluation]") {
  MetricCurve zero, one;
  zero.thresholds = one.thresholds = {5};
  zero.values = {0.0};
  one.values = {1.0};
  zero.count = 100;  // weight must not matter
  one.count = 2;
  MetricCurve out = mma({zero, one});
  CHECK(out.values[0] == Catch::Approx(0.5));
  CHECK_THROWS_AS(mma({}), std::invalid_argument);
}

TEST_CASE("metric curves enforce monotonicity", "[evaluation]") {
  MetricCurve bad;
  bad.thresholds = {1, 2};
  bad.values = {0.8, 0.5};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
  MetricCurve good;
  good.thresholds = {1, 2};
  good.values = {0.5, 0.8};
  CHECK_NOTHROW(good.validate());
}

TEST_CASE("ablation variants parse and configure models", "[evaluation]") {
  CHECK(AblationVariant::parse("full").kind == AblationVariant::Kind::Full);
  CHECK(AblationVariant::parse("no_graph").needs_own_training());
  CHECK_FALSE(AblationVariant::parse("fewer_anchors:16").needs_own_training());

  auto fewer = AblationVariant::parse("fewer_anchors:16");
  CHECK(fewer.anchor_count == 16);
  EvalSettings settings;
  settings.anchors = 32;
  CHECK(apply_variant(settings, fewer).anchors == 16);

  auto noisy = AblationVariant::parse("noisy_anchors:0.6:50");
  CHECK(noisy.noise_fraction == Catch::Approx(0.6));
  CHECK(noisy.noise_sigma_px == Catch::Approx(50.0));
  auto s2 = apply_variant(settings, noisy);
  CHECK(s2.anchor_noise_fraction == Catch::Approx(0.6));

  ModelConfig mc;
  CHECK_FALSE(apply_variant(mc, AblationVariant::parse("no_graph")).use_graph);
  CHECK_FALSE(apply_variant(mc, AblationVariant::parse("no_intra")).use_intra);
  auto np = apply_variant(mc, AblationVariant::parse("no_point"));
  CHECK_FALSE(np.use_inter);
  CHECK_FALSE(np.use_intra);
  CHECK(apply_variant(mc, AblationVariant::parse("low_res")).backbone.low_res);

  CHECK_THROWS_AS(AblationVariant::parse("bogus"), std::invalid_argument);
  CHECK_THROWS_AS(AblationVariant::parse("fewer_anchors"), std::invalid_argument);

  CHECK(AblationVariant::parse("noisy_anchors:0.6:50").label() == "noisy_anchors:0.6:50");
}

TEST_CASE("small end-to-end evaluation produces a sane curve", "[evaluation][slow]") {
  ModelConfig mc;
  mc.backbone.stem_width = 4;
  mc.backbone.mid_width = 4;
  mc.backbone.fine_dim = 4;
  mc.backbone.coarse_dim = 8;
  mc.layers = 1;
  mc.heads = 2;
  mc.pe.dim = 4;
  ModelParams params = ModelParams::init(mc, 3);

  EvalSetSpec spec;
  spec.pairs = 2;
  spec.image_size = 64;
  spec.warp_magnitude = 0.05;
  EvalSettings settings;
  settings.anchors = 8;
  settings.query_grid = 8;

  MetricCurve curve = evaluate_model(params, spec, settings);
  curve.validate();
  CHECK(curve.count > 0);
  // an untrained model should still be valid, if weak
  for (double v : curve.values) {
    REQUIRE(v >= 0.0);
    REQUIRE(v <= 1.0);
  }
}
