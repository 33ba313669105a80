#include <catch2/catch_amalgamated.hpp>
#include <chrono>
#include <cstdio>
#include <numeric>

#include "anchorcorr/network.hpp"

using namespace anchorcorr;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.backbone.stem_width = 8;
  c.backbone.mid_width = 8;
  c.backbone.fine_dim = 8;
  c.backbone.coarse_dim = 16;
  c.layers = 2;
  c.heads = 2;
  c.pe.dim = 8;
  return c;
}

Tensor random_image(int h, int w, Rng& rng) {
  Tensor img = Tensor::zeros({3, h, w});
  for (auto& v : img.values()) v = rng.next_double();
  return img;
}

AnchorSet random_anchors(int k, Rng& rng) {
  AnchorSet s;
  for (int i = 0; i < k; ++i) {
    s.points_a.push_back({rng.next_double(), rng.next_double()});
    s.points_b.push_back({rng.next_double(), rng.next_double()});
  }
  return s;
}

// zero every weight that feeds an update so all residual layers become
// identities
void zero_update_weights(ModelParams& p) {
  auto zero = [](Tensor& t) { std::fill(t.values().begin(), t.values().end(), 0.0); };
  for (auto& l : p.inter) {
    zero(l.corr.w2);
    zero(l.corr.b2);
  }
  auto zero_attn = [&](AttentionParams& a) {
    for (auto& wv : a.wv) zero(wv);
    zero(a.ffn.w2);
    zero(a.ffn.b2);
  };
  for (auto& l : p.intra) zero_attn(l);
  zero_attn(p.broadcast);
}

}  // namespace

TEST_CASE("backbone produces 1/8 and 1/2 resolution maps", "[network]") {
  ModelConfig cfg = small_config();
  ModelParams params = ModelParams::init(cfg, 1);
  Rng rng(2);
  Tensor img = random_image(64, 64, rng);
  auto [coarse, fine] = encode_backbone(img, params);
  CHECK(coarse.shape() == std::vector<int>({16, 8, 8}));
  CHECK(fine.shape() == std::vector<int>({8, 32, 32}));
}

TEST_CASE("low resolution variant moves to 1/16 and 1/4", "[network]") {
  ModelConfig cfg = small_config();
  cfg.backbone.low_res = true;
  ModelParams params = ModelParams::init(cfg, 1);
  Rng rng(3);
  Tensor img = random_image(64, 64, rng);
  auto [coarse, fine] = encode_backbone(img, params);
  CHECK(coarse.shape() == std::vector<int>({16, 4, 4}));
  CHECK(fine.shape() == std::vector<int>({8, 16, 16}));
}

TEST_CASE("backbone rejects indivisible dimensions", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 1);
  Tensor img = Tensor::zeros({3, 60, 64});
  CHECK_THROWS_AS(encode_backbone(img, params), ShapeError);
}

TEST_CASE("zero image with zero biases encodes to zero features", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 4);  // biases start at zero
  Tensor img = Tensor::zeros({3, 64, 64});
  auto [coarse, fine] = encode_backbone(img, params);
  for (double v : coarse.values()) REQUIRE(v == 0.0);
  for (double v : fine.values()) REQUIRE(v == 0.0);
}

TEST_CASE("identical images produce identical pyramids", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 5);
  Rng rng(6);
  Tensor img = random_image(64, 64, rng);
  AnchorSet anchors = random_anchors(6, rng);
  auto [pa, pb] = forward(img, img, anchors, params);
  CHECK(pa.coarse.values() == pb.coarse.values());
  CHECK(pa.fine.values() == pb.fine.values());
}

TEST_CASE("propagation with zero update weights is the identity", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 7);
  zero_update_weights(params);
  Rng rng(8);
  Tensor img_a = random_image(64, 64, rng);
  Tensor img_b = random_image(64, 64, rng);
  AnchorSet anchors = random_anchors(5, rng);
  auto [ca, fa] = encode_backbone(img_a, params);
  auto [cb, fb] = encode_backbone(img_b, params);
  auto [ua, ub] = propagate(ca, cb, anchors, params);
  CHECK(ua.values() == ca.values());
  CHECK(ub.values() == cb.values());
}

TEST_CASE("propagation preserves map shape for any anchor count", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 9);
  Rng rng(10);
  Tensor img_a = random_image(64, 64, rng);
  Tensor img_b = random_image(64, 64, rng);
  auto [ca, fa] = encode_backbone(img_a, params);
  auto [cb, fb] = encode_backbone(img_b, params);
  for (int k : {1, 3, 17}) {
    AnchorSet anchors = random_anchors(k, rng);
    auto [ua, ub] = propagate(ca, cb, anchors, params);
    REQUIRE(ua.shape() == ca.shape());
    REQUIRE(ub.shape() == cb.shape());
  }
  AnchorSet empty;
  CHECK_THROWS_AS(propagate(ca, cb, empty, params), EmptyAnchorError);
}

TEST_CASE("permuting anchor order leaves the updated maps unchanged", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 11);
  Rng rng(12);
  Tensor img_a = random_image(64, 64, rng);
  Tensor img_b = random_image(64, 64, rng);
  AnchorSet anchors = random_anchors(9, rng);
  auto [ca, fa] = encode_backbone(img_a, params);
  auto [cb, fb] = encode_backbone(img_b, params);
  auto [ua, ub] = propagate(ca, cb, anchors, params);

  AnchorSet shuffled;
  std::vector<int> perm(anchors.count());
  std::iota(perm.begin(), perm.end(), 0);
  for (int i = 0; i < anchors.count(); ++i)
    std::swap(perm[i], perm[i + rng.next_int(anchors.count() - i)]);
  for (int i : perm) {
    shuffled.points_a.push_back(anchors.points_a[i]);
    shuffled.points_b.push_back(anchors.points_b[i]);
  }
  auto [sa, sb] = propagate(ca, cb, shuffled, params);
  for (std::size_t i = 0; i < ua.values().size(); ++i) {
    REQUIRE(std::abs(sa.values()[i] - ua.values()[i]) < 1e-10);
    REQUIRE(std::abs(sb.values()[i] - ub.values()[i]) < 1e-10);
  }
}

TEST_CASE("refinement with zero weights outputs zero (not residual)", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 13);
  std::fill(params.refine_w.values().begin(), params.refine_w.values().end(), 0.0);
  Rng rng(14);
  Tensor img = random_image(64, 64, rng);
  auto [coarse, fine] = encode_backbone(img, params);
  Tensor out = refine(coarse, fine, params);
  REQUIRE(out.shape() == fine.shape());
  for (double v : out.values()) REQUIRE(v == 0.0);
}

TEST_CASE("refinement routes gradient to both coarse and fine inputs", "[network]") {
  ModelConfig cfg = small_config();
  ModelParams params = ModelParams::init(cfg, 15);
  Rng rng(16);
  Tensor coarse = Tensor::zeros({cfg.backbone.coarse_dim, 4, 4}, true);
  Tensor fine = Tensor::zeros({cfg.backbone.fine_dim, 16, 16}, true);
  for (auto& v : coarse.values()) v = rng.uniform(-1.0, 1.0);
  for (auto& v : fine.values()) v = rng.uniform(-1.0, 1.0);

  Tensor w = Tensor::zeros({cfg.backbone.fine_dim, 16, 16});
  for (auto& v : w.values()) v = rng.uniform(-1.0, 1.0);
  Tensor readout = sum(mul(refine(coarse, fine, params), w));
  readout.backward();

  auto nonzero = [](const std::vector<double>& g) {
    for (double v : g)
      if (v != 0.0) return true;
    return false;
  };
  CHECK(nonzero(coarse.grad()));
  CHECK(nonzero(fine.grad()));
}

TEST_CASE("forward is deterministic and fast on the toy budget", "[network]") {
  ModelConfig cfg;
  cfg.backbone.coarse_dim = 32;
  cfg.backbone.fine_dim = 16;
  cfg.heads = 4;
  cfg.layers = 4;
  ModelParams params = ModelParams::init(cfg, 17);
  Rng rng(18);
  Tensor img_a = random_image(64, 64, rng);
  Tensor img_b = random_image(64, 64, rng);
  AnchorSet anchors = random_anchors(8, rng);

  const auto t0 = std::chrono::steady_clock::now();
  auto [pa1, pb1] = forward(img_a, img_b, anchors, params);
  const auto t1 = std::chrono::steady_clock::now();
  auto [pa2, pb2] = forward(img_a, img_b, anchors, params);

  CHECK(pa1.coarse_updated.values() == pa2.coarse_updated.values());
  CHECK(pa1.fine_updated.values() == pa2.fine_updated.values());
  CHECK(pb1.fine_updated.values() == pb2.fine_updated.values());
  const double sec = std::chrono::duration<double>(t1 - t0).count();
  CHECK(sec < 1.0);
}

TEST_CASE("checkpoints round-trip bit-exactly", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 19);
  Rng rng(20);
  Tensor img_a = random_image(64, 64, rng);
  Tensor img_b = random_image(64, 64, rng);
  AnchorSet anchors = random_anchors(4, rng);
  auto [pa, pb] = forward(img_a, img_b, anchors, params);

  const std::string path = "test_ckpt_roundtrip.bin";
  save_checkpoint(params, path);
  ModelParams loaded = load_checkpoint(path);

  auto orig = params.named_tensors();
  auto back = loaded.named_tensors();
  REQUIRE(orig.size() == back.size());
  for (std::size_t i = 0; i < orig.size(); ++i) {
    REQUIRE(orig[i].first == back[i].first);
    REQUIRE(orig[i].second.values() == back[i].second.values());
  }

  auto [la, lb] = forward(img_a, img_b, anchors, loaded);
  CHECK(la.fine_updated.values() == pa.fine_updated.values());
  CHECK(lb.fine_updated.values() == pb.fine_updated.values());
  std::remove(path.c_str());
}

TEST_CASE("checkpoint loader distinguishes its failure modes", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 21);
  const std::string path = "test_ckpt_errors.bin";
  save_checkpoint(params, path);

  // corrupt magic
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXXXXXX", 8);
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointMagicError);

  // bad version
  save_checkpoint(params, path);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    const char v[4] = {99, 0, 0, 0};
    f.write(v, 4);
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointVersionError);

  // truncation
  save_checkpoint(params, path);
  {
    std::ifstream in(path, std::ios::binary);
    std::string all((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(all.data(), static_cast<std::streamsize>(all.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint(path), CheckpointTruncatedError);
  std::remove(path.c_str());
}

TEST_CASE("propagation cost grows with grid size and anchor count", "[network]") {
  ModelParams params = ModelParams::init(small_config(), 22);
  Rng rng(23);

  auto measure = [&](int img, int k) {
    Tensor a = random_image(img, img, rng);
    Tensor b = random_image(img, img, rng);
    AnchorSet anchors = random_anchors(k, rng);
    auto [ca, fa] = encode_backbone(a, params);
    auto [cb, fb] = encode_backbone(b, params);
    macs::reset();
    propagate(ca, cb, anchors, params);
    return macs::total();
  };

  const auto small_grid = measure(64, 8);
  const auto big_grid = measure(128, 8);
  CHECK(big_grid > 2 * small_grid);  // ~4x cells

  const auto few = measure(64, 4);
  const auto many = measure(64, 32);
  CHECK(many > few);
}
