#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "anchorcorr/anchors.hpp"
#include "anchorcorr/message_passing.hpp"
#include "anchorcorr/position_encoding.hpp"
#include "anchorcorr/tensor.hpp"

namespace anchorcorr {

// Four-stage convolutional encoder producing coarse (1/8) and fine (1/2)
// feature maps; the low_res variant moves to 1/16 and 1/4.
struct BackboneConfig {
  int stem_width = 16;
  int mid_width = 32;
  int fine_dim = 32;
  int coarse_dim = 64;
  bool low_res = false;

  int fine_stride() const { return low_res ? 4 : 2; }
  int coarse_stride() const { return low_res ? 16 : 8; }
};

struct ModelConfig {
  BackboneConfig backbone;
  int layers = 4;  // alternating inter/intra blocks
  int heads = 4;
  PosEncodingConfig pe;
  int refine_kernel = 1;
  bool double_residual = true;
  // ablation switches: use_graph gates the whole propagation module,
  // use_inter/use_intra gate the anchor-side layers
  bool use_graph = true;
  bool use_inter = true;
  bool use_intra = true;

  int head_dim() const { return backbone.coarse_dim / heads; }

  void validate() const {
    if (layers < 1) throw std::invalid_argument("model: layers must be >= 1");
    if (heads < 1 || backbone.coarse_dim % heads != 0)
      throw std::invalid_argument("model: coarse_dim must be divisible by heads");
    if (refine_kernel < 1 || refine_kernel % 2 == 0)
      throw std::invalid_argument("model: refine kernel must be odd");
    pe.validate();
  }
};

struct BackboneParams {
  Tensor w1, b1, w2, b2, w3, b3, w4, b4;

  static BackboneParams init(const BackboneConfig& cfg, Rng& rng) {
    BackboneParams p;
    auto conv_init = [&rng](int co, int ci, int k) {
      return xavier_uniform(ci * k * k, co * k * k, {co, ci, k, k}, rng);
    };
    p.w1 = conv_init(cfg.stem_width, 3, 3);
    p.b1 = Tensor::zeros({cfg.stem_width}, true);
    p.w2 = conv_init(cfg.fine_dim, cfg.stem_width, 3);
    p.b2 = Tensor::zeros({cfg.fine_dim}, true);
    p.w3 = conv_init(cfg.mid_width, cfg.fine_dim, 3);
    p.b3 = Tensor::zeros({cfg.mid_width}, true);
    p.w4 = conv_init(cfg.coarse_dim, cfg.mid_width, 3);
    p.b4 = Tensor::zeros({cfg.coarse_dim}, true);
    return p;
  }

  void visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w1", w1);
    fn(prefix + ".b1", b1);
    fn(prefix + ".w2", w2);
    fn(prefix + ".b2", b2);
    fn(prefix + ".w3", w3);
    fn(prefix + ".b3", b3);
    fn(prefix + ".w4", w4);
    fn(prefix + ".b4", b4);
  }
};

// Full parameter set. Inter/intra layer weights are shared between the two
// images at each depth, which keeps the update symmetric under swapping the
// image pair.
struct ModelParams {
  ModelConfig config;
  BackboneParams backbone;
  std::vector<InterPointsParams> inter;
  std::vector<AttentionParams> intra;
  AttentionParams broadcast;
  Tensor refine_w, refine_b;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    ModelParams p;
    p.config = cfg;
    p.backbone = BackboneParams::init(cfg.backbone, rng);
    const int d = cfg.backbone.coarse_dim;
    // Without normalization layers the residual stack must start as the
    // identity or the random update branches swamp the content signal, so
    // the output matrix of every residual branch begins at zero and grows
    // into use during training.
    auto zero_out = [](Tensor& t) { std::fill(t.values().begin(), t.values().end(), 0.0); };
    for (int l = 0; l < cfg.layers; ++l) {
      p.inter.push_back(InterPointsParams::init(d, 2 * d, rng));
      zero_out(p.inter.back().corr.w2);
      p.intra.push_back(AttentionParams::init(d, cfg.pe.dim, cfg.head_dim(), cfg.heads, 2 * d, rng));
      p.intra.back().double_residual = cfg.double_residual;
      zero_out(p.intra.back().w_out);
      zero_out(p.intra.back().ffn.w2);
    }
    p.broadcast = AttentionParams::init(d, cfg.pe.dim, cfg.head_dim(), cfg.heads, 2 * d, rng);
    p.broadcast.double_residual = cfg.double_residual;
    zero_out(p.broadcast.w_out);
    zero_out(p.broadcast.ffn.w2);
    const int rk = cfg.refine_kernel;
    const int refine_in = d + cfg.backbone.fine_dim;
    p.refine_w = xavier_uniform(refine_in * rk * rk, cfg.backbone.fine_dim * rk * rk,
                                {cfg.backbone.fine_dim, refine_in, rk, rk}, rng);
    p.refine_b = Tensor::zeros({cfg.backbone.fine_dim}, true);
    return p;
  }

  void visit(const ParamVisitor& fn) {
    backbone.visit("backbone", fn);
    for (std::size_t l = 0; l < inter.size(); ++l)
      inter[l].visit("inter." + std::to_string(l), fn);
    for (std::size_t l = 0; l < intra.size(); ++l)
      intra[l].visit("intra." + std::to_string(l), fn);
    broadcast.visit("broadcast", fn);
    fn("refine.w", refine_w);
    fn("refine.b", refine_b);
  }

  std::vector<std::pair<std::string, Tensor>> named_tensors() {
    std::vector<std::pair<std::string, Tensor>> out;
    visit([&](const std::string& name, Tensor& t) { out.emplace_back(name, t); });
    return out;
  }

  void zero_grad() {
    visit([](const std::string&, Tensor& t) { t.zero_grad(); });
  }
};

// Per-image feature stack. The updated maps are populated by propagation
// and refinement respectively.
struct FeaturePyramid {
  int image_h = 0;
  int image_w = 0;
  Tensor coarse, fine;
  Tensor coarse_updated, fine_updated;
};

inline std::pair<Tensor, Tensor> encode_backbone(const Tensor& image, const ModelParams& params) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("encode_backbone: image must be [3,H,W]");
  const auto& cfg = params.config.backbone;
  const int h = image.dim(1), w = image.dim(2);
  if (h % cfg.coarse_stride() != 0 || w % cfg.coarse_stride() != 0)
    throw ShapeError("encode_backbone: image dims must be divisible by the coarse stride");

  const auto& p = params.backbone;
  Tensor t1 = relu(conv2d(image, p.w1, p.b1, 2));
  Tensor fine = conv2d(t1, p.w2, p.b2, cfg.low_res ? 2 : 1);  // linear head
  Tensor t2 = relu(fine);
  Tensor t3 = relu(conv2d(t2, p.w3, p.b3, 2));
  Tensor coarse = conv2d(t3, p.w4, p.b4, 2);  // linear head
  return {coarse, fine};
}

// normalized position of every cell center of an H x W grid, row-major
inline std::vector<Vec2> cell_center_coords(int h, int w) {
  std::vector<Vec2> coords;
  coords.reserve(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) coords.push_back({(j + 0.5) / w, (i + 0.5) / h});
  return coords;
}

// [n, d] cell-major features back to a [d, h, w] map
inline Tensor unflatten_spatial(const Tensor& t, int h, int w) {
  return reshape(transpose2d(t), {t.dim(1), h, w});
}

// The propagation module: anchors are initialized by bilinear interpolation
// of the coarse maps, the inter- and intra-points layers alternate for the
// configured depth (inter first), and one points-to-image layer per image
// writes the updated coarse maps. pe_scale_* carry the training-time
// coordinate augmentation; identity at inference.
inline std::pair<Tensor, Tensor> propagate(const Tensor& coarse_a, const Tensor& coarse_b,
                                           const AnchorSet& anchors, const ModelParams& params,
                                           Vec2 pe_scale_a = {1.0, 1.0},
                                           Vec2 pe_scale_b = {1.0, 1.0}) {
  if (anchors.count() == 0) throw EmptyAnchorError("propagate: degenerate graph, no anchors");
  anchors.validate();
  const auto& cfg = params.config;

  NodeBatch za{bilinear_sample(coarse_a, anchors.points_a),
               apply_scale(anchors.points_a, pe_scale_a)};
  NodeBatch zb{bilinear_sample(coarse_b, anchors.points_b),
               apply_scale(anchors.points_b, pe_scale_b)};

  for (int l = 0; l < cfg.layers; ++l) {
    if (cfg.use_inter) {
      auto [ox, oy] = inter_points_pass(za, zb, params.inter[l]);
      za.attributes = ox;
      zb.attributes = oy;
    }
    if (cfg.use_intra) {
      Tensor ia = intra_points_pass(za, params.intra[l], cfg.pe);
      Tensor ib = intra_points_pass(zb, params.intra[l], cfg.pe);
      za.attributes = ia;
      zb.attributes = ib;
    }
  }

  auto broadcast_to = [&](const Tensor& coarse, const NodeBatch& anchors_batch, Vec2 scale) {
    const int h = coarse.dim(1), w = coarse.dim(2);
    NodeBatch image_nodes{flatten_spatial(coarse),
                          apply_scale(cell_center_coords(h, w), scale)};
    Tensor updated = points_to_image_pass(anchors_batch, image_nodes, params.broadcast, cfg.pe);
    return unflatten_spatial(updated, h, w);
  };

  return {broadcast_to(coarse_a, za, pe_scale_a), broadcast_to(coarse_b, zb, pe_scale_b)};
}

// single convolution over upsampled coarse features concatenated with the
// fine ones; intentionally not residual
inline Tensor refine(const Tensor& coarse_updated, const Tensor& fine, const ModelParams& params) {
  if (coarse_updated.rank() != 3 || fine.rank() != 3)
    throw ShapeError("refine: need [d,h,w] maps");
  Tensor up = bilinear_upsample(coarse_updated, fine.dim(1), fine.dim(2));
  return conv2d(concat({up, fine}, 0), params.refine_w, params.refine_b, 1);
}

inline std::pair<FeaturePyramid, FeaturePyramid> forward(const Tensor& image_a,
                                                         const Tensor& image_b,
                                                         const AnchorSet& anchors,
                                                         const ModelParams& params,
                                                         Vec2 pe_scale_a = {1.0, 1.0},
                                                         Vec2 pe_scale_b = {1.0, 1.0}) {
  FeaturePyramid pa, pb;
  pa.image_h = image_a.dim(1);
  pa.image_w = image_a.dim(2);
  pb.image_h = image_b.dim(1);
  pb.image_w = image_b.dim(2);

  std::tie(pa.coarse, pa.fine) = encode_backbone(image_a, params);
  std::tie(pb.coarse, pb.fine) = encode_backbone(image_b, params);

  if (params.config.use_graph) {
    std::tie(pa.coarse_updated, pb.coarse_updated) =
        propagate(pa.coarse, pb.coarse, anchors, params, pe_scale_a, pe_scale_b);
  } else {
    pa.coarse_updated = pa.coarse;
    pb.coarse_updated = pb.coarse;
  }
  pa.fine_updated = refine(pa.coarse_updated, pa.fine, params);
  pb.fine_updated = refine(pb.coarse_updated, pb.fine, params);
  return {pa, pb};
}

// ---- checkpoint container ------------------------------------------------
// Layout (all integers little-endian, floats IEEE-754 binary64 LE):
//   8-byte magic "ACORRCKP"
//   u32 version (currently 1)
//   u32 config entry count, then per entry: u32 name length, name bytes,
//     f64 value
//   u32 tensor count, then per tensor: u32 name length, name bytes,
//     u32 rank, u32 dims[rank], f64 values[prod(dims)]

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointMagicError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'A', 'C', 'O', 'R', 'R', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_f64(std::ostream& out, double v) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(v));
  std::memcpy(&bits, &v, 8);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_u32(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw CheckpointTruncatedError("checkpoint truncated");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline double read_f64(std::istream& in) {
  unsigned char b[8];
  if (!in.read(reinterpret_cast<char*>(b), 8))
    throw CheckpointTruncatedError("checkpoint truncated");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

inline std::string read_string(std::istream& in) {
  const std::uint32_t n = read_u32(in);
  if (n > (1u << 20)) throw CheckpointError("checkpoint: unreasonable string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), n)) throw CheckpointTruncatedError("checkpoint truncated");
  return s;
}

inline std::vector<std::pair<std::string, double>> config_entries(const ModelConfig& c) {
  return {{"backbone.stem_width", static_cast<double>(c.backbone.stem_width)},
          {"backbone.mid_width", static_cast<double>(c.backbone.mid_width)},
          {"backbone.fine_dim", static_cast<double>(c.backbone.fine_dim)},
          {"backbone.coarse_dim", static_cast<double>(c.backbone.coarse_dim)},
          {"backbone.low_res", c.backbone.low_res ? 1.0 : 0.0},
          {"layers", static_cast<double>(c.layers)},
          {"heads", static_cast<double>(c.heads)},
          {"pe.dim", static_cast<double>(c.pe.dim)},
          {"pe.temperature", c.pe.temperature},
          {"pe.scale_min", c.pe.scale_min},
          {"pe.scale_max", c.pe.scale_max},
          {"refine_kernel", static_cast<double>(c.refine_kernel)},
          {"double_residual", c.double_residual ? 1.0 : 0.0},
          {"use_graph", c.use_graph ? 1.0 : 0.0},
          {"use_inter", c.use_inter ? 1.0 : 0.0},
          {"use_intra", c.use_intra ? 1.0 : 0.0}};
}

inline void apply_config_entry(ModelConfig& c, const std::string& key, double v) {
  if (key == "backbone.stem_width") c.backbone.stem_width = static_cast<int>(v);
  else if (key == "backbone.mid_width") c.backbone.mid_width = static_cast<int>(v);
  else if (key == "backbone.fine_dim") c.backbone.fine_dim = static_cast<int>(v);
  else if (key == "backbone.coarse_dim") c.backbone.coarse_dim = static_cast<int>(v);
  else if (key == "backbone.low_res") c.backbone.low_res = v != 0.0;
  else if (key == "layers") c.layers = static_cast<int>(v);
  else if (key == "heads") c.heads = static_cast<int>(v);
  else if (key == "pe.dim") c.pe.dim = static_cast<int>(v);
  else if (key == "pe.temperature") c.pe.temperature = v;
  else if (key == "pe.scale_min") c.pe.scale_min = v;
  else if (key == "pe.scale_max") c.pe.scale_max = v;
  else if (key == "refine_kernel") c.refine_kernel = static_cast<int>(v);
  else if (key == "double_residual") c.double_residual = v != 0.0;
  else if (key == "use_graph") c.use_graph = v != 0.0;
  else if (key == "use_inter") c.use_inter = v != 0.0;
  else if (key == "use_intra") c.use_intra = v != 0.0;
  else throw CheckpointError("checkpoint: unknown config key " + key);
}

}  // namespace detail

inline void save_checkpoint(ModelParams& params, const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(detail::kCheckpointMagic, 8);
    detail::write_u32(out, detail::kCheckpointVersion);

    const auto cfg = detail::config_entries(params.config);
    detail::write_u32(out, static_cast<std::uint32_t>(cfg.size()));
    for (const auto& [k, v] : cfg) {
      detail::write_string(out, k);
      detail::write_f64(out, v);
    }

    auto tensors = params.named_tensors();
    detail::write_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (auto& [name, t] : tensors) {
      detail::write_string(out, name);
      detail::write_u32(out, static_cast<std::uint32_t>(t.rank()));
      for (int i = 0; i < t.rank(); ++i)
        detail::write_u32(out, static_cast<std::uint32_t>(t.dim(i)));
      for (double v : t.values()) detail::write_f64(out, v);
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw std::runtime_error("cannot move checkpoint into place: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);

  char magic[8];
  if (!in.read(magic, 8)) throw CheckpointTruncatedError("checkpoint truncated: " + path);
  if (!std::equal(magic, magic + 8, detail::kCheckpointMagic))
    throw CheckpointMagicError("not a checkpoint file: " + path);
  const std::uint32_t version = detail::read_u32(in);
  if (version != detail::kCheckpointVersion)
    throw CheckpointVersionError("unsupported checkpoint version " + std::to_string(version));

  ModelConfig cfg;
  const std::uint32_t n_cfg = detail::read_u32(in);
  for (std::uint32_t i = 0; i < n_cfg; ++i) {
    const std::string key = detail::read_string(in);
    detail::apply_config_entry(cfg, key, detail::read_f64(in));
  }

  ModelParams params = ModelParams::init(cfg, 0);
  auto tensors = params.named_tensors();
  const std::uint32_t n_tensors = detail::read_u32(in);
  if (n_tensors != tensors.size())
    throw CheckpointError("checkpoint: tensor count mismatch in " + path);
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    const std::string name = detail::read_string(in);
    if (name != tensors[i].first)
      throw CheckpointError("checkpoint: unexpected tensor " + name);
    const std::uint32_t rank = detail::read_u32(in);
    Tensor& t = tensors[i].second;
    if (rank != static_cast<std::uint32_t>(t.rank()))
      throw CheckpointError("checkpoint: rank mismatch for " + name);
    for (std::uint32_t r = 0; r < rank; ++r)
      if (detail::read_u32(in) != static_cast<std::uint32_t>(t.dim(static_cast<int>(r))))
        throw CheckpointError("checkpoint: shape mismatch for " + name);
    for (auto& v : t.values()) v = detail::read_f64(in);
  }
  return params;
}

}  // namespace anchorcorr
