#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "anchorcorr/anchors.hpp"
#include "anchorcorr/matching.hpp"
#include "anchorcorr/network.hpp"
#include "anchorcorr/rng.hpp"

namespace anchorcorr {

// ---- homographies ----------------------------------------------------------

struct Homography {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};  // row-major

  Vec2 apply(const Vec2& p) const {
    const double w = m[6] * p.u + m[7] * p.v + m[8];
    return {(m[0] * p.u + m[1] * p.v + m[2]) / w, (m[3] * p.u + m[4] * p.v + m[5]) / w};
  }

  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  Homography inverse() const {
    const double d = det();
    if (std::abs(d) < 1e-12) throw std::runtime_error("homography is not invertible");
    Homography inv;
    inv.m[0] = (m[4] * m[8] - m[5] * m[7]) / d;
    inv.m[1] = (m[2] * m[7] - m[1] * m[8]) / d;
    inv.m[2] = (m[1] * m[5] - m[2] * m[4]) / d;
    inv.m[3] = (m[5] * m[6] - m[3] * m[8]) / d;
    inv.m[4] = (m[0] * m[8] - m[2] * m[6]) / d;
    inv.m[5] = (m[2] * m[3] - m[0] * m[5]) / d;
    inv.m[6] = (m[3] * m[7] - m[4] * m[6]) / d;
    inv.m[7] = (m[1] * m[6] - m[0] * m[7]) / d;
    inv.m[8] = (m[0] * m[4] - m[1] * m[3]) / d;
    return inv;
  }
};

namespace detail {

// direct linear transform from four point pairs; returns nullopt when the
// 8x8 system is singular
inline std::optional<Homography> homography_from_corners(const Vec2 src[4], const Vec2 dst[4]) {
  double a[8][9] = {};
  for (int i = 0; i < 4; ++i) {
    const double x = src[i].u, y = src[i].v, xp = dst[i].u, yp = dst[i].v;
    double* r0 = a[2 * i];
    double* r1 = a[2 * i + 1];
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -xp * x; r0[7] = -xp * y; r0[8] = xp;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -yp * x; r1[7] = -yp * y; r1[8] = yp;
  }
  // gaussian elimination with partial pivoting
  for (int col = 0; col < 8; ++col) {
    int pivot = col;
    for (int r = col + 1; r < 8; ++r)
      if (std::abs(a[r][col]) > std::abs(a[pivot][col])) pivot = r;
    if (std::abs(a[pivot][col]) < 1e-12) return std::nullopt;
    if (pivot != col)
      for (int c = 0; c < 9; ++c) std::swap(a[pivot][c], a[col][c]);
    for (int r = 0; r < 8; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int c = col; c < 9; ++c) a[r][c] -= f * a[col][c];
    }
  }
  Homography h;
  for (int i = 0; i < 8; ++i) h.m[i] = a[i][8] / a[i][i];
  h.m[8] = 1.0;
  return h;
}

}  // namespace detail

// homography sidecar: nine row-major doubles, '#' comments allowed
inline Homography load_homography(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read homography file: " + path);
  std::vector<double> vals;
  std::string line;
  while (std::getline(in, line)) {
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double v;
    while (ls >> v) vals.push_back(v);
  }
  if (vals.size() != 9)
    throw std::runtime_error("homography file must hold 9 values: " + path);
  Homography h;
  std::copy(vals.begin(), vals.end(), h.m);
  return h;
}

inline void save_homography(const std::string& path, const Homography& h) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write homography file: " + path);
  out << "# 3x3 homography, row-major, normalized coordinates\n";
  char line[120];
  for (int r = 0; r < 3; ++r) {
    std::snprintf(line, sizeof(line), "%.17g %.17g %.17g\n", h.m[3 * r], h.m[3 * r + 1],
                  h.m[3 * r + 2]);
    out << line;
  }
}

// dense correspondence field induced by a homography over an HxW image a
inline GroundTruthField gt_from_homography(const Homography& hom, int h, int w) {
  GroundTruthField gt;
  gt.height = h;
  gt.width = w;
  gt.flow.resize(static_cast<std::size_t>(h) * w);
  gt.valid.assign(static_cast<std::size_t>(h) * w, 0);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const Vec2 y = hom.apply({pixel_to_norm(c, w), pixel_to_norm(r, h)});
      gt.flow[static_cast<std::size_t>(r) * w + c] = y;
      gt.valid[static_cast<std::size_t>(r) * w + c] = in_unit_square(y) ? 1 : 0;
    }
  }
  return gt;
}

// ---- procedural base images -------------------------------------------------

enum class TextureKind { Mixed, Repeated };

inline TextureKind texture_kind_from_string(const std::string& s) {
  if (s == "mixed") return TextureKind::Mixed;
  if (s == "repeated") return TextureKind::Repeated;
  throw std::invalid_argument("unknown texture kind: " + s);
}

// Deterministic synthetic base image in [0,1]^3. "Mixed" layers a smooth
// color field with discs, rectangles and a sinusoidal interference pattern;
// "Repeated" tiles one small motif periodically so that local appearance is
// ambiguous across the image.
inline Tensor generate_base_image(int h, int w, TextureKind kind, Rng& rng) {
  Tensor img = Tensor::zeros({3, h, w});
  auto px = [&](int c, int r, int col) -> double& {
    return img.values()[(static_cast<std::size_t>(c) * h + r) * w + col];
  };

  if (kind == TextureKind::Mixed) {
    // smooth background from a coarse random lattice
    const int gn = 5;
    double lattice[3][gn][gn];
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < gn; ++i)
        for (int j = 0; j < gn; ++j) lattice[c][i][j] = rng.uniform(0.15, 0.85);
    for (int r = 0; r < h; ++r) {
      const double gy = static_cast<double>(r) / (h - 1) * (gn - 1);
      const int i0 = std::min(static_cast<int>(gy), gn - 2);
      const double fy = gy - i0;
      for (int col = 0; col < w; ++col) {
        const double gx = static_cast<double>(col) / (w - 1) * (gn - 1);
        const int j0 = std::min(static_cast<int>(gx), gn - 2);
        const double fx = gx - j0;
        for (int c = 0; c < 3; ++c)
          px(c, r, col) = (1 - fy) * ((1 - fx) * lattice[c][i0][j0] + fx * lattice[c][i0][j0 + 1]) +
                          fy * ((1 - fx) * lattice[c][i0 + 1][j0] + fx * lattice[c][i0 + 1][j0 + 1]);
      }
    }
    // random discs and rectangles
    const int shapes = 10 + rng.next_int(8);
    for (int s = 0; s < shapes; ++s) {
      const bool disc = rng.next_double() < 0.5;
      const double cu = rng.next_double() * w, cv = rng.next_double() * h;
      const double radius = (0.03 + 0.10 * rng.next_double()) * std::min(h, w);
      double color[3] = {rng.next_double(), rng.next_double(), rng.next_double()};
      const int r0 = std::max(0, static_cast<int>(cv - radius)),
                r1 = std::min(h - 1, static_cast<int>(cv + radius));
      const int c0 = std::max(0, static_cast<int>(cu - radius)),
                c1 = std::min(w - 1, static_cast<int>(cu + radius));
      for (int r = r0; r <= r1; ++r) {
        for (int col = c0; col <= c1; ++col) {
          const double du = col - cu, dv = r - cv;
          if (disc && du * du + dv * dv > radius * radius) continue;
          for (int c = 0; c < 3; ++c) px(c, r, col) = 0.35 * px(c, r, col) + 0.65 * color[c];
        }
      }
    }
    // low-amplitude sinusoidal interference
    const double fu = rng.uniform(2.0, 9.0), fv = rng.uniform(2.0, 9.0);
    const double phase = rng.uniform(0.0, 2.0 * M_PI);
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col) {
        const double s =
            0.06 * std::sin(2.0 * M_PI * (fu * col / w + fv * r / h) + phase);
        for (int c = 0; c < 3; ++c) px(c, r, col) += s;
      }
    // pixel noise
    for (auto& v : img.values()) v = clamp01(v + rng.uniform(-0.03, 0.03));
  } else {
    // one random motif, tiled; faint noise keeps pixels distinct without
    // disambiguating the repetition
    const int tile = 14 + rng.next_int(8);
    std::vector<double> motif(static_cast<std::size_t>(3) * tile * tile);
    for (auto& v : motif) v = rng.uniform(0.1, 0.9);
    // blend the motif toward a few flat patches so it has structure
    for (int s = 0; s < 4; ++s) {
      const int r0 = rng.next_int(tile), c0 = rng.next_int(tile);
      const int sz = 2 + rng.next_int(tile / 2);
      const double color[3] = {rng.next_double(), rng.next_double(), rng.next_double()};
      for (int r = r0; r < std::min(tile, r0 + sz); ++r)
        for (int col = c0; col < std::min(tile, c0 + sz); ++col)
          for (int c = 0; c < 3; ++c)
            motif[(static_cast<std::size_t>(c) * tile + r) * tile + col] = color[c];
    }
    for (int r = 0; r < h; ++r)
      for (int col = 0; col < w; ++col)
        for (int c = 0; c < 3; ++c)
          px(c, r, col) = motif[(static_cast<std::size_t>(c) * tile + r % tile) * tile + col % tile];
    for (auto& v : img.values()) v = clamp01(v + rng.uniform(-0.005, 0.005));
  }
  return img;
}

// ---- synthetic warp pairs ---------------------------------------------------

struct TrainSample {
  Tensor image_a, image_b;  // [3,H,W]
  GroundTruthField gt;      // a -> b
  Homography homography;
};

// Warps a base image by a random homography (corners perturbed uniformly
// within +/- warp_magnitude in normalized units), synthesizes image b by
// inverse mapping with bilinear sampling, and jitters its brightness and
// contrast. The ground-truth flow is the exact homography action.
inline TrainSample synth_pair(const Tensor& base_image, double warp_magnitude,
                              double photometric_jitter, Rng& rng) {
  if (base_image.rank() != 3 || base_image.dim(0) != 3)
    throw ShapeError("synth_pair: base image must be [3,H,W]");
  const int h = base_image.dim(1), w = base_image.dim(2);
  if (h < 64 || w < 64) throw std::invalid_argument("synth_pair: base image below 64x64");

  const Vec2 corners[4] = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  Homography hom;
  bool found = false;
  for (int attempt = 0; attempt < 100 && !found; ++attempt) {
    Vec2 moved[4];
    for (int i = 0; i < 4; ++i)
      moved[i] = {corners[i].u + rng.uniform(-warp_magnitude, warp_magnitude),
                  corners[i].v + rng.uniform(-warp_magnitude, warp_magnitude)};
    auto solved = detail::homography_from_corners(corners, moved);
    if (!solved) continue;
    if (std::abs(solved->det()) < 1e-6) continue;
    // the perspective denominator must stay well away from zero on the square
    bool ok = true;
    for (const auto& c : corners) {
      const double denom = solved->m[6] * c.u + solved->m[7] * c.v + solved->m[8];
      ok = ok && denom > 0.1;
    }
    if (!ok) continue;
    hom = *solved;
    found = true;
  }
  if (!found) throw std::runtime_error("synth_pair: no valid homography after 100 attempts");

  TrainSample sample;
  sample.homography = hom;
  sample.image_a = base_image.detach();
  sample.image_b = Tensor::zeros({3, h, w});

  const Homography inv = hom.inverse();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const Vec2 y{pixel_to_norm(col, w), pixel_to_norm(r, h)};
      const Vec2 src = inv.apply(y);
      if (!in_unit_square(src)) continue;
      const auto ay = detail::axis_sample(src.v, h);
      const auto ax = detail::axis_sample(src.u, w);
      for (int c = 0; c < 3; ++c) {
        const double* plane_ptr = base_image.values().data() + c * plane;
        const double v =
            (1 - ay.frac) * ((1 - ax.frac) * plane_ptr[static_cast<std::size_t>(ay.lo) * w + ax.lo] +
                             ax.frac * plane_ptr[static_cast<std::size_t>(ay.lo) * w + ax.hi]) +
            ay.frac * ((1 - ax.frac) * plane_ptr[static_cast<std::size_t>(ay.hi) * w + ax.lo] +
                       ax.frac * plane_ptr[static_cast<std::size_t>(ay.hi) * w + ax.hi]);
        sample.image_b.values()[(static_cast<std::size_t>(c) * h + r) * w + col] = v;
      }
    }
  }

  if (photometric_jitter > 0.0) {
    const double contrast = 1.0 + photometric_jitter * (rng.uniform(0.8, 1.25) - 1.0);
    const double brightness = photometric_jitter * rng.uniform(-0.1, 0.1);
    for (auto& v : sample.image_b.values()) v = clamp01(v * contrast + brightness);
  }

  sample.gt.height = h;
  sample.gt.width = w;
  sample.gt.flow.resize(plane);
  sample.gt.valid.assign(plane, 0);
  for (int r = 0; r < h; ++r) {
    for (int col = 0; col < w; ++col) {
      const Vec2 x{pixel_to_norm(col, w), pixel_to_norm(r, h)};
      const Vec2 y = hom.apply(x);
      sample.gt.flow[static_cast<std::size_t>(r) * w + col] = y;
      sample.gt.valid[static_cast<std::size_t>(r) * w + col] = in_unit_square(y) ? 1 : 0;
    }
  }
  return sample;
}

// ---- loss -------------------------------------------------------------------

// Standard deviation of a match distribution around its mean, plus the
// configured floor. Computed on raw values only, so it acts as a constant
// weight in the loss.
inline double distribution_uncertainty(const std::vector<double>& probs,
                                       const std::vector<Vec2>& coords, const Vec2& mean,
                                       double sigma_floor) {
  if (probs.size() != coords.size())
    throw std::invalid_argument("distribution_uncertainty: size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const double du = coords[i].u - mean.u, dv = coords[i].v - mean.v;
    acc += probs[i] * (du * du + dv * dv);
  }
  return std::sqrt(acc) + sigma_floor;
}

inline double distribution_uncertainty(const ExpectationMatch& match, double sigma_floor) {
  return distribution_uncertainty(match.distribution.values(), match.coords,
                                  match.point_value(), sigma_floor);
}

struct LossTerm {
  ExpectationMatch coarse;
  ExpectationMatch fine;
  Vec2 y_gt;
};

// Uncertainty-weighted coarse-to-fine matching loss: for each query, the sum
// of the coarse and fine euclidean errors, both divided by the coarse
// distribution's uncertainty.
inline Tensor correspondence_loss(const std::vector<LossTerm>& batch, double sigma_floor) {
  if (batch.empty()) throw std::invalid_argument("correspondence_loss: empty batch");
  Tensor loss = Tensor::scalar(0.0);
  for (const auto& term : batch) {
    const double sigma = distribution_uncertainty(term.coarse, sigma_floor);
    Tensor target = Tensor::from_values({2}, {term.y_gt.u, term.y_gt.v});
    Tensor coarse_err = vec_norm(sub(target, term.coarse.point));
    Tensor fine_err = vec_norm(sub(target, term.fine.point));
    loss = add(loss, mul_scalar(add(coarse_err, fine_err), 1.0 / sigma));
  }
  return loss;
}

// ---- optimizer --------------------------------------------------------------

// first-order adaptive-moment update with bias correction
struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long long step = 0;
  std::vector<std::vector<double>> m, v;

  void ensure(const std::vector<std::pair<std::string, Tensor>>& params) {
    if (!m.empty()) return;
    for (const auto& [name, t] : params) {
      m.emplace_back(t.size(), 0.0);
      v.emplace_back(t.size(), 0.0);
    }
  }
};

inline void adam_step(std::vector<std::pair<std::string, Tensor>>& params, AdamState& state,
                      double lr) {
  state.ensure(params);
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor& t = params[p].second;
    auto& m = state.m[p];
    auto& v = state.v[p];
    const auto& g = t.grad();
    auto& vals = t.values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mh = m[i] / bc1;
      const double vh = v[i] / bc2;
      vals[i] -= lr * mh / (std::sqrt(vh) + state.eps);
    }
  }
}

// ---- training loop ----------------------------------------------------------

struct TrainConfig {
  double learning_rate = 1e-4;
  long long halve_every = 50000;
  long long total_iters = 5000;
  int queries_per_pair = 128;
  int anchors_per_pair = 32;
  int image_size = 96;
  double warp_magnitude = 0.08;
  double photometric_jitter = 1.0;
  // anchors stay clean for the first clean_fraction of the run, then a
  // subset is perturbed to emulate an imperfect external matcher
  double clean_fraction = 0.8;
  double noise_fraction = 0.3;
  double noise_sigma_px = 8.0;
  double sigma_floor = 1e-3;
  double window_frac = 0.125;
  bool adaptive_scale_augment = true;
  TextureKind texture = TextureKind::Mixed;
  GridFilterConfig anchor_grid;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train: learning rate must be > 0");
    if (!(sigma_floor > 0.0)) throw std::invalid_argument("train: sigma floor must be > 0");
    if (total_iters < 1 || queries_per_pair < 1 || anchors_per_pair < 1)
      throw std::invalid_argument("train: counts must be positive");
  }
};

inline double scheduled_lr(const TrainConfig& cfg, long long iter) {
  return cfg.learning_rate * std::pow(0.5, static_cast<double>(iter / cfg.halve_every));
}

struct StepResult {
  bool skipped = false;
  double loss = 0.0;
  double lr = 0.0;
  double coarse_px_err = 0.0;
  double fine_px_err = 0.0;
};

// One optimization step on one synthetic pair. Anchors and queries are drawn
// from the valid ground-truth pixels; the adaptive position-embedding scales
// are drawn per image. Deterministic given the rng state.
inline StepResult train_step(ModelParams& params, const TrainSample& sample,
                             const TrainConfig& cfg, long long iter, AdamState& adam, Rng& rng) {
  StepResult result;
  result.lr = scheduled_lr(cfg, iter);

  const int valid = sample.gt.valid_count();
  if (valid < cfg.anchors_per_pair || valid < 1) {
    result.skipped = true;
    return result;
  }

  AnchorSet anchors = sample_gt_anchors(sample.gt, cfg.anchors_per_pair, cfg.anchor_grid, rng);
  const bool noisy_phase =
      iter >= static_cast<long long>(cfg.clean_fraction * static_cast<double>(cfg.total_iters));
  if (noisy_phase && cfg.noise_fraction > 0.0)
    anchors = perturb_anchors(anchors, cfg.noise_fraction, cfg.noise_sigma_px, sample.gt.height,
                              sample.gt.width, rng);

  // queries: uniform draws over the valid pixels
  std::vector<int> valid_idx;
  valid_idx.reserve(valid);
  for (int i = 0; i < static_cast<int>(sample.gt.valid.size()); ++i)
    if (sample.gt.valid[i]) valid_idx.push_back(i);
  std::vector<Vec2> queries;
  std::vector<Vec2> targets;
  for (int q = 0; q < cfg.queries_per_pair; ++q) {
    const int pix = valid_idx[rng.next_int(static_cast<int>(valid_idx.size()))];
    const int r = pix / sample.gt.width, c = pix % sample.gt.width;
    queries.push_back({pixel_to_norm(c, sample.gt.width), pixel_to_norm(r, sample.gt.height)});
    targets.push_back(sample.gt.flow[pix]);
  }

  Vec2 scale_a{1.0, 1.0}, scale_b{1.0, 1.0};
  if (cfg.adaptive_scale_augment) {
    const auto& pe = params.config.pe;
    scale_a = {rng.log_uniform(pe.scale_min, pe.scale_max),
               rng.log_uniform(pe.scale_min, pe.scale_max)};
    scale_b = {rng.log_uniform(pe.scale_min, pe.scale_max),
               rng.log_uniform(pe.scale_min, pe.scale_max)};
  }

  auto [pyr_a, pyr_b] = forward(sample.image_a, sample.image_b, anchors, params, scale_a, scale_b);

  std::vector<LossTerm> terms;
  terms.reserve(queries.size());
  double coarse_px = 0.0, fine_px = 0.0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    QueryMatch qm = coarse_to_fine_query(queries[q], pyr_a, pyr_b, cfg.window_frac);
    coarse_px += norm_dist_px(qm.coarse_point(), targets[q], sample.gt.height, sample.gt.width);
    fine_px += norm_dist_px(qm.fine_point(), targets[q], sample.gt.height, sample.gt.width);
    terms.push_back({qm.coarse, qm.fine, targets[q]});
  }
  result.coarse_px_err = coarse_px / static_cast<double>(queries.size());
  result.fine_px_err = fine_px / static_cast<double>(queries.size());

  Tensor loss = correspondence_loss(terms, cfg.sigma_floor);
  result.loss = loss.value();

  params.zero_grad();
  loss.backward();
  auto named = params.named_tensors();
  adam_step(named, adam, result.lr);
  return result;
}

struct TrainHistory {
  std::vector<StepResult> steps;
};

// Full training run on freshly generated synthetic pairs. When log_path is
// non-empty, appends one line per step: "iter loss lr coarse_px_err
// fine_px_err". checkpoint_every > 0 writes numbered checkpoints under
// checkpoint_dir along with the final one.
inline TrainHistory train_model(ModelParams& params, const TrainConfig& cfg,
                                const std::string& log_path = "",
                                const std::string& checkpoint_dir = "",
                                long long checkpoint_every = 0) {
  cfg.validate();
  Rng rng(cfg.seed);
  Rng data_rng = rng.split();
  Rng step_rng = rng.split();

  std::ofstream log;
  if (!log_path.empty()) {
    log.open(log_path, std::ios::app);
    if (!log) throw std::runtime_error("cannot open training log: " + log_path);
  }

  AdamState adam;
  TrainHistory history;
  history.steps.reserve(static_cast<std::size_t>(cfg.total_iters));

  for (long long iter = 0; iter < cfg.total_iters; ++iter) {
    Rng pair_rng = data_rng.split();
    Tensor base = generate_base_image(cfg.image_size, cfg.image_size, cfg.texture, pair_rng);
    TrainSample sample = synth_pair(base, cfg.warp_magnitude, cfg.photometric_jitter, pair_rng);
    StepResult step = train_step(params, sample, cfg, iter, adam, step_rng);
    history.steps.push_back(step);

    if (log) {
      char line[160];
      std::snprintf(line, sizeof(line), "%lld %.17g %.17g %.17g %.17g\n", iter, step.loss,
                    step.lr, step.coarse_px_err, step.fine_px_err);
      log << line;
      log.flush();
    }
    if (checkpoint_every > 0 && !checkpoint_dir.empty() && (iter + 1) % checkpoint_every == 0)
      save_checkpoint(params, checkpoint_dir + "/checkpoint_" + std::to_string(iter + 1) + ".bin");
  }
  if (!checkpoint_dir.empty()) save_checkpoint(params, checkpoint_dir + "/checkpoint_final.bin");
  return history;
}

}  // namespace anchorcorr
