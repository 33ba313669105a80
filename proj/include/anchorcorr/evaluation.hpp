#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anchorcorr/matching.hpp"
#include "anchorcorr/training.hpp"

namespace anchorcorr {

struct MetricCurve {
  std::vector<double> thresholds;  // ascending, pixels
  std::vector<double> values;      // fraction correct per threshold
  long long count = 0;             // matches evaluated

  void validate() const {
    if (thresholds.size() != values.size())
      throw std::invalid_argument("metric curve: size mismatch");
    for (std::size_t i = 1; i < thresholds.size(); ++i) {
      if (thresholds[i] <= thresholds[i - 1])
        throw std::invalid_argument("metric curve: thresholds must ascend");
      if (values[i] + 1e-12 < values[i - 1])
        throw std::invalid_argument("metric curve: values must be non-decreasing");
    }
    for (double v : values)
      if (v < 0.0 || v > 1.0) throw std::invalid_argument("metric curve: fraction out of range");
  }

  double at_threshold(double t) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (thresholds[i] == t) return values[i];
    throw std::invalid_argument("metric curve: threshold not present");
  }
};

// Percentage of correct keypoints: the fraction of matches whose fine match
// lands within each pixel threshold of the ground-truth flow at the query.
inline MetricCurve pck(const std::vector<MatchResult>& matches, const GroundTruthField& gt,
                       const std::vector<double>& thresholds) {
  if (matches.empty()) throw std::invalid_argument("pck: empty match list");
  MetricCurve curve;
  curve.thresholds = thresholds;
  curve.values.assign(thresholds.size(), 0.0);
  curve.count = static_cast<long long>(matches.size());

  for (const auto& m : matches) {
    const int r = static_cast<int>(std::lround(m.query.v * (gt.height - 1)));
    const int c = static_cast<int>(std::lround(m.query.u * (gt.width - 1)));
    if (r < 0 || r >= gt.height || c < 0 || c >= gt.width || !gt.valid_at(r, c))
      throw std::invalid_argument("pck: query without valid ground truth");
    const double err_px = norm_dist_px(m.fine_match, gt.flow_at(r, c), gt.height, gt.width);
    for (std::size_t t = 0; t < thresholds.size(); ++t)
      if (err_px <= thresholds[t]) curve.values[t] += 1.0;
  }
  for (auto& v : curve.values) v /= static_cast<double>(matches.size());
  curve.validate();
  return curve;
}

// Mean matching accuracy: the unweighted mean of per-pair correct fractions,
// each pair contributing equally regardless of its match count.
inline MetricCurve mma(const std::vector<MetricCurve>& per_pair) {
  if (per_pair.empty()) throw std::invalid_argument("mma: no pairs");
  MetricCurve out;
  out.thresholds = per_pair[0].thresholds;
  out.values.assign(out.thresholds.size(), 0.0);
  for (const auto& c : per_pair) {
    if (c.thresholds != out.thresholds)
      throw std::invalid_argument("mma: threshold sets differ");
    for (std::size_t t = 0; t < out.values.size(); ++t) out.values[t] += c.values[t];
    out.count += c.count;
  }
  for (auto& v : out.values) v /= static_cast<double>(per_pair.size());
  out.validate();
  return out;
}

// ---- synthetic-set evaluation ------------------------------------------------

struct EvalSetSpec {
  int pairs = 100;
  std::uint64_t seed = 1;
  double warp_magnitude = 0.1;
  double photometric_jitter = 1.0;
  int image_size = 96;
  TextureKind texture = TextureKind::Mixed;
};

struct EvalSettings {
  std::vector<double> thresholds = {1, 2, 3, 5, 10};
  double window_frac = 0.125;
  int anchors = 32;
  GridFilterConfig anchor_grid;
  // optional anchor corruption applied at evaluation time
  double anchor_noise_fraction = 0.0;
  double anchor_noise_sigma_px = 0.0;
  // queries are a fixed query_grid x query_grid pixel lattice, valid cells only
  int query_grid = 64;
};

struct PairEvaluation {
  MetricCurve curve;
  double median_cycle_px = 0.0;
};

inline std::vector<Vec2> query_lattice(const GroundTruthField& gt, int grid) {
  std::vector<Vec2> queries;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      const int r = static_cast<int>(std::lround(static_cast<double>(i) * (gt.height - 1) /
                                                 (grid - 1)));
      const int c = static_cast<int>(std::lround(static_cast<double>(j) * (gt.width - 1) /
                                                 (grid - 1)));
      if (gt.valid_at(r, c))
        queries.push_back({pixel_to_norm(c, gt.width), pixel_to_norm(r, gt.height)});
    }
  }
  return queries;
}

inline PairEvaluation evaluate_pair(const ModelParams& params, const TrainSample& sample,
                                    const EvalSettings& settings, Rng& rng,
                                    bool with_cycle = false) {
  AnchorSet anchors = sample_gt_anchors(sample.gt, settings.anchors, settings.anchor_grid, rng);
  if (settings.anchor_noise_fraction > 0.0 && settings.anchor_noise_sigma_px > 0.0)
    anchors = perturb_anchors(anchors, settings.anchor_noise_fraction,
                              settings.anchor_noise_sigma_px, sample.gt.height, sample.gt.width,
                              rng);
  auto [pyr_a, pyr_b] = forward(sample.image_a, sample.image_b, anchors, params);

  std::vector<Vec2> queries = query_lattice(sample.gt, settings.query_grid);
  if (queries.empty()) throw InsufficientDataError("evaluate_pair: no valid queries");

  std::vector<MatchResult> matches;
  std::vector<double> cycles;
  matches.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    QueryMatch qm = coarse_to_fine_query(queries[i], pyr_a, pyr_b, settings.window_frac);
    MatchResult m;
    m.query = queries[i];
    m.coarse_match = qm.coarse_point();
    m.fine_match = qm.fine_point();
    m.peak_correlation = qm.peak_correlation;
    m.query_index = static_cast<int>(i);
    if (with_cycle) {
      const Vec2 back = coarse_to_fine_query(clamp_unit(m.fine_match), pyr_b, pyr_a,
                                             settings.window_frac)
                            .fine_point();
      m.cycle_px = norm_dist_px(m.query, back, pyr_a.image_h, pyr_a.image_w);
      cycles.push_back(m.cycle_px);
    }
    matches.push_back(m);
  }

  PairEvaluation out;
  out.curve = pck(matches, sample.gt, settings.thresholds);
  if (!cycles.empty()) {
    std::nth_element(cycles.begin(), cycles.begin() + cycles.size() / 2, cycles.end());
    out.median_cycle_px = cycles[cycles.size() / 2];
  }
  return out;
}

// PCK over a freshly generated synthetic set, aggregated as the mean of
// per-pair curves.
inline MetricCurve evaluate_model(const ModelParams& params, const EvalSetSpec& spec,
                                  const EvalSettings& settings) {
  Rng rng(spec.seed);
  std::vector<MetricCurve> curves;
  curves.reserve(spec.pairs);
  for (int p = 0; p < spec.pairs; ++p) {
    Rng pair_rng = rng.split();
    Tensor base =
        generate_base_image(spec.image_size, spec.image_size, spec.texture, pair_rng);
    TrainSample sample = synth_pair(base, spec.warp_magnitude, spec.photometric_jitter, pair_rng);
    curves.push_back(evaluate_pair(params, sample, settings, pair_rng).curve);
  }
  return mma(curves);
}

// ---- ablation variants --------------------------------------------------------

struct AblationVariant {
  enum class Kind { Full, NoGraph, LowRes, FewerAnchors, NoIntra, NoPoint, NoisyAnchors };
  Kind kind = Kind::Full;
  int anchor_count = 0;          // FewerAnchors
  double noise_fraction = 0.0;   // NoisyAnchors
  double noise_sigma_px = 0.0;

  // anchor-count and anchor-noise variants reuse the full model's weights;
  // the structural ones need their own training run
  bool needs_own_training() const {
    return kind == Kind::NoGraph || kind == Kind::LowRes || kind == Kind::NoIntra ||
           kind == Kind::NoPoint;
  }

  std::string label() const {
    switch (kind) {
      case Kind::Full: return "full";
      case Kind::NoGraph: return "no_graph";
      case Kind::LowRes: return "low_res";
      case Kind::FewerAnchors: return "fewer_anchors:" + std::to_string(anchor_count);
      case Kind::NoIntra: return "no_intra";
      case Kind::NoPoint: return "no_point";
      case Kind::NoisyAnchors: {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "noisy_anchors:%g:%g", noise_fraction, noise_sigma_px);
        return buf;
      }
    }
    return "?";
  }

  static AblationVariant parse(const std::string& text) {
    AblationVariant v;
    std::vector<std::string> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ':')) parts.push_back(item);
    if (parts.empty()) throw std::invalid_argument("empty ablation variant");
    const std::string& name = parts[0];
    if (name == "full") v.kind = Kind::Full;
    else if (name == "no_graph") v.kind = Kind::NoGraph;
    else if (name == "low_res") v.kind = Kind::LowRes;
    else if (name == "no_intra") v.kind = Kind::NoIntra;
    else if (name == "no_point") v.kind = Kind::NoPoint;
    else if (name == "fewer_anchors") {
      v.kind = Kind::FewerAnchors;
      if (parts.size() != 2) throw std::invalid_argument("fewer_anchors:<count>");
      v.anchor_count = std::stoi(parts[1]);
      if (v.anchor_count < 1) throw std::invalid_argument("fewer_anchors needs a positive count");
    } else if (name == "noisy_anchors") {
      v.kind = Kind::NoisyAnchors;
      if (parts.size() != 3) throw std::invalid_argument("noisy_anchors:<fraction>:<sigma_px>");
      v.noise_fraction = std::stod(parts[1]);
      v.noise_sigma_px = std::stod(parts[2]);
    } else {
      throw std::invalid_argument("unknown ablation variant: " + name);
    }
    return v;
  }
};

inline ModelConfig apply_variant(ModelConfig config, const AblationVariant& v) {
  switch (v.kind) {
    case AblationVariant::Kind::NoGraph: config.use_graph = false; break;
    case AblationVariant::Kind::LowRes: config.backbone.low_res = true; break;
    case AblationVariant::Kind::NoIntra: config.use_intra = false; break;
    case AblationVariant::Kind::NoPoint:
      config.use_intra = false;
      config.use_inter = false;
      break;
    default: break;
  }
  return config;
}

inline EvalSettings apply_variant(EvalSettings settings, const AblationVariant& v) {
  switch (v.kind) {
    case AblationVariant::Kind::FewerAnchors: settings.anchors = v.anchor_count; break;
    case AblationVariant::Kind::NoisyAnchors:
      settings.anchor_noise_fraction = v.noise_fraction;
      settings.anchor_noise_sigma_px = v.noise_sigma_px;
      break;
    default: break;
  }
  return settings;
}

// PCK for one ablation variant given its trained weights
inline MetricCurve run_ablation(const AblationVariant& variant, const ModelParams& trained,
                                const EvalSetSpec& eval_set, const EvalSettings& base_settings) {
  return evaluate_model(trained, eval_set, apply_variant(base_settings, variant));
}

// ---- text output ---------------------------------------------------------------

inline void write_curve(std::ostream& out, const MetricCurve& curve) {
  char line[96];
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    std::snprintf(line, sizeof(line), "%.17g %.17g %lld\n", curve.thresholds[i], curve.values[i],
                  curve.count);
    out << line;
  }
}

inline void save_curve(const std::string& path, const MetricCurve& curve,
                       const std::string& header) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write curve file: " + path);
  if (!header.empty()) out << "# " << header << "\n";
  out << "# threshold_px fraction count\n";
  write_curve(out, curve);
}

}  // namespace anchorcorr
