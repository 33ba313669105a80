#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anchorcorr/network.hpp"
#include "anchorcorr/tensor.hpp"

namespace anchorcorr {

// normalized coordinate of every cell of an H x W feature grid, row-major,
// align-corners (cell (i,j) at (j/(W-1), i/(H-1)))
inline std::vector<Vec2> grid_node_coords(int h, int w) {
  std::vector<Vec2> coords;
  coords.reserve(static_cast<std::size_t>(h) * w);
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) coords.push_back({pixel_to_norm(j, w), pixel_to_norm(i, h)});
  return coords;
}

// Soft correspondence over a set of candidate cells: a softmax over the
// feature dot products and the probability-weighted mean of the cell
// coordinates. Differentiable w.r.t. both feature inputs.
struct ExpectationMatch {
  Tensor point;              // [2]: (u, v)
  Tensor distribution;       // [n], sums to 1
  std::vector<Vec2> coords;  // the candidate cell positions

  Vec2 point_value() const { return {point.values()[0], point.values()[1]}; }

  double peak_probability() const {
    double mx = 0.0;
    for (double p : distribution.values()) mx = std::max(mx, p);
    return mx;
  }
};

// query_feature: [1, d]; cell_features: [n, d]; coords: n cell positions
inline ExpectationMatch expectation_match(const Tensor& query_feature,
                                          const Tensor& cell_features,
                                          const std::vector<Vec2>& coords) {
  if (query_feature.rank() != 2 || query_feature.dim(0) != 1)
    throw ShapeError("expectation_match: query feature must be [1,d]");
  if (cell_features.rank() != 2 || cell_features.dim(1) != query_feature.dim(1))
    throw ShapeError("expectation_match: feature widths differ");
  if (cell_features.dim(0) != static_cast<int>(coords.size()))
    throw ShapeError("expectation_match: coordinate count mismatch");

  Tensor logits = matmul(query_feature, transpose2d(cell_features));  // [1, n]
  Tensor dist = softmax(logits, 1);

  Tensor coord_mat = Tensor::zeros({static_cast<int>(coords.size()), 2});
  for (std::size_t i = 0; i < coords.size(); ++i) {
    coord_mat.values()[2 * i] = coords[i].u;
    coord_mat.values()[2 * i + 1] = coords[i].v;
  }
  ExpectationMatch out;
  out.point = reshape(matmul(dist, coord_mat), {2});
  out.distribution = reshape(dist, {static_cast<int>(coords.size())});
  out.coords = coords;
  return out;
}

// expectation over the full feature map
inline ExpectationMatch expectation_match(const Tensor& query_feature, const Tensor& feature_map) {
  if (feature_map.rank() != 3) throw ShapeError("expectation_match: map must be [d,H,W]");
  return expectation_match(query_feature, flatten_spatial(feature_map),
                           grid_node_coords(feature_map.dim(1), feature_map.dim(2)));
}

struct MatchResult {
  Vec2 query;
  Vec2 coarse_match;
  Vec2 fine_match;
  double cycle_px = 0.0;
  double peak_correlation = 0.0;
  int query_index = 0;
};

// Both expectation stages of one query, with live tensors so the training
// loss can differentiate through them.
struct QueryMatch {
  ExpectationMatch coarse;
  ExpectationMatch fine;
  double peak_correlation = 0.0;

  Vec2 coarse_point() const { return coarse.point_value(); }
  Vec2 fine_point() const { return fine.point_value(); }
};

// Coarse-to-fine query from image a to image b: expectation over the whole
// updated coarse map of b, then expectation over a fine-level window of
// window_frac * min(H_f, W_f) cells centered at the coarse match. The window
// is shifted inward at borders so its cell count never changes.
inline QueryMatch coarse_to_fine_query(const Vec2& x, const FeaturePyramid& pyr_a,
                                       const FeaturePyramid& pyr_b, double window_frac) {
  if (!in_unit_square(x)) throw std::invalid_argument("coarse_to_fine_query: x outside [0,1]^2");
  if (!pyr_a.coarse_updated.defined() || !pyr_a.fine_updated.defined() ||
      !pyr_b.coarse_updated.defined() || !pyr_b.fine_updated.defined())
    throw std::invalid_argument("coarse_to_fine_query: pyramids not fully populated");

  QueryMatch qm;
  Tensor coarse_query = bilinear_sample(pyr_a.coarse_updated, {x});
  qm.coarse = expectation_match(coarse_query, pyr_b.coarse_updated);
  qm.peak_correlation = qm.coarse.peak_probability();

  const Tensor& fine_map = pyr_b.fine_updated;
  const int fh = fine_map.dim(1), fw = fine_map.dim(2);
  const int win = static_cast<int>(std::lround(window_frac * std::min(fh, fw)));
  if (win < 2) throw ResolutionError("coarse_to_fine_query: window degenerates below 2x2");
  if (win > fh || win > fw)
    throw ResolutionError("coarse_to_fine_query: window exceeds the fine map");

  const Vec2 yc = clamp_unit(qm.coarse.point_value());
  const int cr = static_cast<int>(std::lround(yc.v * (fh - 1)));
  const int cc = static_cast<int>(std::lround(yc.u * (fw - 1)));
  const int r0 = std::clamp(cr - win / 2, 0, fh - win);
  const int c0 = std::clamp(cc - win / 2, 0, fw - win);

  std::vector<std::pair<int, int>> cells;
  std::vector<Vec2> cell_coords;
  cells.reserve(static_cast<std::size_t>(win) * win);
  for (int r = r0; r < r0 + win; ++r) {
    for (int c = c0; c < c0 + win; ++c) {
      cells.push_back({r, c});
      cell_coords.push_back({pixel_to_norm(c, fw), pixel_to_norm(r, fh)});
    }
  }

  Tensor fine_query = bilinear_sample(pyr_a.fine_updated, {x});
  qm.fine = expectation_match(fine_query, gather_cells(fine_map, cells), cell_coords);
  return qm;
}

// forward a->b then back b->a; the euclidean gap in pixels of image a
inline double cycle_distance(const Vec2& x, const FeaturePyramid& pyr_a,
                             const FeaturePyramid& pyr_b, double window_frac) {
  const Vec2 y = coarse_to_fine_query(x, pyr_a, pyr_b, window_frac).fine_point();
  const Vec2 x_back =
      coarse_to_fine_query(clamp_unit(y), pyr_b, pyr_a, window_frac).fine_point();
  return norm_dist_px(x, x_back, pyr_a.image_h, pyr_a.image_w);
}

// Per-query coarse-to-fine match plus cycle filtering: entries whose cycle
// distance exceeds the threshold are dropped, the rest are ranked by peak
// correlation (ties stable by query index) and truncated to top_k.
inline std::vector<MatchResult> match_points(const std::vector<Vec2>& queries,
                                             const FeaturePyramid& pyr_a,
                                             const FeaturePyramid& pyr_b, double window_frac,
                                             double cycle_threshold_px, int top_k) {
  if (queries.empty()) throw std::invalid_argument("match_points: no queries");
  std::vector<MatchResult> results;
  results.reserve(queries.size());
  for (std::size_t i = 0; i < queries.size(); ++i) {
    QueryMatch qm = coarse_to_fine_query(queries[i], pyr_a, pyr_b, window_frac);
    MatchResult r;
    r.query = queries[i];
    r.coarse_match = qm.coarse_point();
    r.fine_match = qm.fine_point();
    r.peak_correlation = qm.peak_correlation;
    r.query_index = static_cast<int>(i);
    const Vec2 x_back = coarse_to_fine_query(clamp_unit(r.fine_match), pyr_b, pyr_a, window_frac)
                            .fine_point();
    r.cycle_px = norm_dist_px(queries[i], x_back, pyr_a.image_h, pyr_a.image_w);
    if (r.cycle_px <= cycle_threshold_px) results.push_back(r);
  }
  std::stable_sort(results.begin(), results.end(), [](const MatchResult& a, const MatchResult& b) {
    if (a.peak_correlation != b.peak_correlation) return a.peak_correlation > b.peak_correlation;
    return a.query_index < b.query_index;
  });
  if (top_k >= 0 && static_cast<int>(results.size()) > top_k) results.resize(top_k);
  return results;
}

struct MatchFileData {
  std::vector<MatchResult> matches;
  int image_h = 0;
  int image_w = 0;
};

// match file: '#' header, then "u_a v_a u_b v_b cycle_px peak_prob" per line
inline void save_matches(const std::string& path, const std::vector<MatchResult>& matches,
                         int image_h, int image_w, double window_frac, double cycle_threshold_px,
                         int top_k) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write match file: " + path);
  char line[256];
  std::snprintf(line, sizeof(line),
                "# dims %dx%d window_frac %.17g cycle_threshold_px %.17g top_k %d\n", image_h,
                image_w, window_frac, cycle_threshold_px, top_k);
  out << line << "# u_a v_a u_b v_b cycle_px peak_prob\n";
  for (const auto& m : matches) {
    std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g %.17g %.17g\n", m.query.u,
                  m.query.v, m.fine_match.u, m.fine_match.v, m.cycle_px, m.peak_correlation);
    out << line;
  }
}

inline MatchFileData load_matches(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read match file: " + path);
  MatchFileData data;
  std::string line;
  int line_no = 0;
  int index = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    if (line[first] == '#') {
      int h = 0, w = 0;
      if (std::sscanf(line.c_str() + first, "# dims %dx%d", &h, &w) == 2) {
        data.image_h = h;
        data.image_w = w;
      }
      continue;
    }
    std::istringstream ls(line);
    MatchResult m;
    if (!(ls >> m.query.u >> m.query.v >> m.fine_match.u >> m.fine_match.v >> m.cycle_px >>
          m.peak_correlation))
      throw std::runtime_error("match file " + path + ": malformed line " +
                               std::to_string(line_no));
    m.query_index = index++;
    data.matches.push_back(m);
  }
  return data;
}

}  // namespace anchorcorr
