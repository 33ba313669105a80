#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "anchorcorr/common.hpp"
#include "anchorcorr/rng.hpp"

namespace anchorcorr {

// K one-to-one paired points across two images, normalized to [0,1]^2.
// The pairing is implicit by index.
struct AnchorSet {
  std::vector<Vec2> points_a;
  std::vector<Vec2> points_b;

  int count() const { return static_cast<int>(points_a.size()); }

  void validate() const {
    if (points_a.empty()) throw EmptyAnchorError("anchor set is empty");
    if (points_a.size() != points_b.size())
      throw std::invalid_argument("anchor set: unequal pair lists");
    for (const auto& p : points_a)
      if (!in_unit_square(p)) throw std::invalid_argument("anchor outside [0,1]^2");
    for (const auto& p : points_b)
      if (!in_unit_square(p)) throw std::invalid_argument("anchor outside [0,1]^2");
  }
};

// Descriptor of the anchor/image-point graph. The three subgraphs are
// complete or bipartite-complete, so the structure is kept implicitly as
// counts; the layer wiring realizes the edges.
struct CorrespondenceGraph {
  int anchor_count = 0;
  int coarse_h_a = 0, coarse_w_a = 0;
  int coarse_h_b = 0, coarse_w_b = 0;

  // paired anchors, one edge each way
  long long inter_edges() const { return 2ll * anchor_count; }
  // complete directed subgraph per image, self-edges included
  long long intra_edges() const { return 2ll * anchor_count * anchor_count; }
  // every anchor broadcasts to every coarse cell of its image
  long long image_edges_a() const { return 1ll * anchor_count * coarse_h_a * coarse_w_a; }
  long long image_edges_b() const { return 1ll * anchor_count * coarse_h_b * coarse_w_b; }
};

inline CorrespondenceGraph build_graph(const AnchorSet& anchors, int coarse_h_a, int coarse_w_a,
                                       int coarse_h_b, int coarse_w_b) {
  anchors.validate();
  if (coarse_h_a < 1 || coarse_w_a < 1 || coarse_h_b < 1 || coarse_w_b < 1)
    throw std::invalid_argument("build_graph: coarse dims must be positive");
  CorrespondenceGraph g;
  g.anchor_count = anchors.count();
  g.coarse_h_a = coarse_h_a;
  g.coarse_w_a = coarse_w_a;
  g.coarse_h_b = coarse_h_b;
  g.coarse_w_b = coarse_w_b;
  return g;
}

// Dense correspondence targets for one image pair: per-pixel coordinates
// in image b plus a validity mask, at image-a resolution.
struct GroundTruthField {
  int height = 0;
  int width = 0;
  std::vector<Vec2> flow;           // size height*width
  std::vector<std::uint8_t> valid;  // size height*width

  const Vec2& flow_at(int r, int c) const { return flow[static_cast<std::size_t>(r) * width + c]; }
  bool valid_at(int r, int c) const { return valid[static_cast<std::size_t>(r) * width + c] != 0; }

  int valid_count() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
};

struct PairedPoint {
  Vec2 a;
  Vec2 b;
};

namespace detail {

// indices of the kept candidates, cell-major then per-cell sampled order
inline std::vector<int> grid_filter_indices(const std::vector<PairedPoint>& candidates, int gx,
                                            int gy, int max_per_cell, Rng& rng) {
  if (candidates.empty()) throw EmptyAnchorError("grid_filter: no candidates");
  if (gx < 1 || gy < 1 || max_per_cell < 1)
    throw std::invalid_argument("grid_filter: bad grid parameters");

  // cells are indexed row-major over image a
  std::vector<std::vector<int>> cells(static_cast<std::size_t>(gx) * gy);
  for (int i = 0; i < static_cast<int>(candidates.size()); ++i) {
    const Vec2& p = candidates[i].a;
    if (!in_unit_square(p)) throw std::invalid_argument("grid_filter: candidate outside [0,1]^2");
    const int cx = std::min(static_cast<int>(p.u * gx), gx - 1);
    const int cy = std::min(static_cast<int>(p.v * gy), gy - 1);
    cells[static_cast<std::size_t>(cy) * gx + cx].push_back(i);
  }

  std::vector<int> kept;
  for (auto& cell : cells) {
    const int take = std::min<int>(max_per_cell, static_cast<int>(cell.size()));
    // partial Fisher-Yates: uniform sample without replacement
    for (int k = 0; k < take; ++k) {
      const int j = k + rng.next_int(static_cast<int>(cell.size()) - k);
      std::swap(cell[k], cell[j]);
      kept.push_back(cell[k]);
    }
  }
  return kept;
}

}  // namespace detail

// Partitions image a into gx x gy uniform cells and keeps at most
// max_per_cell uniformly sampled candidates per cell.
inline AnchorSet grid_filter(const std::vector<PairedPoint>& candidates, int gx, int gy,
                             int max_per_cell, Rng& rng) {
  const auto kept = detail::grid_filter_indices(candidates, gx, gy, max_per_cell, rng);
  AnchorSet out;
  for (int i : kept) {
    out.points_a.push_back(candidates[i].a);
    out.points_b.push_back(candidates[i].b);
  }
  return out;
}

struct GridFilterConfig {
  int cells_x = 8;
  int cells_y = 8;
  int max_per_cell = 2;
};

// Draws K anchor pairs (x, flow(x)) from the valid pixels of a ground-truth
// field: grid filter first for even coverage, then uniform top-up (or
// uniform down-sample when the filter over-fills).
inline AnchorSet sample_gt_anchors(const GroundTruthField& gt, int k, const GridFilterConfig& grid,
                                   Rng& rng) {
  if (k < 1) throw std::invalid_argument("sample_gt_anchors: k must be positive");

  std::vector<PairedPoint> candidates;
  candidates.reserve(gt.flow.size());
  for (int r = 0; r < gt.height; ++r) {
    for (int c = 0; c < gt.width; ++c) {
      if (!gt.valid_at(r, c)) continue;
      candidates.push_back({{pixel_to_norm(c, gt.width), pixel_to_norm(r, gt.height)},
                            clamp_unit(gt.flow_at(r, c))});
    }
  }
  if (static_cast<int>(candidates.size()) < k)
    throw InsufficientDataError("sample_gt_anchors: fewer valid pixels than anchors requested");

  std::vector<int> chosen =
      detail::grid_filter_indices(candidates, grid.cells_x, grid.cells_y, grid.max_per_cell, rng);

  if (static_cast<int>(chosen.size()) > k) {
    // uniform subset, stable order
    std::vector<int> pick(chosen.size());
    std::iota(pick.begin(), pick.end(), 0);
    for (int i = 0; i < k; ++i) {
      const int j = i + rng.next_int(static_cast<int>(pick.size()) - i);
      std::swap(pick[i], pick[j]);
    }
    pick.resize(k);
    std::sort(pick.begin(), pick.end());
    std::vector<int> sub;
    sub.reserve(k);
    for (int p : pick) sub.push_back(chosen[p]);
    chosen = std::move(sub);
  } else if (static_cast<int>(chosen.size()) < k) {
    std::vector<std::uint8_t> used(candidates.size(), 0);
    for (int i : chosen) used[i] = 1;
    std::vector<int> rest;
    for (int i = 0; i < static_cast<int>(candidates.size()); ++i)
      if (!used[i]) rest.push_back(i);
    while (static_cast<int>(chosen.size()) < k && !rest.empty()) {
      const int j = rng.next_int(static_cast<int>(rest.size()));
      chosen.push_back(rest[j]);
      rest.erase(rest.begin() + j);
    }
  }

  AnchorSet out;
  for (int i : chosen) {
    out.points_a.push_back(candidates[i].a);
    out.points_b.push_back(candidates[i].b);
  }
  out.validate();
  return out;
}

// Displaces a uniformly chosen floor(fraction*K) subset of the b-side points
// by isotropic Gaussian noise of sigma_px pixels (converted per axis), then
// clamps to [0,1]^2. The a side is never touched.
inline AnchorSet perturb_anchors(const AnchorSet& anchors, double fraction, double sigma_px,
                                 int image_h, int image_w, Rng& rng) {
  anchors.validate();
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("perturb_anchors: fraction must be in [0,1]");
  AnchorSet out = anchors;
  const int k = anchors.count();
  const int moved = static_cast<int>(fraction * k);
  if (moved == 0 || sigma_px == 0.0) return out;

  std::vector<int> idx(k);
  std::iota(idx.begin(), idx.end(), 0);
  for (int i = 0; i < moved; ++i) {
    const int j = i + rng.next_int(k - i);
    std::swap(idx[i], idx[j]);
  }
  const double su = sigma_px / static_cast<double>(image_w - 1);
  const double sv = sigma_px / static_cast<double>(image_h - 1);
  for (int i = 0; i < moved; ++i) {
    Vec2& p = out.points_b[idx[i]];
    p.u = clamp01(p.u + rng.normal() * su);
    p.v = clamp01(p.v + rng.normal() * sv);
  }
  return out;
}

// ---- anchor file format: one pair per line "u_a v_a u_b v_b", '#' comments

inline void save_anchors(const std::string& path, const AnchorSet& anchors) {
  anchors.validate();
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write anchor file: " + path);
  out << "# u_a v_a u_b v_b (normalized)\n";
  char line[160];
  for (int i = 0; i < anchors.count(); ++i) {
    std::snprintf(line, sizeof(line), "%.17g %.17g %.17g %.17g\n", anchors.points_a[i].u,
                  anchors.points_a[i].v, anchors.points_b[i].u, anchors.points_b[i].v);
    out << line;
  }
}

inline AnchorSet load_anchors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read anchor file: " + path);
  AnchorSet anchors;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    Vec2 a, b;
    if (!(ls >> a.u >> a.v >> b.u >> b.v))
      throw std::runtime_error("anchor file " + path + ": malformed line " +
                               std::to_string(line_no));
    std::string extra;
    if (ls >> extra)
      throw std::runtime_error("anchor file " + path + ": malformed line " +
                               std::to_string(line_no));
    anchors.points_a.push_back(a);
    anchors.points_b.push_back(b);
  }
  anchors.validate();
  return anchors;
}

}  // namespace anchorcorr
