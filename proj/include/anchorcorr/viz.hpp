#pragma once

#include <cmath>
#include <vector>

#include "anchorcorr/anchors.hpp"
#include "anchorcorr/evaluation.hpp"
#include "anchorcorr/matching.hpp"
#include "anchorcorr/tensor.hpp"

namespace anchorcorr {

// static-image rendering for the match and curve outputs

namespace viz {

inline void put_pixel(Tensor& canvas, int r, int c, double red, double green, double blue) {
  const int h = canvas.dim(1), w = canvas.dim(2);
  if (r < 0 || r >= h || c < 0 || c >= w) return;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  canvas.values()[0 * plane + static_cast<std::size_t>(r) * w + c] = red;
  canvas.values()[1 * plane + static_cast<std::size_t>(r) * w + c] = green;
  canvas.values()[2 * plane + static_cast<std::size_t>(r) * w + c] = blue;
}

inline void draw_line(Tensor& canvas, int r0, int c0, int r1, int c1, double red, double green,
                      double blue) {
  // Bresenham
  const int dr = std::abs(r1 - r0), dc = std::abs(c1 - c0);
  const int sr = r0 < r1 ? 1 : -1, sc = c0 < c1 ? 1 : -1;
  int err = (dc > dr ? dc : -dr) / 2;
  for (;;) {
    put_pixel(canvas, r0, c0, red, green, blue);
    if (r0 == r1 && c0 == c1) break;
    const int e2 = err;
    if (e2 > -dc) {
      err -= dr;
      c0 += sc;
    }
    if (e2 < dr) {
      err += dc;
      r0 += sr;
    }
  }
}

inline void draw_marker(Tensor& canvas, int r, int c, int half, double red, double green,
                        double blue) {
  for (int i = -half; i <= half; ++i) {
    put_pixel(canvas, r + i, c - half, red, green, blue);
    put_pixel(canvas, r + i, c + half, red, green, blue);
    put_pixel(canvas, r - half, c + i, red, green, blue);
    put_pixel(canvas, r + half, c + i, red, green, blue);
  }
}

inline void index_color(int i, double& red, double& green, double& blue) {
  // rotate hue; avoids pure green which marks anchors
  const double t = 0.61803398875 * i;
  const double hue = 6.0 * (t - std::floor(t));
  const int sector = static_cast<int>(hue);
  const double f = hue - sector;
  switch (sector % 6) {
    case 0: red = 1, green = f * 0.6, blue = 0.2; break;
    case 1: red = 1 - f, green = 0.4, blue = 1; break;
    case 2: red = 0.2, green = 0.5 * f, blue = 1; break;
    case 3: red = f, green = 0.3, blue = 1 - f; break;
    case 4: red = 1, green = 0.2, blue = f; break;
    default: red = 1, green = 0.5 * (1 - f), blue = 1 - f; break;
  }
}

}  // namespace viz

// Side-by-side pair with anchors marked in green on both images and one
// line per match, query on the left and its correspondence on the right.
inline Tensor render_matches(const Tensor& image_a, const Tensor& image_b,
                             const AnchorSet& anchors, const std::vector<MatchResult>& matches,
                             int max_lines = 200) {
  const int ha = image_a.dim(1), wa = image_a.dim(2);
  const int hb = image_b.dim(1), wb = image_b.dim(2);
  const int gap = 8;
  const int h = std::max(ha, hb), w = wa + gap + wb;
  Tensor canvas = Tensor::full({3, h, w}, 1.0);

  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto blit = [&](const Tensor& img, int off_c) {
    const int ih = img.dim(1), iw = img.dim(2);
    const std::size_t iplane = static_cast<std::size_t>(ih) * iw;
    for (int ch = 0; ch < 3; ++ch)
      for (int r = 0; r < ih; ++r)
        for (int c = 0; c < iw; ++c)
          canvas.values()[ch * plane + static_cast<std::size_t>(r) * w + (c + off_c)] =
              img.values()[ch * iplane + static_cast<std::size_t>(r) * iw + c];
  };
  blit(image_a, 0);
  blit(image_b, wa + gap);

  auto to_px = [](const Vec2& p, int ih, int iw) {
    return std::pair<int, int>{static_cast<int>(std::lround(p.v * (ih - 1))),
                               static_cast<int>(std::lround(p.u * (iw - 1)))};
  };

  for (int i = 0; i < anchors.count(); ++i) {
    auto [ra, ca] = to_px(anchors.points_a[i], ha, wa);
    auto [rb, cb] = to_px(anchors.points_b[i], hb, wb);
    viz::draw_marker(canvas, ra, ca, 2, 0.0, 1.0, 0.0);
    viz::draw_marker(canvas, rb, cb + wa + gap, 2, 0.0, 1.0, 0.0);
  }

  const int n = std::min<int>(max_lines, static_cast<int>(matches.size()));
  for (int i = 0; i < n; ++i) {
    double red, green, blue;
    viz::index_color(i, red, green, blue);
    auto [r0, c0] = to_px(matches[i].query, ha, wa);
    auto [r1, c1] = to_px(clamp_unit(matches[i].fine_match), hb, wb);
    viz::draw_line(canvas, r0, c0, r1, c1 + wa + gap, red, green, blue);
  }
  return canvas;
}

// simple line plot of a metric curve on a white canvas with axes
inline Tensor render_curve(const MetricCurve& curve, int h = 240, int w = 320) {
  Tensor canvas = Tensor::full({3, h, w}, 1.0);
  const int m = 24;  // margin
  viz::draw_line(canvas, h - m, m, h - m, w - m, 0, 0, 0);  // x axis
  viz::draw_line(canvas, m, m, h - m, m, 0, 0, 0);          // y axis
  if (curve.thresholds.empty()) return canvas;

  const double tmax = curve.thresholds.back();
  int prev_r = -1, prev_c = -1;
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    const int c = m + static_cast<int>((w - 2 * m) * curve.thresholds[i] / tmax);
    const int r = h - m - static_cast<int>((h - 2 * m) * curve.values[i]);
    viz::draw_marker(canvas, r, c, 2, 0.8, 0.2, 0.1);
    if (prev_r >= 0) viz::draw_line(canvas, prev_r, prev_c, r, c, 0.8, 0.2, 0.1);
    prev_r = r;
    prev_c = c;
  }
  return canvas;
}

}  // namespace anchorcorr
