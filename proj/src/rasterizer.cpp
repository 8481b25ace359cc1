#include "splat/rasterizer.hpp"

#include <algorithm>
#include <cmath>

namespace splat {

namespace {

struct GaussView {
  double px, py;
  double s1, s2, v1, v2;  // scales and their squares
  double co, si;          // cos phi, sin phi
  double r, g, b, o;
};

void validate_target(const RenderTarget& t) {
  if (t.width < 1 || t.height < 1)
    throw ValidationError("render: target size " + std::to_string(t.width) + "x" +
                          std::to_string(t.height) + " must be at least 1x1");
  for (double v : t.background)
    if (!(v >= 0.0 && v <= 1.0))
      throw ValidationError("render: background component " + std::to_string(v) +
                            " outside [0,1]");
  if (!(t.alpha_clamp > 0.0 && t.alpha_clamp <= 1.0))
    throw ValidationError("render: alpha_clamp " + std::to_string(t.alpha_clamp) +
                          " outside (0,1]");
}

int64_t checked_k(const DecodedGaussianBatch& b) {
  auto want = [](const Tensor& t, int64_t cols, const char* name, int64_t k) {
    if (!t.defined() || t.ndim() != 2 || t.dim(1) != cols || t.dim(0) != k)
      throw DimensionError(std::string("render: ") + name + " must be [" +
                           std::to_string(k) + "," + std::to_string(cols) + "]");
  };
  if (!b.centers.defined() || b.centers.ndim() != 2 || b.centers.dim(1) != 2)
    throw DimensionError("render: centers must be [k,2]");
  int64_t k = b.centers.dim(0);
  want(b.scales, 2, "scales", k);
  want(b.rotation, 1, "rotation", k);
  want(b.colors, 3, "colors", k);
  want(b.opacities, 1, "opacities", k);
  return k;
}

std::vector<GaussView> make_views(const DecodedGaussianBatch& b) {
  const int64_t k = checked_k(b);
  std::vector<GaussView> views(k);
  for (int64_t i = 0; i < k; ++i) {
    GaussView& v = views[i];
    v.px = b.centers.data()[i * 2 + 0];
    v.py = b.centers.data()[i * 2 + 1];
    v.s1 = b.scales.data()[i * 2 + 0];
    v.s2 = b.scales.data()[i * 2 + 1];
    if (v.s1 <= kEpsScale || v.s2 <= kEpsScale)
      throw ValidationError("render: degenerate gaussian " + std::to_string(i) +
                            " with scales (" + std::to_string(v.s1) + ", " +
                            std::to_string(v.s2) + ")");
    v.v1 = v.s1 * v.s1;
    v.v2 = v.s2 * v.s2;
    double phi = b.rotation.data()[i];
    v.co = std::cos(phi);
    v.si = std::sin(phi);
    v.r = b.colors.data()[i * 3 + 0];
    v.g = b.colors.data()[i * 3 + 1];
    v.b = b.colors.data()[i * 3 + 2];
    v.o = b.opacities.data()[i];
    for (double x : {v.px, v.py, phi})
      if (!std::isfinite(x))
        throw ValidationError("render: non-finite parameter in gaussian " +
                              std::to_string(i));
    for (double x : {v.r, v.g, v.b, v.o})
      if (!(x >= 0.0 && x <= 1.0))
        throw ValidationError("render: color/opacity of gaussian " + std::to_string(i) +
                              " outside [0,1]");
  }
  return views;
}

std::vector<double> pixel_axis(int64_t n) {
  std::vector<double> xs(n);
  for (int64_t i = 0; i < n; ++i) xs[i] = n > 1 ? 2.0 * i / (n - 1) - 1.0 : 0.0;
  return xs;
}

std::vector<std::vector<int32_t>> build_tiles(const std::vector<GaussView>& views,
                                              const RenderTarget& t) {
  const int64_t tiles_x = (t.width + kTileSize - 1) / kTileSize;
  const int64_t tiles_y = (t.height + kTileSize - 1) / kTileSize;
  std::vector<std::vector<int32_t>> lists(tiles_x * tiles_y);
  if (t.exact) {
    for (auto& l : lists) {
      l.resize(views.size());
      for (size_t i = 0; i < views.size(); ++i) l[i] = static_cast<int32_t>(i);
    }
    return lists;
  }
  // pixels per unit of normalized coordinate
  const double sx = t.width > 1 ? (t.width - 1) / 2.0 : 0.0;
  const double sy = t.height > 1 ? (t.height - 1) / 2.0 : 0.0;
  for (size_t i = 0; i < views.size(); ++i) {
    const GaussView& v = views[i];
    // axis-aligned extents of the kCullRadius-sigma ellipse: r*sqrt(Sigma_xx)
    double cov_xx = v.co * v.co * v.v1 + v.si * v.si * v.v2;
    double cov_yy = v.si * v.si * v.v1 + v.co * v.co * v.v2;
    double hx = kCullRadius * std::sqrt(cov_xx);
    double hy = kCullRadius * std::sqrt(cov_yy);
    int64_t c_lo = t.width > 1
                       ? static_cast<int64_t>(std::floor((v.px - hx + 1.0) * sx))
                       : 0;
    int64_t c_hi = t.width > 1
                       ? static_cast<int64_t>(std::ceil((v.px + hx + 1.0) * sx))
                       : 0;
    int64_t r_lo = t.height > 1
                       ? static_cast<int64_t>(std::floor((v.py - hy + 1.0) * sy))
                       : 0;
    int64_t r_hi = t.height > 1
                       ? static_cast<int64_t>(std::ceil((v.py + hy + 1.0) * sy))
                       : 0;
    c_lo = std::max<int64_t>(0, c_lo);
    r_lo = std::max<int64_t>(0, r_lo);
    c_hi = std::min<int64_t>(t.width - 1, c_hi);
    r_hi = std::min<int64_t>(t.height - 1, r_hi);
    if (c_lo > c_hi || r_lo > r_hi) continue;  // fully off-canvas
    for (int64_t ty = r_lo / kTileSize; ty <= r_hi / kTileSize; ++ty)
      for (int64_t tx = c_lo / kTileSize; tx <= c_hi / kTileSize; ++tx)
        lists[ty * tiles_x + tx].push_back(static_cast<int32_t>(i));
  }
  return lists;
}

struct ForwardResult {
  std::vector<double> image;
  std::vector<double> coverage;
};

ForwardResult forward_splat(const std::vector<GaussView>& views,
                            const RenderTarget& t) {
  const int64_t W = t.width, H = t.height;
  const auto xs = pixel_axis(W);
  const auto ys = pixel_axis(H);
  const auto lists = build_tiles(views, t);
  const int64_t tiles_x = (W + kTileSize - 1) / kTileSize;
  const int64_t n_tiles = static_cast<int64_t>(lists.size());

  ForwardResult out;
  out.image.assign(H * W * 3, 0.0);
  out.coverage.assign(views.size(), 0.0);
  // per-tile coverage, reduced in tile order after the parallel section
  std::vector<std::vector<double>> tile_cov(n_tiles);

  parallel_chunks(
      n_tiles,
      [&](int64_t lo, int64_t hi) {
        for (int64_t tile = lo; tile < hi; ++tile) {
          const auto& list = lists[tile];
          auto& cov = tile_cov[tile];
          cov.assign(list.size(), 0.0);
          const int64_t r0 = (tile / tiles_x) * kTileSize;
          const int64_t c0 = (tile % tiles_x) * kTileSize;
          const int64_t r1 = std::min(H, r0 + kTileSize);
          const int64_t c1 = std::min(W, c0 + kTileSize);
          for (int64_t row = r0; row < r1; ++row) {
            for (int64_t col = c0; col < c1; ++col) {
              double T = 1.0;
              double acc0 = 0.0, acc1 = 0.0, acc2 = 0.0;
              for (size_t j = 0; j < list.size(); ++j) {
                const GaussView& v = views[list[j]];
                double dx = xs[col] - v.px;
                double dy = ys[row] - v.py;
                double u1 = v.co * dx + v.si * dy;
                double u2 = -v.si * dx + v.co * dy;
                double e = 0.5 * (u1 * u1 / v.v1 + u2 * u2 / v.v2);
                if (!t.exact && e > kExpGuard) continue;
                double alpha = std::min(v.o * std::exp(-e), t.alpha_clamp);
                double contrib = alpha * T;
                acc0 += contrib * v.r;
                acc1 += contrib * v.g;
                acc2 += contrib * v.b;
                cov[j] += contrib;
                T *= 1.0 - alpha;
              }
              double* p = out.image.data() + (row * W + col) * 3;
              p[0] = acc0 + T * t.background[0];
              p[1] = acc1 + T * t.background[1];
              p[2] = acc2 + T * t.background[2];
            }
          }
        }
      },
      1);

  for (int64_t tile = 0; tile < n_tiles; ++tile)
    for (size_t j = 0; j < lists[tile].size(); ++j)
      out.coverage[lists[tile][j]] += tile_cov[tile][j];
  return out;
}

RenderGrads backward_splat(const std::vector<GaussView>& views,
                           const RenderTarget& t,
                           const std::vector<double>& upstream) {
  const int64_t W = t.width, H = t.height;
  if (static_cast<int64_t>(upstream.size()) != H * W * 3)
    throw ContractError("render_backward: upstream has " +
                        std::to_string(upstream.size()) + " values for " +
                        std::to_string(H) + "x" + std::to_string(W) + "x3");
  const auto xs = pixel_axis(W);
  const auto ys = pixel_axis(H);
  const auto lists = build_tiles(views, t);
  const int64_t tiles_x = (W + kTileSize - 1) / kTileSize;
  const int64_t n_tiles = static_cast<int64_t>(lists.size());
  const int64_t k = static_cast<int64_t>(views.size());

  // per-tile gradient buffers over that tile's list, reduced in tile order
  std::vector<std::vector<double>> tile_grads(n_tiles);

  parallel_chunks(
      n_tiles,
      [&](int64_t lo, int64_t hi) {
        struct Hit {
          int32_t j;  // position within the tile list
          double alpha, T, w, u1, u2, dclamped;
        };
        std::vector<Hit> hits;
        for (int64_t tile = lo; tile < hi; ++tile) {
          const auto& list = lists[tile];
          auto& grads = tile_grads[tile];
          grads.assign(list.size() * 9, 0.0);
          const int64_t r0 = (tile / tiles_x) * kTileSize;
          const int64_t c0 = (tile % tiles_x) * kTileSize;
          const int64_t r1 = std::min(H, r0 + kTileSize);
          const int64_t c1 = std::min(W, c0 + kTileSize);
          for (int64_t row = r0; row < r1; ++row) {
            for (int64_t col = c0; col < c1; ++col) {
              const double* up = upstream.data() + (row * W + col) * 3;
              // forward replay recording the compositing state
              hits.clear();
              double T = 1.0;
              for (size_t j = 0; j < list.size(); ++j) {
                const GaussView& v = views[list[j]];
                double dx = xs[col] - v.px;
                double dy = ys[row] - v.py;
                double u1 = v.co * dx + v.si * dy;
                double u2 = -v.si * dx + v.co * dy;
                double e = 0.5 * (u1 * u1 / v.v1 + u2 * u2 / v.v2);
                if (!t.exact && e > kExpGuard) continue;
                double w = std::exp(-e);
                double raw_alpha = v.o * w;
                double alpha = std::min(raw_alpha, t.alpha_clamp);
                hits.push_back({static_cast<int32_t>(j), alpha, T, w, u1, u2,
                                raw_alpha < t.alpha_clamp ? 1.0 : 0.0});
                T *= 1.0 - alpha;
              }
              // back-to-front: S accumulates everything composited behind i
              double S0 = T * t.background[0];
              double S1 = T * t.background[1];
              double S2 = T * t.background[2];
              for (size_t h = hits.size(); h-- > 0;) {
                const Hit& hit = hits[h];
                const GaussView& v = views[list[hit.j]];
                double* g = grads.data() + static_cast<int64_t>(hit.j) * 9;
                double contrib = hit.alpha * hit.T;
                // color gradient: compositing is linear in color
                g[5] += up[0] * contrib;
                g[6] += up[1] * contrib;
                g[7] += up[2] * contrib;
                double denom = 1.0 - hit.alpha;
                double galpha = 0.0;
                if (denom > 1e-15) {
                  galpha += up[0] * (hit.T * v.r - S0 / denom);
                  galpha += up[1] * (hit.T * v.g - S1 / denom);
                  galpha += up[2] * (hit.T * v.b - S2 / denom);
                } else {
                  galpha += up[0] * hit.T * v.r + up[1] * hit.T * v.g +
                            up[2] * hit.T * v.b;
                }
                S0 += contrib * v.r;
                S1 += contrib * v.g;
                S2 += contrib * v.b;
                if (hit.dclamped == 0.0) continue;  // flat side of the clamp
                g[8] += galpha * hit.w;  // d alpha / d o
                double ge = -galpha * v.o * hit.w;  // through w = exp(-e)
                // e = (u1^2/v1 + u2^2/v2)/2 with u = R^T d
                g[2] += ge * (-hit.u1 * hit.u1 / (v.v1 * v.s1));
                g[3] += ge * (-hit.u2 * hit.u2 / (v.v2 * v.s2));
                g[4] += ge * hit.u1 * hit.u2 * (1.0 / v.v1 - 1.0 / v.v2);
                double q1 = hit.u1 / v.v1;
                double q2 = hit.u2 / v.v2;
                double vx = v.co * q1 - v.si * q2;  // Sigma^-1 d
                double vy = v.si * q1 + v.co * q2;
                g[0] -= ge * vx;
                g[1] -= ge * vy;
              }
            }
          }
        }
      },
      1);

  RenderGrads out;
  out.centers.assign(k * 2, 0.0);
  out.scales.assign(k * 2, 0.0);
  out.rotation.assign(k, 0.0);
  out.colors.assign(k * 3, 0.0);
  out.opacities.assign(k, 0.0);
  for (int64_t tile = 0; tile < n_tiles; ++tile) {
    const auto& list = lists[tile];
    const auto& g = tile_grads[tile];
    for (size_t j = 0; j < list.size(); ++j) {
      const int64_t i = list[j];
      const double* src = g.data() + static_cast<int64_t>(j) * 9;
      out.centers[i * 2 + 0] += src[0];
      out.centers[i * 2 + 1] += src[1];
      out.scales[i * 2 + 0] += src[2];
      out.scales[i * 2 + 1] += src[3];
      out.rotation[i] += src[4];
      out.colors[i * 3 + 0] += src[5];
      out.colors[i * 3 + 1] += src[6];
      out.colors[i * 3 + 2] += src[7];
      out.opacities[i] += src[8];
    }
  }
  return out;
}

}  // namespace

RenderOutput render(const DecodedGaussianBatch& batch, const RenderTarget& target) {
  validate_target(target);
  auto views = make_views(batch);
  ForwardResult fr = forward_splat(views, target);

  RenderTarget t = target;
  auto fwd_data = fr.image;
  Tensor image = custom_node(
      "render", {target.height, target.width, 3},
      [fwd_data](const std::vector<Tensor>&) { return fwd_data; },
      [t](const std::vector<double>& up, const std::vector<Tensor>& in) {
        DecodedGaussianBatch b{in[0], in[1], in[2], in[3], in[4]};
        RenderGrads g = backward_splat(make_views(b), t, up);
        return std::vector<std::vector<double>>{
            std::move(g.centers), std::move(g.scales), std::move(g.rotation),
            std::move(g.colors), std::move(g.opacities)};
      },
      {batch.centers, batch.scales, batch.rotation, batch.colors, batch.opacities});

  return {std::move(image), std::move(fr.coverage)};
}

RenderGrads render_backward(const DecodedGaussianBatch& batch,
                            const RenderTarget& target,
                            const std::vector<double>& upstream) {
  validate_target(target);
  return backward_splat(make_views(batch), target, upstream);
}

std::vector<std::vector<int32_t>> cull_and_tile(const DecodedGaussianBatch& batch,
                                                const RenderTarget& target) {
  validate_target(target);
  return build_tiles(make_views(batch), target);
}

}  // namespace splat
