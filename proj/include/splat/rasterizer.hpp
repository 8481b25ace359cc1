#pragma once

#include <array>

#include "splat/gaussian.hpp"
#include "splat/tensor.hpp"

namespace splat {

struct RenderTarget {
  int64_t width = 32;
  int64_t height = 32;
  std::array<double, 3> background = {0.0, 0.0, 0.0};
  double alpha_clamp = 0.999;
  // Exhaustive mode: every Gaussian at every pixel, no culling and no
  // underflow short-circuit. Reference-grade, slow.
  bool exact = false;
};

struct RenderOutput {
  Tensor image;                   // [H,W,3]; joins the tape when inputs require grad
  std::vector<double> coverage;   // per-gaussian sum of composited alpha
};

struct RenderGrads {
  std::vector<double> centers;    // k*2
  std::vector<double> scales;     // k*2
  std::vector<double> rotation;   // k
  std::vector<double> colors;     // k*3
  std::vector<double> opacities;  // k
};

constexpr int kTileSize = 16;
// Culling box half-width in standard deviations. The exponent guard zeroes
// weights once the Mahalanobis form exceeds kExpGuard (about 6.32 sigma),
// so any box at least that wide keeps culled output identical to the
// guarded exhaustive pass and within k*e^-20 of the unguarded one.
constexpr double kCullRadius = 6.5;
constexpr double kExpGuard = 20.0;

// Front-to-back compositing of the batch in input-sequence order:
// w_i = exp(-0.5 d^T Sigma_i^-1 d), alpha_i = min(o_i w_i, alpha_clamp),
// C = sum alpha_i T_i c_i + T_final * background. Pixel (row, col) sits at
// normalized (2 col/(W-1) - 1, 2 row/(H-1) - 1).
RenderOutput render(const DecodedGaussianBatch& batch, const RenderTarget& target);

// Analytic d(sum upstream*C)/d{decoded fields}; the clamped branch of
// alpha contributes zero gradient. upstream is H*W*3 row-major.
RenderGrads render_backward(const DecodedGaussianBatch& batch,
                            const RenderTarget& target,
                            const std::vector<double>& upstream);

// Row-major tile lists (ascending Gaussian indices) from the axis-aligned
// kCullRadius-sigma bounding boxes; exact mode lists every Gaussian in
// every tile.
std::vector<std::vector<int32_t>> cull_and_tile(const DecodedGaussianBatch& batch,
                                                const RenderTarget& target);

}  // namespace splat
