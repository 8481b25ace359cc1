#pragma once

#include "splat/tensor.hpp"

namespace splat {

// Scales decode into (0, c) in normalized coordinates.
struct ScaleBound {
  double c = 1.0;
};

// Decoded scales at or below this are treated as degenerate when the
// covariance is inverted.
inline constexpr double kEpsScale = 1e-6;

// Raw batches are [k, 9] with columns (p_x, p_y, s_1, s_2, phi, r, g, b, o).
struct DecodedGaussianBatch {
  Tensor centers;    // [k,2] in [-1,1]
  Tensor scales;     // [k,2] in (0,c)
  Tensor rotation;   // [k,1] radians, unbounded
  Tensor colors;     // [k,3] in (0,1)
  Tensor opacities;  // [k,1] in (0,1)
  int64_t k() const { return centers.dim(0); }
};

// Sigma = R(phi) diag(s1^2, s2^2) R(phi)^T as [[a,b],[b,c]], with its
// inverse [[ia,ib],[ib,ic]] and determinant.
struct Covariance2 {
  double a, b, c;
  double det;
  double ia, ib, ic;
};

// tanh centers, c*sigmoid scales, pass-through angle, sigmoid colors and
// opacities. Differentiable end to end.
DecodedGaussianBatch decode(const Tensor& raw, const ScaleBound& bound = {});

// Throws ValidationError when either scale <= kEpsScale.
Covariance2 covariance_from_scales(double s1, double s2, double phi);

// i.i.d. standard normal raw batch, deterministic per seed.
Tensor init_random(int64_t k, uint64_t seed);

// k-means (k-means++ seeding, 20 Lloyd iterations) over RGB pixels; one
// Gaussian per cluster at the member-pixel centroid with the mean color and
// per-axis positional standard deviation as the decoded scale.
Tensor init_kmeans_colors(const Tensor& image, int64_t k, uint64_t seed,
                          const ScaleBound& bound = {});

}  // namespace splat
