#pragma once

#include <string>

#include "splat/tensor.hpp"

namespace splat {

// Weights combining the reconstruction, perceptual, and classification
// objectives. gamma is the classifier-guidance coefficient and is kept
// inside [0, 0.1].
struct LossWeights {
  double lambda_perc = 0.1;
  double lambda_cls = 1.0;
  double gamma = 0.0;
};

void validate_weights(const LossWeights& w);

// Mean squared error over all elements.
Tensor mse(const Tensor& rendered, const Tensor& reference);

// Per-element Bernoulli cross-entropy against real-valued intensities in
// [0,1]; rendered values are clamped to [1e-7, 1-1e-7] before the logs.
Tensor bce(const Tensor& rendered, const Tensor& reference);

// Structural dissimilarity (1 - SSIM)/2 with an 11x11 sigma-1.5 Gaussian
// window, valid-region windowing, C1=0.01^2, C2=0.03^2, computed per
// channel and averaged. Requires [H,W,3] with H,W >= 11.
Tensor dssim(const Tensor& rendered, const Tensor& reference);

// Pixel term selected by variant ("mse", "bce", "mse+dssim", "bce+dssim"),
// plus lambda_perc * dssim when the variant includes it.
Tensor reconstruction_loss(const Tensor& rendered, const Tensor& reference,
                           const LossWeights& weights,
                           const std::string& variant = "bce+dssim");

}  // namespace splat
