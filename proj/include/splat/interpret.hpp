#pragma once

#include <string>
#include <vector>

#include "splat/gaussian.hpp"
#include "splat/models.hpp"

namespace splat {

// Saliency artifacts are projected onto a fixed 16x16 grid over the
// normalized coordinate square [-1,1)^2 with half-open cells; a center
// sitting exactly on the far edge (+1.0 after tanh saturation) belongs to
// no cell and is dropped.
inline constexpr int64_t kSaliencyGrid = 16;

struct SaliencyMap {
  Tensor grid;                        // [16,16], row = y bin, col = x bin
  std::string normalization = "raw";  // "raw" | "minmax"
  int class_id = -1;                  // -1 when not class-specific
};

struct DetMapResult {
  std::vector<double> dets;  // det(Sigma_i) = s1^2 * s2^2 per gaussian
  SaliencyMap map;           // mean of -log det per cell; empty cells 0
};

// Footprint map: small gaussians mark salient regions, so each cell holds
// the mean of -log det(Sigma) over the gaussians centered inside it.
DetMapResult det_sigma_map(const DecodedGaussianBatch& batch);

// Class-discriminative attribution: capture the token activations entering
// the classifier's final transformer block (or the raw 9-parameter inputs
// when on_raw_inputs), backpropagate the class_id logit to them, and sum
// the per-token inner products S_i = sum_j a_ij * d f_c / d a_ij into the
// cell holding gaussian i's center. Classifier parameters are left
// untouched (gradients flow through but are not accumulated on them).
// `token_scores`, when given, receives the per-gaussian S_i before binning.
SaliencyMap cdam(const Tensor& raw_gaussians, const GaussianClassifier& classifier,
                 int class_id, bool on_raw_inputs = false,
                 std::vector<double>* token_scores = nullptr);

// (v - min) / (max - min); a constant grid maps to all zeros.
SaliencyMap minmax_normalize(const SaliencyMap& map);

// Heatmap colormap (documented so files can be decoded): after minmax
// normalization and 8-bit quantization, R = v, G = 4v(1-v), B = 1 - v.
// The red channel therefore stores the normalized value directly.
Tensor heatmap_image(const SaliencyMap& map, int64_t upscale);

// heatmap_image written as PNG.
void export_heatmap(const SaliencyMap& map, const std::string& path,
                    int64_t upscale);

// CSV dump "index,center_x,center_y,det,score" per gaussian; scores may be
// empty (written as 0).
void saliency_csv(const DecodedGaussianBatch& batch,
                  const std::vector<double>& dets,
                  const std::vector<double>& scores, const std::string& path);

}  // namespace splat
