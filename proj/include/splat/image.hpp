#pragma once

#include <string>
#include <vector>

#include "splat/gaussian.hpp"
#include "splat/tensor.hpp"

namespace splat {

// All images are [H,W,3] tensors with values in [0,1]. Readers convert
// gray/alpha inputs to RGB; writers clamp and quantize to 8 bits.

Tensor read_png(const std::string& path);
void write_png(const std::string& path, const Tensor& image);

Tensor read_ppm(const std::string& path);  // binary P6, 8-bit
void write_ppm(const std::string& path, const Tensor& image);

// Dispatch on extension: .png, .ppm.
Tensor read_image(const std::string& path);
void write_image(const std::string& path, const Tensor& image);

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w);
Tensor hflip(const Tensor& image);

// Draws the n-sigma outline of each gaussian in its own color over a copy
// of the image; returns the number of pixels touched per gaussian
// (0 when the ellipse lies entirely outside the frame).
std::vector<int64_t> overlay_ellipses(Tensor& image,
                                      const DecodedGaussianBatch& batch,
                                      double n_sigma = 2.0);

// Side-by-side horizontal composite (equal heights required).
Tensor hstack_images(const Tensor& left, const Tensor& right);

}  // namespace splat
