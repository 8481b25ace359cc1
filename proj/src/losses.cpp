#include "splat/losses.hpp"

#include <cmath>

namespace splat {

namespace {

constexpr double kBceEps = 1e-7;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

void check_pair(const Tensor& rendered, const Tensor& reference, const char* op) {
  if (rendered.shape() != reference.shape())
    throw ContractError(std::string(op) + ": shape mismatch " +
                        shape_str(rendered.shape()) + " vs " +
                        shape_str(reference.shape()));
  for (double v : rendered.data())
    if (!std::isfinite(v))
      throw ValidationError(std::string(op) + ": rendered has a non-finite value");
  for (double v : reference.data())
    if (!std::isfinite(v))
      throw ValidationError(std::string(op) + ": reference has a non-finite value");
}

}  // namespace

void validate_weights(const LossWeights& w) {
  if (w.lambda_perc < 0.0 || !std::isfinite(w.lambda_perc))
    throw ValidationError("LossWeights: lambda_perc must be non-negative");
  if (w.lambda_cls < 0.0 || !std::isfinite(w.lambda_cls))
    throw ValidationError("LossWeights: lambda_cls must be non-negative");
  if (!(w.gamma >= 0.0 && w.gamma <= 0.1))
    throw ValidationError("LossWeights: gamma must lie in [0, 0.1], got " +
                          std::to_string(w.gamma));
}

Tensor mse(const Tensor& rendered, const Tensor& reference) {
  check_pair(rendered, reference, "mse");
  Tensor diff = sub(rendered, reference);
  return mean(mul(diff, diff));
}

Tensor bce(const Tensor& rendered, const Tensor& reference) {
  check_pair(rendered, reference, "bce");
  for (double v : reference.data())
    if (v < 0.0 || v > 1.0)
      throw ValidationError("bce: reference value " + std::to_string(v) +
                            " outside [0,1]");
  for (double v : rendered.data())
    if (v < 0.0 || v > 1.0)
      throw ValidationError("bce: rendered value " + std::to_string(v) +
                            " outside [0,1]");
  Tensor x = clamp(rendered, kBceEps, 1.0 - kBceEps);
  Tensor one = Tensor::scalar(1.0);
  Tensor one_minus_y = neg(sub(reference, one));
  Tensor one_minus_x = neg(sub(x, one));
  Tensor term = add(mul(reference, log(x)), mul(one_minus_y, log(one_minus_x)));
  return neg(mean(term));
}

Tensor dssim(const Tensor& rendered, const Tensor& reference) {
  check_pair(rendered, reference, "dssim");
  if (rendered.ndim() != 3 || rendered.dim(2) != 3)
    throw ContractError("dssim: need [H,W,3], got " + shape_str(rendered.shape()));
  if (rendered.dim(0) < 11 || rendered.dim(1) < 11)
    throw ValidationError("dssim: image " + shape_str(rendered.shape()) +
                          " smaller than the 11x11 window");
  Tensor mu_x = gaussian_blur_valid(rendered);
  Tensor mu_y = gaussian_blur_valid(reference);
  Tensor mu_x2 = mul(mu_x, mu_x);
  Tensor mu_y2 = mul(mu_y, mu_y);
  Tensor mu_xy = mul(mu_x, mu_y);
  Tensor sigma_x2 = sub(gaussian_blur_valid(mul(rendered, rendered)), mu_x2);
  Tensor sigma_y2 = sub(gaussian_blur_valid(mul(reference, reference)), mu_y2);
  Tensor sigma_xy = sub(gaussian_blur_valid(mul(rendered, reference)), mu_xy);
  Tensor c1 = Tensor::scalar(kSsimC1);
  Tensor c2 = Tensor::scalar(kSsimC2);
  Tensor num = mul(add(add(mu_xy, mu_xy), c1), add(add(sigma_xy, sigma_xy), c2));
  Tensor den = mul(add(add(mu_x2, mu_y2), c1), add(add(sigma_x2, sigma_y2), c2));
  // every channel contributes the same number of valid windows, so the
  // global mean equals the per-channel mean averaged over channels
  Tensor ssim = mean(div(num, den));
  return mul(sub(Tensor::scalar(1.0), ssim), Tensor::scalar(0.5));
}

Tensor reconstruction_loss(const Tensor& rendered, const Tensor& reference,
                           const LossWeights& weights, const std::string& variant) {
  validate_weights(weights);
  Tensor pix;
  bool with_perc = false;
  if (variant == "mse") {
    pix = mse(rendered, reference);
  } else if (variant == "bce") {
    pix = bce(rendered, reference);
  } else if (variant == "mse+dssim") {
    pix = mse(rendered, reference);
    with_perc = true;
  } else if (variant == "bce+dssim") {
    pix = bce(rendered, reference);
    with_perc = true;
  } else {
    throw ContractError("reconstruction_loss: unknown variant '" + variant +
                        "' (expected mse, bce, mse+dssim, or bce+dssim)");
  }
  if (!with_perc || weights.lambda_perc == 0.0) return pix;
  return add(pix, mul(Tensor::scalar(weights.lambda_perc),
                      dssim(rendered, reference)));
}

}  // namespace splat
