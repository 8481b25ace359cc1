#pragma once

// Test-only reference implementations: brute-force and closed-form
// counterparts used to derive expected values. Everything here is scalar,
// single-threaded 64-bit code over plain arrays and deliberately shares no
// code with the library under test.

#include <array>
#include <cstdint>
#include <functional>
#include <vector>

namespace oracle {

struct FiniteDiffSpec {
  double h = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;
};

// Central differences per coordinate. Throws std::runtime_error naming the
// coordinate if the function evaluates to a non-finite value.
std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h = 1e-5);

// max over coordinates of |a-n| / max(|a|, |n|, abs_floor).
double max_rel_err(const std::vector<double>& analytic,
                   const std::vector<double>& numeric,
                   double abs_floor = 1e-8);

struct RefGaussian {
  double px, py;  // center, normalized coordinates
  double s1, s2;  // scales
  double phi;     // rotation angle
  double r, g, b; // color
  double o;       // opacity
};

struct RefRender {
  std::vector<double> image;    // H*W*3 row-major
  std::vector<double> coverage; // per-gaussian sum of composited alpha
};

// Raw 9-vector (p_x, p_y, s_1, s_2, phi, r, g, b, o) through the activation
// map: tanh centers, c*sigmoid scales, raw angle, sigmoid colors/opacity.
RefGaussian reference_decode_row(const double* raw, double c);

// 2x2 covariance R diag(s1^2, s2^2) R^T written out as explicit matrix
// products. Returns [[a,b],[b,c]] and the determinant.
struct RefCov {
  double a, b, c, det;
};
RefCov reference_covariance(double s1, double s2, double phi);

// Scalar-loop transliteration of the compositing recurrence: every gaussian
// at every pixel in sequence order, no culling, no tiling, no underflow
// short-circuit. Pixel (row, col) sits at normalized
// (2*col/(W-1) - 1, 2*row/(H-1) - 1); single-pixel axes sit at 0.
RefRender reference_render(const std::vector<RefGaussian>& gs, int width,
                           int height, const std::array<double, 3>& background,
                           double alpha_clamp = 0.999);

// Direct per-window SSIM: 11x11 Gaussian-weighted (sigma 1.5) moments
// computed window by window, C1=0.01^2, C2=0.03^2, valid region only,
// averaged over channels. Images are H*W*C row-major.
double reference_ssim(const std::vector<double>& x, const std::vector<double>& y,
                      int height, int width, int channels);
double reference_dssim(const std::vector<double>& x, const std::vector<double>& y,
                       int height, int width, int channels);

// Hand-stepped AdamW with decoupled weight decay and bias correction.
struct RefAdamState {
  std::vector<double> m, v;
  int64_t t = 0;
};
void reference_adamw(std::vector<double>& params, const std::vector<double>& grads,
                     RefAdamState& state, double lr, double weight_decay,
                     double beta1, double beta2, double eps);

// Closed forms for a linear classifier over flattened gaussian parameters:
// logits_c = sum_m W[c*(9k)+m] * g[m] + bias[c].
std::vector<double> linear_softmax(const std::vector<double>& g,
                                   const std::vector<double>& W,
                                   const std::vector<double>& bias, int k,
                                   int num_classes);
// Per-token scores S_i = sum_j g[i*9+j] * W[class_id*(9k)+i*9+j].
std::vector<double> linear_cdam_closed_form(const std::vector<double>& g,
                                            const std::vector<double>& W, int k,
                                            int num_classes, int class_id);
// d(mean CE over a batch of one)/dg = W^T (softmax - onehot).
std::vector<double> linear_ce_grad_closed_form(const std::vector<double>& g,
                                               const std::vector<double>& W,
                                               const std::vector<double>& bias,
                                               int k, int num_classes, int label);

double psnr_from_mse(double mse);  // 10*log10(1/mse) for unit-range images

}  // namespace oracle
