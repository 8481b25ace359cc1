#include "oracles.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace oracle {

std::vector<double> finite_diff(
    const std::function<double(const std::vector<double>&)>& f,
    std::vector<double> x, double h) {
  std::vector<double> grad(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    double keep = x[i];
    x[i] = keep + h;
    double fp = f(x);
    x[i] = keep - h;
    double fm = f(x);
    x[i] = keep;
    if (!std::isfinite(fp) || !std::isfinite(fm))
      throw std::runtime_error("finite_diff: non-finite value at coordinate " +
                               std::to_string(i));
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

double max_rel_err(const std::vector<double>& analytic,
                   const std::vector<double>& numeric, double abs_floor) {
  if (analytic.size() != numeric.size())
    throw std::runtime_error("max_rel_err: size mismatch");
  double worst = 0.0;
  for (size_t i = 0; i < analytic.size(); ++i) {
    double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric[i]), abs_floor});
    worst = std::max(worst, std::fabs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

RefGaussian reference_decode_row(const double* raw, double c) {
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  RefGaussian g;
  g.px = std::tanh(raw[0]);
  g.py = std::tanh(raw[1]);
  g.s1 = c * sig(raw[2]);
  g.s2 = c * sig(raw[3]);
  g.phi = raw[4];
  g.r = sig(raw[5]);
  g.g = sig(raw[6]);
  g.b = sig(raw[7]);
  g.o = sig(raw[8]);
  return g;
}

RefCov reference_covariance(double s1, double s2, double phi) {
  // R * S, then (RS) * (RS)^T, written out element by element.
  double R[2][2] = {{std::cos(phi), -std::sin(phi)}, {std::sin(phi), std::cos(phi)}};
  double RS[2][2] = {{R[0][0] * s1, R[0][1] * s2}, {R[1][0] * s1, R[1][1] * s2}};
  RefCov out;
  out.a = RS[0][0] * RS[0][0] + RS[0][1] * RS[0][1];
  out.b = RS[0][0] * RS[1][0] + RS[0][1] * RS[1][1];
  out.c = RS[1][0] * RS[1][0] + RS[1][1] * RS[1][1];
  out.det = out.a * out.c - out.b * out.b;
  return out;
}

RefRender reference_render(const std::vector<RefGaussian>& gs, int width,
                           int height, const std::array<double, 3>& background,
                           double alpha_clamp) {
  RefRender out;
  out.image.assign(static_cast<size_t>(width) * height * 3, 0.0);
  out.coverage.assign(gs.size(), 0.0);
  for (int row = 0; row < height; ++row) {
    double y = height > 1 ? 2.0 * row / (height - 1) - 1.0 : 0.0;
    for (int col = 0; col < width; ++col) {
      double x = width > 1 ? 2.0 * col / (width - 1) - 1.0 : 0.0;
      double T = 1.0;
      double acc[3] = {0.0, 0.0, 0.0};
      for (size_t i = 0; i < gs.size(); ++i) {
        const RefGaussian& g = gs[i];
        RefCov cov = reference_covariance(g.s1, g.s2, g.phi);
        // generic 2x2 inverse by adjugate
        double ia = cov.c / cov.det;
        double ib = -cov.b / cov.det;
        double ic = cov.a / cov.det;
        double dx = x - g.px;
        double dy = y - g.py;
        double q = dx * (ia * dx + ib * dy) + dy * (ib * dx + ic * dy);
        double w = std::exp(-0.5 * q);
        double alpha = std::min(g.o * w, alpha_clamp);
        out.coverage[i] += alpha * T;
        acc[0] += alpha * T * g.r;
        acc[1] += alpha * T * g.g;
        acc[2] += alpha * T * g.b;
        T *= 1.0 - alpha;
      }
      size_t p = (static_cast<size_t>(row) * width + col) * 3;
      out.image[p + 0] = acc[0] + T * background[0];
      out.image[p + 1] = acc[1] + T * background[1];
      out.image[p + 2] = acc[2] + T * background[2];
    }
  }
  return out;
}

namespace {

// normalized 2D Gaussian window, 11x11, sigma 1.5
const double* ssim_window() {
  static double w2[121];
  static bool done = [] {
    double w1[11];
    double s = 0.0;
    for (int i = 0; i < 11; ++i) {
      double d = i - 5.0;
      w1[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      s += w1[i];
    }
    for (int i = 0; i < 11; ++i) w1[i] /= s;
    for (int i = 0; i < 11; ++i)
      for (int j = 0; j < 11; ++j) w2[i * 11 + j] = w1[i] * w1[j];
    return true;
  }();
  (void)done;
  return w2;
}

}  // namespace

double reference_ssim(const std::vector<double>& x, const std::vector<double>& y,
                      int height, int width, int channels) {
  if (height < 11 || width < 11)
    throw std::runtime_error("reference_ssim: image smaller than the window");
  const double* w2 = ssim_window();
  const double c1 = 0.01 * 0.01;
  const double c2 = 0.03 * 0.03;
  double total = 0.0;
  int64_t count = 0;
  for (int c = 0; c < channels; ++c) {
    for (int i0 = 0; i0 + 11 <= height; ++i0) {
      for (int j0 = 0; j0 + 11 <= width; ++j0) {
        double mx = 0.0, my = 0.0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            size_t p = (static_cast<size_t>(i0 + i) * width + (j0 + j)) * channels + c;
            mx += w2[i * 11 + j] * x[p];
            my += w2[i * 11 + j] * y[p];
          }
        double vx = 0.0, vy = 0.0, cxy = 0.0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            size_t p = (static_cast<size_t>(i0 + i) * width + (j0 + j)) * channels + c;
            vx += w2[i * 11 + j] * (x[p] - mx) * (x[p] - mx);
            vy += w2[i * 11 + j] * (y[p] - my) * (y[p] - my);
            cxy += w2[i * 11 + j] * (x[p] - mx) * (y[p] - my);
          }
        double ssim = ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
                      ((mx * mx + my * my + c1) * (vx + vy + c2));
        total += ssim;
        ++count;
      }
    }
  }
  return total / count;
}

double reference_dssim(const std::vector<double>& x, const std::vector<double>& y,
                       int height, int width, int channels) {
  return (1.0 - reference_ssim(x, y, height, width, channels)) / 2.0;
}

void reference_adamw(std::vector<double>& params, const std::vector<double>& grads,
                     RefAdamState& state, double lr, double weight_decay,
                     double beta1, double beta2, double eps) {
  if (state.m.empty()) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  state.t += 1;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
    state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i] * grads[i];
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    params[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * params[i]);
  }
}

std::vector<double> linear_softmax(const std::vector<double>& g,
                                   const std::vector<double>& W,
                                   const std::vector<double>& bias, int k,
                                   int num_classes) {
  const int n = 9 * k;
  std::vector<double> z(num_classes, 0.0);
  for (int c = 0; c < num_classes; ++c) {
    double s = bias.empty() ? 0.0 : bias[c];
    for (int m = 0; m < n; ++m) s += W[static_cast<size_t>(c) * n + m] * g[m];
    z[c] = s;
  }
  double mx = z[0];
  for (double v : z) mx = std::max(mx, v);
  double sum = 0.0;
  for (auto& v : z) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (auto& v : z) v /= sum;
  return z;
}

std::vector<double> linear_cdam_closed_form(const std::vector<double>& g,
                                            const std::vector<double>& W, int k,
                                            int num_classes, int class_id) {
  (void)num_classes;
  const int n = 9 * k;
  std::vector<double> scores(k, 0.0);
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < 9; ++j)
      scores[i] += g[i * 9 + j] * W[static_cast<size_t>(class_id) * n + i * 9 + j];
  return scores;
}

std::vector<double> linear_ce_grad_closed_form(const std::vector<double>& g,
                                               const std::vector<double>& W,
                                               const std::vector<double>& bias,
                                               int k, int num_classes, int label) {
  const int n = 9 * k;
  std::vector<double> p = linear_softmax(g, W, bias, k, num_classes);
  p[label] -= 1.0;
  std::vector<double> grad(n, 0.0);
  for (int c = 0; c < num_classes; ++c)
    for (int m = 0; m < n; ++m) grad[m] += W[static_cast<size_t>(c) * n + m] * p[c];
  return grad;
}

double psnr_from_mse(double mse) { return 10.0 * std::log10(1.0 / mse); }

}  // namespace oracle
