#include "splat/gaussian.hpp"

#include <algorithm>
#include <cmath>

namespace splat {

DecodedGaussianBatch decode(const Tensor& raw, const ScaleBound& bound) {
  if (!raw.defined() || raw.ndim() != 2 || raw.dim(1) != 9)
    throw DimensionError("decode: raw batch must be [k,9], got " +
                         (raw.defined() ? shape_str(raw.shape()) : "undefined"));
  if (bound.c <= 0.0)
    throw ValidationError("decode: scale bound must be positive, got " +
                          std::to_string(bound.c));
  const auto& d = raw.data();
  for (int64_t i = 0; i < raw.dim(0); ++i)
    for (int64_t j = 0; j < 9; ++j)
      if (!std::isfinite(d[i * 9 + j]))
        throw ValidationError("decode: non-finite value in row " + std::to_string(i) +
                              ", column " + std::to_string(j));
  DecodedGaussianBatch out;
  out.centers = tanh(slice_last(raw, 0, 2));
  out.scales = mul_scalar(sigmoid(slice_last(raw, 2, 2)), bound.c);
  out.rotation = slice_last(raw, 4, 1);
  out.colors = sigmoid(slice_last(raw, 5, 3));
  out.opacities = sigmoid(slice_last(raw, 8, 1));
  return out;
}

Covariance2 covariance_from_scales(double s1, double s2, double phi) {
  if (s1 <= kEpsScale || s2 <= kEpsScale)
    throw ValidationError("degenerate gaussian: scales (" + std::to_string(s1) + ", " +
                          std::to_string(s2) + ") at or below " +
                          std::to_string(kEpsScale));
  const double co = std::cos(phi), si = std::sin(phi);
  const double v1 = s1 * s1, v2 = s2 * s2;
  Covariance2 cov;
  cov.a = co * co * v1 + si * si * v2;
  cov.b = co * si * (v1 - v2);
  cov.c = si * si * v1 + co * co * v2;
  cov.det = v1 * v2;
  cov.ia = cov.c / cov.det;
  cov.ib = -cov.b / cov.det;
  cov.ic = cov.a / cov.det;
  return cov;
}

Tensor init_random(int64_t k, uint64_t seed) {
  if (k < 1)
    throw ValidationError("init_random: k must be >= 1, got " + std::to_string(k));
  Rng rng(seed);
  return Tensor::randn({k, 9}, rng);
}

namespace {

double logit(double p, double eps) {
  p = std::min(std::max(p, eps), 1.0 - eps);
  return std::log(p / (1.0 - p));
}

}  // namespace

Tensor init_kmeans_colors(const Tensor& image, int64_t k, uint64_t seed,
                          const ScaleBound& bound) {
  if (!image.defined() || image.ndim() != 3 || image.dim(2) != 3)
    throw DimensionError("init_kmeans_colors: image must be [H,W,3], got " +
                         (image.defined() ? shape_str(image.shape()) : "undefined"));
  const int64_t H = image.dim(0), W = image.dim(1), n = H * W;
  for (double v : image.data())
    if (!(v >= 0.0 && v <= 1.0))
      throw ValidationError("init_kmeans_colors: pixel value " + std::to_string(v) +
                            " outside [0,1]");
  if (k < 1) throw ValidationError("init_kmeans_colors: k must be >= 1");
  if (k > n)
    throw ValidationError("init_kmeans_colors: k " + std::to_string(k) +
                          " exceeds pixel count " + std::to_string(n));

  const double* px = image.data().data();
  auto dist2 = [px](int64_t p, const double* ctr) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) {
      double d = px[p * 3 + c] - ctr[c];
      s += d * d;
    }
    return s;
  };

  Rng rng(seed);
  std::vector<double> centers(k * 3);
  std::vector<double> d2(n);

  // k-means++ seeding
  int64_t first = rng.uniform_int(n);
  for (int c = 0; c < 3; ++c) centers[c] = px[first * 3 + c];
  for (int64_t p = 0; p < n; ++p) d2[p] = dist2(p, centers.data());
  for (int64_t j = 1; j < k; ++j) {
    double total = 0.0;
    for (int64_t p = 0; p < n; ++p) total += d2[p];
    int64_t pick;
    if (total > 0.0) {
      double r = rng.uniform() * total;
      double acc = 0.0;
      pick = n - 1;
      for (int64_t p = 0; p < n; ++p) {
        acc += d2[p];
        if (acc >= r) {
          pick = p;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(n);
    }
    for (int c = 0; c < 3; ++c) centers[j * 3 + c] = px[pick * 3 + c];
    for (int64_t p = 0; p < n; ++p)
      d2[p] = std::min(d2[p], dist2(p, centers.data() + j * 3));
  }

  // Lloyd iterations; empty clusters keep their previous center.
  std::vector<int64_t> assign(n, 0);
  for (int iter = 0; iter < 20; ++iter) {
    for (int64_t p = 0; p < n; ++p) {
      double best = dist2(p, centers.data());
      int64_t arg = 0;
      for (int64_t j = 1; j < k; ++j) {
        double d = dist2(p, centers.data() + j * 3);
        if (d < best) {
          best = d;
          arg = j;
        }
      }
      assign[p] = arg;
    }
    std::vector<double> sums(k * 3, 0.0);
    std::vector<int64_t> counts(k, 0);
    for (int64_t p = 0; p < n; ++p) {
      for (int c = 0; c < 3; ++c) sums[assign[p] * 3 + c] += px[p * 3 + c];
      counts[assign[p]] += 1;
    }
    for (int64_t j = 0; j < k; ++j)
      if (counts[j] > 0)
        for (int c = 0; c < 3; ++c) centers[j * 3 + c] = sums[j * 3 + c] / counts[j];
  }

  // cluster geometry in pixel coordinates
  std::vector<double> row_sum(k, 0.0), col_sum(k, 0.0);
  std::vector<int64_t> counts(k, 0);
  for (int64_t p = 0; p < n; ++p) {
    row_sum[assign[p]] += static_cast<double>(p / W);
    col_sum[assign[p]] += static_cast<double>(p % W);
    counts[assign[p]] += 1;
  }
  std::vector<double> row_var(k, 0.0), col_var(k, 0.0);
  for (int64_t p = 0; p < n; ++p) {
    int64_t j = assign[p];
    if (counts[j] == 0) continue;
    double dr = static_cast<double>(p / W) - row_sum[j] / counts[j];
    double dc = static_cast<double>(p % W) - col_sum[j] / counts[j];
    row_var[j] += dr * dr;
    col_var[j] += dc * dc;
  }

  const double scale_lo = 2.0 * kEpsScale;  // strictly inside the open range
  // A gaussian narrower than half the pixel pitch renders (and back-
  // propagates) nothing, so floor every axis at a visible footprint.
  const double floor_x = W > 1 ? std::max(1.0 / (W - 1), scale_lo) : scale_lo;
  const double floor_y = H > 1 ? std::max(1.0 / (H - 1), scale_lo) : scale_lo;
  std::vector<double> raw(k * 9, 0.0);
  for (int64_t j = 0; j < k; ++j) {
    double cx = 0.0, cy = 0.0, sx = 0.0, sy = 0.0;
    double color[3] = {centers[j * 3], centers[j * 3 + 1], centers[j * 3 + 2]};
    if (counts[j] > 0) {
      double mean_col = col_sum[j] / counts[j];
      double mean_row = row_sum[j] / counts[j];
      cx = W > 1 ? 2.0 * mean_col / (W - 1) - 1.0 : 0.0;
      cy = H > 1 ? 2.0 * mean_row / (H - 1) - 1.0 : 0.0;
      double std_col = std::sqrt(col_var[j] / counts[j]);
      double std_row = std::sqrt(row_var[j] / counts[j]);
      sx = W > 1 ? std_col * 2.0 / (W - 1) : 0.0;
      sy = H > 1 ? std_row * 2.0 / (H - 1) : 0.0;
    } else {
      // empty cluster: re-seed on a random pixel so all k gaussians stay live
      int64_t p = rng.uniform_int(n);
      cx = W > 1 ? 2.0 * static_cast<double>(p % W) / (W - 1) - 1.0 : 0.0;
      cy = H > 1 ? 2.0 * static_cast<double>(p / W) / (H - 1) - 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) color[c] = px[p * 3 + c];
    }
    sx = std::min(std::max(sx, floor_x), bound.c - scale_lo);
    sy = std::min(std::max(sy, floor_y), bound.c - scale_lo);
    double* r = raw.data() + j * 9;
    r[0] = std::atanh(std::min(std::max(cx, -1.0 + 1e-12), 1.0 - 1e-12));
    r[1] = std::atanh(std::min(std::max(cy, -1.0 + 1e-12), 1.0 - 1e-12));
    r[2] = logit(sx / bound.c, 1e-12);
    r[3] = logit(sy / bound.c, 1e-12);
    r[4] = 0.0;
    for (int c = 0; c < 3; ++c) r[5 + c] = logit(color[c], 1e-6);
    r[8] = 0.0;
  }
  return Tensor::from_data({k, 9}, std::move(raw));
}

}  // namespace splat
