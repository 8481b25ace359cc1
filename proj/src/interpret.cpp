#include "splat/interpret.hpp"

#include <cmath>
#include <cstdio>
#include <string>

#include "splat/common.hpp"
#include "splat/image.hpp"

namespace splat {

namespace {

// half-open cell lookup over [-1,1); returns false for centers on the far
// edge (tanh saturation can produce exactly +1.0)
bool cell_of(double x, double y, int64_t* row, int64_t* col) {
  if (!(x >= -1.0 && x < 1.0) || !(y >= -1.0 && y < 1.0)) return false;
  *col = static_cast<int64_t>(std::floor((x + 1.0) * 0.5 * kSaliencyGrid));
  *row = static_cast<int64_t>(std::floor((y + 1.0) * 0.5 * kSaliencyGrid));
  return true;
}

// restores the frozen flags on scope exit so attribution leaves classifier
// parameter gradients untouched
class FreezeGuard {
 public:
  explicit FreezeGuard(const Params& params) {
    for (const auto& [name, t] : params.items()) {
      Tensor copy = t;
      was_.push_back(copy.frozen());
      tensors_.push_back(copy);
      copy.set_frozen(true);
    }
  }
  ~FreezeGuard() {
    for (size_t i = 0; i < tensors_.size(); ++i) tensors_[i].set_frozen(was_[i]);
  }

 private:
  std::vector<Tensor> tensors_;
  std::vector<bool> was_;
};

}  // namespace

DetMapResult det_sigma_map(const DecodedGaussianBatch& batch) {
  const int64_t k = batch.k();
  DetMapResult out;
  out.dets.resize(k);
  std::vector<double> sums(kSaliencyGrid * kSaliencyGrid, 0.0);
  std::vector<int64_t> counts(kSaliencyGrid * kSaliencyGrid, 0);
  const auto& sc = batch.scales.data();
  const auto& ce = batch.centers.data();
  for (int64_t i = 0; i < k; ++i) {
    const double s1 = sc[i * 2], s2 = sc[i * 2 + 1];
    out.dets[i] = s1 * s1 * s2 * s2;
    int64_t row, col;
    if (!cell_of(ce[i * 2], ce[i * 2 + 1], &row, &col)) continue;
    sums[row * kSaliencyGrid + col] += -std::log(out.dets[i]);
    counts[row * kSaliencyGrid + col] += 1;
  }
  for (int64_t c = 0; c < kSaliencyGrid * kSaliencyGrid; ++c)
    if (counts[c] > 0) sums[c] /= static_cast<double>(counts[c]);
  out.map.grid = Tensor::from_data({kSaliencyGrid, kSaliencyGrid}, std::move(sums));
  out.map.normalization = "raw";
  return out;
}

SaliencyMap cdam(const Tensor& raw_gaussians, const GaussianClassifier& classifier,
                 int class_id, bool on_raw_inputs,
                 std::vector<double>* token_scores) {
  if (!raw_gaussians.defined() ||
      (raw_gaussians.ndim() != 2 && raw_gaussians.ndim() != 3) ||
      raw_gaussians.dim(raw_gaussians.ndim() - 1) != 9)
    throw DimensionError("cdam: raw gaussians must be [k,9] or [1,k,9]");
  if (raw_gaussians.ndim() == 3 && raw_gaussians.dim(0) != 1)
    throw ValidationError("cdam: attribution runs one element at a time");
  const int C = static_cast<int>(classifier.config().num_classes);
  if (class_id < 0 || class_id >= C)
    throw ValidationError("cdam: class_id " + std::to_string(class_id) +
                          " outside [0, " + std::to_string(C) + ")");
  const int64_t k = raw_gaussians.dim(raw_gaussians.ndim() - 2);
  if (k != classifier.config().k)
    throw ValidationError("cdam: batch has " + std::to_string(k) +
                          " gaussians, classifier expects " +
                          std::to_string(classifier.config().k));

  Tensor raw = Tensor::from_data({1, k, 9}, raw_gaussians.data());
  raw.set_requires_grad(true);

  FreezeGuard guard(classifier.params());
  Tensor tap;
  Tensor logits = classifier.classify(raw, &tap);
  std::vector<double> onehot(C, 0.0);
  onehot[class_id] = 1.0;
  backward(sum(mul(logits, Tensor::from_data({1, static_cast<int64_t>(C)},
                                             std::move(onehot)))));

  const Tensor& act = on_raw_inputs ? raw : tap;
  const auto& a = act.data();
  const auto& g = act.grad();
  const int64_t T = act.dim(1);            // k, or k+1 with a class token
  const int64_t offset = T == k ? 0 : 1;   // skip the class token row
  const int64_t d = act.dim(2);
  std::vector<double> scores(k, 0.0);
  for (int64_t i = 0; i < k; ++i) {
    const int64_t t = i + (on_raw_inputs ? 0 : offset);
    double s = 0.0;
    for (int64_t j = 0; j < d; ++j)
      s += a[(t * d) + j] * g[(t * d) + j];
    scores[i] = s;
  }

  if (token_scores) *token_scores = scores;

  DecodedGaussianBatch decoded = decode(Tensor::from_data({k, 9}, raw_gaussians.data()));
  const auto& ce = decoded.centers.data();
  std::vector<double> cells(kSaliencyGrid * kSaliencyGrid, 0.0);
  for (int64_t i = 0; i < k; ++i) {
    int64_t row, col;
    if (!cell_of(ce[i * 2], ce[i * 2 + 1], &row, &col)) continue;
    cells[row * kSaliencyGrid + col] += scores[i];
  }
  SaliencyMap map;
  map.grid = Tensor::from_data({kSaliencyGrid, kSaliencyGrid}, std::move(cells));
  map.normalization = "raw";
  map.class_id = class_id;
  return map;
}

SaliencyMap minmax_normalize(const SaliencyMap& map) {
  const auto& g = map.grid.data();
  double lo = g[0], hi = g[0];
  for (double v : g) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  std::vector<double> out(g.size(), 0.0);
  if (hi > lo)
    for (size_t i = 0; i < g.size(); ++i) out[i] = (g[i] - lo) / (hi - lo);
  SaliencyMap res;
  res.grid = Tensor::from_data(map.grid.shape(), std::move(out));
  res.normalization = "minmax";
  res.class_id = map.class_id;
  return res;
}

Tensor heatmap_image(const SaliencyMap& map, int64_t upscale) {
  if (upscale < 1) throw ValidationError("heatmap_image: upscale must be >= 1");
  SaliencyMap norm = map.normalization == "minmax" ? map : minmax_normalize(map);
  const int64_t G = norm.grid.dim(0), W = norm.grid.dim(1);
  std::vector<double> px(G * upscale * W * upscale * 3);
  for (int64_t r = 0; r < G * upscale; ++r)
    for (int64_t c = 0; c < W * upscale; ++c) {
      double v = norm.grid.data()[(r / upscale) * W + (c / upscale)];
      v = std::round(v * 255.0) / 255.0;  // match the PNG quantization
      double* p = px.data() + (r * W * upscale + c) * 3;
      p[0] = v;
      p[1] = std::round(4.0 * v * (1.0 - v) * 255.0) / 255.0;
      p[2] = 1.0 - v;
    }
  return Tensor::from_data({G * upscale, W * upscale, 3}, std::move(px));
}

void export_heatmap(const SaliencyMap& map, const std::string& path,
                    int64_t upscale) {
  write_png(path, heatmap_image(map, upscale));
}

void saliency_csv(const DecodedGaussianBatch& batch,
                  const std::vector<double>& dets,
                  const std::vector<double>& scores, const std::string& path) {
  const int64_t k = batch.k();
  if (static_cast<int64_t>(dets.size()) != k)
    throw ContractError("saliency_csv: dets size mismatch");
  if (!scores.empty() && static_cast<int64_t>(scores.size()) != k)
    throw ContractError("saliency_csv: scores size mismatch");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw IoError("saliency_csv: cannot open '" + path + "' for writing");
  std::fprintf(f, "index,center_x,center_y,det,score\n");
  const auto& ce = batch.centers.data();
  for (int64_t i = 0; i < k; ++i)
    std::fprintf(f, "%lld,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(i),
                 ce[i * 2], ce[i * 2 + 1], dets[i],
                 scores.empty() ? 0.0 : scores[i]);
  std::fclose(f);
}

}  // namespace splat
