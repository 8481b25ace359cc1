#include "splat/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "splat/gaussian.hpp"

namespace splat {

void TrainConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr))
    throw ValidationError("TrainConfig: base_lr must be positive");
  if (batch_size < 1) throw ValidationError("TrainConfig: batch_size must be >= 1");
  if (epochs_warmup_encoder < 0 || epochs_perc_on < 0 ||
      epochs_classifier_pre < 0 || epochs_classifier_joint < 0 ||
      epochs_guidance < 0)
    throw ValidationError("TrainConfig: phase epoch counts must be >= 0");
  if (weight_decay < 0.0) throw ValidationError("TrainConfig: weight_decay < 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("TrainConfig: betas must lie in [0,1)");
  if (warmup_epochs < 0) throw ValidationError("TrainConfig: warmup_epochs < 0");
  if (guidance_every < 1)
    throw ValidationError("TrainConfig: guidance_every must be >= 1");
  if (!(gamma >= 0.0 && gamma <= 0.1))
    throw ValidationError("TrainConfig: gamma must lie in [0, 0.1], got " +
                          std::to_string(gamma));
  if (lambda_perc < 0.0 || lambda_cls < 0.0)
    throw ValidationError("TrainConfig: lambdas must be non-negative");
  if (!(g0_scale > 0.0) || !std::isfinite(g0_scale))
    throw ValidationError("TrainConfig: g0_scale must be positive");
  if (loss_variant != "mse" && loss_variant != "bce" &&
      loss_variant != "mse+dssim" && loss_variant != "bce+dssim")
    throw ValidationError("TrainConfig: unknown loss_variant '" + loss_variant +
                          "'");
}

DecodedGaussianBatch clamp_scales_for_render(DecodedGaussianBatch decoded) {
  decoded.scales = clamp(decoded.scales, 2.0 * kEpsScale,
                         std::numeric_limits<double>::infinity());
  return decoded;
}

const char* phase_name(Phase p) {
  switch (p) {
    case Phase::kWarmup: return "warmup";
    case Phase::kPercOn: return "perc_on";
    case Phase::kClassifierPre: return "classifier_pre";
    case Phase::kJoint: return "joint";
    case Phase::kGuidance: return "guidance";
  }
  return "?";
}

Phase phase_of_epoch(const TrainConfig& cfg, int64_t epoch) {
  if (epoch < 0 || epoch >= cfg.total_epochs())
    throw ContractError("phase_of_epoch: epoch " + std::to_string(epoch) +
                        " outside the schedule");
  int64_t e = epoch;
  if (e < cfg.epochs_warmup_encoder) return Phase::kWarmup;
  e -= cfg.epochs_warmup_encoder;
  if (e < cfg.epochs_perc_on) return Phase::kPercOn;
  e -= cfg.epochs_perc_on;
  if (e < cfg.epochs_classifier_pre) return Phase::kClassifierPre;
  e -= cfg.epochs_classifier_pre;
  if (e < cfg.epochs_classifier_joint) return Phase::kJoint;
  return Phase::kGuidance;
}

void adamw_step(Params& params, OptimizerState& state, double lr,
                double weight_decay, double beta1, double beta2, double eps) {
  auto& items = params.items();
  if (state.slots.empty()) {
    state.slots.resize(items.size());
    for (size_t i = 0; i < items.size(); ++i) {
      state.slots[i].m.assign(items[i].second.numel(), 0.0);
      state.slots[i].v.assign(items[i].second.numel(), 0.0);
    }
  }
  if (state.slots.size() != items.size())
    throw ContractError("adamw_step: optimizer state has " +
                        std::to_string(state.slots.size()) +
                        " slots for " + std::to_string(items.size()) +
                        " parameters");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, double(state.step));
  const double bc2 = 1.0 - std::pow(beta2, double(state.step));
  for (size_t i = 0; i < items.size(); ++i) {
    Tensor& p = items[i].second;
    auto& slot = state.slots[i];
    if (static_cast<int64_t>(slot.m.size()) != p.numel())
      throw ContractError("adamw_step: state shape mismatch for " +
                          items[i].first);
    const std::vector<double>* g = p.has_grad() ? &p.grad() : nullptr;
    auto& data = p.raw_data();
    for (int64_t j = 0; j < p.numel(); ++j) {
      const double gj = g ? (*g)[j] : 0.0;
      if (!std::isfinite(gj))
        throw TrainingAbort("adamw_step: non-finite gradient in parameter " +
                            items[i].first + " at index " + std::to_string(j));
      slot.m[j] = beta1 * slot.m[j] + (1.0 - beta1) * gj;
      slot.v[j] = beta2 * slot.v[j] + (1.0 - beta2) * gj * gj;
      const double mhat = slot.m[j] / bc1;
      const double vhat = slot.v[j] / bc2;
      data[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * data[j]);
    }
  }
}

double lr_schedule(int64_t step, int64_t total, int64_t warmup, double base_lr,
                   int64_t batch_size) {
  if (step < 0 || step > total)
    throw ContractError("lr_schedule: step " + std::to_string(step) +
                        " outside [0, " + std::to_string(total) + "]");
  const double peak = base_lr * double(batch_size) / 256.0;
  if (warmup > 0 && step < warmup) return peak * double(step) / double(warmup);
  const int64_t span = std::max<int64_t>(1, total - warmup);
  const double t = double(step - warmup) / double(span);
  return peak * 0.5 * (1.0 + std::cos(M_PI * std::min(1.0, t)));
}

namespace {

void check_finite_component(double v, const char* component, Phase phase) {
  if (!std::isfinite(v))
    throw TrainingAbort(std::string(phase_name(phase)) + " step: " + component +
                        " is non-finite");
}

// Mean det(Sigma) over the decoded output batch, computed on plain data.
double mean_det_of_raw(const Tensor& raw, double bound_c = 1.0) {
  const auto& d = raw.data();
  const int64_t rows = raw.numel() / 9;
  double acc = 0.0;
  for (int64_t i = 0; i < rows; ++i) {
    const double s1 = bound_c / (1.0 + std::exp(-d[i * 9 + 2]));
    const double s2 = bound_c / (1.0 + std::exp(-d[i * 9 + 3]));
    acc += s1 * s1 * s2 * s2;
  }
  return rows > 0 ? acc / double(rows) : 0.0;
}

struct ForwardResult {
  EncoderOutput eo;
  Tensor l_pix, l_perc, l_cls;  // undefined when not computed
  Tensor logits;
  StepReport report;
};

ForwardResult forward_losses(Phase phase, const TrainBatch& batch,
                             GaussianEncoder& encoder,
                             GaussianClassifier& classifier,
                             const TrainConfig& cfg,
                             const RenderTarget& target) {
  const int64_t B = batch.images.dim(0);
  if (B < 1 || batch.g0.dim(0) != B ||
      static_cast<int64_t>(batch.labels.size()) != B)
    throw ContractError("train step: inconsistent batch sizes");
  const bool with_perc = phase != Phase::kWarmup &&
                         (cfg.loss_variant == "mse+dssim" ||
                          cfg.loss_variant == "bce+dssim");
  const bool with_pix = phase != Phase::kClassifierPre;
  const bool with_cls = phase == Phase::kClassifierPre ||
                        phase == Phase::kJoint || phase == Phase::kGuidance;
  const bool pixel_is_bce =
      cfg.loss_variant == "bce" || cfg.loss_variant == "bce+dssim";

  ForwardResult fr;
  fr.eo = encoder.encode(batch.images, batch.g0);
  if (with_pix) {
    Tensor l_pix, l_perc;
    for (int64_t b = 0; b < B; ++b) {
      Tensor raw_b = select_axis0(fr.eo.raw_gaussians, b);
      RenderOutput out = render(clamp_scales_for_render(decode(raw_b)), target);
      Tensor ref = select_axis0(batch.images, b);
      Tensor pix_b = pixel_is_bce ? bce(out.image, ref) : mse(out.image, ref);
      l_pix = b == 0 ? pix_b : add(l_pix, pix_b);
      if (with_perc) {
        Tensor perc_b = dssim(out.image, ref);
        l_perc = b == 0 ? perc_b : add(l_perc, perc_b);
      }
    }
    fr.l_pix = mul_scalar(l_pix, 1.0 / double(B));
    if (with_perc) fr.l_perc = mul_scalar(l_perc, 1.0 / double(B));
  }
  if (with_cls) {
    fr.logits = classifier.classify(fr.eo.raw_gaussians);
    fr.l_cls = cross_entropy(fr.logits, batch.labels);
  }

  StepReport& r = fr.report;
  if (fr.l_pix.defined()) r.l_pix = fr.l_pix.item();
  if (fr.l_perc.defined()) r.l_perc = fr.l_perc.item();
  if (fr.l_cls.defined()) r.l_cls = fr.l_cls.item();
  check_finite_component(r.l_pix, "l_pix", phase);
  check_finite_component(r.l_perc, "l_perc", phase);
  check_finite_component(r.l_cls, "l_cls", phase);
  r.mean_det = mean_det_of_raw(fr.eo.raw_gaussians);
  if (fr.logits.defined()) {
    const int64_t C = fr.logits.dim(1);
    for (int64_t b = 0; b < B; ++b) {
      int64_t best = 0;
      for (int64_t c = 1; c < C; ++c)
        if (fr.logits.at({b, c}) > fr.logits.at({b, best})) best = c;
      if (best == batch.labels[b]) ++r.correct;
    }
  }
  r.count = B;
  return fr;
}

}  // namespace

StepReport phase_step(Phase phase, const TrainBatch& batch,
                      GaussianEncoder& encoder, GaussianClassifier& classifier,
                      OptimizerState& enc_state, OptimizerState& cls_state,
                      const TrainConfig& cfg, double lr,
                      const RenderTarget& target) {
  cfg.validate();
  encoder.params().zero_grad();
  classifier.params().zero_grad();

  const bool freeze_encoder = phase == Phase::kClassifierPre;
  const bool freeze_classifier = phase == Phase::kGuidance;
  if (freeze_encoder) encoder.params().set_frozen(true);
  if (freeze_classifier) classifier.params().set_frozen(true);

  ForwardResult fr = forward_losses(phase, batch, encoder, classifier, cfg, target);

  Tensor total;
  switch (phase) {
    case Phase::kWarmup:
      total = fr.l_pix;
      break;
    case Phase::kPercOn:
      total = fr.l_perc.defined()
                  ? add(fr.l_pix, mul_scalar(fr.l_perc, cfg.lambda_perc))
                  : fr.l_pix;
      break;
    case Phase::kClassifierPre:
      total = fr.l_cls;
      break;
    case Phase::kJoint: {
      total = fr.l_perc.defined()
                  ? add(fr.l_pix, mul_scalar(fr.l_perc, cfg.lambda_perc))
                  : fr.l_pix;
      total = add(total, mul_scalar(fr.l_cls, cfg.lambda_cls));
      break;
    }
    case Phase::kGuidance: {
      total = fr.l_perc.defined()
                  ? add(fr.l_pix, mul_scalar(fr.l_perc, cfg.lambda_perc))
                  : fr.l_pix;
      total = add(total, mul_scalar(fr.l_cls, cfg.gamma));
      break;
    }
  }
  fr.report.total = total.item();
  check_finite_component(fr.report.total, "total", phase);
  backward(total);

  if (freeze_encoder) encoder.params().set_frozen(false);
  if (freeze_classifier) classifier.params().set_frozen(false);

  const bool step_encoder = phase != Phase::kClassifierPre;
  const bool step_classifier =
      phase == Phase::kClassifierPre || phase == Phase::kJoint;
  if (step_encoder)
    adamw_step(encoder.params(), enc_state, lr, cfg.weight_decay, cfg.beta1,
               cfg.beta2);
  if (step_classifier)
    adamw_step(classifier.params(), cls_state, lr, cfg.weight_decay, cfg.beta1,
               cfg.beta2);
  return fr.report;
}

StepReport train_step_joint(const TrainBatch& batch, GaussianEncoder& encoder,
                            GaussianClassifier& classifier,
                            OptimizerState& enc_state, OptimizerState& cls_state,
                            const TrainConfig& cfg, double lr,
                            const RenderTarget& target) {
  return phase_step(Phase::kJoint, batch, encoder, classifier, enc_state,
                    cls_state, cfg, lr, target);
}

StepReport guidance_step(const TrainBatch& batch, GaussianEncoder& encoder,
                         GaussianClassifier& classifier,
                         OptimizerState& enc_state, const TrainConfig& cfg,
                         double lr, const RenderTarget& target) {
  OptimizerState unused;
  return phase_step(Phase::kGuidance, batch, encoder, classifier, enc_state,
                    unused, cfg, lr, target);
}

std::string metrics_csv_header() {
  return "epoch,phase,l_pix,l_perc,l_cls,train_acc,val_acc,mean_det_sigma,lr";
}

std::string metrics_csv_row(const MetricsRow& row) {
  std::ostringstream os;
  os.precision(10);
  os << row.epoch << ',' << row.phase << ',' << row.l_pix << ',' << row.l_perc
     << ',' << row.l_cls << ',' << row.train_acc << ',' << row.val_acc << ','
     << row.mean_det_sigma << ',' << row.lr;
  return os.str();
}

namespace {

Tensor stack_images(const std::vector<Tensor>& images,
                    const std::vector<int64_t>& idx, int64_t from, int64_t to,
                    Rng* aug_rng) {
  const Tensor& first = images[idx[from]];
  const int64_t S = first.dim(0), W = first.dim(1);
  std::vector<double> data((to - from) * S * W * 3);
  for (int64_t i = from; i < to; ++i) {
    Tensor img = images[idx[i]];
    if (aug_rng) img = augment(img, *aug_rng);
    std::copy(img.data().begin(), img.data().end(),
              data.begin() + (i - from) * S * W * 3);
  }
  return Tensor::from_data({to - from, S, W, 3}, std::move(data));
}

Tensor sample_g0(int64_t B, int64_t k, Rng& rng, double scale) {
  std::vector<double> data(B * k * 9);
  for (auto& v : data) v = rng.normal() * scale;
  return Tensor::from_data({B, k, 9}, std::move(data));
}

Tensor eval_g0(int64_t k, uint64_t seed, int64_t image_index, double scale) {
  Rng rng(Rng::mix(seed, 50000 + static_cast<uint64_t>(image_index)));
  std::vector<double> data(k * 9);
  for (auto& v : data) v = rng.normal() * scale;
  return Tensor::from_data({1, k, 9}, std::move(data));
}

}  // namespace

double evaluate_accuracy(const LabeledImages& data, GaussianEncoder& encoder,
                         GaussianClassifier& classifier, uint64_t seed,
                         int64_t batch_size, const std::string& mode,
                         double g0_scale) {
  if (data.size() == 0)
    throw ValidationError("evaluate_accuracy: empty dataset");
  if (mode != "gaussians" && mode != "rendered")
    throw ValidationError("evaluate_accuracy: mode must be gaussians or rendered, got '" +
                          mode + "'");
  const int64_t k = encoder.config().k;
  const int64_t S = encoder.config().image_size;
  const RenderTarget target{static_cast<int>(S), static_cast<int>(S), {0, 0, 0}};
  int64_t correct = 0;
  std::vector<int64_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  for (int64_t from = 0; from < data.size(); from += batch_size) {
    const int64_t to = std::min<int64_t>(data.size(), from + batch_size);
    const int64_t B = to - from;
    Tensor images = stack_images(data.images, idx, from, to, nullptr);
    std::vector<double> g0data;
    g0data.reserve(B * k * 9);
    for (int64_t i = from; i < to; ++i) {
      Tensor g = eval_g0(k, seed, i, g0_scale);
      g0data.insert(g0data.end(), g.data().begin(), g.data().end());
    }
    Tensor g0 = Tensor::from_data({B, k, 9}, std::move(g0data));
    Tensor raw = encoder.encode(images, g0).raw_gaussians;
    if (mode == "rendered") {
      // rasterize, then re-encode the renderings through the same encoder
      std::vector<double> rendered(B * S * S * 3);
      for (int64_t b = 0; b < B; ++b) {
        RenderOutput out =
            render(clamp_scales_for_render(decode(select_axis0(raw, b))), target);
        std::copy(out.image.data().begin(), out.image.data().end(),
                  rendered.begin() + b * S * S * 3);
      }
      Tensor rimages = Tensor::from_data({B, S, S, 3}, std::move(rendered));
      std::vector<double> g1data;
      g1data.reserve(B * k * 9);
      for (int64_t i = from; i < to; ++i) {
        Tensor g = eval_g0(k, seed ^ 0x5eedULL, i, g0_scale);
        g1data.insert(g1data.end(), g.data().begin(), g.data().end());
      }
      raw = encoder.encode(rimages, Tensor::from_data({B, k, 9}, std::move(g1data)))
                .raw_gaussians;
    }
    Tensor logits = classifier.classify(raw);
    const int64_t C = logits.dim(1);
    for (int64_t b = 0; b < B; ++b) {
      int64_t best = 0;
      for (int64_t c = 1; c < C; ++c)
        if (logits.at({b, c}) > logits.at({b, best})) best = c;
      if (best == data.labels[from + b]) ++correct;
    }
  }
  return double(correct) / double(data.size());
}

std::vector<MetricsRow> run_schedule(
    const LabeledImages& train, const LabeledImages& val,
    GaussianEncoder& encoder, GaussianClassifier& classifier,
    OptimizerState& enc_state, OptimizerState& cls_state,
    const TrainConfig& cfg, int64_t start_epoch, int64_t end_epoch,
    const std::function<void(const MetricsRow&)>& on_epoch) {
  cfg.validate();
  if (train.size() == 0) throw ValidationError("run_schedule: empty dataset");
  const int64_t S = encoder.config().image_size;
  if (train.images[0].dim(0) != S || train.images[0].dim(1) != S)
    throw ValidationError("run_schedule: dataset images are " +
                          shape_str(train.images[0].shape()) +
                          " but the model expects " + std::to_string(S) + "x" +
                          std::to_string(S));
  const int64_t total_epochs = cfg.total_epochs();
  const int64_t last = end_epoch < 0 ? total_epochs : std::min(end_epoch, total_epochs);
  const int64_t steps_per_epoch =
      (train.size() + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = total_epochs * steps_per_epoch;
  const int64_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;
  const int64_t k = encoder.config().k;
  const RenderTarget target{static_cast<int>(S), static_cast<int>(S), {0, 0, 0}};

  std::vector<MetricsRow> metrics;
  for (int64_t epoch = start_epoch; epoch < last; ++epoch) {
    const Phase phase = phase_of_epoch(cfg, epoch);
    Rng shuffle_rng(Rng::mix(cfg.seed, 1000 + static_cast<uint64_t>(epoch)));
    Rng g0_rng(Rng::mix(cfg.seed, 2000 + static_cast<uint64_t>(epoch)));
    Rng aug_rng(Rng::mix(cfg.seed, 3000 + static_cast<uint64_t>(epoch)));
    std::vector<int64_t> idx(train.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = train.size() - 1; i > 0; --i)
      std::swap(idx[i], idx[shuffle_rng.uniform_int(i + 1)]);

    MetricsRow row;
    row.epoch = epoch;
    row.phase = phase_name(phase);
    double sum_pix = 0, sum_perc = 0, sum_cls = 0, sum_det = 0;
    int64_t correct = 0, seen = 0;
    for (int64_t s = 0; s < steps_per_epoch; ++s) {
      const int64_t from = s * cfg.batch_size;
      const int64_t to = std::min<int64_t>(train.size(), from + cfg.batch_size);
      if (from >= to) break;
      TrainBatch batch;
      batch.images = stack_images(train.images, idx, from, to,
                                  cfg.augment_data ? &aug_rng : nullptr);
      for (int64_t i = from; i < to; ++i)
        batch.labels.push_back(train.labels[idx[i]]);
      batch.g0 = sample_g0(to - from, k, g0_rng, cfg.g0_scale);
      const int64_t global_step = epoch * steps_per_epoch + s;
      row.lr = lr_schedule(global_step, total_steps, warmup_steps, cfg.base_lr,
                           cfg.batch_size);
      Phase step_phase = phase;
      if (phase == Phase::kGuidance &&
          (global_step + 1) % cfg.guidance_every != 0)
        step_phase = Phase::kJoint;  // guidance interleaves every Nth step
      StepReport rep = phase_step(step_phase, batch, encoder, classifier,
                                  enc_state, cls_state, cfg, row.lr, target);
      sum_pix += rep.l_pix;
      sum_perc += rep.l_perc;
      sum_cls += rep.l_cls;
      sum_det += rep.mean_det;
      correct += rep.correct;
      seen += rep.count;
    }
    row.l_pix = sum_pix / double(steps_per_epoch);
    row.l_perc = sum_perc / double(steps_per_epoch);
    row.l_cls = sum_cls / double(steps_per_epoch);
    row.mean_det_sigma = sum_det / double(steps_per_epoch);
    const bool classifier_live = phase == Phase::kClassifierPre ||
                                 phase == Phase::kJoint ||
                                 phase == Phase::kGuidance;
    row.train_acc = classifier_live && seen > 0 ? double(correct) / seen : 0.0;
    row.val_acc = classifier_live && val.size() > 0
                      ? evaluate_accuracy(val, encoder, classifier, cfg.seed,
                                          cfg.batch_size, "gaussians",
                                          cfg.g0_scale)
                      : 0.0;
    metrics.push_back(row);
    if (on_epoch) on_epoch(row);
  }
  return metrics;
}

FitResult fit_image_sgd(const Tensor& image, int64_t k, int64_t steps,
                        const std::string& variant, uint64_t seed,
                        const std::string& init, double base_lr,
                        double lambda_perc) {
  if (!image.defined() || image.ndim() != 3 || image.dim(2) != 3)
    throw ValidationError("fit_image_sgd: expected an [H,W,3] image");
  if (k < 1) throw ValidationError("fit_image_sgd: k must be >= 1");
  if (steps < 1) throw ValidationError("fit_image_sgd: steps must be >= 1");
  Tensor raw;
  if (init == "kmeans") {
    raw = init_kmeans_colors(image, k, seed);
  } else if (init == "random") {
    raw = init_random(k, seed);
  } else {
    throw ValidationError("fit_image_sgd: init must be kmeans or random, got '" +
                          init + "'");
  }
  raw.set_requires_grad(true);
  Params params;
  params.items().emplace_back("gaussians", raw);

  // Splats composite over the background, so fitting against the target's
  // per-channel mean instead of black removes the floor a sparse cover
  // would otherwise hit: uncovered pixels already sit at the best constant.
  std::array<double, 3> bg = {0, 0, 0};
  const auto& px = image.data();
  const int64_t n_px = image.dim(0) * image.dim(1);
  for (int64_t p = 0; p < n_px; ++p)
    for (int c = 0; c < 3; ++c) bg[c] += px[p * 3 + c];
  for (int c = 0; c < 3; ++c) bg[c] /= static_cast<double>(n_px);

  const RenderTarget target{static_cast<int>(image.dim(1)),
                            static_cast<int>(image.dim(0)), bg};
  LossWeights weights;
  weights.lambda_perc = lambda_perc;
  OptimizerState state;
  FitResult result;
  const int64_t warmup = std::min<int64_t>(50, steps / 10);
  for (int64_t step = 0; step < steps; ++step) {
    params.zero_grad();
    RenderOutput out = render(clamp_scales_for_render(decode(raw)), target);
    Tensor loss = reconstruction_loss(out.image, image, weights, variant);
    const double value = loss.item();
    if (!std::isfinite(value))
      throw TrainingAbort("fit_image_sgd: loss is non-finite at step " +
                          std::to_string(step));
    result.trace.push_back(value);
    backward(loss);
    const double lr = lr_schedule(step, steps, warmup, base_lr, 256);
    adamw_step(params, state, lr, 0.0, 0.9, 0.95);
  }
  result.raw = raw;
  result.background = bg;
  return result;
}

}  // namespace splat
