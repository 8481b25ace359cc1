#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "splat/dataset.hpp"
#include "splat/losses.hpp"
#include "splat/models.hpp"
#include "splat/rasterizer.hpp"

namespace splat {

// Raised when a run must stop: non-finite losses or gradients. The message
// names the offending component or parameter.
class TrainingAbort : public std::runtime_error {
 public:
  explicit TrainingAbort(const std::string& msg) : std::runtime_error(msg) {}
};

struct TrainConfig {
  double base_lr = 1e-4;
  int64_t batch_size = 16;
  // phases run in this order; zero epochs skips a phase
  int64_t epochs_warmup_encoder = 0;
  int64_t epochs_perc_on = 0;
  int64_t epochs_classifier_pre = 0;
  int64_t epochs_classifier_joint = 0;
  int64_t epochs_guidance = 0;
  double weight_decay = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.95;
  int64_t warmup_epochs = 10;  // learning-rate warmup
  int64_t guidance_every = 10;
  double gamma = 0.1;
  double lambda_perc = 0.1;
  double lambda_cls = 1.0;
  double g0_scale = 0.25;  // stddev of the raw gaussian-token noise
  std::string loss_variant = "bce+dssim";
  bool augment_data = false;
  uint64_t seed = 1;

  int64_t total_epochs() const {
    return epochs_warmup_encoder + epochs_perc_on + epochs_classifier_pre +
           epochs_classifier_joint + epochs_guidance;
  }
  void validate() const;
};

enum class Phase { kWarmup, kPercOn, kClassifierPre, kJoint, kGuidance };
const char* phase_name(Phase p);
Phase phase_of_epoch(const TrainConfig& cfg, int64_t epoch);

struct OptimizerState {
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Slot> slots;  // parallel to Params::items()
  int64_t step = 0;
};

// Decoupled-weight-decay Adam over every parameter in the registry, reading
// gradients accumulated on the tensors. Missing gradients count as zero.
// Non-finite gradients abort, naming the parameter.
void adamw_step(Params& params, OptimizerState& state, double lr,
                double weight_decay, double beta1, double beta2,
                double eps = 1e-8);

// Linear warmup to base_lr * batch_size / 256, cosine decay to zero.
double lr_schedule(int64_t step, int64_t total, int64_t warmup, double base_lr,
                   int64_t batch_size);

struct TrainBatch {
  Tensor images;            // [B,S,S,3]
  std::vector<int> labels;  // size B
  Tensor g0;                // [B,k,9] raw gaussian tokens
};

// The rasterizer rejects decoded scales at or below its degeneracy floor,
// and classifier pressure rewards shrinking footprints, so a long run can
// legitimately push a scale under that floor. Every render the trainer (or
// a viewer) issues therefore lifts scales to twice the floor first. The
// clamp is the identity for healthy gaussians and has zero gradient on a
// floored one, which also stops a collapse from feeding on itself.
DecodedGaussianBatch clamp_scales_for_render(DecodedGaussianBatch decoded);

struct StepReport {
  double l_pix = 0.0;
  double l_perc = 0.0;
  double l_cls = 0.0;
  double total = 0.0;
  double mean_det = 0.0;  // mean det(Sigma) of the decoded output batch
  int64_t correct = 0;    // top-1 hits when the classifier ran
  int64_t count = 0;
};

// One optimization step of the given phase. Joint phases step both
// optimizers; encoder-only phases leave the classifier bit-unchanged and
// vice versa. Guidance steps set the encoder gradient to
// grad(L_pix + lambda_perc L_perc) + gamma grad(L_cls) with the classifier
// held constant.
StepReport phase_step(Phase phase, const TrainBatch& batch,
                      GaussianEncoder& encoder, GaussianClassifier& classifier,
                      OptimizerState& enc_state, OptimizerState& cls_state,
                      const TrainConfig& cfg, double lr,
                      const RenderTarget& target);

StepReport train_step_joint(const TrainBatch& batch, GaussianEncoder& encoder,
                            GaussianClassifier& classifier,
                            OptimizerState& enc_state, OptimizerState& cls_state,
                            const TrainConfig& cfg, double lr,
                            const RenderTarget& target);

StepReport guidance_step(const TrainBatch& batch, GaussianEncoder& encoder,
                         GaussianClassifier& classifier,
                         OptimizerState& enc_state, const TrainConfig& cfg,
                         double lr, const RenderTarget& target);

struct MetricsRow {
  int64_t epoch = 0;
  std::string phase;
  double l_pix = 0, l_perc = 0, l_cls = 0;
  double train_acc = 0, val_acc = 0;
  double mean_det_sigma = 0;
  double lr = 0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);

// Executes the phase sequence over [start_epoch, end_epoch) of the full
// schedule (end_epoch < 0 means every epoch). Deterministic per seed; all
// per-epoch randomness is derived statelessly from (seed, epoch), so a
// resumed run continues bit-identically.
std::vector<MetricsRow> run_schedule(
    const LabeledImages& train, const LabeledImages& val,
    GaussianEncoder& encoder, GaussianClassifier& classifier,
    OptimizerState& enc_state, OptimizerState& cls_state,
    const TrainConfig& cfg, int64_t start_epoch = 0, int64_t end_epoch = -1,
    const std::function<void(const MetricsRow&)>& on_epoch = {});

// Top-1 accuracy. mode "gaussians" classifies encoder outputs directly;
// mode "rendered" rasterizes them, re-encodes the rendering through the
// same encoder, and classifies that — the rasterization-control comparison.
double evaluate_accuracy(const LabeledImages& data, GaussianEncoder& encoder,
                         GaussianClassifier& classifier, uint64_t seed,
                         int64_t batch_size, const std::string& mode = "gaussians",
                         double g0_scale = 0.25);

struct FitResult {
  Tensor raw;                 // [k,9]
  std::vector<double> trace;  // loss per step
  std::array<double, 3> background = {0, 0, 0};  // what the fit rendered over
};

// Offline per-image baseline: optimizes one raw batch against one image
// with adamw on the reconstruction loss. init is "kmeans" or "random".
FitResult fit_image_sgd(const Tensor& image, int64_t k, int64_t steps,
                        const std::string& variant, uint64_t seed,
                        const std::string& init = "kmeans",
                        double base_lr = 0.05, double lambda_perc = 0.1);

}  // namespace splat
