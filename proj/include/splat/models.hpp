#pragma once

#include <string>
#include <utility>
#include <vector>

#include "splat/tensor.hpp"

namespace splat {

// Shared architecture description for the encoder (image + gaussian tokens
// -> residual-refined gaussians) and the classifier (gaussian tokens ->
// logits).
struct ModelConfig {
  int64_t patch_size = 16;
  int64_t image_size = 32;
  int64_t encoder_depth = 4;
  int64_t encoder_width = 64;
  int64_t encoder_heads = 4;
  int64_t classifier_depth = 4;
  int64_t classifier_width = 64;
  int64_t classifier_heads = 4;
  int64_t k = 32;
  int64_t num_classes = 5;
  bool use_class_token = true;

  int64_t patches() const {
    return (image_size / patch_size) * (image_size / patch_size);
  }
  void validate() const;
};

ModelConfig toy_config();    // d=64, depth 4, 32x32 images
ModelConfig small_config();  // ViT-S-like scale, ~22M parameters total

// Ordered, named parameter registry. Construction order is the
// serialization and optimizer order.
class Params {
 public:
  Tensor& create(const std::string& name, Shape shape, Rng& rng,
                 double stddev = 0.02);
  Tensor& create_zeros(const std::string& name, Shape shape);
  Tensor& create_full(const std::string& name, Shape shape, double value);

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const;

  std::vector<std::pair<std::string, Tensor>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor>>& items() const {
    return items_;
  }
  int64_t total_count() const;
  void set_requires_grad(bool v);
  void set_frozen(bool v);
  void zero_grad();

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

struct EncoderOutput {
  Tensor raw_gaussians;  // [B,k,9] = g0 + residuals, exactly
  Tensor residuals;      // [B,k,9]
};

// ViT over image patches plus k gaussian tokens; the refined gaussians are
// the input tokens plus a residual predicted from the transformed gaussian
// latents. The residual head's final layer starts at zero, so the encoder
// is the identity denoiser at initialization.
class GaussianEncoder {
 public:
  GaussianEncoder(const ModelConfig& config, Rng& rng);

  // image [B,H,W,3], g0 [B,k,9].
  EncoderOutput encode(const Tensor& image, const Tensor& g0) const;

  Params& params() { return params_; }
  const Params& params() const { return params_; }
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  Params params_;
};

// ViT over the k gaussian tokens alone: linear 9->d lift, learned
// positional embeddings, optional class token, transformer stack, linear
// head. When last_block_input is non-null it receives the activations
// entering the final transformer block (used by the attribution maps).
class GaussianClassifier {
 public:
  GaussianClassifier(const ModelConfig& config, Rng& rng);

  // raw [B,k,9] -> logits [B,num_classes].
  Tensor classify(const Tensor& raw, Tensor* last_block_input = nullptr) const;

  Params& params() { return params_; }
  const Params& params() const { return params_; }
  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  Params params_;
};

// Exact learnable-parameter count for a config (both networks), closed form.
int64_t parameter_count(const ModelConfig& config);

// Shared patch embedding: patchify + linear projection + learned positions.
Tensor patch_embed(const Tensor& image, const ModelConfig& config,
                   const Params& params);

}  // namespace splat
