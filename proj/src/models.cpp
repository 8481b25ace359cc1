#include "splat/models.hpp"

#include <cmath>

namespace splat {

void ModelConfig::validate() const {
  if (patch_size < 1 || image_size < 1 || image_size % patch_size != 0)
    throw ValidationError("ModelConfig: image_size " + std::to_string(image_size) +
                          " not divisible by patch_size " +
                          std::to_string(patch_size));
  if (encoder_width < 1 || encoder_heads < 1 ||
      encoder_width % encoder_heads != 0)
    throw ValidationError("ModelConfig: encoder_width must be divisible by heads");
  if (classifier_width < 1 || classifier_heads < 1 ||
      classifier_width % classifier_heads != 0)
    throw ValidationError(
        "ModelConfig: classifier_width must be divisible by heads");
  if (encoder_depth < 0 || classifier_depth < 0)
    throw ValidationError("ModelConfig: depths must be non-negative");
  if (k < 1) throw ValidationError("ModelConfig: k must be >= 1");
  if (num_classes < 2) throw ValidationError("ModelConfig: need >= 2 classes");
}

ModelConfig toy_config() { return ModelConfig{}; }

ModelConfig small_config() {
  ModelConfig c;
  c.patch_size = 16;
  c.image_size = 32;
  c.encoder_depth = 9;
  c.encoder_width = 320;
  c.encoder_heads = 5;
  c.classifier_depth = 9;
  c.classifier_width = 320;
  c.classifier_heads = 5;
  c.k = 256;
  c.num_classes = 100;
  return c;
}

Tensor& Params::create(const std::string& name, Shape shape, Rng& rng,
                       double stddev) {
  if (has(name)) throw ContractError("Params: duplicate name " + name);
  items_.emplace_back(name, Tensor::randn(std::move(shape), rng, stddev));
  items_.back().second.set_requires_grad(true);
  return items_.back().second;
}

Tensor& Params::create_zeros(const std::string& name, Shape shape) {
  if (has(name)) throw ContractError("Params: duplicate name " + name);
  items_.emplace_back(name, Tensor::zeros(std::move(shape)));
  items_.back().second.set_requires_grad(true);
  return items_.back().second;
}

Tensor& Params::create_full(const std::string& name, Shape shape, double value) {
  if (has(name)) throw ContractError("Params: duplicate name " + name);
  items_.emplace_back(name, Tensor::full(std::move(shape), value));
  items_.back().second.set_requires_grad(true);
  return items_.back().second;
}

Tensor& Params::at(const std::string& name) {
  for (auto& [n, t] : items_)
    if (n == name) return t;
  throw ContractError("Params: no parameter named " + name);
}

const Tensor& Params::at(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return t;
  throw ContractError("Params: no parameter named " + name);
}

bool Params::has(const std::string& name) const {
  for (const auto& [n, t] : items_)
    if (n == name) return true;
  return false;
}

int64_t Params::total_count() const {
  int64_t n = 0;
  for (const auto& [name, t] : items_) n += t.numel();
  return n;
}

void Params::set_requires_grad(bool v) {
  for (auto& [name, t] : items_) t.set_requires_grad(v);
}

void Params::set_frozen(bool v) {
  for (auto& [name, t] : items_) t.set_frozen(v);
}

void Params::zero_grad() {
  for (auto& [name, t] : items_) t.zero_grad();
}

namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul(x, w), b);
}

void create_block(Params& p, const std::string& prefix, int64_t d, Rng& rng) {
  p.create_full(prefix + ".ln1.g", {d}, 1.0);
  p.create_zeros(prefix + ".ln1.b", {d});
  p.create(prefix + ".attn.qkv.w", {d, 3 * d}, rng);
  p.create_zeros(prefix + ".attn.qkv.b", {3 * d});
  p.create(prefix + ".attn.proj.w", {d, d}, rng);
  p.create_zeros(prefix + ".attn.proj.b", {d});
  p.create_full(prefix + ".ln2.g", {d}, 1.0);
  p.create_zeros(prefix + ".ln2.b", {d});
  p.create(prefix + ".mlp.fc1.w", {d, 4 * d}, rng);
  p.create_zeros(prefix + ".mlp.fc1.b", {4 * d});
  p.create(prefix + ".mlp.fc2.w", {4 * d, d}, rng);
  p.create_zeros(prefix + ".mlp.fc2.b", {d});
}

// Pre-norm block: x += attn(ln1(x)); x += mlp(ln2(x)).
Tensor run_block(const Tensor& x, const Params& p, const std::string& prefix,
                 int64_t heads) {
  const int64_t d = x.dim(2);
  const int64_t dh = d / heads;
  Tensor h = layernorm(x, p.at(prefix + ".ln1.g"), p.at(prefix + ".ln1.b"));
  Tensor qkv =
      linear(h, p.at(prefix + ".attn.qkv.w"), p.at(prefix + ".attn.qkv.b"));
  Tensor q = split_heads(slice_last(qkv, 0, d), heads);
  Tensor k = split_heads(slice_last(qkv, d, d), heads);
  Tensor v = split_heads(slice_last(qkv, 2 * d, d), heads);
  Tensor att = softmax(
      mul_scalar(bmm(q, transpose_last2(k)), 1.0 / std::sqrt(double(dh))));
  Tensor ctx = merge_heads(bmm(att, v), heads);
  Tensor x1 = add(x, linear(ctx, p.at(prefix + ".attn.proj.w"),
                            p.at(prefix + ".attn.proj.b")));
  Tensor h2 = layernorm(x1, p.at(prefix + ".ln2.g"), p.at(prefix + ".ln2.b"));
  Tensor m = linear(gelu(linear(h2, p.at(prefix + ".mlp.fc1.w"),
                                p.at(prefix + ".mlp.fc1.b"))),
                    p.at(prefix + ".mlp.fc2.w"), p.at(prefix + ".mlp.fc2.b"));
  return add(x1, m);
}

}  // namespace

Tensor patch_embed(const Tensor& image, const ModelConfig& config,
                   const Params& params) {
  if (image.ndim() != 4 || image.dim(1) != config.image_size ||
      image.dim(2) != config.image_size || image.dim(3) != 3)
    throw ContractError("patch_embed: expected [B," +
                        std::to_string(config.image_size) + "," +
                        std::to_string(config.image_size) + ",3], got " +
                        shape_str(image.shape()));
  Tensor tokens = linear(patchify(image, config.patch_size),
                         params.at("enc.patch_proj.w"),
                         params.at("enc.patch_proj.b"));
  return add(tokens, params.at("enc.pos"));
}

GaussianEncoder::GaussianEncoder(const ModelConfig& config, Rng& rng)
    : config_(config) {
  config_.validate();
  const int64_t d = config_.encoder_width;
  const int64_t pd = config_.patch_size * config_.patch_size * 3;
  params_.create("enc.patch_proj.w", {pd, d}, rng);
  params_.create_zeros("enc.patch_proj.b", {d});
  params_.create("enc.pos", {config_.patches(), d}, rng);
  params_.create("enc.g_lift.w", {9, d}, rng);
  params_.create_zeros("enc.g_lift.b", {d});
  params_.create("enc.g_type", {d}, rng);
  for (int64_t i = 0; i < config_.encoder_depth; ++i)
    create_block(params_, "enc.block" + std::to_string(i), d, rng);
  if (config_.encoder_depth > 0) {
    params_.create_full("enc.final_ln.g", {d}, 1.0);
    params_.create_zeros("enc.final_ln.b", {d});
  }
  params_.create("enc.head.fc1.w", {d, d}, rng);
  params_.create_zeros("enc.head.fc1.b", {d});
  // zero-initialized final layer: the encoder starts as the identity
  params_.create_zeros("enc.head.fc2.w", {d, 9});
  params_.create_zeros("enc.head.fc2.b", {9});
}

EncoderOutput GaussianEncoder::encode(const Tensor& image,
                                      const Tensor& g0) const {
  if (g0.ndim() != 3 || g0.dim(1) != config_.k || g0.dim(2) != 9)
    throw ContractError("encode: expected g0 [B," + std::to_string(config_.k) +
                        ",9], got " + shape_str(g0.shape()));
  if (image.dim(0) != g0.dim(0))
    throw ContractError("encode: batch mismatch between image and g0");
  Tensor patches = patch_embed(image, config_, params_);
  Tensor gtok = add(linear(g0, params_.at("enc.g_lift.w"),
                           params_.at("enc.g_lift.b")),
                    params_.at("enc.g_type"));
  Tensor x = concat_axis1(patches, gtok);
  for (int64_t i = 0; i < config_.encoder_depth; ++i)
    x = run_block(x, params_, "enc.block" + std::to_string(i),
                  config_.encoder_heads);
  if (config_.encoder_depth > 0)
    x = layernorm(x, params_.at("enc.final_ln.g"), params_.at("enc.final_ln.b"));
  Tensor glat = slice_axis1(x, config_.patches(), config_.k);
  Tensor hidden = gelu(linear(glat, params_.at("enc.head.fc1.w"),
                              params_.at("enc.head.fc1.b")));
  Tensor residuals = linear(hidden, params_.at("enc.head.fc2.w"),
                            params_.at("enc.head.fc2.b"));
  return {add(g0, residuals), residuals};
}

GaussianClassifier::GaussianClassifier(const ModelConfig& config, Rng& rng)
    : config_(config) {
  config_.validate();
  const int64_t d = config_.classifier_width;
  params_.create("cls.lift.w", {9, d}, rng);
  params_.create_zeros("cls.lift.b", {d});
  params_.create("cls.pos", {config_.k, d}, rng);
  if (config_.use_class_token) params_.create("cls.token", {1, 1, d}, rng);
  for (int64_t i = 0; i < config_.classifier_depth; ++i)
    create_block(params_, "cls.block" + std::to_string(i), d, rng);
  if (config_.classifier_depth > 0) {
    params_.create_full("cls.final_ln.g", {d}, 1.0);
    params_.create_zeros("cls.final_ln.b", {d});
  }
  params_.create("cls.head.w", {d, config_.num_classes}, rng);
  params_.create_zeros("cls.head.b", {config_.num_classes});
}

Tensor GaussianClassifier::classify(const Tensor& raw,
                                    Tensor* last_block_input) const {
  if (raw.ndim() != 3 || raw.dim(1) != config_.k || raw.dim(2) != 9)
    throw ContractError("classify: expected [B," + std::to_string(config_.k) +
                        ",9], got " + shape_str(raw.shape()));
  const int64_t B = raw.dim(0);
  Tensor x = add(linear(raw, params_.at("cls.lift.w"), params_.at("cls.lift.b")),
                 params_.at("cls.pos"));
  if (config_.use_class_token)
    x = concat_axis1(tile_axis0(params_.at("cls.token"), B), x);
  if (last_block_input) *last_block_input = x;  // depth 0: the lifted tokens
  for (int64_t i = 0; i < config_.classifier_depth; ++i) {
    if (last_block_input && i == config_.classifier_depth - 1)
      *last_block_input = x;
    x = run_block(x, params_, "cls.block" + std::to_string(i),
                  config_.classifier_heads);
  }
  if (config_.classifier_depth > 0)
    x = layernorm(x, params_.at("cls.final_ln.g"), params_.at("cls.final_ln.b"));
  Tensor pooled;
  if (config_.use_class_token) {
    pooled = reshape(slice_axis1(x, 0, 1), {B, config_.classifier_width});
  } else {
    pooled = mean_axis1(x);
  }
  return linear(pooled, params_.at("cls.head.w"), params_.at("cls.head.b"));
}

int64_t parameter_count(const ModelConfig& config) {
  config.validate();
  auto block = [](int64_t d) {
    // 2 layernorms + qkv + proj + 2 mlp layers
    return 2 * (2 * d) + (d * 3 * d + 3 * d) + (d * d + d) +
           (d * 4 * d + 4 * d) + (4 * d * d + d);
  };
  const int64_t de = config.encoder_width;
  const int64_t pd = config.patch_size * config.patch_size * 3;
  int64_t enc = (pd * de + de) + config.patches() * de + (9 * de + de) + de +
                config.encoder_depth * block(de) +
                (config.encoder_depth > 0 ? 2 * de : 0) + (de * de + de) +
                (de * 9 + 9);
  const int64_t dc = config.classifier_width;
  int64_t cls = (9 * dc + dc) + config.k * dc +
                (config.use_class_token ? dc : 0) +
                config.classifier_depth * block(dc) +
                (config.classifier_depth > 0 ? 2 * dc : 0) +
                (dc * config.num_classes + config.num_classes);
  return enc + cls;
}

}  // namespace splat
