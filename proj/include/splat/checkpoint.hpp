#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "splat/models.hpp"
#include "splat/rng.hpp"
#include "splat/tensor.hpp"
#include "splat/training.hpp"

namespace splat {

// Binary training snapshot. The on-disk layout is explicit little-endian
// regardless of host byte order: an 8-byte magic, a format version, the
// epoch counter, the run-config text, the generator state, then the
// encoder and classifier sections (named parameter arrays as shape +
// 64-bit float data, plus the Adam moment vectors), and a footer magic
// so truncated files are rejected. load(save(x)) is bit-identical.

inline constexpr uint32_t kCheckpointVersion = 1;

struct ParamBlob {
  std::string name;
  std::vector<int64_t> shape;
  std::vector<double> data;
};

struct NetState {
  std::vector<ParamBlob> params;
  OptimizerState opt;
};

struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  int64_t epoch = 0;
  std::string config_text;
  Rng::State rng;
  NetState encoder;
  NetState classifier;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Copies parameter values and optimizer moments out of a live net. Every
// parameter name appears exactly once (ContractError otherwise).
NetState snapshot_net(const Params& params, const OptimizerState& state);

// Writes a snapshot back into a live net in place, so existing tensor
// handles keep pointing at the restored values. The name sets and shapes
// must match exactly (ValidationError otherwise).
void restore_net(const NetState& net, Params& params, OptimizerState& state);

// Standalone dump of one raw gaussian batch [k,9]: 8-byte magic, u64 k,
// then k*9 little-endian 64-bit floats.
void save_gaussians(const Tensor& raw, const std::string& path);
Tensor load_gaussians(const std::string& path);

}  // namespace splat
