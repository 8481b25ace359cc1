#pragma once

#include <string>
#include <vector>

#include "splat/dataset.hpp"
#include "splat/models.hpp"
#include "splat/training.hpp"

namespace splat {

// Everything a training or evaluation run needs, assembled from a flat
// key=value config ('#' starts a comment). `preset` (toy | small) seeds the
// model fields; explicit model.* keys override it. Unknown keys fail with
// the nearest documented key named in the error.
struct RunConfig {
  std::string preset = "toy";
  ModelConfig model = toy_config();
  TrainConfig train;
  DatasetSpec dataset;
  double val_fraction = 1.0 / 6.0;
  // synthetic-shapes source, used when dataset.root is empty; dataset.classes
  // may then name a subset of the five shape classes to keep
  int64_t synth_per_class = 100;
  uint64_t synth_seed = 1;
};

RunConfig parse_config_text(const std::string& text);
RunConfig load_config_file(const std::string& path);

// round-trips through parse_config_text; used for checkpoint snapshots
std::string config_to_text(const RunConfig& config);

// the documented key table (name per line, for --help and error hints)
const std::vector<std::string>& config_keys();

}  // namespace splat
