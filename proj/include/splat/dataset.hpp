#pragma once

#include <string>
#include <utility>
#include <vector>

#include "splat/tensor.hpp"

namespace splat {

struct LabeledImages {
  std::vector<Tensor> images;  // each [H,W,3] in [0,1]
  std::vector<int> labels;     // dense ids in [0, classes)
  std::vector<std::string> class_names;
  int64_t size() const { return static_cast<int64_t>(images.size()); }
};

struct DatasetSpec {
  std::string root;
  std::string format = "image-dir";  // image-dir | mnist-idx | cifar-bin
  int64_t image_size = 32;           // images are resized to this
  std::vector<std::string> classes;  // optional names; otherwise inferred
};

// Built-in acceptance dataset: five shape classes (circle, square,
// triangle, cross, ring) in random bright colors over smooth textured
// backgrounds. Deterministic per seed. When `masks` is given it receives
// one [H,W] foreground-coverage map per image (1 = shape, 0 = background);
// requesting masks does not change the generated images.
LabeledImages generate_shapes_dataset(int64_t per_class, int64_t image_size,
                                      uint64_t seed,
                                      std::vector<Tensor>* masks = nullptr);

// image-dir: root/labels.csv lines "filename,label"; mnist-idx: an
// idx3-ubyte/idx1-ubyte pair under root; cifar-bin: *.bin rows of
// 1 label byte + 3072 pixel bytes.
LabeledImages load_dataset(const DatasetSpec& spec);

// Deterministic shuffled split; val_fraction of each run goes to the
// second result. Stable across runs for a fixed seed.
std::pair<LabeledImages, LabeledImages> split_train_val(
    const LabeledImages& all, double val_fraction, uint64_t seed);

// Horizontal flip with probability 1/2, then a random square crop covering
// a [0.5,1] fraction of the area, resized back to the input size.
Tensor augment(const Tensor& image, Rng& rng);

// Writes <dir>/img_00000.png ... plus labels.csv; dir must exist.
void save_dataset_pngs(const LabeledImages& data, const std::string& dir);

}  // namespace splat
