#include "splat/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "splat/image.hpp"

namespace fs = std::filesystem;

namespace splat {

namespace {

// Smooth low-frequency background: mixed diagonal gradients and sinusoids
// with per-image random phase, kept away from full black/white.
void paint_background(std::vector<double>& img, int64_t s, Rng& rng) {
  const double ax = rng.uniform() * 2 * M_PI, ay = rng.uniform() * 2 * M_PI;
  const double fx = 1.0 + 2.0 * rng.uniform(), fy = 1.0 + 2.0 * rng.uniform();
  double base[3], amp[3];
  for (int c = 0; c < 3; ++c) {
    base[c] = 0.25 + 0.4 * rng.uniform();
    amp[c] = 0.05 + 0.1 * rng.uniform();
  }
  for (int64_t r = 0; r < s; ++r)
    for (int64_t col = 0; col < s; ++col) {
      const double u = double(col) / (s - 1), v = double(r) / (s - 1);
      const double wave =
          std::sin(fx * 2 * M_PI * u + ax) * std::cos(fy * 2 * M_PI * v + ay);
      for (int c = 0; c < 3; ++c)
        img[(r * s + col) * 3 + c] = base[c] + amp[c] * wave + 0.05 * (u - v);
    }
}

// Signed distance < 0 inside the shape, in units of the image side.
double shape_distance(int cls, double x, double y, double radius) {
  const double ax = std::fabs(x), ay = std::fabs(y);
  switch (cls) {
    case 0:  // circle
      return std::hypot(x, y) - radius;
    case 1:  // square
      return std::max(ax, ay) - radius;
    case 2: {  // upward triangle
      const double h = radius * 1.5;
      const double top = -h / 2 - y;               // above apex
      const double bottom = y - h / 2;             // below base
      const double side = ax - (y + h / 2) / 1.5;  // slanted edges
      return std::max({top, bottom, side});
    }
    case 3: {  // cross (plus sign)
      const double armw = radius * 0.35;
      const double horiz = std::max(ax - radius, ay - armw);
      const double vert = std::max(ay - radius, ax - armw);
      return std::min(horiz, vert);
    }
    case 4: {  // ring
      const double d = std::hypot(x, y);
      return std::max(d - radius, radius * 0.55 - d);
    }
    default:
      throw ContractError("shape_distance: unknown class");
  }
}

int read_be32(std::istream& in) {
  uint8_t b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  if (!in) throw IoError("idx file: truncated header");
  return (b[0] << 24) | (b[1] << 16) | (b[2] << 8) | b[3];
}

LabeledImages load_image_dir(const DatasetSpec& spec) {
  const fs::path root(spec.root);
  const fs::path csv = root / "labels.csv";
  std::ifstream in(csv);
  if (!in) throw IoError("load_dataset: cannot open " + csv.string());
  LabeledImages out;
  std::map<std::string, int> name_to_id;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos)
      throw IoError("load_dataset: " + csv.string() + " line " +
                    std::to_string(lineno) + " is not 'filename,label'");
    const std::string fname = line.substr(0, comma);
    std::string label = line.substr(comma + 1);
    while (!label.empty() && (label.back() == '\r' || label.back() == ' '))
      label.pop_back();
    if (lineno == 1 && fname == "filename") continue;  // optional header
    Tensor img = read_image((root / fname).string());
    if (img.dim(0) != spec.image_size || img.dim(1) != spec.image_size)
      img = resize_bilinear(img, spec.image_size, spec.image_size);
    auto [it, inserted] =
        name_to_id.emplace(label, static_cast<int>(name_to_id.size()));
    out.images.push_back(std::move(img));
    out.labels.push_back(it->second);
  }
  out.class_names.resize(name_to_id.size());
  for (const auto& [name, id] : name_to_id) out.class_names[id] = name;
  return out;
}

LabeledImages load_mnist_idx(const DatasetSpec& spec) {
  fs::path images_path, labels_path;
  for (const auto& e : fs::directory_iterator(spec.root)) {
    const std::string n = e.path().filename().string();
    if (n.find("idx3-ubyte") != std::string::npos) images_path = e.path();
    if (n.find("idx1-ubyte") != std::string::npos) labels_path = e.path();
  }
  if (images_path.empty() || labels_path.empty())
    throw IoError("load_dataset: no idx3-ubyte/idx1-ubyte pair under " +
                  spec.root);
  std::ifstream imgs(images_path, std::ios::binary);
  std::ifstream labs(labels_path, std::ios::binary);
  if (!imgs || !labs)
    throw IoError("load_dataset: cannot open idx files under " + spec.root);
  if (read_be32(imgs) != 0x00000803)
    throw IoError("load_dataset: " + images_path.string() +
                  " has wrong idx3 magic (want 0x00000803)");
  if (read_be32(labs) != 0x00000801)
    throw IoError("load_dataset: " + labels_path.string() +
                  " has wrong idx1 magic (want 0x00000801)");
  const int n = read_be32(imgs), rows = read_be32(imgs), cols = read_be32(imgs);
  const int nl = read_be32(labs);
  if (n != nl)
    throw IoError("load_dataset: idx image/label counts differ (" +
                  std::to_string(n) + " vs " + std::to_string(nl) + ")");
  LabeledImages out;
  std::vector<uint8_t> buf(rows * cols);
  for (int i = 0; i < n; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), buf.size());
    char lab;
    labs.read(&lab, 1);
    if (!imgs || !labs)
      throw IoError("load_dataset: truncated idx data in " + spec.root);
    std::vector<double> data(rows * cols * 3);
    for (int p = 0; p < rows * cols; ++p)
      data[p * 3] = data[p * 3 + 1] = data[p * 3 + 2] = buf[p] / 255.0;
    Tensor img = Tensor::from_data({rows, cols, 3}, std::move(data));
    if (rows != spec.image_size || cols != spec.image_size)
      img = resize_bilinear(img, spec.image_size, spec.image_size);
    out.images.push_back(std::move(img));
    out.labels.push_back(static_cast<unsigned char>(lab));
  }
  for (int c = 0; c < 10; ++c) out.class_names.push_back(std::to_string(c));
  return out;
}

LabeledImages load_cifar_bin(const DatasetSpec& spec) {
  std::vector<fs::path> bins;
  for (const auto& e : fs::directory_iterator(spec.root))
    if (e.path().extension() == ".bin") bins.push_back(e.path());
  std::sort(bins.begin(), bins.end());
  if (bins.empty())
    throw IoError("load_dataset: no .bin files under " + spec.root);
  LabeledImages out;
  constexpr int64_t kRow = 1 + 3072;  // label + 32x32x3 planar bytes
  for (const auto& b : bins) {
    std::ifstream in(b, std::ios::binary);
    if (!in) throw IoError("load_dataset: cannot open " + b.string());
    std::vector<uint8_t> row(kRow);
    while (in.read(reinterpret_cast<char*>(row.data()), kRow)) {
      std::vector<double> data(32 * 32 * 3);
      for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 1024; ++p)
          data[p * 3 + c] = row[1 + c * 1024 + p] / 255.0;
      Tensor img = Tensor::from_data({32, 32, 3}, std::move(data));
      if (spec.image_size != 32)
        img = resize_bilinear(img, spec.image_size, spec.image_size);
      out.images.push_back(std::move(img));
      out.labels.push_back(row[0]);
    }
    if (in.gcount() != 0)
      throw IoError("load_dataset: " + b.string() +
                    " size is not a multiple of 3073 bytes");
  }
  int classes = 0;
  for (int l : out.labels) classes = std::max(classes, l + 1);
  for (int c = 0; c < classes; ++c)
    out.class_names.push_back("class" + std::to_string(c));
  return out;
}

}  // namespace

LabeledImages generate_shapes_dataset(int64_t per_class, int64_t image_size,
                                      uint64_t seed,
                                      std::vector<Tensor>* masks) {
  if (per_class < 1 || image_size < 8)
    throw ValidationError("generate_shapes_dataset: need per_class >= 1, size >= 8");
  LabeledImages out;
  out.class_names = {"circle", "square", "triangle", "cross", "ring"};
  if (masks) masks->clear();
  Rng rng(seed);
  const int64_t s = image_size;
  const double aa = 1.5 / s;  // antialias band in normalized units
  for (int cls = 0; cls < 5; ++cls) {
    for (int64_t i = 0; i < per_class; ++i) {
      std::vector<double> img(s * s * 3);
      std::vector<double> mask(s * s, 0.0);
      paint_background(img, s, rng);
      const double cx = (rng.uniform() - 0.5) * 0.5;
      const double cy = (rng.uniform() - 0.5) * 0.5;
      const double radius = 0.18 + 0.12 * rng.uniform();
      const double rot = cls == 0 || cls == 4 ? 0.0 : (rng.uniform() - 0.5);
      double color[3];
      const int bright = static_cast<int>(rng.uniform() * 3) % 3;
      for (int c = 0; c < 3; ++c)
        color[c] = c == bright ? 0.75 + 0.25 * rng.uniform()
                               : 0.1 + 0.3 * rng.uniform();
      for (int64_t r = 0; r < s; ++r)
        for (int64_t col = 0; col < s; ++col) {
          // center the shape frame and undo the rotation
          const double x0 = (2.0 * col / (s - 1) - 1.0) * 0.5 - cx;
          const double y0 = (2.0 * r / (s - 1) - 1.0) * 0.5 - cy;
          const double x = std::cos(rot) * x0 + std::sin(rot) * y0;
          const double y = -std::sin(rot) * x0 + std::cos(rot) * y0;
          const double d = shape_distance(cls, x, y, radius);
          const double cover =
              std::min(1.0, std::max(0.0, 0.5 - d / aa));  // soft edge
          if (cover > 0.0) {
            for (int c = 0; c < 3; ++c) {
              double& px = img[(r * s + col) * 3 + c];
              px = (1 - cover) * px + cover * color[c];
            }
            mask[r * s + col] = cover;
          }
        }
      for (auto& v : img) v = std::min(1.0, std::max(0.0, v));
      out.images.push_back(Tensor::from_data({s, s, 3}, std::move(img)));
      out.labels.push_back(cls);
      if (masks) masks->push_back(Tensor::from_data({s, s}, std::move(mask)));
    }
  }
  return out;
}

LabeledImages load_dataset(const DatasetSpec& spec) {
  if (!fs::exists(spec.root))
    throw IoError("load_dataset: no such path " + spec.root);
  LabeledImages out;
  if (spec.format == "image-dir") {
    out = load_image_dir(spec);
  } else if (spec.format == "mnist-idx") {
    out = load_mnist_idx(spec);
  } else if (spec.format == "cifar-bin") {
    out = load_cifar_bin(spec);
  } else {
    throw ValidationError("load_dataset: unknown format '" + spec.format +
                          "' (expected image-dir, mnist-idx, or cifar-bin)");
  }
  if (out.images.empty())
    throw ValidationError("load_dataset: dataset at " + spec.root + " is empty");
  if (!spec.classes.empty()) out.class_names = spec.classes;
  int max_label = 0;
  for (int l : out.labels) max_label = std::max(max_label, l);
  if (max_label >= static_cast<int>(out.class_names.size()))
    throw ValidationError("load_dataset: label " + std::to_string(max_label) +
                          " exceeds the class list");
  return out;
}

std::pair<LabeledImages, LabeledImages> split_train_val(
    const LabeledImages& all, double val_fraction, uint64_t seed) {
  if (val_fraction < 0.0 || val_fraction >= 1.0)
    throw ValidationError("split_train_val: val_fraction must be in [0,1)");
  std::vector<int64_t> idx(all.size());
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  for (int64_t i = all.size() - 1; i > 0; --i)
    std::swap(idx[i], idx[rng.uniform_int(i + 1)]);
  const int64_t n_val = static_cast<int64_t>(all.size() * val_fraction);
  LabeledImages train, val;
  train.class_names = val.class_names = all.class_names;
  for (int64_t i = 0; i < all.size(); ++i) {
    LabeledImages& dst = i < n_val ? val : train;
    dst.images.push_back(all.images[idx[i]]);
    dst.labels.push_back(all.labels[idx[i]]);
  }
  return {std::move(train), std::move(val)};
}

Tensor augment(const Tensor& image, Rng& rng) {
  Tensor out = rng.uniform() < 0.5 ? hflip(image) : image;
  const int64_t h = out.dim(0), w = out.dim(1);
  const double area = 0.5 + 0.5 * rng.uniform();
  const double side = std::sqrt(area);
  const int64_t ch = std::max<int64_t>(1, std::llround(h * side));
  const int64_t cw = std::max<int64_t>(1, std::llround(w * side));
  const int64_t r0 = static_cast<int64_t>(rng.uniform() * (h - ch + 1));
  const int64_t c0 = static_cast<int64_t>(rng.uniform() * (w - cw + 1));
  std::vector<double> crop(ch * cw * 3);
  for (int64_t r = 0; r < ch; ++r)
    std::copy_n(out.data().begin() + ((r0 + r) * w + c0) * 3, cw * 3,
                crop.begin() + r * cw * 3);
  return resize_bilinear(Tensor::from_data({ch, cw, 3}, std::move(crop)), h, w);
}

void save_dataset_pngs(const LabeledImages& data, const std::string& dir) {
  if (!fs::exists(dir))
    throw IoError("save_dataset_pngs: no such directory " + dir);
  std::ofstream csv(fs::path(dir) / "labels.csv");
  if (!csv) throw IoError("save_dataset_pngs: cannot write labels.csv in " + dir);
  for (int64_t i = 0; i < data.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%05lld.png",
                  static_cast<long long>(i));
    write_png((fs::path(dir) / name).string(), data.images[i]);
    const int label = data.labels[i];
    csv << name << ","
        << (label < static_cast<int>(data.class_names.size())
                ? data.class_names[label]
                : std::to_string(label))
        << "\n";
  }
}

}  // namespace splat
