#include "splat/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

namespace splat {

namespace {

void check_image(const Tensor& image, const char* op) {
  if (!image.defined() || image.ndim() != 3 || image.dim(2) != 3 ||
      image.dim(0) < 1 || image.dim(1) < 1)
    throw ContractError(std::string(op) + ": expected [H,W,3] image" +
                        (image.defined() ? ", got " + shape_str(image.shape())
                                         : ""));
}

uint8_t quantize(double v) {
  double c = std::min(1.0, std::max(0.0, v));
  return static_cast<uint8_t>(std::lround(c * 255.0));
}

}  // namespace

Tensor read_png(const std::string& path) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("read_png: cannot open " + path + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  std::vector<uint8_t> buffer(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("read_png: decode failed for " + path + ": " + png.message);
  }
  const int64_t h = png.height, w = png.width;
  std::vector<double> data(h * w * 3);
  for (size_t i = 0; i < data.size(); ++i) data[i] = buffer[i] / 255.0;
  return Tensor::from_data({h, w, 3}, std::move(data));
}

void write_png(const std::string& path, const Tensor& image) {
  check_image(image, "write_png");
  const int64_t h = image.dim(0), w = image.dim(1);
  std::vector<uint8_t> buffer(h * w * 3);
  for (int64_t i = 0; i < h * w * 3; ++i) buffer[i] = quantize(image.data()[i]);
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(w);
  png.height = static_cast<png_uint_32>(h);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buffer.data(), 0, nullptr))
    throw IoError("write_png: cannot write " + path + ": " + png.message);
}

Tensor read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("read_ppm: cannot open " + path);
  std::string magic;
  in >> magic;
  if (magic != "P6") throw IoError("read_ppm: " + path + " is not binary P6");
  auto next_int = [&]() {
    // skip whitespace and # comments
    for (;;) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    int64_t v;
    in >> v;
    return v;
  };
  const int64_t w = next_int(), h = next_int(), maxval = next_int();
  if (w < 1 || h < 1 || maxval != 255)
    throw IoError("read_ppm: unsupported header in " + path);
  in.get();  // single whitespace after maxval
  std::vector<uint8_t> buffer(h * w * 3);
  in.read(reinterpret_cast<char*>(buffer.data()), buffer.size());
  if (in.gcount() != static_cast<std::streamsize>(buffer.size()))
    throw IoError("read_ppm: truncated pixel data in " + path);
  std::vector<double> data(h * w * 3);
  for (size_t i = 0; i < data.size(); ++i) data[i] = buffer[i] / 255.0;
  return Tensor::from_data({h, w, 3}, std::move(data));
}

void write_ppm(const std::string& path, const Tensor& image) {
  check_image(image, "write_ppm");
  const int64_t h = image.dim(0), w = image.dim(1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("write_ppm: cannot write " + path);
  out << "P6\n" << w << " " << h << "\n255\n";
  std::vector<uint8_t> buffer(h * w * 3);
  for (int64_t i = 0; i < h * w * 3; ++i) buffer[i] = quantize(image.data()[i]);
  out.write(reinterpret_cast<const char*>(buffer.data()), buffer.size());
  if (!out) throw IoError("write_ppm: short write to " + path);
}

namespace {

bool has_suffix(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() &&
         std::equal(suf.rbegin(), suf.rend(), s.rbegin());
}

}  // namespace

Tensor read_image(const std::string& path) {
  if (has_suffix(path, ".png")) return read_png(path);
  if (has_suffix(path, ".ppm")) return read_ppm(path);
  throw IoError("read_image: unsupported extension on " + path +
                " (expected .png or .ppm)");
}

void write_image(const std::string& path, const Tensor& image) {
  if (has_suffix(path, ".png")) return write_png(path, image);
  if (has_suffix(path, ".ppm")) return write_ppm(path, image);
  throw IoError("write_image: unsupported extension on " + path +
                " (expected .png or .ppm)");
}

Tensor resize_bilinear(const Tensor& image, int64_t out_h, int64_t out_w) {
  check_image(image, "resize_bilinear");
  if (out_h < 1 || out_w < 1)
    throw ValidationError("resize_bilinear: output size must be positive");
  const int64_t h = image.dim(0), w = image.dim(1);
  const auto& src = image.data();
  std::vector<double> out(out_h * out_w * 3);
  const double sy = out_h > 1 ? double(h - 1) / (out_h - 1) : 0.0;
  const double sx = out_w > 1 ? double(w - 1) / (out_w - 1) : 0.0;
  for (int64_t r = 0; r < out_h; ++r) {
    const double fy = r * sy;
    const int64_t y0 = static_cast<int64_t>(fy);
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - y0;
    for (int64_t c = 0; c < out_w; ++c) {
      const double fx = c * sx;
      const int64_t x0 = static_cast<int64_t>(fx);
      const int64_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - x0;
      for (int64_t ch = 0; ch < 3; ++ch) {
        const double top = (1 - wx) * src[(y0 * w + x0) * 3 + ch] +
                           wx * src[(y0 * w + x1) * 3 + ch];
        const double bot = (1 - wx) * src[(y1 * w + x0) * 3 + ch] +
                           wx * src[(y1 * w + x1) * 3 + ch];
        out[(r * out_w + c) * 3 + ch] = (1 - wy) * top + wy * bot;
      }
    }
  }
  return Tensor::from_data({out_h, out_w, 3}, std::move(out));
}

Tensor hflip(const Tensor& image) {
  check_image(image, "hflip");
  const int64_t h = image.dim(0), w = image.dim(1);
  std::vector<double> out(h * w * 3);
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c)
      for (int64_t ch = 0; ch < 3; ++ch)
        out[(r * w + c) * 3 + ch] = image.data()[(r * w + (w - 1 - c)) * 3 + ch];
  return Tensor::from_data({h, w, 3}, std::move(out));
}

std::vector<int64_t> overlay_ellipses(Tensor& image,
                                      const DecodedGaussianBatch& batch,
                                      double n_sigma) {
  check_image(image, "overlay_ellipses");
  const int64_t h = image.dim(0), w = image.dim(1);
  auto& px = image.raw_data();
  const int64_t k = batch.k();
  std::vector<int64_t> touched(k, 0);
  for (int64_t i = 0; i < k; ++i) {
    const double cx = batch.centers.at({i, 0}), cy = batch.centers.at({i, 1});
    const double s1 = batch.scales.at({i, 0}), s2 = batch.scales.at({i, 1});
    const double phi = batch.rotation.at({i, 0});
    const double cr = batch.colors.at({i, 0}), cg = batch.colors.at({i, 1}),
                 cb = batch.colors.at({i, 2});
    // enough samples that adjacent points land on adjacent pixels
    const double rad_px =
        n_sigma * std::max(s1, s2) * 0.5 * std::max<int64_t>(h, w);
    const int64_t steps = std::max<int64_t>(32, int64_t(8.0 * rad_px));
    std::vector<char> seen(h * w, 0);
    for (int64_t t = 0; t < steps; ++t) {
      const double a = 2.0 * M_PI * t / steps;
      const double ex = n_sigma * s1 * std::cos(a);
      const double ey = n_sigma * s2 * std::sin(a);
      const double nx = cx + std::cos(phi) * ex - std::sin(phi) * ey;
      const double ny = cy + std::sin(phi) * ex + std::cos(phi) * ey;
      // inverse of the pixel->normalized map used by the renderer
      const int64_t col = w > 1 ? std::llround((nx + 1.0) * (w - 1) / 2.0) : 0;
      const int64_t row = h > 1 ? std::llround((ny + 1.0) * (h - 1) / 2.0) : 0;
      if (row < 0 || row >= h || col < 0 || col >= w) continue;
      if (!seen[row * w + col]) {
        seen[row * w + col] = 1;
        ++touched[i];
      }
      px[(row * w + col) * 3 + 0] = cr;
      px[(row * w + col) * 3 + 1] = cg;
      px[(row * w + col) * 3 + 2] = cb;
    }
  }
  return touched;
}

Tensor hstack_images(const Tensor& left, const Tensor& right) {
  check_image(left, "hstack_images");
  check_image(right, "hstack_images");
  if (left.dim(0) != right.dim(0))
    throw ContractError("hstack_images: height mismatch " +
                        shape_str(left.shape()) + " vs " +
                        shape_str(right.shape()));
  const int64_t h = left.dim(0), wl = left.dim(1), wr = right.dim(1);
  std::vector<double> out(h * (wl + wr) * 3);
  for (int64_t r = 0; r < h; ++r) {
    std::copy_n(left.data().begin() + r * wl * 3, wl * 3,
                out.begin() + r * (wl + wr) * 3);
    std::copy_n(right.data().begin() + r * wr * 3, wr * 3,
                out.begin() + (r * (wl + wr) + wl) * 3);
  }
  return Tensor::from_data({h, wl + wr, 3}, std::move(out));
}

}  // namespace splat
