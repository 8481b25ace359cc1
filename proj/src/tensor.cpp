#include "splat/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace splat {

int thread_count() {
  static int n = [] {
    if (const char* env = std::getenv("SPLATCLS_THREADS")) {
      int v = std::atoi(env);
      if (v > 0) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
  }();
  return n;
}

void parallel_chunks(int64_t n, const std::function<void(int64_t, int64_t)>& fn,
                     int64_t chunk) {
  if (n <= 0) return;
  if (chunk < 1) chunk = 1;
  const int64_t chunks = (n + chunk - 1) / chunk;
  const int threads = thread_count();
  if (threads <= 1 || chunks <= 1) {
    fn(0, n);
    return;
  }
  std::atomic<int64_t> next{0};
  auto worker = [&] {
    while (true) {
      int64_t c = next.fetch_add(1);
      if (c >= chunks) break;
      int64_t lo = c * chunk;
      fn(lo, std::min(n, lo + chunk));
    }
  };
  int active = static_cast<int>(std::min<int64_t>(threads, chunks));
  std::vector<std::thread> pool;
  pool.reserve(active - 1);
  for (int i = 1; i < active; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
}

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void need(const Tensor& t, const char* op) {
  if (!t.defined()) throw ValidationError(std::string(op) + ": undefined tensor");
}

Shape strides_of(const Shape& s) {
  Shape st(s.size());
  int64_t acc = 1;
  for (size_t i = s.size(); i-- > 0;) {
    st[i] = acc;
    acc *= s[i];
  }
  return st;
}

using BackwardFn =
    std::function<std::vector<std::vector<double>>(const std::vector<double>&)>;

}  // namespace

Tensor make_op_result(Shape shape, std::vector<double> data,
                      std::shared_ptr<GraphNode> node, bool req) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw ContractError("op result size does not match shape " + shape_str(shape));
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = std::move(shape);
  t.impl_->data = std::move(data);
  t.impl_->requires_grad = req;
  if (req && node) {
    node->output = t.impl_;
    t.impl_->node = std::move(node);
  }
  return t;
}

namespace {

Tensor finish(const char* op, Shape shape, std::vector<double> data,
              std::vector<Tensor> parents, BackwardFn bwd) {
  bool req = false;
  for (const auto& p : parents) req = req || p.requires_grad();
  if (!req) return make_op_result(std::move(shape), std::move(data), nullptr, false);
  auto node = std::make_shared<GraphNode>();
  node->op = op;
  node->parents = std::move(parents);
  node->backward = std::move(bwd);
  return make_op_result(std::move(shape), std::move(data), std::move(node), true);
}

}  // namespace

Tensor Tensor::zeros(Shape shape) {
  auto n = shape_numel(shape);
  return make_op_result(std::move(shape), std::vector<double>(n, 0.0), nullptr, false);
}

Tensor Tensor::full(Shape shape, double value) {
  auto n = shape_numel(shape);
  return make_op_result(std::move(shape), std::vector<double>(n, value), nullptr, false);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw DimensionError("from_data: " + std::to_string(data.size()) +
                         " values for shape " + shape_str(shape));
  return make_op_result(std::move(shape), std::move(data), nullptr, false);
}

Tensor Tensor::scalar(double value) {
  return make_op_result(Shape{}, std::vector<double>{value}, nullptr, false);
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  auto n = shape_numel(shape);
  std::vector<double> d(n);
  for (auto& v : d) v = rng.normal() * stddev;
  return make_op_result(std::move(shape), std::move(d), nullptr, false);
}

double Tensor::item() const {
  need(*this, "item");
  if (numel() != 1)
    throw ValidationError("item: tensor has shape " + shape_str(shape()));
  return impl_->data[0];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  need(*this, "at");
  if (idx.size() != impl_->shape.size())
    throw DimensionError("at: " + std::to_string(idx.size()) +
                         " indices for shape " + shape_str(shape()));
  Shape st = strides_of(impl_->shape);
  int64_t off = 0;
  size_t k = 0;
  for (int64_t i : idx) {
    if (i < 0 || i >= impl_->shape[k])
      throw ValidationError("at: index " + std::to_string(i) + " out of range for axis " +
                            std::to_string(k) + " of shape " + shape_str(shape()));
    off += i * st[k++];
  }
  return impl_->data[off];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (!has_grad())
    throw ValidationError("grad: no gradient accumulated for shape " + shape_str(shape()));
  return impl_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_ && !impl_->grad.empty())
    std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::accumulate_grad(const std::vector<double>& g) {
  auto& gr = impl_->grad;
  if (gr.empty()) gr.assign(impl_->data.size(), 0.0);
  if (g.size() != gr.size())
    throw ContractError("accumulate_grad: size " + std::to_string(g.size()) +
                        " vs " + std::to_string(gr.size()));
  for (size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
}

namespace {

enum class Bcast { kSame, kScalar, kSuffix };

Bcast classify_broadcast(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return Bcast::kSame;
  if (b.numel() == 1) return Bcast::kScalar;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() < sa.size() &&
      std::equal(sb.begin(), sb.end(), sa.end() - sb.size()))
    return Bcast::kSuffix;
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(sb) +
                       " against " + shape_str(sa));
}

std::vector<double> reduce_to_suffix(const std::vector<double>& g, int64_t bn) {
  std::vector<double> out(bn, 0.0);
  const int64_t rows = static_cast<int64_t>(g.size()) / bn;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t j = 0; j < bn; ++j) out[j] += g[r * bn + j];
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  need(a, "add");
  need(b, "add");
  Bcast bc = classify_broadcast(a, b, "add");
  const int64_t an = a.numel(), bn = b.numel();
  std::vector<double> out(an);
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (bc == Bcast::kScalar)
    for (int64_t i = 0; i < an; ++i) out[i] = ad[i] + bd[0];
  else
    for (int64_t i = 0; i < an; ++i) out[i] = ad[i] + bd[i % bn];
  return finish("add", a.shape(), std::move(out), {a, b},
                [bc, bn](const std::vector<double>& g) {
                  std::vector<double> gb;
                  if (bc == Bcast::kSame)
                    gb = g;
                  else
                    gb = reduce_to_suffix(g, bc == Bcast::kScalar ? 1 : bn);
                  return std::vector<std::vector<double>>{g, std::move(gb)};
                });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  need(a, "sub");
  need(b, "sub");
  Bcast bc = classify_broadcast(a, b, "sub");
  const int64_t an = a.numel(), bn = b.numel();
  std::vector<double> out(an);
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (bc == Bcast::kScalar)
    for (int64_t i = 0; i < an; ++i) out[i] = ad[i] - bd[0];
  else
    for (int64_t i = 0; i < an; ++i) out[i] = ad[i] - bd[i % bn];
  return finish("sub", a.shape(), std::move(out), {a, b},
                [bc, bn](const std::vector<double>& g) {
                  std::vector<double> gb;
                  if (bc == Bcast::kSame)
                    gb = g;
                  else
                    gb = reduce_to_suffix(g, bc == Bcast::kScalar ? 1 : bn);
                  for (auto& v : gb) v = -v;
                  return std::vector<std::vector<double>>{g, std::move(gb)};
                });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  need(a, "mul");
  need(b, "mul");
  Bcast bc = classify_broadcast(a, b, "mul");
  const int64_t an = a.numel(), bn = b.numel();
  std::vector<double> out(an);
  const auto& ad = a.data();
  const auto& bd = b.data();
  if (bc == Bcast::kScalar)
    for (int64_t i = 0; i < an; ++i) out[i] = ad[i] * bd[0];
  else
    for (int64_t i = 0; i < an; ++i) out[i] = ad[i] * bd[i % bn];
  return finish("mul", a.shape(), std::move(out), {a, b},
                [a, b, bc](const std::vector<double>& g) {
                  const auto& ad = a.data();
                  const auto& bd = b.data();
                  const int64_t an = a.numel(), bn = b.numel();
                  std::vector<double> ga(an);
                  const int64_t m = bc == Bcast::kScalar ? 1 : bn;
                  for (int64_t i = 0; i < an; ++i) ga[i] = g[i] * bd[i % m];
                  std::vector<double> gb(bn, 0.0);
                  for (int64_t i = 0; i < an; ++i) gb[i % m] += g[i] * ad[i];
                  return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
                });
}

Tensor div(const Tensor& a, const Tensor& b) {
  need(a, "div");
  need(b, "div");
  Bcast bc = classify_broadcast(a, b, "div");
  const int64_t an = a.numel(), bn = b.numel();
  std::vector<double> out(an);
  const auto& ad = a.data();
  const auto& bd = b.data();
  const int64_t m = bc == Bcast::kScalar ? 1 : bn;
  for (int64_t i = 0; i < an; ++i) out[i] = ad[i] / bd[i % m];
  std::vector<double> saved = out;
  return finish("div", a.shape(), std::move(out), {a, b},
                [b, bc, saved](const std::vector<double>& g) {
                  const auto& bd = b.data();
                  const int64_t an = static_cast<int64_t>(g.size());
                  const int64_t bn = b.numel();
                  const int64_t m = bc == Bcast::kScalar ? 1 : bn;
                  std::vector<double> ga(an);
                  std::vector<double> gb(bn, 0.0);
                  for (int64_t i = 0; i < an; ++i) {
                    ga[i] = g[i] / bd[i % m];
                    gb[i % m] -= g[i] * saved[i] / bd[i % m];
                  }
                  return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
                });
}

Tensor add_scalar(const Tensor& a, double c) {
  need(a, "add_scalar");
  std::vector<double> out(a.data());
  for (auto& v : out) v += c;
  return finish("add_scalar", a.shape(), std::move(out), {a},
                [](const std::vector<double>& g) {
                  return std::vector<std::vector<double>>{g};
                });
}

Tensor mul_scalar(const Tensor& a, double c) {
  need(a, "mul_scalar");
  std::vector<double> out(a.data());
  for (auto& v : out) v *= c;
  return finish("mul_scalar", a.shape(), std::move(out), {a},
                [c](const std::vector<double>& g) {
                  std::vector<double> ga(g);
                  for (auto& v : ga) v *= c;
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor neg(const Tensor& a) { return mul_scalar(a, -1.0); }

Tensor tanh(const Tensor& a) {
  need(a, "tanh");
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::tanh(a.data()[i]);
  std::vector<double> y = out;
  return finish("tanh", a.shape(), std::move(out), {a},
                [y](const std::vector<double>& g) {
                  std::vector<double> ga(g.size());
                  for (size_t i = 0; i < g.size(); ++i)
                    ga[i] = g[i] * (1.0 - y[i] * y[i]);
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor sigmoid(const Tensor& a) {
  need(a, "sigmoid");
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) {
    double x = a.data()[i];
    out[i] = x >= 0.0 ? 1.0 / (1.0 + std::exp(-x))
                      : std::exp(x) / (1.0 + std::exp(x));
  }
  std::vector<double> y = out;
  return finish("sigmoid", a.shape(), std::move(out), {a},
                [y](const std::vector<double>& g) {
                  std::vector<double> ga(g.size());
                  for (size_t i = 0; i < g.size(); ++i)
                    ga[i] = g[i] * y[i] * (1.0 - y[i]);
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor gelu(const Tensor& a) {
  need(a, "gelu");
  constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
  constexpr double kB = 0.044715;
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) {
    double x = a.data()[i];
    out[i] = 0.5 * x * (1.0 + std::tanh(kC * (x + kB * x * x * x)));
  }
  return finish("gelu", a.shape(), std::move(out), {a},
                [a](const std::vector<double>& g) {
                  std::vector<double> ga(g.size());
                  for (size_t i = 0; i < g.size(); ++i) {
                    double x = a.data()[i];
                    double t = std::tanh(kC * (x + kB * x * x * x));
                    double dt = (1.0 - t * t) * kC * (1.0 + 3.0 * kB * x * x);
                    ga[i] = g[i] * (0.5 * (1.0 + t) + 0.5 * x * dt);
                  }
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor exp(const Tensor& a) {
  need(a, "exp");
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::exp(a.data()[i]);
  std::vector<double> y = out;
  return finish("exp", a.shape(), std::move(out), {a},
                [y](const std::vector<double>& g) {
                  std::vector<double> ga(g.size());
                  for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * y[i];
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor log(const Tensor& a) {
  need(a, "log");
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = std::log(a.data()[i]);
  return finish("log", a.shape(), std::move(out), {a},
                [a](const std::vector<double>& g) {
                  std::vector<double> ga(g.size());
                  for (size_t i = 0; i < g.size(); ++i) ga[i] = g[i] / a.data()[i];
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  need(a, "clamp");
  if (!(lo <= hi))
    throw ValidationError("clamp: lo " + std::to_string(lo) + " > hi " + std::to_string(hi));
  std::vector<double> out(a.numel());
  for (int64_t i = 0; i < a.numel(); ++i)
    out[i] = std::min(std::max(a.data()[i], lo), hi);
  return finish("clamp", a.shape(), std::move(out), {a},
                [a, lo, hi](const std::vector<double>& g) {
                  std::vector<double> ga(g.size());
                  for (size_t i = 0; i < g.size(); ++i) {
                    double x = a.data()[i];
                    ga[i] = (x >= lo && x <= hi) ? g[i] : 0.0;
                  }
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  need(a, "matmul");
  need(b, "matmul");
  if (b.ndim() != 2)
    throw DimensionError("matmul: rhs must be rank 2, got " + shape_str(b.shape()));
  if (a.ndim() < 1 || a.shape().back() != b.dim(0))
    throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t k = b.dim(0), n = b.dim(1);
  const int64_t m = a.numel() / k;
  Shape out_shape(a.shape());
  out_shape.back() = n;
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return finish("matmul", std::move(out_shape), std::move(out), {a, b},
                [a, b, m, k, n](const std::vector<double>& g) {
                  std::vector<double> ga(m * k), gb(k * n);
                  ConstMap G(g.data(), m, n);
                  MutMap(ga.data(), m, k).noalias() =
                      G * ConstMap(b.data().data(), k, n).transpose();
                  MutMap(gb.data(), k, n).noalias() =
                      ConstMap(a.data().data(), m, k).transpose() * G;
                  return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
                });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  need(a, "bmm");
  need(b, "bmm");
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw DimensionError("bmm: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int64_t B = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(B * m * n);
  for (int64_t i = 0; i < B; ++i)
    MutMap(out.data() + i * m * n, m, n).noalias() =
        ConstMap(a.data().data() + i * m * k, m, k) *
        ConstMap(b.data().data() + i * k * n, k, n);
  return finish("bmm", {B, m, n}, std::move(out), {a, b},
                [a, b, B, m, k, n](const std::vector<double>& g) {
                  std::vector<double> ga(B * m * k), gb(B * k * n);
                  for (int64_t i = 0; i < B; ++i) {
                    ConstMap G(g.data() + i * m * n, m, n);
                    MutMap(ga.data() + i * m * k, m, k).noalias() =
                        G * ConstMap(b.data().data() + i * k * n, k, n).transpose();
                    MutMap(gb.data() + i * k * n, k, n).noalias() =
                        ConstMap(a.data().data() + i * m * k, m, k).transpose() * G;
                  }
                  return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
                });
}

namespace {

std::vector<double> transpose_batch(const std::vector<double>& x, int64_t batch,
                                    int64_t m, int64_t n) {
  std::vector<double> out(x.size());
  for (int64_t b = 0; b < batch; ++b) {
    const double* src = x.data() + b * m * n;
    double* dst = out.data() + b * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) dst[j * m + i] = src[i * n + j];
  }
  return out;
}

}  // namespace

Tensor transpose_last2(const Tensor& a) {
  need(a, "transpose_last2");
  if (a.ndim() < 2)
    throw DimensionError("transpose_last2: need rank >= 2, got " + shape_str(a.shape()));
  const int64_t n = a.shape().back();
  const int64_t m = a.shape()[a.ndim() - 2];
  const int64_t batch = a.numel() / (m * n);
  Shape out_shape(a.shape());
  std::swap(out_shape[out_shape.size() - 1], out_shape[out_shape.size() - 2]);
  return finish("transpose_last2", std::move(out_shape),
                transpose_batch(a.data(), batch, m, n), {a},
                [batch, m, n](const std::vector<double>& g) {
                  return std::vector<std::vector<double>>{
                      transpose_batch(g, batch, n, m)};
                });
}

Tensor softmax(const Tensor& a) {
  need(a, "softmax");
  if (a.ndim() < 1)
    throw DimensionError("softmax: need rank >= 1");
  const int64_t n = a.shape().back();
  const int64_t rows = a.numel() / n;
  std::vector<double> out(a.numel());
  for (int64_t r = 0; r < rows; ++r) {
    const double* x = a.data().data() + r * n;
    double* y = out.data() + r * n;
    double m = x[0];
    for (int64_t j = 1; j < n; ++j) m = std::max(m, x[j]);
    double z = 0.0;
    for (int64_t j = 0; j < n; ++j) {
      y[j] = std::exp(x[j] - m);
      z += y[j];
    }
    for (int64_t j = 0; j < n; ++j) y[j] /= z;
  }
  std::vector<double> saved = out;
  return finish("softmax", a.shape(), std::move(out), {a},
                [saved, rows, n](const std::vector<double>& g) {
                  std::vector<double> ga(g.size());
                  for (int64_t r = 0; r < rows; ++r) {
                    const double* y = saved.data() + r * n;
                    const double* gr = g.data() + r * n;
                    double dot = 0.0;
                    for (int64_t j = 0; j < n; ++j) dot += gr[j] * y[j];
                    for (int64_t j = 0; j < n; ++j)
                      ga[r * n + j] = y[j] * (gr[j] - dot);
                  }
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  need(x, "layernorm");
  need(gain, "layernorm");
  need(bias, "layernorm");
  if (x.ndim() < 1) throw DimensionError("layernorm: need rank >= 1");
  const int64_t d = x.shape().back();
  if (gain.ndim() != 1 || gain.dim(0) != d || bias.ndim() != 1 || bias.dim(0) != d)
    throw DimensionError("layernorm: gain " + shape_str(gain.shape()) + " bias " +
                         shape_str(bias.shape()) + " for features " + std::to_string(d));
  const int64_t rows = x.numel() / d;
  std::vector<double> out(x.numel());
  std::vector<double> xhat(x.numel());
  std::vector<double> inv_std(rows);
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += xr[j];
    mu /= d;
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= d;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (int64_t j = 0; j < d; ++j) {
      double h = (xr[j] - mu) * is;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gain.data()[j] + bias.data()[j];
    }
  }
  return finish(
      "layernorm", x.shape(), std::move(out), {x, gain, bias},
      [gain, xhat, inv_std, rows, d](const std::vector<double>& g) {
        std::vector<double> gx(rows * d), gg(d, 0.0), gb(d, 0.0);
        for (int64_t r = 0; r < rows; ++r) {
          const double* gr = g.data() + r * d;
          const double* hr = xhat.data() + r * d;
          double m1 = 0.0, m2 = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            double gh = gr[j] * gain.data()[j];
            m1 += gh;
            m2 += gh * hr[j];
            gg[j] += gr[j] * hr[j];
            gb[j] += gr[j];
          }
          m1 /= d;
          m2 /= d;
          for (int64_t j = 0; j < d; ++j) {
            double gh = gr[j] * gain.data()[j];
            gx[r * d + j] = inv_std[r] * (gh - m1 - hr[j] * m2);
          }
        }
        return std::vector<std::vector<double>>{std::move(gx), std::move(gg),
                                                std::move(gb)};
      });
}

Tensor sum(const Tensor& a) {
  need(a, "sum");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const int64_t n = a.numel();
  return finish("sum", Shape{}, {s}, {a}, [n](const std::vector<double>& g) {
    return std::vector<std::vector<double>>{std::vector<double>(n, g[0])};
  });
}

Tensor mean(const Tensor& a) {
  need(a, "mean");
  if (a.numel() == 0) throw ValidationError("mean: empty tensor");
  double s = 0.0;
  for (double v : a.data()) s += v;
  const int64_t n = a.numel();
  return finish("mean", Shape{}, {s / n}, {a}, [n](const std::vector<double>& g) {
    return std::vector<std::vector<double>>{std::vector<double>(n, g[0] / n)};
  });
}

Tensor mean_axis1(const Tensor& a) {
  need(a, "mean_axis1");
  if (a.ndim() != 3)
    throw DimensionError("mean_axis1: need rank 3, got " + shape_str(a.shape()));
  const int64_t B = a.dim(0), T = a.dim(1), d = a.dim(2);
  std::vector<double> out(B * d, 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t)
      for (int64_t j = 0; j < d; ++j) out[b * d + j] += a.data()[(b * T + t) * d + j];
  for (auto& v : out) v /= T;
  return finish("mean_axis1", {B, d}, std::move(out), {a},
                [B, T, d](const std::vector<double>& g) {
                  std::vector<double> ga(B * T * d);
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t t = 0; t < T; ++t)
                      for (int64_t j = 0; j < d; ++j)
                        ga[(b * T + t) * d + j] = g[b * d + j] / T;
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor reshape(const Tensor& a, Shape shape) {
  need(a, "reshape");
  if (shape_numel(shape) != a.numel())
    throw DimensionError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
  return finish("reshape", std::move(shape), a.data(), {a},
                [](const std::vector<double>& g) {
                  return std::vector<std::vector<double>>{g};
                });
}

Tensor concat_axis1(const Tensor& a, const Tensor& b) {
  need(a, "concat_axis1");
  need(b, "concat_axis1");
  if (a.ndim() != 3 || b.ndim() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2))
    throw DimensionError("concat_axis1: " + shape_str(a.shape()) + " with " +
                         shape_str(b.shape()));
  const int64_t B = a.dim(0), Ta = a.dim(1), Tb = b.dim(1), d = a.dim(2);
  std::vector<double> out((Ta + Tb) * B * d);
  for (int64_t i = 0; i < B; ++i) {
    std::copy_n(a.data().data() + i * Ta * d, Ta * d, out.data() + i * (Ta + Tb) * d);
    std::copy_n(b.data().data() + i * Tb * d, Tb * d,
                out.data() + i * (Ta + Tb) * d + Ta * d);
  }
  return finish("concat_axis1", {B, Ta + Tb, d}, std::move(out), {a, b},
                [B, Ta, Tb, d](const std::vector<double>& g) {
                  std::vector<double> ga(B * Ta * d), gb(B * Tb * d);
                  for (int64_t i = 0; i < B; ++i) {
                    std::copy_n(g.data() + i * (Ta + Tb) * d, Ta * d,
                                ga.data() + i * Ta * d);
                    std::copy_n(g.data() + i * (Ta + Tb) * d + Ta * d, Tb * d,
                                gb.data() + i * Tb * d);
                  }
                  return std::vector<std::vector<double>>{std::move(ga), std::move(gb)};
                });
}

Tensor slice_axis1(const Tensor& a, int64_t start, int64_t len) {
  need(a, "slice_axis1");
  if (a.ndim() != 3)
    throw DimensionError("slice_axis1: need rank 3, got " + shape_str(a.shape()));
  const int64_t B = a.dim(0), T = a.dim(1), d = a.dim(2);
  if (start < 0 || len < 0 || start + len > T)
    throw ValidationError("slice_axis1: [" + std::to_string(start) + ", " +
                          std::to_string(start + len) + ") out of " + std::to_string(T));
  std::vector<double> out(B * len * d);
  for (int64_t i = 0; i < B; ++i)
    std::copy_n(a.data().data() + (i * T + start) * d, len * d, out.data() + i * len * d);
  return finish("slice_axis1", {B, len, d}, std::move(out), {a},
                [B, T, d, start, len](const std::vector<double>& g) {
                  std::vector<double> ga(B * T * d, 0.0);
                  for (int64_t i = 0; i < B; ++i)
                    std::copy_n(g.data() + i * len * d, len * d,
                                ga.data() + (i * T + start) * d);
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor slice_last(const Tensor& a, int64_t start, int64_t len) {
  need(a, "slice_last");
  if (a.ndim() < 1) throw DimensionError("slice_last: need rank >= 1");
  const int64_t n = a.shape().back();
  if (start < 0 || len < 0 || start + len > n)
    throw ValidationError("slice_last: [" + std::to_string(start) + ", " +
                          std::to_string(start + len) + ") out of " + std::to_string(n));
  const int64_t rows = a.numel() / n;
  Shape out_shape(a.shape());
  out_shape.back() = len;
  std::vector<double> out(rows * len);
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(a.data().data() + r * n + start, len, out.data() + r * len);
  return finish("slice_last", std::move(out_shape), std::move(out), {a},
                [rows, n, start, len](const std::vector<double>& g) {
                  std::vector<double> ga(rows * n, 0.0);
                  for (int64_t r = 0; r < rows; ++r)
                    std::copy_n(g.data() + r * len, len, ga.data() + r * n + start);
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor select_axis0(const Tensor& a, int64_t index) {
  need(a, "select_axis0");
  if (a.ndim() < 1) throw DimensionError("select_axis0: need rank >= 1");
  const int64_t B = a.dim(0);
  if (index < 0 || index >= B)
    throw ValidationError("select_axis0: index " + std::to_string(index) + " out of " +
                          std::to_string(B));
  Shape out_shape(a.shape().begin() + 1, a.shape().end());
  const int64_t n = a.numel() / B;
  std::vector<double> out(a.data().begin() + index * n, a.data().begin() + (index + 1) * n);
  return finish("select_axis0", std::move(out_shape), std::move(out), {a},
                [B, n, index](const std::vector<double>& g) {
                  std::vector<double> ga(B * n, 0.0);
                  std::copy_n(g.data(), n, ga.data() + index * n);
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor split_heads(const Tensor& a, int64_t heads) {
  need(a, "split_heads");
  if (a.ndim() != 3)
    throw DimensionError("split_heads: need rank 3, got " + shape_str(a.shape()));
  const int64_t B = a.dim(0), T = a.dim(1), d = a.dim(2);
  if (heads <= 0 || d % heads != 0)
    throw DimensionError("split_heads: " + std::to_string(heads) + " heads for width " +
                         std::to_string(d));
  const int64_t dh = d / heads;
  std::vector<double> out(a.numel());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t t = 0; t < T; ++t)
        std::copy_n(a.data().data() + (b * T + t) * d + h * dh, dh,
                    out.data() + ((b * heads + h) * T + t) * dh);
  return finish("split_heads", {B * heads, T, dh}, std::move(out), {a},
                [B, T, d, heads, dh](const std::vector<double>& g) {
                  std::vector<double> ga(B * T * d);
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t h = 0; h < heads; ++h)
                      for (int64_t t = 0; t < T; ++t)
                        std::copy_n(g.data() + ((b * heads + h) * T + t) * dh, dh,
                                    ga.data() + (b * T + t) * d + h * dh);
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor merge_heads(const Tensor& a, int64_t heads) {
  need(a, "merge_heads");
  if (a.ndim() != 3)
    throw DimensionError("merge_heads: need rank 3, got " + shape_str(a.shape()));
  const int64_t Bh = a.dim(0), T = a.dim(1), dh = a.dim(2);
  if (heads <= 0 || Bh % heads != 0)
    throw DimensionError("merge_heads: " + std::to_string(heads) + " heads for batch " +
                         std::to_string(Bh));
  const int64_t B = Bh / heads, d = heads * dh;
  std::vector<double> out(a.numel());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t h = 0; h < heads; ++h)
      for (int64_t t = 0; t < T; ++t)
        std::copy_n(a.data().data() + ((b * heads + h) * T + t) * dh, dh,
                    out.data() + (b * T + t) * d + h * dh);
  return finish("merge_heads", {B, T, d}, std::move(out), {a},
                [B, T, d, heads, dh](const std::vector<double>& g) {
                  std::vector<double> ga(B * T * d);
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t h = 0; h < heads; ++h)
                      for (int64_t t = 0; t < T; ++t)
                        std::copy_n(g.data() + (b * T + t) * d + h * dh, dh,
                                    ga.data() + ((b * heads + h) * T + t) * dh);
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor patchify(const Tensor& x, int64_t patch) {
  need(x, "patchify");
  if (x.ndim() != 4)
    throw DimensionError("patchify: need [B,H,W,C], got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  if (patch < 1 || H % patch != 0 || W % patch != 0)
    throw ValidationError("patchify: image " + shape_str(x.shape()) +
                          " not divisible by patch size " + std::to_string(patch));
  const int64_t gh = H / patch, gw = W / patch, N = gh * gw;
  const int64_t D = patch * patch * C;
  std::vector<double> out(B * N * D);
  const auto& xd = x.data();
  auto src_index = [=](int64_t b, int64_t n, int64_t e) {
    const int64_t ph = n / gw, pw = n % gw;
    const int64_t c = e % C, pix = e / C;
    const int64_t r = pix / patch, col = pix % patch;
    return ((b * H + ph * patch + r) * W + pw * patch + col) * C + c;
  };
  for (int64_t b = 0; b < B; ++b)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t e = 0; e < D; ++e)
        out[(b * N + n) * D + e] = xd[src_index(b, n, e)];
  return finish("patchify", {B, N, D}, std::move(out), {x},
                [=](const std::vector<double>& g) {
                  std::vector<double> gx(B * H * W * C, 0.0);
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t n = 0; n < N; ++n)
                      for (int64_t e = 0; e < D; ++e)
                        gx[src_index(b, n, e)] += g[(b * N + n) * D + e];
                  return std::vector<std::vector<double>>{std::move(gx)};
                });
}

Tensor tile_axis0(const Tensor& a, int64_t reps) {
  need(a, "tile_axis0");
  if (a.ndim() < 1 || a.dim(0) != 1)
    throw DimensionError("tile_axis0: need leading axis of size 1, got " +
                         shape_str(a.shape()));
  if (reps < 1) throw ValidationError("tile_axis0: reps must be >= 1");
  const int64_t n = a.numel();
  std::vector<double> out(reps * n);
  for (int64_t r = 0; r < reps; ++r)
    std::copy(a.data().begin(), a.data().end(), out.begin() + r * n);
  Shape shape = a.shape();
  shape[0] = reps;
  return finish("tile_axis0", std::move(shape), std::move(out), {a},
                [reps, n](const std::vector<double>& g) {
                  std::vector<double> ga(n, 0.0);
                  for (int64_t r = 0; r < reps; ++r)
                    for (int64_t j = 0; j < n; ++j) ga[j] += g[r * n + j];
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  need(logits, "cross_entropy");
  if (logits.ndim() != 2)
    throw DimensionError("cross_entropy: logits must be rank 2, got " +
                         shape_str(logits.shape()));
  const int64_t B = logits.dim(0), C = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != B)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for batch " + std::to_string(B));
  for (int64_t b = 0; b < B; ++b)
    if (labels[b] < 0 || labels[b] >= C)
      throw ValidationError("cross_entropy: label " + std::to_string(labels[b]) +
                            " at row " + std::to_string(b) + " out of range [0, " +
                            std::to_string(C) + ")");
  std::vector<double> probs(B * C);
  double loss = 0.0;
  for (int64_t b = 0; b < B; ++b) {
    const double* x = logits.data().data() + b * C;
    double m = x[0];
    for (int64_t c = 1; c < C; ++c) m = std::max(m, x[c]);
    double z = 0.0;
    for (int64_t c = 0; c < C; ++c) {
      probs[b * C + c] = std::exp(x[c] - m);
      z += probs[b * C + c];
    }
    for (int64_t c = 0; c < C; ++c) probs[b * C + c] /= z;
    loss += m + std::log(z) - x[labels[b]];
  }
  loss /= B;
  return finish("cross_entropy", Shape{}, {loss}, {logits},
                [probs, labels, B, C](const std::vector<double>& g) {
                  std::vector<double> ga(B * C);
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t c = 0; c < C; ++c)
                      ga[b * C + c] = g[0] *
                                      (probs[b * C + c] -
                                       (c == labels[b] ? 1.0 : 0.0)) /
                                      B;
                  return std::vector<std::vector<double>>{std::move(ga)};
                });
}

namespace {

const std::vector<double>& blur_kernel() {
  static const std::vector<double> k = [] {
    std::vector<double> v(11);
    double s = 0.0;
    for (int i = 0; i < 11; ++i) {
      double d = i - 5.0;
      v[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
      s += v[i];
    }
    for (auto& x : v) x /= s;
    return v;
  }();
  return k;
}

}  // namespace

Tensor gaussian_blur_valid(const Tensor& x) {
  need(x, "gaussian_blur_valid");
  if (x.ndim() != 3)
    throw DimensionError("gaussian_blur_valid: need [H,W,C], got " + shape_str(x.shape()));
  const int64_t H = x.dim(0), W = x.dim(1), C = x.dim(2);
  if (H < 11 || W < 11)
    throw ValidationError("gaussian_blur_valid: image " + shape_str(x.shape()) +
                          " smaller than the 11x11 window");
  const auto& k = blur_kernel();
  const int64_t Ho = H - 10, Wo = W - 10;
  std::vector<double> tmp(H * Wo * C, 0.0);
  for (int64_t h = 0; h < H; ++h)
    for (int64_t w = 0; w < Wo; ++w)
      for (int64_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (int i = 0; i < 11; ++i) s += k[i] * x.data()[(h * W + w + i) * C + c];
        tmp[(h * Wo + w) * C + c] = s;
      }
  std::vector<double> out(Ho * Wo * C, 0.0);
  for (int64_t h = 0; h < Ho; ++h)
    for (int64_t w = 0; w < Wo; ++w)
      for (int64_t c = 0; c < C; ++c) {
        double s = 0.0;
        for (int i = 0; i < 11; ++i) s += k[i] * tmp[((h + i) * Wo + w) * C + c];
        out[(h * Wo + w) * C + c] = s;
      }
  return finish("gaussian_blur_valid", {Ho, Wo, C}, std::move(out), {x},
                [H, W, C, Ho, Wo](const std::vector<double>& g) {
                  const auto& k = blur_kernel();
                  std::vector<double> dtmp(H * Wo * C, 0.0);
                  for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < Wo; ++w)
                      for (int64_t c = 0; c < C; ++c) {
                        double s = 0.0;
                        for (int i = 0; i < 11; ++i) {
                          int64_t ho = h - i;
                          if (ho >= 0 && ho < Ho) s += k[i] * g[(ho * Wo + w) * C + c];
                        }
                        dtmp[(h * Wo + w) * C + c] = s;
                      }
                  std::vector<double> gx(H * W * C, 0.0);
                  for (int64_t h = 0; h < H; ++h)
                    for (int64_t w = 0; w < W; ++w)
                      for (int64_t c = 0; c < C; ++c) {
                        double s = 0.0;
                        for (int i = 0; i < 11; ++i) {
                          int64_t wo = w - i;
                          if (wo >= 0 && wo < Wo) s += k[i] * dtmp[(h * Wo + wo) * C + c];
                        }
                        gx[(h * W + w) * C + c] = s;
                      }
                  return std::vector<std::vector<double>>{std::move(gx)};
                });
}

Tensor custom_node(const std::string& name, Shape out_shape, CustomForward fwd,
                   CustomBackward bwd, std::vector<Tensor> inputs) {
  for (const auto& t : inputs) need(t, name.c_str());
  std::vector<double> out = fwd(inputs);
  if (static_cast<int64_t>(out.size()) != shape_numel(out_shape))
    throw ContractError(name + ": forward produced " + std::to_string(out.size()) +
                        " values for shape " + shape_str(out_shape));
  std::vector<Tensor> captured = inputs;
  return finish(name.c_str(), std::move(out_shape), std::move(out), std::move(inputs),
                [name, bwd, captured](const std::vector<double>& g) {
                  auto grads = bwd(g, captured);
                  if (grads.size() != captured.size())
                    throw ContractError(name + ": backward returned " +
                                        std::to_string(grads.size()) + " gradients for " +
                                        std::to_string(captured.size()) + " inputs");
                  for (size_t i = 0; i < grads.size(); ++i)
                    if (!grads[i].empty() &&
                        static_cast<int64_t>(grads[i].size()) != captured[i].numel())
                      throw ContractError(name + ": gradient " + std::to_string(i) +
                                          " has size " + std::to_string(grads[i].size()) +
                                          " for input shape " +
                                          shape_str(captured[i].shape()));
                  return grads;
                });
}

void backward(const Tensor& loss) {
  need(loss, "backward");
  if (loss.numel() != 1)
    throw ValidationError("backward: loss must be scalar, got shape " +
                          shape_str(loss.shape()));
  TensorImpl* root = loss.impl_ptr();

  // Pass-local gradients keep repeated backward() calls independent: each
  // pass propagates from a fresh seed of 1 and only the final per-tensor
  // results are added into the persistent grad arrays.
  std::unordered_map<TensorImpl*, std::vector<double>> local;
  local[root] = {1.0};

  if (root->node) {
    // Deterministic post-order over the trace; reversing it visits every
    // node after all of its consumers.
    std::vector<GraphNode*> order;
    std::unordered_set<GraphNode*> seen;
    struct Frame {
      GraphNode* n;
      size_t next;
    };
    std::vector<Frame> stack{{root->node.get(), 0}};
    seen.insert(root->node.get());
    while (!stack.empty()) {
      Frame& f = stack.back();
      if (f.next < f.n->parents.size()) {
        GraphNode* pn = f.n->parents[f.next++].impl_ptr()->node.get();
        if (pn && seen.insert(pn).second) stack.push_back({pn, 0});
      } else {
        order.push_back(f.n);
        stack.pop_back();
      }
    }

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      GraphNode* n = *it;
      auto out = n->output.lock();
      if (!out) throw ContractError("backward: output of op " + n->op + " expired");
      auto found = local.find(out.get());
      if (found == local.end()) continue;  // not on any path to the loss
      auto grads = n->backward(found->second);
      if (grads.size() != n->parents.size())
        throw ContractError("backward: op " + n->op + " returned " +
                            std::to_string(grads.size()) + " gradients for " +
                            std::to_string(n->parents.size()) + " parents");
      for (size_t i = 0; i < grads.size(); ++i) {
        if (grads[i].empty()) continue;
        Tensor& p = n->parents[i];
        if (static_cast<int64_t>(grads[i].size()) != p.numel())
          throw ContractError("backward: op " + n->op + " gradient " +
                              std::to_string(i) + " has size " +
                              std::to_string(grads[i].size()) + " for parent shape " +
                              shape_str(p.shape()));
        if (!p.requires_grad()) continue;
        auto& slot = local[p.impl_ptr()];
        if (slot.empty()) {
          slot = std::move(grads[i]);
        } else {
          for (size_t j = 0; j < slot.size(); ++j) slot[j] += grads[i][j];
        }
      }
    }
  }

  for (auto& [impl, g] : local) {
    if (!impl->requires_grad) continue;
    if (impl->frozen) continue;  // pass-through: gradient flows, none kept
    if (impl->grad.empty()) impl->grad.assign(impl->data.size(), 0.0);
    for (size_t j = 0; j < g.size(); ++j) impl->grad[j] += g[j];
  }
}

}  // namespace splat
