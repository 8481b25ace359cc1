#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "oracles/oracles.hpp"
#include "splat/tensor.hpp"

using namespace splat;

namespace {

// Runs backward through `build` and compares against central differences.
template <typename BuildFn>
double gradcheck(const Shape& shape, BuildFn build, uint64_t seed, double h = 1e-5) {
  Rng rng(seed);
  std::vector<double> x0(shape_numel(shape));
  for (auto& v : x0) v = rng.normal();
  Tensor x = Tensor::from_data(shape, x0);
  x.set_requires_grad(true);
  Tensor loss = build(x);
  backward(loss);
  auto numeric = oracle::finite_diff(
      [&](const std::vector<double>& v) {
        Tensor probe = Tensor::from_data(shape, v);
        return build(probe).item();
      },
      x0, h);
  return oracle::max_rel_err(x.grad(), numeric);
}

Tensor weighted_sum(const Tensor& t, uint64_t seed) {
  Rng rng(seed);
  Tensor w = Tensor::randn(t.shape(), rng);
  return sum(mul(t, w));
}

}  // namespace

TEST_CASE("construction and validation") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.shape() == Shape{2, 3});
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), DimensionError);
  Tensor s = Tensor::scalar(4.5);
  CHECK(s.item() == 4.5);
  CHECK_THROWS_AS(z.item(), ValidationError);
  Tensor d = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(d.at({1, 0}) == 3.0);
  CHECK_THROWS_AS(d.at({2, 0}), ValidationError);
}

TEST_CASE("matmul identity and shapes") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor c = matmul(eye, b);
  for (int i = 0; i < 4; ++i) CHECK(c.data()[i] == b.data()[i]);
  CHECK_THROWS_AS(matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("matmul backward against direct products") {
  Tensor a = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  a.set_requires_grad(true);
  Tensor b = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  b.set_requires_grad(true);
  Tensor loss = sum(matmul(a, b));  // upstream gradient all ones
  backward(loss);
  // ga = ones * b^T, gb = a^T * ones = ones (a is the identity)
  std::vector<double> ga_expect = {3, 7, 3, 7};
  std::vector<double> gb_expect = {1, 1, 1, 1};
  for (int i = 0; i < 4; ++i) {
    CHECK(a.grad()[i] == doctest::Approx(ga_expect[i]).epsilon(1e-12));
    CHECK(b.grad()[i] == doctest::Approx(gb_expect[i]).epsilon(1e-12));
  }
}

TEST_CASE("matmul gradcheck 4x5 by 5x3") {
  Rng rng(11);
  Tensor b = Tensor::randn({5, 3}, rng);
  double err_a = gradcheck(
      {4, 5}, [&](const Tensor& x) { return weighted_sum(matmul(x, b), 7); }, 21, 1e-6);
  CHECK(err_a < 1e-6);
  Tensor a = Tensor::randn({4, 5}, rng);
  double err_b = gradcheck(
      {5, 3}, [&](const Tensor& x) { return weighted_sum(matmul(a, x), 7); }, 22, 1e-6);
  CHECK(err_b < 1e-6);
}

TEST_CASE("elementwise fixed points") {
  CHECK(sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(tanh(Tensor::scalar(0.0)).item() == 0.0);
  Tensor x = Tensor::from_data({2}, {1000.0, -1000.0});
  CHECK(sigmoid(x).data()[0] == doctest::Approx(1.0));
  CHECK(sigmoid(x).data()[1] == doctest::Approx(0.0));
}

TEST_CASE("gelu gradient at 37 random points") {
  double err = gradcheck(
      {37}, [](const Tensor& x) { return weighted_sum(gelu(x), 3); }, 37);
  CHECK(err < 1e-6);
}

TEST_CASE("unary op gradcheck sweep, 30 instances each") {
  for (uint64_t seed = 1; seed <= 30; ++seed) {
    CHECK(gradcheck({3, 4}, [&](const Tensor& x) {
            return weighted_sum(tanh(x), seed);
          }, seed) < 1e-4);
    CHECK(gradcheck({3, 4}, [&](const Tensor& x) {
            return weighted_sum(sigmoid(x), seed);
          }, seed) < 1e-4);
    CHECK(gradcheck({3, 4}, [&](const Tensor& x) {
            return weighted_sum(gelu(x), seed);
          }, seed) < 1e-4);
    CHECK(gradcheck({3, 4}, [&](const Tensor& x) {
            return weighted_sum(exp(mul_scalar(x, 0.3)), seed);
          }, seed) < 1e-4);
    CHECK(gradcheck({3, 4}, [&](const Tensor& x) {
            return weighted_sum(log(add_scalar(exp(x), 0.1)), seed);
          }, seed) < 1e-4);
  }
}

TEST_CASE("broadcasting add/mul/div with suffix and scalar") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3}, {10, 20, 30});
  Tensor c = add(a, b);
  CHECK(c.at({1, 2}) == 36.0);
  Tensor s = Tensor::scalar(2.0);
  CHECK(mul(a, s).at({1, 0}) == 8.0);
  CHECK_THROWS_AS(add(a, Tensor::zeros({2})), DimensionError);

  // suffix gradient reduces over leading rows
  Tensor bb = Tensor::from_data({3}, {1, 2, 4});
  bb.set_requires_grad(true);
  Tensor loss = sum(mul(a, bb));
  backward(loss);
  CHECK(bb.grad()[0] == 5.0);
  CHECK(bb.grad()[1] == 7.0);
  CHECK(bb.grad()[2] == 9.0);

  for (uint64_t seed = 40; seed < 46; ++seed) {
    Rng rng(seed);
    Tensor lhs = Tensor::randn({4, 3}, rng);
    CHECK(gradcheck({3}, [&](const Tensor& x) {
            return weighted_sum(div(lhs, add_scalar(sigmoid(x), 0.5)), seed);
          }, seed) < 1e-4);
    CHECK(gradcheck({4, 3}, [&](const Tensor& x) {
            Rng r2(seed + 100);
            Tensor suffix = Tensor::randn({3}, r2);
            return weighted_sum(sub(x, suffix), seed);
          }, seed) < 1e-4);
  }
}

TEST_CASE("softmax values and gradient") {
  Tensor u = softmax(Tensor::from_data({3}, {0, 0, 0}));
  for (int i = 0; i < 3; ++i) CHECK(u.data()[i] == doctest::Approx(1.0 / 3));
  Tensor big = softmax(Tensor::from_data({2}, {1000, 0}));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] == doctest::Approx(0.0));
  double err = gradcheck(
      {8}, [](const Tensor& x) { return weighted_sum(softmax(x), 5); }, 51);
  CHECK(err < 1e-6);
  // batched rows
  err = gradcheck(
      {3, 5}, [](const Tensor& x) { return weighted_sum(softmax(x), 6); }, 52);
  CHECK(err < 1e-6);
}

TEST_CASE("layernorm values and gradient") {
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor constant_row = Tensor::full({1, 4}, 3.25);
  Tensor out = layernorm(constant_row, gain, bias);
  for (int i = 0; i < 4; ++i) CHECK(out.data()[i] == doctest::Approx(0.0));

  Tensor zero_gain = Tensor::zeros({4});
  Tensor some_bias = Tensor::from_data({4}, {1, 2, 3, 4});
  Rng rng(9);
  Tensor x = Tensor::randn({2, 4}, rng);
  Tensor affine = layernorm(x, zero_gain, some_bias);
  CHECK(affine.at({1, 2}) == doctest::Approx(3.0));

  Tensor g16 = Tensor::randn({16}, rng);
  Tensor b16 = Tensor::randn({16}, rng);
  double err = gradcheck(
      {4, 16},
      [&](const Tensor& t) { return weighted_sum(layernorm(t, g16, b16), 8); }, 61);
  CHECK(err < 1e-5);
  Tensor x16 = Tensor::randn({4, 16}, rng);
  err = gradcheck(
      {16},
      [&](const Tensor& t) { return weighted_sum(layernorm(x16, t, b16), 8); }, 62);
  CHECK(err < 1e-5);
  err = gradcheck(
      {16},
      [&](const Tensor& t) { return weighted_sum(layernorm(x16, g16, t), 8); }, 63);
  CHECK(err < 1e-5);
}

TEST_CASE("backward basics: accumulation and zero_grad") {
  Tensor x = Tensor::scalar(3.0);
  x.set_requires_grad(true);
  Tensor loss = mul(x, x);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
  CHECK_THROWS_AS(backward(Tensor::zeros({2})), ValidationError);
}

TEST_CASE("custom_node wrappers") {
  Rng rng(77);
  Tensor x = Tensor::randn({3, 3}, rng);
  x.set_requires_grad(true);

  Tensor ident = custom_node(
      "identity", {3, 3},
      [](const std::vector<Tensor>& in) { return in[0].data(); },
      [](const std::vector<double>& up, const std::vector<Tensor>&) {
        return std::vector<std::vector<double>>{up};
      },
      {x});
  for (int i = 0; i < 9; ++i) CHECK(ident.data()[i] == x.data()[i]);
  backward(sum(ident));
  for (int i = 0; i < 9; ++i) CHECK(x.grad()[i] == 1.0);

  x.zero_grad();
  Tensor twice = custom_node(
      "double", {3, 3},
      [](const std::vector<Tensor>& in) {
        std::vector<double> out = in[0].data();
        for (auto& v : out) v *= 2.0;
        return out;
      },
      [](const std::vector<double>& up, const std::vector<Tensor>&) {
        std::vector<double> g = up;
        for (auto& v : g) v *= 2.0;
        return std::vector<std::vector<double>>{g};
      },
      {x});
  backward(sum(twice));
  for (int i = 0; i < 9; ++i) CHECK(x.grad()[i] == 2.0);

  Tensor bad = custom_node(
      "bad_shape", {3, 3},
      [](const std::vector<Tensor>& in) { return in[0].data(); },
      [](const std::vector<double>&, const std::vector<Tensor>&) {
        return std::vector<std::vector<double>>{std::vector<double>(4, 1.0)};
      },
      {x});
  CHECK_THROWS_AS(backward(sum(bad)), ContractError);
}

TEST_CASE("clamp gradient is zero outside the range") {
  Tensor x = Tensor::from_data({3}, {-2.0, 0.25, 2.0});
  x.set_requires_grad(true);
  backward(sum(clamp(x, -0.5, 0.5)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 1.0);
  CHECK(x.grad()[2] == 0.0);
  double err = gradcheck(
      {4, 4}, [](const Tensor& t) { return weighted_sum(clamp(t, -10, 10), 4); }, 71);
  CHECK(err < 1e-6);
}

TEST_CASE("shape ops: reshape, concat, slice, select, heads") {
  Rng rng(5);
  Tensor a = Tensor::randn({2, 3, 4}, rng);
  CHECK_THROWS_AS(reshape(a, {5, 5}), DimensionError);
  Tensor flat = reshape(a, {24});
  CHECK(flat.data() == a.data());

  Tensor b = Tensor::randn({2, 2, 4}, rng);
  Tensor cat = concat_axis1(a, b);
  CHECK(cat.shape() == Shape{2, 5, 4});
  CHECK(cat.at({1, 3, 0}) == b.at({1, 0, 0}));
  Tensor back = slice_axis1(cat, 3, 2);
  for (int64_t i = 0; i < back.numel(); ++i) CHECK(back.data()[i] == b.data()[i]);

  Tensor row = select_axis0(a, 1);
  CHECK(row.shape() == Shape{3, 4});
  CHECK(row.at({2, 3}) == a.at({1, 2, 3}));
  CHECK_THROWS_AS(select_axis0(a, 2), ValidationError);

  Tensor wide = Tensor::randn({2, 3, 8}, rng);
  Tensor heads = split_heads(wide, 4);
  CHECK(heads.shape() == Shape{8, 3, 2});
  CHECK(heads.at({5, 2, 1}) == wide.at({1, 2, 3}));  // batch 1, head 1, j 1
  Tensor merged = merge_heads(heads, 4);
  CHECK(merged.shape() == wide.shape());
  for (int64_t i = 0; i < wide.numel(); ++i) CHECK(merged.data()[i] == wide.data()[i]);

  double err = gradcheck({2, 3, 8}, [](const Tensor& t) {
    Tensor h = merge_heads(split_heads(t, 2), 2);
    Tensor sl = slice_last(concat_axis1(h, h), 1, 5);
    return weighted_sum(sl, 12);
  }, 81);
  CHECK(err < 1e-6);
}

TEST_CASE("bmm and transpose_last2") {
  Rng rng(13);
  Tensor a = Tensor::randn({3, 2, 4}, rng);
  Tensor b = Tensor::randn({3, 4, 5}, rng);
  Tensor c = bmm(a, b);
  CHECK(c.shape() == Shape{3, 2, 5});
  double direct = 0.0;
  for (int j = 0; j < 4; ++j) direct += a.at({1, 0, j}) * b.at({1, j, 2});
  CHECK(c.at({1, 0, 2}) == doctest::Approx(direct).epsilon(1e-12));

  Tensor t = transpose_last2(a);
  CHECK(t.shape() == Shape{3, 4, 2});
  CHECK(t.at({2, 3, 1}) == a.at({2, 1, 3}));

  double err = gradcheck({3, 2, 4}, [&](const Tensor& x) {
    return weighted_sum(bmm(x, b), 14);
  }, 91, 1e-6);
  CHECK(err < 1e-6);
  err = gradcheck({3, 4, 5}, [&](const Tensor& x) {
    return weighted_sum(bmm(a, transpose_last2(transpose_last2(x))), 15);
  }, 92, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("reductions: sum, mean, mean_axis1") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(sum(a).item() == 10.0);
  CHECK(mean(a).item() == 2.5);
  Tensor t = Tensor::from_data({1, 2, 2}, {1, 2, 3, 4});
  Tensor m = mean_axis1(t);
  CHECK(m.shape() == Shape{1, 2});
  CHECK(m.data()[0] == 2.0);
  CHECK(m.data()[1] == 3.0);
  double err = gradcheck({2, 3, 4}, [](const Tensor& x) {
    return weighted_sum(mean_axis1(x), 16);
  }, 93);
  CHECK(err < 1e-6);
}

TEST_CASE("cross_entropy values and gradient") {
  Tensor uniform = Tensor::zeros({1, 100});
  CHECK(cross_entropy(uniform, {17}).item() == doctest::Approx(std::log(100.0)).epsilon(1e-12));
  std::vector<double> confident(5, 0.0);
  confident[2] = 50.0;
  CHECK(cross_entropy(Tensor::from_data({1, 5}, confident), {2}).item() ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(uniform, {100}), ValidationError);
  CHECK_THROWS_AS(cross_entropy(uniform, {1, 2}), DimensionError);

  std::vector<int> labels = {1, 0, 3};
  double err = gradcheck({3, 4}, [&](const Tensor& x) {
    return cross_entropy(x, labels);
  }, 94, 1e-6);
  CHECK(err < 1e-6);
}

TEST_CASE("gaussian_blur_valid shape, normalization, gradient") {
  Tensor flat = Tensor::full({12, 13, 2}, 0.7);
  Tensor blurred = gaussian_blur_valid(flat);
  CHECK(blurred.shape() == Shape{2, 3, 2});
  for (int64_t i = 0; i < blurred.numel(); ++i)
    CHECK(blurred.data()[i] == doctest::Approx(0.7).epsilon(1e-12));
  CHECK_THROWS_AS(gaussian_blur_valid(Tensor::zeros({8, 8, 1})), ValidationError);

  // corner pixels carry ~1e-7 gradients where finite-difference noise
  // dominates; the op-level tolerance is 1e-4
  double err = gradcheck({12, 12, 1}, [](const Tensor& x) {
    return weighted_sum(gaussian_blur_valid(x), 18);
  }, 95);
  CHECK(err < 1e-4);
}

TEST_CASE("no op mutates its inputs") {
  Rng rng(23);
  Tensor a = Tensor::randn({3, 3}, rng);
  std::vector<double> snapshot = a.data();
  Tensor b = Tensor::randn({3, 3}, rng);
  (void)add(a, b);
  (void)mul(a, b);
  (void)tanh(a);
  (void)softmax(a);
  (void)matmul(a, b);
  CHECK(a.data() == snapshot);
}

TEST_CASE("frozen leaves keep no grad but pass gradient through") {
  Rng rng(29);
  Tensor w = Tensor::randn({3, 3}, rng);
  w.set_requires_grad(true).set_frozen(true);
  Tensor x = Tensor::randn({2, 3}, rng);
  x.set_requires_grad(true);
  backward(sum(matmul(x, w)));
  CHECK(!w.has_grad());
  CHECK(x.has_grad());
  double total = 0.0;
  for (double v : x.grad()) total += std::fabs(v);
  CHECK(total > 0.0);

  // unfreezing restores accumulation
  w.set_frozen(false);
  backward(sum(matmul(x, w)));
  CHECK(w.has_grad());
}

TEST_CASE("backward is deterministic over identical traces") {
  auto run = [](uint64_t seed) {
    Rng rng(seed);
    Tensor x = Tensor::randn({4, 6}, rng);
    x.set_requires_grad(true);
    Tensor w1 = Tensor::randn({6, 6}, rng);
    w1.set_requires_grad(true);
    Tensor h = gelu(matmul(x, w1));
    Tensor g = Tensor::full({6}, 1.0);
    Tensor b = Tensor::zeros({6});
    Tensor loss = mean(mul(layernorm(h, g, b), softmax(h)));
    backward(loss);
    std::vector<double> out = x.grad();
    out.insert(out.end(), w1.grad().begin(), w1.grad().end());
    return out;
  };
  auto g1 = run(123);
  auto g2 = run(123);
  CHECK(g1 == g2);
}

TEST_CASE("patchify extracts row-major patches and scatters gradients back") {
  // 1x4x4x1 image with values 0..15: patch 2 -> 4 tokens of 4 elements
  std::vector<double> img(16);
  for (int i = 0; i < 16; ++i) img[i] = i;
  Tensor x = Tensor::from_data({1, 4, 4, 1}, img);
  x.set_requires_grad(true);
  Tensor p = patchify(x, 2);
  CHECK(p.shape() == Shape{1, 4, 4});
  CHECK(p.data() == std::vector<double>{0, 1, 4, 5, 2, 3, 6, 7, 8, 9, 12, 13,
                                        10, 11, 14, 15});
  Tensor w = Tensor::from_data({1, 4, 4}, std::vector<double>(16, 2.0));
  backward(sum(mul(p, w)));
  for (double v : x.grad()) CHECK(v == 2.0);  // pure permutation
  CHECK_THROWS_AS(patchify(x, 3), ValidationError);
  CHECK_THROWS_AS(patchify(Tensor::zeros({4, 4, 1}), 2), DimensionError);
}

TEST_CASE("tile_axis0 repeats and sums gradients over repeats") {
  Tensor a = Tensor::from_data({1, 2}, {3.0, 4.0});
  a.set_requires_grad(true);
  Tensor t = tile_axis0(a, 3);
  CHECK(t.shape() == Shape{3, 2});
  CHECK(t.data() == std::vector<double>{3, 4, 3, 4, 3, 4});
  backward(sum(mul(t, Tensor::from_data({3, 2}, {1, 2, 3, 4, 5, 6}))));
  CHECK(a.grad() == std::vector<double>{9.0, 12.0});
  CHECK_THROWS_AS(tile_axis0(t, 2), DimensionError);
}
