#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "splat/common.hpp"
#include "splat/rng.hpp"

namespace splat {

struct GraphNode;

struct TensorImpl {
  Shape shape;
  std::vector<double> data;  // row-major, 64-bit
  bool requires_grad = false;
  bool frozen = false;  // leaf opt-out: backward skips accumulation
  std::vector<double> grad;
  std::shared_ptr<GraphNode> node;  // producing op; null for leaves
};

// Value-semantics handle over a shared dense array. Forward ops never
// mutate their inputs; raw_data() exists for initialization and optimizer
// updates between steps.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from_data(Shape shape, std::vector<double> data);
  static Tensor scalar(double value);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  size_t ndim() const { return impl_->shape.size(); }
  int64_t dim(size_t i) const { return impl_->shape[i]; }
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }
  const std::vector<double>& data() const { return impl_->data; }
  std::vector<double>& raw_data() { return impl_->data; }
  double item() const;
  double at(std::initializer_list<int64_t> idx) const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);
  bool frozen() const { return impl_->frozen; }
  Tensor& set_frozen(bool v) {
    impl_->frozen = v;
    return *this;
  }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();
  void accumulate_grad(const std::vector<double>& g);

  const std::shared_ptr<GraphNode>& node() const { return impl_->node; }
  bool same_impl(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl_ptr() const { return impl_.get(); }

 private:
  friend Tensor make_op_result(Shape shape, std::vector<double> data,
                               std::shared_ptr<GraphNode> node, bool req);
  std::shared_ptr<TensorImpl> impl_;
};

// One recorded forward step. `backward` maps the output gradient to one
// gradient array per parent (empty array = no gradient for that parent),
// and runs in reverse topological order of the trace.
struct GraphNode {
  std::string op;
  std::vector<Tensor> parents;
  std::weak_ptr<TensorImpl> output;
  std::function<std::vector<std::vector<double>>(const std::vector<double>&)>
      backward;
};

// Elementwise binary ops. `b` may share a's shape, be a scalar, or match a
// trailing suffix of a's shape (the only broadcasts supported).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor neg(const Tensor& a);

Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor gelu(const Tensor& a);  // tanh approximation
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// Zero gradient outside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);

// [..., k] x [k, n] -> [..., n]; leading axes are flattened into rows.
Tensor matmul(const Tensor& a, const Tensor& b);
// [B, m, k] x [B, k, n] -> [B, m, n].
Tensor bmm(const Tensor& a, const Tensor& b);
Tensor transpose_last2(const Tensor& a);

Tensor softmax(const Tensor& a);  // along the last axis
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                 double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor mean_axis1(const Tensor& a);  // [B,T,d] -> [B,d]

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_axis1(const Tensor& a, const Tensor& b);
Tensor slice_axis1(const Tensor& a, int64_t start, int64_t len);
Tensor slice_last(const Tensor& a, int64_t start, int64_t len);
Tensor select_axis0(const Tensor& a, int64_t index);
Tensor split_heads(const Tensor& a, int64_t heads);  // [B,T,d] -> [B*h,T,d/h]
Tensor merge_heads(const Tensor& a, int64_t heads);  // [B*h,T,dh] -> [B,T,h*dh]

// [B,H,W,C] -> [B, (H/p)*(W/p), p*p*C]: non-overlapping patches in row-major
// grid order, pixels row-major within a patch, channels innermost.
Tensor patchify(const Tensor& x, int64_t patch);
// [1, ...] -> [reps, ...]; backward sums over the new axis.
Tensor tile_axis0(const Tensor& a, int64_t reps);

// Mean over the batch of -log softmax(logits)[label]; backward is
// (softmax - onehot) / B.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// 11x11 Gaussian window (sigma 1.5), valid-region, per channel. [H,W,C].
Tensor gaussian_blur_valid(const Tensor& x);

using CustomForward = std::function<std::vector<double>(const std::vector<Tensor>&)>;
using CustomBackward = std::function<std::vector<std::vector<double>>(
    const std::vector<double>& upstream, const std::vector<Tensor>& inputs)>;

// Hosts externally differentiated computations (the rasterizer) on the tape.
// backward must return one shape-matched gradient per input; violations
// raise ContractError when backward() reaches the node.
Tensor custom_node(const std::string& name, Shape out_shape, CustomForward fwd,
                   CustomBackward bwd, std::vector<Tensor> inputs);

// Accumulates gradients in reverse topological order. `loss` must be scalar.
// Repeated calls accumulate; use zero_grad() between steps.
void backward(const Tensor& loss);

}  // namespace splat
