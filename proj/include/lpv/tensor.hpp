#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lpv/errors.hpp"
#include "lpv/real.hpp"

namespace lpv::inline LPV_NS {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node;
}

// Dense row-major tensor with reverse-mode autodiff.
//
// A Tensor is a handle: copies share the same storage and graph node, the
// way framework tensors behave. Use clone() for an independent copy.
class Tensor {
 public:
  using BackwardFn = std::function<void(const Tensor& out)>;

  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  // Creates the result of a differentiable op. The backward function reads
  // out.grad() and accumulates into the parents' grad_buffer(). When grad
  // mode is off or no parent requires grad, no graph node is recorded.
  static Tensor make_result(Shape shape, std::vector<Real> data,
                            std::vector<Tensor> parents, BackwardFn backward);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return shape().size(); }
  std::size_t numel() const;

  std::span<Real> data();
  std::span<const Real> data() const;
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool has_grad() const;
  std::span<const Real> grad() const;
  // Gradient storage, allocated zero-filled on first access.
  std::span<Real> grad_buffer() const;
  void zero_grad();

  // New leaf holding a copy of the values, detached from any graph.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires grad.
  void backward() const;

  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// RAII switch for recording the backward graph on this thread.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

// c (m x n) = op(a) * op(b), op = optional transpose; row-major, no aliasing.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          const Real* a, const Real* b, Real* c, bool accumulate);

// --- differentiable ops ---------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// Batched matmul over the leading axis: [B x m x k] * [B x k x n].
Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a = false, bool trans_b = false);

// Elementwise; b may also match a trailing suffix of a's shape and is then
// broadcast over the leading axes (bias / position-encoding adds).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Real factor);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);

// Softmax over the last axis. An optional additive mask of identical shape
// holds 0 or kMaskedValue; masked positions come out exactly 0.
Tensor softmax_lastdim(const Tensor& x, const std::optional<Tensor>& mask = std::nullopt);

// Per-row cross entropy of logits [R x C] against class indices; returns [R].
Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
// Axis permutation for rank <= 4.
Tensor permute(const Tensor& x, const std::vector<std::size_t>& order);
// Swaps the last two axes.
Tensor transpose(const Tensor& x);
Tensor concat_lastdim(const Tensor& a, const Tensor& b);

// --- gradient checking ------------------------------------------------------

// kCentral: (f(x+eps) - f(x-eps)) / 2eps.
// kRichardson: (4 D(eps/2) - D(eps)) / 3 with D the central difference. Its
// error is O(eps^4), so a larger step keeps rounding noise far below the
// 1e-8 floor of the relative error on near-zero gradients of deep models.
enum class Stencil { kCentral, kRichardson };

// Max over coordinates of |analytic - numeric| / (|analytic| + 1e-8) for a
// scalar-valued f. Parameters are perturbed in place and restored.
double finite_diff_check(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params,
                         Real eps = Real(1e-5), Stencil stencil = Stencil::kCentral);
double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                         Real eps = Real(1e-5), Stencil stencil = Stencil::kCentral);

}  // namespace lpv::inline LPV_NS
