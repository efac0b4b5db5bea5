#include "lpv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace lpv::inline LPV_NS {

namespace detail {

struct Node {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until first touched
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  Tensor::BackwardFn backward;
};

}  // namespace detail

namespace {

thread_local bool g_grad_enabled = true;

void check_shape(const Shape& shape) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("zero-sized dimension in shape " + shape_str(shape));
  }
}

bool is_suffix(const Shape& full, const Shape& tail) {
  if (tail.size() > full.size()) return false;
  return std::equal(tail.begin(), tail.end(), full.end() - static_cast<std::ptrdiff_t>(tail.size()));
}

void require_broadcastable(const Tensor& a, const Tensor& b, const char* op) {
  if (!is_suffix(a.shape(), b.shape())) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " are not compatible");
  }
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// --- Tensor -------------------------------------------------------------------

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0, requires_grad); }

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  check_shape(shape);
  auto node = std::make_shared<detail::Node>();
  node->data.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> data, bool requires_grad) {
  check_shape(shape);
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("data length " + std::to_string(data.size()) + " does not match shape " +
                     shape_str(shape));
  }
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(Real value, bool requires_grad) { return full({1}, value, requires_grad); }

Tensor Tensor::make_result(Shape shape, std::vector<Real> data, std::vector<Tensor> parents,
                           BackwardFn backward) {
  Tensor out = from_data(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  bool track = std::any_of(parents.begin(), parents.end(),
                           [](const Tensor& p) { return p.defined() && p.requires_grad(); });
  if (!track) return out;
  out.node_->requires_grad = true;
  out.node_->backward = std::move(backward);
  for (auto& p : parents) {
    if (p.defined() && p.requires_grad()) out.node_->parents.push_back(p.node_);
  }
  return out;
}

const Shape& Tensor::shape() const { return node_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

std::size_t Tensor::numel() const { return node_->data.size(); }
std::span<Real> Tensor::data() { return node_->data; }
std::span<const Real> Tensor::data() const { return node_->data; }

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return node_->data[0];
}

Real Tensor::at(std::initializer_list<std::size_t> index) const {
  if (index.size() != rank()) throw ShapeError("index rank mismatch for " + shape_str(shape()));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= node_->shape[axis]) throw ShapeError("index out of range for " + shape_str(shape()));
    flat = flat * node_->shape[axis] + i;
    ++axis;
  }
  return node_->data[flat];
}

bool Tensor::requires_grad() const { return node_->requires_grad; }
void Tensor::set_requires_grad(bool on) { node_->requires_grad = on; }
bool Tensor::has_grad() const { return !node_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return node_->grad; }

std::span<Real> Tensor::grad_buffer() const {
  if (node_->grad.empty()) node_->grad.assign(node_->data.size(), 0);
  return node_->grad;
}

void Tensor::zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), Real(0)); }

Tensor Tensor::detach() const { return from_data(shape(), node_->data, requires_grad() && !node_->backward); }

void Tensor::backward() const {
  if (numel() != 1) throw ShapeError("backward() needs a scalar, got " + shape_str(shape()));
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (parents first).
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{node_.get(), 0}};
  seen.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  // Interior gradients restart from zero so that repeated calls accumulate
  // only into leaves.
  for (auto* node : order) {
    if (node->backward) node->grad.assign(node->data.size(), 0);
  }
  grad_buffer()[0] += 1;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* node = *it;
    if (!node->backward) continue;
    // Rewrap without taking ownership; the graph is kept alive by *this.
    Tensor out(std::shared_ptr<detail::Node>(std::shared_ptr<detail::Node>{}, node));
    node->backward(out);
  }
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_enabled() { return g_grad_enabled; }

// --- gemm ---------------------------------------------------------------------

namespace {

using Vec = Real __attribute__((vector_size(64)));
constexpr std::size_t kLanes = sizeof(Vec) / sizeof(Real);
constexpr std::size_t kTileRows = 4;
constexpr std::size_t kTileCols = 2 * kLanes;

inline Vec load(const Real* p) {
  Vec v;
  std::memcpy(&v, p, sizeof(Vec));
  return v;
}

inline void store(Real* p, const Vec& v) { std::memcpy(p, &v, sizeof(Vec)); }

// c[m x n] += a[m x k] * b[k x n], all row-major. A 4 x 2-vector tile of c
// stays in registers across the whole p loop; each entry still sums over p in
// order, so the result matches the plain triple loop bit for bit.
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const Real* __restrict a, const Real* __restrict b,
             Real* __restrict c) {
  std::size_t i = 0;
  for (; i + kTileRows <= m; i += kTileRows) {
    const Real* a0 = a + i * k;
    const Real* a1 = a0 + k;
    const Real* a2 = a1 + k;
    const Real* a3 = a2 + k;
    Real* c0 = c + i * n;
    Real* c1 = c0 + n;
    Real* c2 = c1 + n;
    Real* c3 = c2 + n;
    std::size_t j = 0;
    for (; j + kTileCols <= n; j += kTileCols) {
      Vec x0 = load(c0 + j), y0 = load(c0 + j + kLanes);
      Vec x1 = load(c1 + j), y1 = load(c1 + j + kLanes);
      Vec x2 = load(c2 + j), y2 = load(c2 + j + kLanes);
      Vec x3 = load(c3 + j), y3 = load(c3 + j + kLanes);
      for (std::size_t p = 0; p < k; ++p) {
        const Vec bx = load(b + p * n + j);
        const Vec by = load(b + p * n + j + kLanes);
        x0 += a0[p] * bx;
        y0 += a0[p] * by;
        x1 += a1[p] * bx;
        y1 += a1[p] * by;
        x2 += a2[p] * bx;
        y2 += a2[p] * by;
        x3 += a3[p] * bx;
        y3 += a3[p] * by;
      }
      store(c0 + j, x0), store(c0 + j + kLanes, y0);
      store(c1 + j, x1), store(c1 + j + kLanes, y1);
      store(c2 + j, x2), store(c2 + j + kLanes, y2);
      store(c3 + j, x3), store(c3 + j + kLanes, y3);
    }
    for (; j < n; ++j) {
      Real s0 = c0[j], s1 = c1[j], s2 = c2[j], s3 = c3[j];
      for (std::size_t p = 0; p < k; ++p) {
        const Real bv = b[p * n + j];
        s0 += a0[p] * bv;
        s1 += a1[p] * bv;
        s2 += a2[p] * bv;
        s3 += a3[p] * bv;
      }
      c0[j] = s0, c1[j] = s1, c2[j] = s2, c3[j] = s3;
    }
  }
  for (; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = a[i * k + p];
      for (std::size_t q = 0; q < n; ++q) c[i * n + q] += av * b[p * n + q];
    }
  }
}

std::vector<Real> transposed(const Real* x, std::size_t rows, std::size_t cols) {
  std::vector<Real> t(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t q = 0; q < cols; ++q) t[q * rows + r] = x[r * cols + q];
  return t;
}

}  // namespace

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const Real* a,
          const Real* b, Real* c, bool accumulate) {
  std::vector<Real> at, bt;
  if (trans_a) {
    at = transposed(a, k, m);
    a = at.data();
  }
  if (trans_b) {
    bt = transposed(b, n, k);
    b = bt.data();
  }
  if (!accumulate) std::fill(c, c + m * n, Real(0));
  gemm_nn(m, n, k, a, b, c);
}

// --- ops ----------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<Real> out(m * n);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data(), false);
  return Tensor::make_result({m, n}, std::move(out), {a, b}, [a, b, m, n, k](const Tensor& o) {
    auto g = o.grad();
    if (a.requires_grad()) gemm(false, true, m, k, n, g.data(), b.data().data(), a.grad_buffer().data(), true);
    if (b.requires_grad()) gemm(true, false, k, n, m, a.data().data(), g.data(), b.grad_buffer().data(), true);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b, bool trans_a, bool trans_b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0)) {
    throw ShapeError("bmm: incompatible batches " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0);
  const std::size_t m = trans_a ? a.dim(2) : a.dim(1);
  const std::size_t k = trans_a ? a.dim(1) : a.dim(2);
  const std::size_t kb = trans_b ? b.dim(2) : b.dim(1);
  const std::size_t n = trans_b ? b.dim(1) : b.dim(2);
  if (k != kb) {
    throw ShapeError("bmm: inner dimensions differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  std::vector<Real> out(batch * m * n);
  for (std::size_t s = 0; s < batch; ++s) {
    gemm(trans_a, trans_b, m, n, k, a.data().data() + s * m * k, b.data().data() + s * k * n,
         out.data() + s * m * n, false);
  }
  return Tensor::make_result({batch, m, n}, std::move(out), {a, b},
                             [a, b, batch, m, n, k, trans_a, trans_b](const Tensor& o) {
    auto g = o.grad();
    for (std::size_t s = 0; s < batch; ++s) {
      const Real* gs = g.data() + s * m * n;
      const Real* as = a.data().data() + s * m * k;
      const Real* bs = b.data().data() + s * k * n;
      if (a.requires_grad()) {
        Real* ga = a.grad_buffer().data() + s * m * k;
        // dA = dC op(B)^T, laid out as op(A) or its transpose.
        if (!trans_a) gemm(false, !trans_b, m, k, n, gs, bs, ga, true);
        else gemm(trans_b, true, k, m, n, bs, gs, ga, true);
      }
      if (b.requires_grad()) {
        Real* gb = b.grad_buffer().data() + s * k * n;
        if (!trans_b) gemm(!trans_a, false, k, n, m, as, gs, gb, true);
        else gemm(true, trans_a, n, k, m, gs, as, gb, true);
      }
    }
  });
}

namespace {

enum class Binary { kAdd, kSub, kMul };

Tensor binary(const Tensor& a, const Tensor& b, Binary kind, const char* name) {
  require_broadcastable(a, b, name);
  const std::size_t n = a.numel();
  const std::size_t nb = b.numel();
  auto ad = a.data();
  auto bd = b.data();
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Real y = bd[i % nb];
    switch (kind) {
      case Binary::kAdd: out[i] = ad[i] + y; break;
      case Binary::kSub: out[i] = ad[i] - y; break;
      case Binary::kMul: out[i] = ad[i] * y; break;
    }
  }
  return Tensor::make_result(a.shape(), std::move(out), {a, b}, [a, b, kind, n, nb](const Tensor& o) {
    auto g = o.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      if (kind == Binary::kMul) {
        auto bd = b.data();
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * bd[i % nb];
      } else {
        for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
      }
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      if (kind == Binary::kMul) {
        auto ad = a.data();
        for (std::size_t i = 0; i < n; ++i) gb[i % nb] += g[i] * ad[i];
      } else {
        const Real sign = kind == Binary::kSub ? Real(-1) : Real(1);
        for (std::size_t i = 0; i < n; ++i) gb[i % nb] += sign * g[i];
      }
    }
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kAdd, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kSub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary(a, b, Binary::kMul, "mul"); }

Tensor scale(const Tensor& a, Real factor) {
  std::vector<Real> out(a.data().begin(), a.data().end());
  for (auto& v : out) v *= factor;
  return Tensor::make_result(a.shape(), std::move(out), {a}, [a, factor](const Tensor& o) {
    auto g = o.grad();
    auto ga = a.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += factor * g[i];
  });
}

Tensor relu(const Tensor& x) {
  std::vector<Real> out(x.data().begin(), x.data().end());
  for (auto& v : out) v = std::max(v, Real(0));
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x](const Tensor& o) {
    auto g = o.grad();
    auto gx = x.grad_buffer();
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xd[i] > 0) gx[i] += g[i];
  });
}

Tensor gelu(const Tensor& x) {
  // tanh approximation
  constexpr Real kC = Real(0.7978845608028654);  // sqrt(2/pi)
  constexpr Real kA = Real(0.044715);
  auto xd = x.data();
  std::vector<Real> out(xd.size());
  std::vector<Real> th(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) {
    const Real v = xd[i];
    th[i] = std::tanh(kC * (v + kA * v * v * v));
    out[i] = Real(0.5) * v * (1 + th[i]);
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, th = std::move(th)](const Tensor& o) {
    auto g = o.grad();
    auto gx = x.grad_buffer();
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const Real v = xd[i];
      const Real t = th[i];
      const Real dinner = kC * (1 + 3 * kA * v * v);
      gx[i] += g[i] * (Real(0.5) * (1 + t) + Real(0.5) * v * (1 - t * t) * dinner);
    }
  });
}

Tensor softmax_lastdim(const Tensor& x, const std::optional<Tensor>& mask) {
  if (mask && mask->shape() != x.shape()) {
    throw ShapeError("softmax mask " + shape_str(mask->shape()) + " does not match input " + shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  const std::size_t rows = x.numel() / cols;
  auto xd = x.data();
  std::vector<Real> out(xd.size());
  const Real* md = mask ? mask->data().data() : nullptr;
  constexpr Real kMaskedCut = kMaskedValue / 2;
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xd.data() + r * cols;
    Real* yr = out.data() + r * cols;
    const Real* mr = md ? md + r * cols : nullptr;
    Real mx = -std::numeric_limits<Real>::infinity();
    bool any_open = false;
    for (std::size_t c = 0; c < cols; ++c) {
      const Real v = mr ? xr[c] + mr[c] : xr[c];
      yr[c] = v;
      if (!mr || mr[c] > kMaskedCut) any_open = true;
      mx = std::max(mx, v);
    }
    if (!any_open) throw ContractError("softmax: row " + std::to_string(r) + " is fully masked");
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      if (mr && mr[c] <= kMaskedCut) {
        yr[c] = 0;
        continue;
      }
      yr[c] = std::exp(yr[c] - mx);
      total += yr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) yr[c] /= total;
  }
  return Tensor::make_result(x.shape(), std::move(out), {x}, [x, rows, cols](const Tensor& o) {
    auto g = o.grad();
    auto y = o.data();
    auto gx = x.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t base = r * cols;
      Real dot = 0;
      for (std::size_t c = 0; c < cols; ++c) dot += g[base + c] * y[base + c];
      for (std::size_t c = 0; c < cols; ++c) gx[base + c] += y[base + c] * (g[base + c] - dot);
    }
  });
}

Tensor cross_entropy_rows(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_rows: logits must be 2-D, got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (labels.size() != rows) {
    throw ShapeError("cross_entropy_rows: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(rows) + " rows");
  }
  for (int label : labels) {
    if (label < 0 || static_cast<std::size_t>(label) >= cols) {
      throw ContractError("label index " + std::to_string(label) + " outside [0, " + std::to_string(cols) + ")");
    }
  }
  auto ld = logits.data();
  std::vector<Real> probs(ld.size());
  std::vector<Real> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* lr = ld.data() + r * cols;
    Real* pr = probs.data() + r * cols;
    const Real mx = *std::max_element(lr, lr + cols);
    Real total = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      pr[c] = std::exp(lr[c] - mx);
      total += pr[c];
    }
    for (std::size_t c = 0; c < cols; ++c) pr[c] /= total;
    out[r] = -(lr[labels[r]] - mx - std::log(total));
  }
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor::make_result({rows}, std::move(out), {logits},
                             [logits, rows, cols, lab = std::move(lab), probs = std::move(probs)](const Tensor& o) {
    auto g = o.grad();
    auto gl = logits.grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const Real target = static_cast<int>(c) == lab[r] ? Real(1) : Real(0);
        gl[r * cols + c] += g[r] * (probs[r * cols + c] - target);
      }
    }
  });
}

Tensor sum(const Tensor& x) {
  Real total = 0;
  for (Real v : x.data()) total += v;
  return Tensor::make_result({1}, {total}, {x}, [x](const Tensor& o) {
    const Real g = o.grad()[0];
    for (auto& v : x.grad_buffer()) v += g;
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), Real(1) / static_cast<Real>(x.numel())); }

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<Real> out(x.data().begin(), x.data().end());
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [x](const Tensor& o) {
    auto g = o.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
  });
}

Tensor permute(const Tensor& x, const std::vector<std::size_t>& order) {
  const std::size_t r = x.rank();
  if (order.size() != r || r > 4) throw ShapeError("permute: bad axis order for " + shape_str(x.shape()));
  std::vector<bool> used(r, false);
  for (auto ax : order) {
    if (ax >= r || used[ax]) throw ShapeError("permute: axis order is not a permutation");
    used[ax] = true;
  }
  // Pad to rank 4 with leading unit axes.
  const std::size_t pad = 4 - r;
  std::size_t in_dims[4] = {1, 1, 1, 1};
  std::size_t perm[4] = {0, 1, 2, 3};
  for (std::size_t i = 0; i < r; ++i) {
    in_dims[pad + i] = x.dim(i);
    perm[pad + i] = pad + order[i];
  }
  std::size_t in_strides[4];
  in_strides[3] = 1;
  for (int i = 2; i >= 0; --i) in_strides[i] = in_strides[i + 1] * in_dims[i + 1];
  std::size_t out_dims[4];
  std::size_t src_strides[4];
  for (std::size_t i = 0; i < 4; ++i) {
    out_dims[i] = in_dims[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // index map: out flat position -> in flat position
  std::vector<std::size_t> src(x.numel());
  std::size_t pos = 0;
  for (std::size_t i0 = 0; i0 < out_dims[0]; ++i0)
    for (std::size_t i1 = 0; i1 < out_dims[1]; ++i1)
      for (std::size_t i2 = 0; i2 < out_dims[2]; ++i2)
        for (std::size_t i3 = 0; i3 < out_dims[3]; ++i3)
          src[pos++] = i0 * src_strides[0] + i1 * src_strides[1] + i2 * src_strides[2] + i3 * src_strides[3];
  auto xd = x.data();
  std::vector<Real> out(src.size());
  for (std::size_t i = 0; i < src.size(); ++i) out[i] = xd[src[i]];
  Shape shape(r);
  for (std::size_t i = 0; i < r; ++i) shape[i] = x.dim(order[i]);
  return Tensor::make_result(std::move(shape), std::move(out), {x}, [x, src = std::move(src)](const Tensor& o) {
    auto g = o.grad();
    auto gx = x.grad_buffer();
    for (std::size_t i = 0; i < src.size(); ++i) gx[src[i]] += g[i];
  });
}

Tensor transpose(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("transpose needs rank >= 2, got " + shape_str(x.shape()));
  std::vector<std::size_t> order(x.rank());
  std::iota(order.begin(), order.end(), 0);
  std::swap(order[x.rank() - 1], order[x.rank() - 2]);
  return permute(x, order);
}

Tensor concat_lastdim(const Tensor& a, const Tensor& b) {
  Shape lead_a(a.shape().begin(), a.shape().end() - 1);
  Shape lead_b(b.shape().begin(), b.shape().end() - 1);
  if (lead_a != lead_b) {
    throw ShapeError("concat_lastdim: leading shapes differ for " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t ca = a.shape().back(), cb = b.shape().back();
  const std::size_t rows = a.numel() / ca;
  std::vector<Real> out(rows * (ca + cb));
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(ad.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(bd.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  Shape shape = lead_a;
  shape.push_back(ca + cb);
  return Tensor::make_result(std::move(shape), std::move(out), {a, b}, [a, b, rows, ca, cb](const Tensor& o) {
    auto g = o.grad();
    if (a.requires_grad()) {
      auto ga = a.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < ca; ++c) ga[r * ca + c] += g[r * (ca + cb) + c];
    }
    if (b.requires_grad()) {
      auto gb = b.grad_buffer();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cb; ++c) gb[r * cb + c] += g[r * (ca + cb) + ca + c];
    }
  });
}

// --- gradient checking ----------------------------------------------------------

double finite_diff_check(const std::function<Tensor()>& loss_fn, const std::vector<Tensor>& params, Real eps,
                         Stencil stencil) {
  if (!(eps > 0)) throw ContractError("finite_diff_check: eps must be positive");
  for (const auto& p : params) p.grad_buffer();
  for (auto p : params) p.zero_grad();
  loss_fn().backward();

  NoGradGuard no_grad;
  double worst = 0;
  for (auto p : params) {
    std::vector<Real> analytic(p.grad().begin(), p.grad().end());
    auto values = p.data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const Real saved = values[i];
      auto central = [&](Real h) {
        values[i] = saved + h;
        const double up = loss_fn().item();
        values[i] = saved - h;
        const double down = loss_fn().item();
        values[i] = saved;
        return (up - down) / (2.0 * static_cast<double>(h));
      };
      double numeric = central(eps);
      if (stencil == Stencil::kRichardson) numeric = (4.0 * central(eps / 2) - numeric) / 3.0;
      const double err = std::abs(static_cast<double>(analytic[i]) - numeric) /
                         (std::abs(static_cast<double>(analytic[i])) + 1e-8);
      worst = std::max(worst, err);
    }
  }
  return worst;
}

double finite_diff_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, Real eps,
                         Stencil stencil) {
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  return finite_diff_check([&] { return f(leaf); }, {leaf}, eps, stencil);
}

}  // namespace lpv::inline LPV_NS
