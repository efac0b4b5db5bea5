#include "lpv/nn.hpp"

#include <cmath>

namespace lpv::inline LPV_NS {

namespace {

Tensor uniform_param(Shape shape, Real bound, Rng& rng) {
  std::vector<Real> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor::from_data(std::move(shape), std::move(data), true);
}

void push(ParamList& out, const std::string& prefix, const char* leaf, const Tensor& t) {
  if (t.defined()) out.push_back({prefix + "." + leaf, t});
}

}  // namespace

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

// --- functional ops --------------------------------------------------------------

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta) {
  const std::size_t width = x.shape().back();
  if (gamma.numel() != width || beta.numel() != width) {
    throw ShapeError("layer_norm: scale/shift width does not match input " + shape_str(x.shape()));
  }
  constexpr Real kEps = Real(1e-5);
  const std::size_t rows = x.numel() / width;
  auto xd = x.data();
  auto gd = gamma.data();
  auto bd = beta.data();
  std::vector<Real> out(xd.size());
  std::vector<Real> xhat(xd.size());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = xd.data() + r * width;
    Real mu = 0;
    for (std::size_t c = 0; c < width; ++c) mu += xr[c];
    mu /= static_cast<Real>(width);
    Real var = 0;
    for (std::size_t c = 0; c < width; ++c) var += (xr[c] - mu) * (xr[c] - mu);
    var /= static_cast<Real>(width);
    const Real inv = Real(1) / std::sqrt(var + kEps);
    inv_std[r] = inv;
    for (std::size_t c = 0; c < width; ++c) {
      const Real h = (xr[c] - mu) * inv;
      xhat[r * width + c] = h;
      out[r * width + c] = h * gd[c] + bd[c];
    }
  }
  return Tensor::make_result(
      x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](const Tensor& o) {
        auto g = o.grad();
        auto gd = gamma.data();
        std::span<Real> gx = x.requires_grad() ? x.grad_buffer() : std::span<Real>{};
        std::span<Real> gg = gamma.requires_grad() ? gamma.grad_buffer() : std::span<Real>{};
        std::span<Real> gb = beta.requires_grad() ? beta.grad_buffer() : std::span<Real>{};
        std::vector<Real> dxhat(width);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * width;
          Real mean_d = 0, mean_dx = 0;
          for (std::size_t c = 0; c < width; ++c) {
            dxhat[c] = g[base + c] * gd[c];
            mean_d += dxhat[c];
            mean_dx += dxhat[c] * xhat[base + c];
            if (!gg.empty()) gg[c] += g[base + c] * xhat[base + c];
            if (!gb.empty()) gb[c] += g[base + c];
          }
          if (gx.empty()) continue;
          mean_d /= static_cast<Real>(width);
          mean_dx /= static_cast<Real>(width);
          for (std::size_t c = 0; c < width; ++c) {
            gx[base + c] += inv_std[r] * (dxhat[c] - mean_d - xhat[base + c] * mean_dx);
          }
        }
      });
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel,
              std::size_t stride, Padding padding) {
  if (x.rank() != 4) throw ShapeError("conv2d: input must be [B x H x W x C], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), cin = x.dim(3);
  const std::size_t patch = kernel * kernel * cin;
  if (weight.rank() != 2 || weight.dim(0) != patch) {
    throw ShapeError("conv2d: weight " + shape_str(weight.shape()) + " does not fit input " + shape_str(x.shape()) +
                     " with kernel " + std::to_string(kernel));
  }
  const std::size_t cout = weight.dim(1);
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv2d: bias width mismatch");
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(kernel / 2);
  if (h + 2 * kernel / 2 < kernel || w + 2 * kernel / 2 < kernel) throw ShapeError("conv2d: input smaller than kernel");
  const std::size_t ho = (h + 2 * (kernel / 2) - kernel) / stride + 1;
  const std::size_t wo = (w + 2 * (kernel / 2) - kernel) / stride + 1;
  const std::size_t rows = batch * ho * wo;

  // src[r * patch + q] = flat input index, or -1 for zero padding.
  std::vector<std::ptrdiff_t> src(rows * patch);
  std::size_t r = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox, ++r) {
        std::ptrdiff_t* row = src.data() + r * patch;
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - pad;
            std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - pad;
            const auto sh = static_cast<std::ptrdiff_t>(h), sw = static_cast<std::ptrdiff_t>(w);
            bool inside = iy >= 0 && iy < sh && ix >= 0 && ix < sw;
            if (!inside && padding == Padding::kCircular) {
              iy = (iy % sh + sh) % sh;
              ix = (ix % sw + sw) % sw;
              inside = true;
            }
            for (std::size_t c = 0; c < cin; ++c) {
              row[(ky * kernel + kx) * cin + c] =
                  inside ? static_cast<std::ptrdiff_t>(((b * h + static_cast<std::size_t>(iy)) * w +
                                                        static_cast<std::size_t>(ix)) * cin + c)
                         : -1;
            }
          }
        }
      }
    }
  }
  auto xd = x.data();
  std::vector<Real> cols(rows * patch);
  for (std::size_t i = 0; i < cols.size(); ++i) cols[i] = src[i] >= 0 ? xd[static_cast<std::size_t>(src[i])] : Real(0);

  std::vector<Real> out(rows * cout);
  gemm(false, false, rows, cout, patch, cols.data(), weight.data().data(), out.data(), false);
  if (bias.defined()) {
    auto bd = bias.data();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t c = 0; c < cout; ++c) out[i * cout + c] += bd[c];
  }
  return Tensor::make_result(
      {batch, ho, wo, cout}, std::move(out), {x, weight, bias},
      [x, weight, bias, rows, patch, cout, src = std::move(src), cols = std::move(cols)](const Tensor& o) {
        auto g = o.grad();
        if (weight.requires_grad()) {
          gemm(true, false, patch, cout, rows, cols.data(), g.data(), weight.grad_buffer().data(), true);
        }
        if (bias.defined() && bias.requires_grad()) {
          auto gb = bias.grad_buffer();
          for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t c = 0; c < cout; ++c) gb[c] += g[i * cout + c];
        }
        if (x.requires_grad()) {
          std::vector<Real> dcols(rows * patch);
          gemm(false, true, rows, patch, cout, g.data(), weight.data().data(), dcols.data(), false);
          auto gx = x.grad_buffer();
          for (std::size_t i = 0; i < dcols.size(); ++i)
            if (src[i] >= 0) gx[static_cast<std::size_t>(src[i])] += dcols[i];
        }
      });
}

Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("upsample2x: input must be [B x H x W x C], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  std::vector<std::size_t> src(batch * 4 * h * w * c);
  std::size_t i = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t y = 0; y < 2 * h; ++y)
      for (std::size_t xx = 0; xx < 2 * w; ++xx)
        for (std::size_t ch = 0; ch < c; ++ch) src[i++] = ((b * h + y / 2) * w + xx / 2) * c + ch;
  auto xd = x.data();
  std::vector<Real> out(src.size());
  for (std::size_t j = 0; j < src.size(); ++j) out[j] = xd[src[j]];
  return Tensor::make_result({batch, 2 * h, 2 * w, c}, std::move(out), {x}, [x, src = std::move(src)](const Tensor& o) {
    auto g = o.grad();
    auto gx = x.grad_buffer();
    for (std::size_t j = 0; j < src.size(); ++j) gx[src[j]] += g[j];
  });
}

Tensor sinusoidal_pe(std::size_t t_max, std::size_t e) {
  if (e == 0 || e % 2 != 0) throw ConfigError("sinusoidal_pe: width must be even, got " + std::to_string(e));
  std::vector<Real> data(t_max * e);
  for (std::size_t p = 0; p < t_max; ++p) {
    for (std::size_t k = 0; k < e / 2; ++k) {
      const double angle = static_cast<double>(p) / std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(e));
      data[p * e + 2 * k] = static_cast<Real>(std::sin(angle));
      data[p * e + 2 * k + 1] = static_cast<Real>(std::cos(angle));
    }
  }
  return Tensor::from_data({t_max, e}, std::move(data));
}

Tensor sinusoidal_pe_2d(std::size_t h, std::size_t w, std::size_t e) {
  if (e % 4 != 0) throw ConfigError("sinusoidal_pe_2d: width must be a multiple of 4, got " + std::to_string(e));
  const Tensor rows = sinusoidal_pe(h, e / 2);
  const Tensor cols = sinusoidal_pe(w, e / 2);
  std::vector<Real> data(h * w * e);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      Real* dst = data.data() + (y * w + x) * e;
      std::copy_n(rows.data().data() + y * (e / 2), e / 2, dst);
      std::copy_n(cols.data().data() + x * (e / 2), e / 2, dst + e / 2);
    }
  }
  return Tensor::from_data({h * w, e}, std::move(data));
}

// --- Linear ---------------------------------------------------------------------

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias) {
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(in));
  weight_ = uniform_param({in, out}, bound, rng);
  if (with_bias) bias_ = uniform_param({out}, bound, rng);
}

Tensor Linear::forward(const Tensor& x) const {
  const std::size_t in = weight_.dim(0);
  if (x.shape().back() != in) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " + shape_str(weight_.shape()));
  }
  Shape out_shape = x.shape();
  out_shape.back() = weight_.dim(1);
  Tensor y = matmul(x.rank() == 2 ? x : reshape(x, {x.numel() / in, in}), weight_);
  if (bias_.defined()) y = add(y, bias_);
  return y.rank() == out_shape.size() ? y : reshape(y, out_shape);
}

void Linear::collect(const std::string& prefix, ParamList& out) const {
  push(out, prefix, "weight", weight_);
  push(out, prefix, "bias", bias_);
}

// --- LayerNorm ------------------------------------------------------------------

LayerNorm::LayerNorm(std::size_t width)
    : gamma_(Tensor::full({width}, 1, true)), beta_(Tensor::zeros({width}, true)) {}

void LayerNorm::collect(const std::string& prefix, ParamList& out) const {
  push(out, prefix, "gamma", gamma_);
  push(out, prefix, "beta", beta_);
}

// --- Conv2d ---------------------------------------------------------------------

Conv2d::Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride, Rng& rng,
               bool with_bias, Padding padding)
    : kernel_(kernel), stride_(stride), padding_(padding) {
  const std::size_t fan_in = kernel * kernel * in_channels;
  const Real bound = Real(1) / std::sqrt(static_cast<Real>(fan_in));
  weight_ = uniform_param({fan_in, out_channels}, bound, rng);
  if (with_bias) bias_ = uniform_param({out_channels}, bound, rng);
}

Tensor Conv2d::forward(const Tensor& x) const { return conv2d(x, weight_, bias_, kernel_, stride_, padding_); }

void Conv2d::collect(const std::string& prefix, ParamList& out) const {
  push(out, prefix, "weight", weight_);
  push(out, prefix, "bias", bias_);
}

// --- MultiHeadAttention -----------------------------------------------------------

MultiHeadAttention::MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng) : width_(width), heads_(heads) {
  if (heads == 0 || width % heads != 0) {
    throw ConfigError("attention width " + std::to_string(width) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
  q_proj_ = Linear(width, width, rng);
  k_proj_ = Linear(width, width, rng, false);
  v_proj_ = Linear(width, width, rng);
  out_proj_ = Linear(width, width, rng);
}

AttentionOutput MultiHeadAttention::forward(const Tensor& q, const Tensor& k, const Tensor& v,
                                            const std::optional<Tensor>& add_mask) const {
  if (q.rank() != 3 || k.rank() != 3 || v.rank() != 3 || k.shape() != v.shape() || q.dim(0) != k.dim(0) ||
      q.dim(2) != width_ || k.dim(2) != width_) {
    throw ShapeError("attention: incompatible q " + shape_str(q.shape()) + ", k " + shape_str(k.shape()) + ", v " +
                     shape_str(v.shape()));
  }
  const std::size_t batch = q.dim(0), tq = q.dim(1), tk = k.dim(1);
  const std::size_t hd = width_ / heads_;

  auto split_heads = [&](const Tensor& t, std::size_t len) {
    Tensor r = reshape(t, {batch, len, heads_, hd});
    r = permute(r, {0, 2, 1, 3});
    return reshape(r, {batch * heads_, len, hd});
  };
  const Tensor qh = split_heads(q_proj_.forward(q), tq);
  const Tensor kh = split_heads(k_proj_.forward(k), tk);
  const Tensor vh = split_heads(v_proj_.forward(v), tk);

  Tensor scores = scale(bmm(qh, kh, false, true), Real(1) / std::sqrt(static_cast<Real>(hd)));
  std::optional<Tensor> head_mask;
  if (add_mask) {
    if (add_mask->shape() != Shape{batch, tq, tk}) {
      throw ShapeError("attention mask " + shape_str(add_mask->shape()) + " does not match [" + std::to_string(batch) +
                       "x" + std::to_string(tq) + "x" + std::to_string(tk) + "]");
    }
    std::vector<Real> expanded(batch * heads_ * tq * tk);
    auto md = add_mask->data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t hh = 0; hh < heads_; ++hh)
        std::copy_n(md.data() + b * tq * tk, tq * tk, expanded.data() + (b * heads_ + hh) * tq * tk);
    head_mask = Tensor::from_data({batch * heads_, tq, tk}, std::move(expanded));
  }
  const Tensor attn = softmax_lastdim(scores, head_mask);
  Tensor ctx = bmm(attn, vh);
  ctx = reshape(ctx, {batch, heads_, tq, hd});
  ctx = permute(ctx, {0, 2, 1, 3});
  ctx = reshape(ctx, {batch, tq, width_});

  std::vector<Real> attn_copy(attn.data().begin(), attn.data().end());
  return {out_proj_.forward(ctx), Tensor::from_data({batch, heads_, tq, tk}, std::move(attn_copy))};
}

void MultiHeadAttention::collect(const std::string& prefix, ParamList& out) const {
  q_proj_.collect(prefix + ".q", out);
  k_proj_.collect(prefix + ".k", out);
  v_proj_.collect(prefix + ".v", out);
  out_proj_.collect(prefix + ".out", out);
}

// --- EncoderBlock ---------------------------------------------------------------

EncoderBlock::EncoderBlock(std::size_t width, std::size_t heads, Rng& rng)
    : norm1_(width),
      attn_(width, heads, rng),
      norm2_(width),
      ffn1_(width, 4 * width, rng),
      ffn2_(4 * width, width, rng) {}

BlockOutput EncoderBlock::forward(const Tensor& x, const std::optional<Tensor>& add_mask) const {
  const Tensor h = norm1_.forward(x);
  AttentionOutput a = attn_.forward(h, h, h, add_mask);
  const Tensor x1 = add(x, a.out);
  const Tensor f = ffn2_.forward(gelu(ffn1_.forward(norm2_.forward(x1))));
  return {add(x1, f), std::move(a.attn)};
}

void EncoderBlock::collect(const std::string& prefix, ParamList& out) const {
  norm1_.collect(prefix + ".norm1", out);
  attn_.collect(prefix + ".attn", out);
  norm2_.collect(prefix + ".norm2", out);
  ffn1_.collect(prefix + ".ffn.w1", out);
  ffn2_.collect(prefix + ".ffn.w2", out);
}

// --- MiniUNet -------------------------------------------------------------------

MiniUNet::MiniUNet(std::size_t width, Rng& rng)
    : down1_(width, width, 3, 2, rng),
      down2_(width, width, 3, 2, rng),
      bottleneck_(width, width, 3, 1, rng),
      up1_(width, width, 3, 1, rng),
      fuse1_(2 * width, width, 1, 1, rng),
      up2_(width, width, 3, 1, rng),
      // The output feeds a spatial softmax, which is blind to a constant
      // per-channel offset, so the last layer carries no bias.
      fuse2_(2 * width, width, 1, 1, rng, false) {}

Tensor MiniUNet::forward(const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) % 4 != 0 || x.dim(2) % 4 != 0) {
    throw ConfigError("mini U-Net needs a [B x H x W x E] grid with H, W divisible by 4, got " + shape_str(x.shape()));
  }
  const Tensor d1 = gelu(down1_.forward(x));
  const Tensor d2 = gelu(down2_.forward(d1));
  const Tensor mid = gelu(bottleneck_.forward(d2));
  const Tensor u1 = gelu(up1_.forward(upsample2x(mid)));
  const Tensor f1 = gelu(fuse1_.forward(concat_lastdim(u1, d1)));
  const Tensor u2 = gelu(up2_.forward(upsample2x(f1)));
  return fuse2_.forward(concat_lastdim(u2, x));
}

void MiniUNet::collect(const std::string& prefix, ParamList& out) const {
  down1_.collect(prefix + ".down1", out);
  down2_.collect(prefix + ".down2", out);
  bottleneck_.collect(prefix + ".bottleneck", out);
  up1_.collect(prefix + ".up1", out);
  fuse1_.collect(prefix + ".fuse1", out);
  up2_.collect(prefix + ".up2", out);
  fuse2_.collect(prefix + ".fuse2", out);
}

}  // namespace lpv::inline LPV_NS
