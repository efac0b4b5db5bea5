#pragma once

#include <optional>
#include <string>
#include <vector>

#include "lpv/rng.hpp"
#include "lpv/tensor.hpp"

namespace lpv::inline LPV_NS {

struct NamedParam {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedParam>;

std::vector<Tensor> tensors_of(const ParamList& params);

// --- functional ops ------------------------------------------------------------

enum class Padding { kZero, kCircular };

// Layer normalization over the last axis, eps = 1e-5.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta);

// 2-D convolution on channel-last input [B x H x W x Cin]. weight is
// [k*k*Cin x Cout] in (ky, kx, cin) row order; bias may be undefined.
// Padding is k/2 on each side.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t kernel,
              std::size_t stride, Padding padding = Padding::kZero);

// Nearest-neighbour 2x upsampling of [B x H x W x C].
Tensor upsample2x(const Tensor& x);

// P[p][2i] = sin(p / 10000^(2i/e)), P[p][2i+1] = cos(...). Requires even e.
Tensor sinusoidal_pe(std::size_t t_max, std::size_t e);

// Grid encoding [h*w x e]: first half of the channels encodes the row, the
// second half the column. Requires e % 4 == 0.
Tensor sinusoidal_pe_2d(std::size_t h, std::size_t w, std::size_t e);

// --- layers ----------------------------------------------------------------------

class Linear {
 public:
  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true);

  // x: [... x in] -> [... x out]
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

  const Tensor& weight() const { return weight_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor weight_;  // [in x out]
  Tensor bias_;    // [out], undefined when disabled
};

class LayerNorm {
 public:
  LayerNorm() = default;
  explicit LayerNorm(std::size_t width);

  Tensor forward(const Tensor& x) const { return layer_norm(x, gamma_, beta_); }
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Tensor gamma_;
  Tensor beta_;
};

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         Rng& rng, bool with_bias = true, Padding padding = Padding::kZero);

  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;
  void set_padding(Padding padding) { padding_ = padding; }

 private:
  std::size_t kernel_ = 1;
  std::size_t stride_ = 1;
  Padding padding_ = Padding::kZero;
  Tensor weight_;
  Tensor bias_;
};

struct AttentionOutput {
  Tensor out;   // [B x Tq x E]
  Tensor attn;  // [B x h x Tq x Tk], rows sum to 1
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t width, std::size_t heads, Rng& rng);

  // q: [B x Tq x E], k/v: [B x Tk x E]; add_mask: [B x Tq x Tk] of 0 / kMaskedValue.
  // Per head: softmax(Q K^T / sqrt(E/h) + mask) V, then output projection.
  AttentionOutput forward(const Tensor& q, const Tensor& k, const Tensor& v,
                          const std::optional<Tensor>& add_mask = std::nullopt) const;
  void collect(const std::string& prefix, ParamList& out) const;
  std::size_t heads() const { return heads_; }

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 1;
  Linear q_proj_;
  Linear k_proj_;  // no bias: a key bias cannot change the softmax
  Linear v_proj_;
  Linear out_proj_;
};

struct BlockOutput {
  Tensor out;   // [B x T x E]
  Tensor attn;  // [B x h x T x T]
};

// Pre-norm transformer encoder block with a 4E GELU feed-forward.
class EncoderBlock {
 public:
  EncoderBlock() = default;
  EncoderBlock(std::size_t width, std::size_t heads, Rng& rng);

  BlockOutput forward(const Tensor& x, const std::optional<Tensor>& add_mask = std::nullopt) const;
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  LayerNorm norm1_;
  MultiHeadAttention attn_;
  LayerNorm norm2_;
  Linear ffn1_;
  Linear ffn2_;
};

// Two stride-2 levels down, a bottleneck, and two upsampling levels fused with
// the skip path by concatenation + 1x1 conv. Width E throughout.
class MiniUNet {
 public:
  MiniUNet() = default;
  MiniUNet(std::size_t width, Rng& rng);

  // x: [B x H x W x E] with H, W divisible by 4.
  Tensor forward(const Tensor& x) const;
  void collect(const std::string& prefix, ParamList& out) const;

 private:
  Conv2d down1_, down2_, bottleneck_, up1_, fuse1_, up2_, fuse2_;
};

}  // namespace lpv::inline LPV_NS
