#pragma once

#include <optional>

#include "lpv/nn.hpp"

namespace lpv::inline LPV_NS {

struct PamOutput {
  Tensor query;       // Q   [B x T x E]
  Tensor attn;        // A   [B x T x P], rows sum to 1
  Tensor char_feats;  // R = A V  [B x T x E]
  Tensor logits;      // Y before softmax  [B x T x C]
};

// Raw attention logits K Q^T / sqrt(E), laid out [B x T x P].
Tensor attention_logits(const Tensor& keys, const Tensor& query);

struct PositionAttention {
  Tensor attn;
  Tensor char_feats;
};

// Each character slot attends over the spatial axis: A = softmax_P(Q K^T / sqrt(E)),
// R = A V. keys/values [B x P x E], query [B x T x E].
PositionAttention position_attention(const Tensor& keys, const Tensor& values, const Tensor& query);

// Position attention module of one cascade stage.
class Pam {
 public:
  Pam() = default;
  Pam(std::size_t e, std::size_t t_max, std::size_t classes, Rng& rng);

  // Q = F(q_pri + P). A missing prior means the zero prior of the first stage.
  Tensor build_query(const std::optional<Tensor>& q_pri, std::size_t batch) const;

  // f: [B x P x E] tokens of a grid_h x grid_w feature map.
  PamOutput forward(const Tensor& f, std::size_t grid_h, std::size_t grid_w,
                    const std::optional<Tensor>& q_pri) const;

  void collect(const std::string& prefix, ParamList& out) const;
  const Tensor& position_encoding() const { return pe_; }

 private:
  std::size_t e_ = 0;
  std::size_t t_max_ = 0;
  MiniUNet key_net_;
  Linear encoding_;
  Linear classifier_;
  Tensor pe_;  // [T x E], constant
};

}  // namespace lpv::inline LPV_NS
