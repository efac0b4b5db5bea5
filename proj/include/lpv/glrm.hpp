#pragma once

#include <optional>
#include <vector>

#include "lpv/nn.hpp"

namespace lpv::inline LPV_NS {

inline constexpr Real kDefaultMaskThreshold = Real(0.05);

// Parallel mask for one image. a: [T x P] attention map with entries >= 0.
// B = U(a - t) with U(0) = 1, M^p = B^T B, M = kMaskedValue where M^p > 0.
// A token whose row would be fully masked is released: its row and column
// are reset to 0, which keeps M symmetric.
Tensor generate_parallel_mask(const Tensor& a, Real threshold = kDefaultMaskThreshold);

// Batched form: a [B x T x P] -> [B x P x P]. The result carries no gradient.
Tensor generate_parallel_masks(const Tensor& a, Real threshold = kDefaultMaskThreshold);

struct GlrmOutput {
  Tensor features;                 // [B x P x E]
  Tensor mask;                     // [B x P x P], undefined when masking is off
  std::vector<Tensor> block_attn;  // per block [B x h x P x P]
};

// Global linguistic reconstruction between two cascade stages: L encoder
// blocks whose self-attention hides tokens of the same character.
class Glrm {
 public:
  Glrm() = default;
  Glrm(std::size_t e, std::size_t heads, std::size_t layers, Rng& rng, Real threshold = kDefaultMaskThreshold);

  // frozen_mask, when given, replaces the mask derived from a_prev.
  GlrmOutput forward(const Tensor& f_prev, const Tensor& a_prev, bool mask_enabled,
                     const std::optional<Tensor>& frozen_mask = std::nullopt) const;
  void collect(const std::string& prefix, ParamList& out) const;
  std::size_t layers() const { return blocks_.size(); }

 private:
  Real threshold_ = kDefaultMaskThreshold;
  std::vector<EncoderBlock> blocks_;
};

}  // namespace lpv::inline LPV_NS
