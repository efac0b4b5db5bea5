#pragma once

#include <vector>

#include "lpv/nn.hpp"

namespace lpv::inline LPV_NS {

struct BackboneConfig {
  std::size_t img_h = 16;
  std::size_t img_w = 48;
  std::size_t channels = 1;
  std::size_t e = 32;
  std::size_t heads = 4;
  std::size_t n_mix_blocks = 2;
  // Circular padding in the conv stem; used to test translation covariance.
  bool periodic_padding = false;

  std::size_t grid_h() const { return img_h / 4; }
  std::size_t grid_w() const { return img_w / 4; }
  std::size_t tokens() const { return grid_h() * grid_w(); }
  void validate() const;
};

// Conv stem to quarter resolution, then global mixing over the token grid.
class Backbone {
 public:
  Backbone() = default;
  Backbone(const BackboneConfig& config, Rng& rng);

  // img: [B x H x W x chan] -> feature tokens [B x (H/4)(W/4) x E].
  Tensor forward(const Tensor& img) const;
  // Conv stem only: [B x H/4 x W/4 x E], before flattening and position encoding.
  Tensor stem(const Tensor& img) const;
  void collect(const std::string& prefix, ParamList& out) const;
  const BackboneConfig& config() const { return config_; }

 private:
  BackboneConfig config_;
  Conv2d conv1_;
  Conv2d conv2_;
  LayerNorm stem_norm_;
  Tensor pos_;  // [tokens x E], constant
  std::vector<EncoderBlock> mixers_;
};

}  // namespace lpv::inline LPV_NS
