#include "lpv/backbone.hpp"

namespace lpv::inline LPV_NS {

void BackboneConfig::validate() const {
  if (img_h == 0 || img_w == 0 || img_h % 16 != 0 || img_w % 16 != 0) {
    throw ConfigError("image size " + std::to_string(img_h) + "x" + std::to_string(img_w) +
                      " must be a positive multiple of 16 in both dimensions");
  }
  if (channels == 0) throw ConfigError("image channel count must be positive");
  if (e == 0 || e % 4 != 0) throw ConfigError("feature width E must be a positive multiple of 4, got " + std::to_string(e));
  if (heads == 0 || e % heads != 0) {
    throw ConfigError("feature width " + std::to_string(e) + " is not divisible by " + std::to_string(heads) + " heads");
  }
}

Backbone::Backbone(const BackboneConfig& config, Rng& rng) : config_(config) {
  config_.validate();
  const Padding pad = config_.periodic_padding ? Padding::kCircular : Padding::kZero;
  conv1_ = Conv2d(config_.channels, config_.e, 3, 2, rng, true, pad);
  conv2_ = Conv2d(config_.e, config_.e, 3, 2, rng, true, pad);
  stem_norm_ = LayerNorm(config_.e);
  pos_ = sinusoidal_pe_2d(config_.grid_h(), config_.grid_w(), config_.e);
  for (std::size_t i = 0; i < config_.n_mix_blocks; ++i) mixers_.emplace_back(config_.e, config_.heads, rng);
}

Tensor Backbone::stem(const Tensor& img) const {
  if (img.rank() != 4 || img.dim(1) != config_.img_h || img.dim(2) != config_.img_w || img.dim(3) != config_.channels) {
    throw ShapeError("backbone: expected [B x " + std::to_string(config_.img_h) + " x " + std::to_string(config_.img_w) +
                     " x " + std::to_string(config_.channels) + "] image batch, got " + shape_str(img.shape()));
  }
  return gelu(conv2_.forward(gelu(conv1_.forward(img))));
}

Tensor Backbone::forward(const Tensor& img) const {
  const Tensor grid = stem(img);
  Tensor tokens = reshape(grid, {grid.dim(0), config_.tokens(), config_.e});
  // Normalizing the stem keeps it on the same scale as the position encoding.
  tokens = add(stem_norm_.forward(tokens), pos_);
  for (const auto& block : mixers_) tokens = block.forward(tokens).out;
  return tokens;
}

void Backbone::collect(const std::string& prefix, ParamList& out) const {
  conv1_.collect(prefix + ".conv1", out);
  conv2_.collect(prefix + ".conv2", out);
  stem_norm_.collect(prefix + ".stem_norm", out);
  for (std::size_t i = 0; i < mixers_.size(); ++i) mixers_[i].collect(prefix + ".mix." + std::to_string(i), out);
}

}  // namespace lpv::inline LPV_NS
