#include "lpv/glrm.hpp"

#include <algorithm>

namespace lpv::inline LPV_NS {

namespace {

void fill_mask(const Real* a, std::size_t t, std::size_t p, Real threshold, Real* out) {
  std::vector<unsigned char> fg(t * p);
  for (std::size_t i = 0; i < t * p; ++i) {
    if (a[i] < 0) throw ContractError("parallel mask: attention entries must be non-negative");
    fg[i] = a[i] - threshold >= 0 ? 1 : 0;
  }
  // M^p = B^T B; only its support matters.
  std::vector<unsigned char> hit(p * p, 0);
  for (std::size_t k = 0; k < t; ++k) {
    const unsigned char* row = fg.data() + k * p;
    for (std::size_t i = 0; i < p; ++i) {
      if (!row[i]) continue;
      unsigned char* h = hit.data() + i * p;
      for (std::size_t j = 0; j < p; ++j) h[j] |= row[j];
    }
  }
  std::vector<unsigned char> release(p, 0);
  for (std::size_t i = 0; i < p; ++i) {
    const unsigned char* h = hit.data() + i * p;
    release[i] = std::all_of(h, h + p, [](unsigned char v) { return v != 0; }) ? 1 : 0;
  }
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const bool masked = hit[i * p + j] && !release[i] && !release[j];
      out[i * p + j] = masked ? kMaskedValue : Real(0);
    }
  }
}

}  // namespace

Tensor generate_parallel_mask(const Tensor& a, Real threshold) {
  if (a.rank() != 2) throw ShapeError("parallel mask: attention map must be [T x P], got " + shape_str(a.shape()));
  if (!(threshold > 0 && threshold < 1)) throw ContractError("parallel mask: threshold must lie in (0, 1)");
  const std::size_t t = a.dim(0), p = a.dim(1);
  std::vector<Real> out(p * p);
  fill_mask(a.data().data(), t, p, threshold, out.data());
  return Tensor::from_data({p, p}, std::move(out));
}

Tensor generate_parallel_masks(const Tensor& a, Real threshold) {
  if (a.rank() != 3) throw ShapeError("parallel mask: attention maps must be [B x T x P], got " + shape_str(a.shape()));
  if (!(threshold > 0 && threshold < 1)) throw ContractError("parallel mask: threshold must lie in (0, 1)");
  const std::size_t batch = a.dim(0), t = a.dim(1), p = a.dim(2);
  std::vector<Real> out(batch * p * p);
  for (std::size_t b = 0; b < batch; ++b) fill_mask(a.data().data() + b * t * p, t, p, threshold, out.data() + b * p * p);
  return Tensor::from_data({batch, p, p}, std::move(out));
}

Glrm::Glrm(std::size_t e, std::size_t heads, std::size_t layers, Rng& rng, Real threshold) : threshold_(threshold) {
  if (layers == 0) throw ConfigError("GLRM needs at least one encoder layer");
  for (std::size_t i = 0; i < layers; ++i) blocks_.emplace_back(e, heads, rng);
}

GlrmOutput Glrm::forward(const Tensor& f_prev, const Tensor& a_prev, bool mask_enabled,
                         const std::optional<Tensor>& frozen_mask) const {
  if (f_prev.rank() != 3 || a_prev.rank() != 3 || f_prev.dim(0) != a_prev.dim(0) || f_prev.dim(1) != a_prev.dim(2)) {
    throw ShapeError("GLRM: features " + shape_str(f_prev.shape()) + " and attention " + shape_str(a_prev.shape()) +
                     " are incompatible");
  }
  GlrmOutput out;
  std::optional<Tensor> mask;
  if (mask_enabled) {
    // The step function has zero derivative almost everywhere; the mask is a constant.
    out.mask = frozen_mask ? *frozen_mask : generate_parallel_masks(a_prev, threshold_);
    mask = out.mask;
  }
  Tensor x = f_prev;
  for (const auto& block : blocks_) {
    BlockOutput b = block.forward(x, mask);
    x = std::move(b.out);
    out.block_attn.push_back(std::move(b.attn));
  }
  out.features = std::move(x);
  return out;
}

void Glrm::collect(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".block." + std::to_string(i), out);
}

}  // namespace lpv::inline LPV_NS
