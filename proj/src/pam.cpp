#include "lpv/pam.hpp"

#include <cmath>

namespace lpv::inline LPV_NS {

Tensor attention_logits(const Tensor& keys, const Tensor& query) {
  if (keys.rank() != 3 || query.rank() != 3 || keys.dim(0) != query.dim(0) || keys.dim(2) != query.dim(2)) {
    throw ShapeError("position attention: keys " + shape_str(keys.shape()) + " and query " + shape_str(query.shape()) +
                     " are incompatible");
  }
  const Real inv_sqrt_e = Real(1) / std::sqrt(static_cast<Real>(keys.dim(2)));
  return scale(bmm(query, keys, false, true), inv_sqrt_e);
}

PositionAttention position_attention(const Tensor& keys, const Tensor& values, const Tensor& query) {
  if (values.shape() != keys.shape()) {
    throw ShapeError("position attention: values " + shape_str(values.shape()) + " differ from keys " +
                     shape_str(keys.shape()));
  }
  // Softmax runs over the spatial axis so every row of A is a per-character
  // distribution over pixels.
  Tensor attn = softmax_lastdim(attention_logits(keys, query));
  Tensor feats = bmm(attn, values);
  return {std::move(attn), std::move(feats)};
}

Pam::Pam(std::size_t e, std::size_t t_max, std::size_t classes, Rng& rng)
    : e_(e),
      t_max_(t_max),
      key_net_(e, rng),
      encoding_(e, e, rng),
      classifier_(e, classes, rng),
      pe_(sinusoidal_pe(t_max, e)) {}

Tensor Pam::build_query(const std::optional<Tensor>& q_pri, std::size_t batch) const {
  Tensor prior = q_pri ? *q_pri : Tensor::zeros({batch, t_max_, e_});
  if (prior.shape() != Shape{batch, t_max_, e_}) {
    throw ShapeError("query prior " + shape_str(prior.shape()) + " does not match [" + std::to_string(batch) + "x" +
                     std::to_string(t_max_) + "x" + std::to_string(e_) + "]");
  }
  return encoding_.forward(add(prior, pe_));
}

PamOutput Pam::forward(const Tensor& f, std::size_t grid_h, std::size_t grid_w,
                       const std::optional<Tensor>& q_pri) const {
  if (f.rank() != 3 || f.dim(1) != grid_h * grid_w || f.dim(2) != e_) {
    throw ShapeError("PAM: feature map " + shape_str(f.shape()) + " does not match a " + std::to_string(grid_h) + "x" +
                     std::to_string(grid_w) + " grid of width " + std::to_string(e_));
  }
  const std::size_t batch = f.dim(0);
  const Tensor keys = reshape(key_net_.forward(reshape(f, {batch, grid_h, grid_w, e_})), {batch, grid_h * grid_w, e_});
  Tensor query = build_query(q_pri, batch);
  PositionAttention pa = position_attention(keys, f, query);
  Tensor logits = classifier_.forward(pa.char_feats);
  return {std::move(query), std::move(pa.attn), std::move(pa.char_feats), std::move(logits)};
}

void Pam::collect(const std::string& prefix, ParamList& out) const {
  key_net_.collect(prefix + ".key_net", out);
  encoding_.collect(prefix + ".encoding", out);
  classifier_.collect(prefix + ".classifier", out);
}

}  // namespace lpv::inline LPV_NS
