#pragma once

// Hormone emotion block: one multi-head attention unit per hormone reads the
// encoder states through learnable probe queries, a tapered MLP squashes the
// pooled context to a value in (0,1), and the six values are projected back
// to an embedding that multiplicatively modulates the encoder states.

#include <cmath>
#include <string>
#include <vector>

#include "endoseq/data.hpp"
#include "endoseq/nn.hpp"
#include "endoseq/tensor.hpp"

namespace endoseq {

struct HormoneBlockConfig {
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  double tau = 0.5;  // softmax temperature
  double alpha_init = 0.3;
  double alpha_min = 0.1;
  double alpha_max = 0.5;
  std::vector<std::size_t> active_hormones = {0, 1, 2, 3, 4, 5};
  bool orthogonal_queries = true;
  bool fixed_alpha = false;
  // When set, the path from predicted hormones into the decoder is cut, so
  // sequence-loss gradients cannot reach the prediction heads.
  bool detach_hormone_gradients = false;

  void validate() const {
    if (d_model == 0 || n_heads == 0) throw ContractError("hormone block: zero dimension");
    if (d_model % n_heads != 0)
      throw ContractError("hormone block: d_model " + std::to_string(d_model) +
                          " not divisible by n_heads " + std::to_string(n_heads));
    if (d_model % 4 != 0)
      throw ContractError("hormone block: d_model must be divisible by 4 for the value MLP");
    if (!(tau > 0.0)) throw ContractError("hormone block: tau must be positive");
    if (active_hormones.empty()) throw ContractError("hormone block: no active hormones");
    for (std::size_t h : active_hormones)
      if (h >= kHormoneCount)
        throw ContractError("hormone block: hormone index " + std::to_string(h) + " out of range");
  }
};

// Per-hormone attention unit plus value head.
struct HormoneHead {
  Tensor queries;  // (n_heads, d_model), one probe vector per head
  Linear key_proj, value_proj;
  LayerNormModule mlp_norm;
  Linear fc1, fc2, fc3, fc4;  // d -> d -> d/2 -> d/4 -> 1
  Tensor b_h;                 // learnable output offset
};

class HormoneBlock {
 public:
  HormoneBlockConfig cfg;
  std::vector<HormoneHead> heads;  // parallel to cfg.active_hormones
  Linear proj_w1;                  // n_active -> d
  LayerNormModule proj_norm;
  Linear proj_w2;  // d -> d
  Tensor alpha;    // scalar modulation gate, clamped on use

  HormoneBlock() = default;

  HormoneBlock(const HormoneBlockConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    const std::size_t d = cfg.d_model, nh = cfg.n_heads;
    const std::size_t n_active = cfg.active_hormones.size();

    // One joint orthonormal basis across every head of every hormone, so the
    // probes start maximally spread (diversity loss is exactly zero at init).
    Tensor all_queries;
    if (cfg.orthogonal_queries) {
      all_queries = orthogonal_init(n_active * nh, d, rng);
    } else {
      all_queries = Tensor::randn({n_active * nh, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    }

    heads.reserve(n_active);
    for (std::size_t i = 0; i < n_active; ++i) {
      HormoneHead h;
      h.queries = Tensor({nh, d});
      std::copy(all_queries.values().begin() + i * nh * d,
                all_queries.values().begin() + (i + 1) * nh * d, h.queries.values().begin());
      h.queries.set_requires_grad(true);
      h.key_proj = Linear(d, d, rng, false);
      h.value_proj = Linear(d, d, rng, false);
      h.mlp_norm = LayerNormModule(d);
      h.fc1 = Linear(d, d, rng);
      h.fc2 = Linear(d, d / 2, rng);
      h.fc3 = Linear(d / 2, d / 4, rng);
      h.fc4 = Linear(d / 4, 1, rng);
      h.b_h = Tensor({1}, 0.0);
      h.b_h.set_requires_grad(true);
      heads.push_back(std::move(h));
    }

    proj_w1 = Linear(n_active, d, rng, false);
    proj_norm = LayerNormModule(d);
    proj_w2 = Linear(d, d, rng, false);
    alpha = Tensor({1}, cfg.alpha_init);
    alpha.set_requires_grad(!cfg.fixed_alpha);
  }

  // Copy encoder key/value projection weights into every hormone head.
  void transfer_kv_from(const Tensor& wk, const Tensor& wv) {
    const Shape want{cfg.d_model, cfg.d_model};
    if (wk.shape() != want || wv.shape() != want)
      throw ContractError("transfer_kv_from: expected " + shape_str(want) + ", got " +
                          shape_str(wk.shape()) + " and " + shape_str(wv.shape()));
    for (HormoneHead& h : heads) {
      h.key_proj.w.values() = wk.values();
      h.value_proj.w.values() = wv.values();
    }
  }

  // H: (B, L, d); mask: B x L with at least one live position per row.
  // Returns (B, n_active) hormone values in (0,1). attn_out, if given,
  // receives one detached (B, n_heads, L) weight map per active hormone.
  Tensor compute_hormones(const Tensor& H, const std::vector<int>& mask,
                          std::vector<Tensor>* attn_out = nullptr) const {
    if (H.ndim() != 3 || H.dim(2) != cfg.d_model)
      throw DimensionError("compute_hormones: states must be (B, L, " +
                           std::to_string(cfg.d_model) + "), got " + shape_str(H.shape()));
    const std::size_t B = H.dim(0), L = H.dim(1);
    if (mask.size() != B * L) throw DimensionError("compute_hormones: mask does not cover (B, L)");
    for (std::size_t b = 0; b < B; ++b) {
      bool any = false;
      for (std::size_t l = 0; l < L; ++l) any = any || (mask[b * L + l] != 0);
      if (!any) throw ContractError("compute_hormones: row " + std::to_string(b) + " is fully masked");
    }
    if (attn_out) attn_out->clear();

    const std::size_t nh = cfg.n_heads, d = cfg.d_model, dk = d / nh;
    const double scale = 1.0 / (cfg.tau * std::sqrt(static_cast<double>(dk)));
    std::vector<Tensor> values;
    values.reserve(heads.size());
    for (const HormoneHead& head : heads) {
      Tensor K = head.key_proj(H);    // (B, L, d)
      Tensor V = head.value_proj(H);  // (B, L, d)
      Tensor scores = matmul(head.queries, transpose(K, 1, 2));  // (B, nh, L)
      scores = mul_const(scores, scale);
      scores = masked_fill_lastdim(scores, mask, kMaskFill);
      Tensor attn = softmax(scores, 2);
      if (attn_out) attn_out->push_back(attn.detach());

      // each head pools its own slice of the value projection
      std::vector<Tensor> ctx_parts;
      ctx_parts.reserve(nh);
      for (std::size_t j = 0; j < nh; ++j) {
        Tensor aj = slice(attn, 1, j, 1);       // (B, 1, L)
        Tensor vj = slice(V, 2, j * dk, dk);    // (B, L, dk)
        ctx_parts.push_back(matmul(aj, vj));    // (B, 1, dk)
      }
      Tensor ctx = reshape(concat(ctx_parts, 2), {B, d});

      Tensor x = head.mlp_norm(ctx);
      x = gelu(head.fc1(x));
      x = gelu(head.fc2(x));
      x = gelu(head.fc3(x));
      Tensor logit = add_scalar_tensor(head.fc4(x), head.b_h);  // (B, 1)
      values.push_back(sigmoid(logit));
    }
    return values.size() == 1 ? values[0] : concat(values, 1);  // (B, n_active)
  }

  // h_hat (B, n_active) -> emotion embedding (B, d), bounded by tanh.
  Tensor hormones_to_embedding(const Tensor& h_hat) const {
    Tensor h = cfg.detach_hormone_gradients ? h_hat.detach() : h_hat;
    Tensor x = proj_w1(h);
    x = proj_norm(x);
    x = gelu(x);
    x = proj_w2(x);
    return tanh_act(x);
  }

  // H_mod[b,l,:] = H[b,l,:] * (1 + alpha_eff * e[b,:])
  Tensor modulate(const Tensor& H, const Tensor& e) const {
    Tensor a_eff = clamp(alpha, cfg.alpha_min, cfg.alpha_max);
    Tensor s = add_const(scale_by(e, a_eff), 1.0);
    return rowwise_scale(H, s);
  }

  double alpha_effective() const {
    return std::min(std::max(alpha.values()[0], cfg.alpha_min), cfg.alpha_max);
  }

  // Flattened query matrix per active hormone, for the diversity penalty.
  std::vector<Tensor> flattened_queries() const {
    std::vector<Tensor> out;
    out.reserve(heads.size());
    for (const HormoneHead& h : heads)
      out.push_back(reshape(h.queries, {cfg.n_heads * cfg.d_model}));
    return out;
  }

  void register_into(ParamRegistry& reg) {
    for (std::size_t i = 0; i < heads.size(); ++i) {
      const std::string p = "hormone." + hormone_names()[cfg.active_hormones[i]];
      HormoneHead& h = heads[i];
      reg.add(p + ".queries", h.queries, false);
      h.key_proj.register_into(reg, p + ".key_proj");
      h.value_proj.register_into(reg, p + ".value_proj");
      h.mlp_norm.register_into(reg, p + ".mlp_norm");
      h.fc1.register_into(reg, p + ".fc1");
      h.fc2.register_into(reg, p + ".fc2");
      h.fc3.register_into(reg, p + ".fc3");
      h.fc4.register_into(reg, p + ".fc4");
      reg.add(p + ".b_h", h.b_h, true);
    }
    proj_w1.register_into(reg, "hormone.proj_w1");
    proj_norm.register_into(reg, "hormone.proj_norm");
    proj_w2.register_into(reg, "hormone.proj_w2");
    reg.add("hormone.alpha", alpha, true);
  }
};

}  // namespace endoseq
