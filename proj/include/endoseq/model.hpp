#pragma once

// Pre-norm encoder-decoder transformer with the hormone block wired between
// encoder output and decoder cross-attention. Token embeddings are tied to
// the output projection. The first k layers on each side can be frozen.

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "endoseq/data.hpp"
#include "endoseq/hormone_block.hpp"
#include "endoseq/nn.hpp"
#include "endoseq/tensor.hpp"

namespace endoseq {

struct ModelConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_encoder_layers = 3;
  std::size_t n_decoder_layers = 3;
  std::size_t n_frozen_encoder = 1;
  std::size_t n_frozen_decoder = 1;
  std::size_t n_seq_heads = 4;
  std::size_t n_hormone_heads = 4;
  std::size_t ff_width = 256;
  std::size_t max_len = 32;
  double tau = 0.5;
  double alpha_init = 0.3;
  double alpha_min = 0.1;
  double alpha_max = 0.5;
  std::vector<std::size_t> active_hormones = {0, 1, 2, 3, 4, 5};
  // ablation switches
  bool detach_hormone_gradients = false;
  bool random_kv_init = false;
  bool random_query_init = false;
  bool fixed_alpha = false;

  void validate() const {
    if (vocab_size < 5) throw ContractError("config: vocab_size must cover the reserved ids");
    if (d_model == 0 || n_seq_heads == 0 || n_hormone_heads == 0 || ff_width == 0)
      throw ContractError("config: zero dimension");
    if (d_model % n_seq_heads != 0)
      throw ContractError("config: d_model " + std::to_string(d_model) +
                          " not divisible by n_seq_heads " + std::to_string(n_seq_heads));
    if (d_model % n_hormone_heads != 0)
      throw ContractError("config: d_model not divisible by n_hormone_heads");
    if (d_model % 4 != 0) throw ContractError("config: d_model must be divisible by 4");
    if (n_encoder_layers == 0 || n_decoder_layers == 0)
      throw ContractError("config: need at least one layer per side");
    if (n_frozen_encoder >= n_encoder_layers)
      throw ContractError("config: frozen encoder layers must leave at least one trainable");
    if (n_frozen_decoder >= n_decoder_layers)
      throw ContractError("config: frozen decoder layers must leave at least one trainable");
    if (max_len < 2) throw ContractError("config: max_len must be at least 2");
    if (!(tau > 0.0)) throw ContractError("config: tau must be positive");
    if (active_hormones.empty()) throw ContractError("config: no active hormones");
    for (std::size_t h : active_hormones)
      if (h >= kHormoneCount) throw ContractError("config: hormone index out of range");
  }

  HormoneBlockConfig hormone_config() const {
    HormoneBlockConfig h;
    h.d_model = d_model;
    h.n_heads = n_hormone_heads;
    h.tau = tau;
    h.alpha_init = alpha_init;
    h.alpha_min = alpha_min;
    h.alpha_max = alpha_max;
    h.active_hormones = active_hormones;
    h.orthogonal_queries = !random_query_init;
    h.fixed_alpha = fixed_alpha;
    h.detach_hormone_gradients = detach_hormone_gradients;
    return h;
  }
};

inline std::string model_config_to_kv(const ModelConfig& c) {
  std::ostringstream os;
  os << "vocab_size=" << c.vocab_size << '\n'
     << "d_model=" << c.d_model << '\n'
     << "n_encoder_layers=" << c.n_encoder_layers << '\n'
     << "n_decoder_layers=" << c.n_decoder_layers << '\n'
     << "n_frozen_encoder=" << c.n_frozen_encoder << '\n'
     << "n_frozen_decoder=" << c.n_frozen_decoder << '\n'
     << "n_seq_heads=" << c.n_seq_heads << '\n'
     << "n_hormone_heads=" << c.n_hormone_heads << '\n'
     << "ff_width=" << c.ff_width << '\n'
     << "max_len=" << c.max_len << '\n';
  char buf[64];
  auto put = [&](const char* k, double v) {
    std::snprintf(buf, sizeof buf, "%.17g", v);
    os << k << '=' << buf << '\n';
  };
  put("tau", c.tau);
  put("alpha_init", c.alpha_init);
  put("alpha_min", c.alpha_min);
  put("alpha_max", c.alpha_max);
  os << "active_hormones=";
  for (std::size_t i = 0; i < c.active_hormones.size(); ++i)
    os << (i ? "," : "") << c.active_hormones[i];
  os << '\n';
  os << "detach_hormone_gradients=" << (c.detach_hormone_gradients ? 1 : 0) << '\n'
     << "random_kv_init=" << (c.random_kv_init ? 1 : 0) << '\n'
     << "random_query_init=" << (c.random_query_init ? 1 : 0) << '\n'
     << "fixed_alpha=" << (c.fixed_alpha ? 1 : 0) << '\n';
  return os.str();
}

inline ModelConfig model_config_from_kv(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw ContractError("config snapshot: bad line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const char* k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw ContractError(std::string("config snapshot: missing key '") + k + "'");
    return it->second;
  };
  ModelConfig c;
  c.vocab_size = std::stoull(need("vocab_size"));
  c.d_model = std::stoull(need("d_model"));
  c.n_encoder_layers = std::stoull(need("n_encoder_layers"));
  c.n_decoder_layers = std::stoull(need("n_decoder_layers"));
  c.n_frozen_encoder = std::stoull(need("n_frozen_encoder"));
  c.n_frozen_decoder = std::stoull(need("n_frozen_decoder"));
  c.n_seq_heads = std::stoull(need("n_seq_heads"));
  c.n_hormone_heads = std::stoull(need("n_hormone_heads"));
  c.ff_width = std::stoull(need("ff_width"));
  c.max_len = std::stoull(need("max_len"));
  c.tau = std::stod(need("tau"));
  c.alpha_init = std::stod(need("alpha_init"));
  c.alpha_min = std::stod(need("alpha_min"));
  c.alpha_max = std::stod(need("alpha_max"));
  c.active_hormones.clear();
  std::istringstream hs(need("active_hormones"));
  std::string part;
  while (std::getline(hs, part, ',')) c.active_hormones.push_back(std::stoull(part));
  c.detach_hormone_gradients = need("detach_hormone_gradients") == "1";
  c.random_kv_init = need("random_kv_init") == "1";
  c.random_query_init = need("random_query_init") == "1";
  c.fixed_alpha = need("fixed_alpha") == "1";
  return c;
}

// ---------------------------------------------------------------------------
// attention and layers

struct MultiHeadAttention {
  Linear wq, wk, wv, wo;
  std::size_t n_heads = 1, d_model = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d, std::size_t heads, Rng& rng)
      : wq(d, d, rng, false),
        wk(d, d, rng, false),
        wv(d, d, rng, false),
        wo(d, d, rng, false),
        n_heads(heads),
        d_model(d) {}

  // q_in (B, Lq, d), kv_in (B, Lk, d); key_mask is B x Lk or null.
  Tensor operator()(const Tensor& q_in, const Tensor& kv_in, const std::vector<int>* key_mask,
                    bool causal) const {
    const std::size_t B = q_in.dim(0), Lq = q_in.dim(1), Lk = kv_in.dim(1);
    const std::size_t dh = d_model / n_heads;
    auto split = [&](const Tensor& t, std::size_t L) {
      return transpose(reshape(t, {B, L, n_heads, dh}), 1, 2);  // (B, h, L, dh)
    };
    Tensor Q = split(wq(q_in), Lq);
    Tensor K = split(wk(kv_in), Lk);
    Tensor V = split(wv(kv_in), Lk);
    Tensor scores = mul_const(matmul(Q, transpose(K, 2, 3)), 1.0 / std::sqrt(static_cast<double>(dh)));
    if (key_mask) scores = masked_fill_lastdim(scores, *key_mask, kMaskFill);
    if (causal) scores = causal_fill(scores, kMaskFill);
    Tensor ctx = matmul(softmax(scores, 3), V);  // (B, h, Lq, dh)
    return wo(reshape(transpose(ctx, 1, 2), {B, Lq, d_model}));
  }

  void register_into(ParamRegistry& reg, const std::string& prefix) {
    wq.register_into(reg, prefix + ".wq");
    wk.register_into(reg, prefix + ".wk");
    wv.register_into(reg, prefix + ".wv");
    wo.register_into(reg, prefix + ".wo");
  }

  void set_trainable(bool on) {
    wq.w.set_requires_grad(on);
    wk.w.set_requires_grad(on);
    wv.w.set_requires_grad(on);
    wo.w.set_requires_grad(on);
  }
};

struct FeedForward {
  Linear fc1, fc2;

  FeedForward() = default;
  FeedForward(std::size_t d, std::size_t ff, Rng& rng) : fc1(d, ff, rng), fc2(ff, d, rng) {}

  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }

  void register_into(ParamRegistry& reg, const std::string& prefix) {
    fc1.register_into(reg, prefix + ".fc1");
    fc2.register_into(reg, prefix + ".fc2");
  }

  void set_trainable(bool on) {
    fc1.w.set_requires_grad(on);
    fc1.b.set_requires_grad(on);
    fc2.w.set_requires_grad(on);
    fc2.b.set_requires_grad(on);
  }
};

struct EncoderLayer {
  LayerNormModule ln1, ln2;
  MultiHeadAttention attn;
  FeedForward ffn;

  EncoderLayer() = default;
  EncoderLayer(std::size_t d, std::size_t heads, std::size_t ff, Rng& rng)
      : ln1(d), ln2(d), attn(d, heads, rng), ffn(d, ff, rng) {}

  Tensor operator()(const Tensor& x, const std::vector<int>& mask) const {
    Tensor n1 = ln1(x);
    Tensor h = add(x, attn(n1, n1, &mask, false));
    return add(h, ffn(ln2(h)));
  }

  void register_into(ParamRegistry& reg, const std::string& prefix) {
    ln1.register_into(reg, prefix + ".ln1");
    attn.register_into(reg, prefix + ".attn");
    ln2.register_into(reg, prefix + ".ln2");
    ffn.register_into(reg, prefix + ".ffn");
  }

  void set_trainable(bool on) {
    ln1.gain.set_requires_grad(on);
    ln1.bias.set_requires_grad(on);
    ln2.gain.set_requires_grad(on);
    ln2.bias.set_requires_grad(on);
    attn.set_trainable(on);
    ffn.set_trainable(on);
  }
};

struct DecoderLayer {
  LayerNormModule ln1, ln2, ln3;
  MultiHeadAttention self_attn, cross_attn;
  FeedForward ffn;

  DecoderLayer() = default;
  DecoderLayer(std::size_t d, std::size_t heads, std::size_t ff, Rng& rng)
      : ln1(d), ln2(d), ln3(d), self_attn(d, heads, rng), cross_attn(d, heads, rng),
        ffn(d, ff, rng) {}

  Tensor operator()(const Tensor& x, const Tensor& enc_out,
                    const std::vector<int>& enc_mask) const {
    Tensor n1 = ln1(x);
    Tensor h = add(x, self_attn(n1, n1, nullptr, true));
    h = add(h, cross_attn(ln2(h), enc_out, &enc_mask, false));
    return add(h, ffn(ln3(h)));
  }

  void register_into(ParamRegistry& reg, const std::string& prefix) {
    ln1.register_into(reg, prefix + ".ln1");
    self_attn.register_into(reg, prefix + ".self_attn");
    ln2.register_into(reg, prefix + ".ln2");
    cross_attn.register_into(reg, prefix + ".cross_attn");
    ln3.register_into(reg, prefix + ".ln3");
    ffn.register_into(reg, prefix + ".ffn");
  }

  void set_trainable(bool on) {
    for (LayerNormModule* ln : {&ln1, &ln2, &ln3}) {
      ln->gain.set_requires_grad(on);
      ln->bias.set_requires_grad(on);
    }
    self_attn.set_trainable(on);
    cross_attn.set_trainable(on);
    ffn.set_trainable(on);
  }
};

// Decoder input: bos followed by the target shifted right by one.
inline std::vector<int> shift_right(const std::vector<int>& target_ids, std::size_t B,
                                    std::size_t T) {
  if (target_ids.size() != B * T) throw DimensionError("shift_right: ids do not cover (B, T)");
  std::vector<int> out(B * T);
  for (std::size_t b = 0; b < B; ++b) {
    out[b * T] = Vocab::kBos;
    for (std::size_t t = 1; t < T; ++t) out[b * T + t] = target_ids[b * T + t - 1];
  }
  return out;
}

// ---------------------------------------------------------------------------
// model

class Seq2SeqModel {
 public:
  ModelConfig cfg;
  Tensor tok_emb;  // (V, d), tied to the output projection
  Tensor pos_emb;  // (max_len, d)
  std::vector<EncoderLayer> enc_layers;
  std::vector<DecoderLayer> dec_layers;
  LayerNormModule enc_norm, dec_norm;
  HormoneBlock hormones;

  Seq2SeqModel(const ModelConfig& config, Rng& rng) : cfg(config) {
    cfg.validate();
    const std::size_t d = cfg.d_model;
    tok_emb = Tensor::randn({cfg.vocab_size, d}, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    tok_emb.set_requires_grad(true);
    pos_emb = Tensor::randn({cfg.max_len, d}, rng, 0.02);
    pos_emb.set_requires_grad(true);
    for (std::size_t i = 0; i < cfg.n_encoder_layers; ++i)
      enc_layers.emplace_back(d, cfg.n_seq_heads, cfg.ff_width, rng);
    for (std::size_t i = 0; i < cfg.n_decoder_layers; ++i)
      dec_layers.emplace_back(d, cfg.n_seq_heads, cfg.ff_width, rng);
    enc_norm = LayerNormModule(d);
    dec_norm = LayerNormModule(d);
    hormones = HormoneBlock(cfg.hormone_config(), rng);

    build_registry();
    if (!cfg.random_kv_init)
      hormones.transfer_kv_from(enc_layers.back().attn.wk.w, enc_layers.back().attn.wv.w);
    apply_freezing();
  }

  ParamRegistry& params() { return registry_; }
  const ParamRegistry& params() const { return registry_; }

  // (B, L) token ids -> final-normed encoder states (B, L, d)
  Tensor encode(const std::vector<int>& input_ids, const std::vector<int>& input_mask,
                std::size_t B, std::size_t L) const {
    if (L > cfg.max_len)
      throw ContractError("encode: sequence length " + std::to_string(L) + " exceeds max_len " +
                          std::to_string(cfg.max_len));
    Tensor x = gather_rows(tok_emb, input_ids, B, L);
    x = add_seq_bias(x, slice(pos_emb, 0, 0, L));
    for (const EncoderLayer& layer : enc_layers) x = layer(x, input_mask);
    return enc_norm(x);
  }

  // Decoder over (possibly modulated) encoder states. Returns (B, T, V).
  Tensor decode(const Tensor& enc_states, const std::vector<int>& enc_mask,
                const std::vector<int>& dec_input_ids, std::size_t B, std::size_t T) const {
    if (T > cfg.max_len)
      throw ContractError("decode: sequence length " + std::to_string(T) + " exceeds max_len " +
                          std::to_string(cfg.max_len));
    Tensor x = gather_rows(tok_emb, dec_input_ids, B, T);
    x = add_seq_bias(x, slice(pos_emb, 0, 0, T));
    for (const DecoderLayer& layer : dec_layers) x = layer(x, enc_states, enc_mask);
    x = dec_norm(x);
    return matmul(x, transpose(tok_emb, 0, 1));  // tied output projection
  }

  struct ForwardResult {
    Tensor logits;            // (B, T, V)
    Tensor h_hat;             // (B, n_active)
    Tensor emotion;           // (B, d)
    double alpha_eff = 0.0;
    std::vector<Tensor> attn;  // per hormone, detached (B, n_heads, L)
  };

  ForwardResult forward(const TokenBatch& batch, bool want_attention = false) const {
    ForwardResult r;
    Tensor H = encode(batch.input_ids, batch.input_mask, batch.size, batch.in_len);
    r.h_hat = hormones.compute_hormones(H, batch.input_mask, want_attention ? &r.attn : nullptr);
    r.emotion = hormones.hormones_to_embedding(r.h_hat);
    Tensor H_mod = hormones.modulate(H, r.emotion);
    r.alpha_eff = hormones.alpha_effective();
    std::vector<int> dec_in = shift_right(batch.target_ids, batch.size, batch.tgt_len);
    r.logits = decode(H_mod, batch.input_mask, dec_in, batch.size, batch.tgt_len);
    return r;
  }

  // Hormone prediction alone, no decoder work.
  Tensor predict_hormones(const TokenBatch& batch, std::vector<Tensor>* attn = nullptr) const {
    Tensor H = encode(batch.input_ids, batch.input_mask, batch.size, batch.in_len);
    return hormones.compute_hormones(H, batch.input_mask, attn);
  }

  void apply_freezing() {
    for (std::size_t i = 0; i < cfg.n_frozen_encoder; ++i) enc_layers[i].set_trainable(false);
    for (std::size_t i = 0; i < cfg.n_frozen_decoder; ++i) dec_layers[i].set_trainable(false);
  }

 private:
  void build_registry() {
    registry_ = ParamRegistry();
    registry_.add("tok_emb", tok_emb, false);
    registry_.add("pos_emb", pos_emb, false);
    for (std::size_t i = 0; i < enc_layers.size(); ++i)
      enc_layers[i].register_into(registry_, "enc." + std::to_string(i));
    enc_norm.register_into(registry_, "enc_norm");
    for (std::size_t i = 0; i < dec_layers.size(); ++i)
      dec_layers[i].register_into(registry_, "dec." + std::to_string(i));
    dec_norm.register_into(registry_, "dec_norm");
    hormones.register_into(registry_);
  }

  ParamRegistry registry_;
};

}  // namespace endoseq
