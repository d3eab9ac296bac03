#pragma once

// Greedy decoding plus a multi-turn session that smooths the hormone state
// across turns with an exponential blend.

#include <algorithm>
#include <fstream>
#include <string>
#include <vector>

#include "endoseq/data.hpp"
#include "endoseq/model.hpp"
#include "endoseq/trainer.hpp"

namespace endoseq {

struct GenerationResult {
  std::string text;
  std::vector<int> token_ids;             // generated ids, eos excluded
  std::vector<double> hormones;           // active components
  double alpha_eff = 0.0;
  std::vector<Tensor> attention;          // per active hormone, (1, n_heads, L)
  std::vector<std::string> input_tokens;  // prefixed input as tokenized, eos last
};

inline GenerationResult generate(const Seq2SeqModel& model, const Vocab& vocab,
                                 const std::string& input_text, std::size_t max_gen_len = 0) {
  if (input_text.find_first_not_of(" \t\r\n") == std::string::npos)
    throw ContractError("generate: input text is empty");
  NoGrad ng;
  const std::size_t max_len = model.cfg.max_len;
  if (max_gen_len == 0 || max_gen_len > max_len - 1) max_gen_len = max_len - 1;

  TokenizedText tt = tokenize(with_prefix(input_text), vocab, max_len);
  std::size_t L = 0;
  while (L < tt.mask.size() && tt.mask[L] == 1) ++L;
  std::vector<int> ids(tt.ids.begin(), tt.ids.begin() + L);
  std::vector<int> mask(L, 1);

  GenerationResult out;
  Tensor H = model.encode(ids, mask, 1, L);
  Tensor h_hat = model.hormones.compute_hormones(H, mask, &out.attention);
  Tensor emotion = model.hormones.hormones_to_embedding(h_hat);
  Tensor H_mod = model.hormones.modulate(H, emotion);
  out.hormones = h_hat.values();
  out.alpha_eff = model.hormones.alpha_effective();

  std::vector<int> dec = {Vocab::kBos};
  for (std::size_t step = 0; step < max_gen_len && dec.size() < max_len; ++step) {
    Tensor logits = model.decode(H_mod, mask, dec, 1, dec.size());
    const std::size_t V = model.cfg.vocab_size;
    const double* row = logits.values().data() + (dec.size() - 1) * V;
    int best = 0;
    for (std::size_t v = 1; v < V; ++v)
      if (row[v] > row[best]) best = static_cast<int>(v);
    if (best == Vocab::kEos) break;
    dec.push_back(best);
    out.token_ids.push_back(best);
  }
  out.text = detokenize(out.token_ids, vocab);

  std::vector<std::string> toks = word_tokenize(with_prefix(input_text));
  if (toks.size() > L - 1) toks.resize(L - 1);
  toks.push_back("<eos>");
  out.input_tokens = std::move(toks);
  return out;
}

// Next smoothed state: lambda keeps the previous state, the rest follows the
// fresh prediction.
inline std::vector<double> blend_hormones(const std::vector<double>& prev,
                                          const std::vector<double>& current, double lambda) {
  if (lambda < 0.0 || lambda > 1.0)
    throw ContractError("blend_hormones: lambda must lie in [0, 1]");
  if (prev.size() != current.size())
    throw ContractError("blend_hormones: state widths disagree");
  std::vector<double> out(prev.size());
  for (std::size_t i = 0; i < prev.size(); ++i)
    out[i] = lambda * prev[i] + (1.0 - lambda) * current[i];
  return out;
}

struct SessionTurn {
  std::size_t turn = 0;  // 1-based
  std::string input;
  std::string reply;
  std::vector<double> raw;       // this turn's prediction
  std::vector<double> smoothed;  // blended state after the turn
};

class Session {
 public:
  Session(const Seq2SeqModel& model, const Vocab& vocab, double lambda = 0.7)
      : model_(model), vocab_(vocab), lambda_(lambda) {
    if (lambda < 0.0 || lambda > 1.0)
      throw ContractError("Session: lambda must lie in [0, 1]");
    HormoneVector neutral = tone_to_hormones(ToneLabel::Neutral);
    for (std::size_t h : model.cfg.active_hormones) state_.push_back(neutral[h]);
  }

  double lambda() const { return lambda_; }
  const std::vector<double>& state() const { return state_; }
  const std::vector<SessionTurn>& turns() const { return turns_; }

  SessionTurn step(const std::string& text, std::size_t max_gen_len = 0) {
    GenerationResult gen = generate(model_, vocab_, text, max_gen_len);
    state_ = blend_hormones(state_, gen.hormones, lambda_);
    SessionTurn t;
    t.turn = turns_.size() + 1;
    t.input = text;
    t.reply = gen.text;
    t.raw = gen.hormones;
    t.smoothed = state_;
    turns_.push_back(t);
    return t;
  }

  void write_trajectory_csv(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw ContractError("Session: cannot open " + path);
    f << "turn";
    for (std::size_t h : model_.cfg.active_hormones) f << ",raw_" << hormone_names()[h];
    for (std::size_t h : model_.cfg.active_hormones) f << ",smoothed_" << hormone_names()[h];
    f << '\n';
    for (const SessionTurn& t : turns_) {
      f << t.turn;
      for (double x : t.raw) f << ',' << fmt_g17(x);
      for (double x : t.smoothed) f << ',' << fmt_g17(x);
      f << '\n';
    }
  }

 private:
  const Seq2SeqModel& model_;
  const Vocab& vocab_;
  double lambda_ = 0.7;
  std::vector<double> state_;
  std::vector<SessionTurn> turns_;
};

}  // namespace endoseq
