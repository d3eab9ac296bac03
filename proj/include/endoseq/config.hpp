#pragma once

// Run options shared by the command line tool: model and training settings
// plus data-generation and session knobs, loadable from key=value files.

#include <fstream>
#include <map>
#include <string>

#include "endoseq/losses.hpp"
#include "endoseq/model.hpp"
#include "endoseq/trainer.hpp"

namespace endoseq {

struct RunOptions {
  ModelConfig model;  // vocab_size is filled in once the vocabulary is known
  TrainConfig train;
  std::size_t expansion = 10;
  double train_fraction = 0.8;
  double session_lambda = 0.7;
  bool no_diversity_loss = false;
  bool no_margin_loss = false;
  bool three_hormones = false;

  // Folds the ablation switches into the concrete configs.
  void finalize() {
    if (no_diversity_loss) train.weights.diversity_weight = 0.0;
    if (no_margin_loss) train.weights.margin_coeff = 0.0;
    if (three_hormones) model.active_hormones = {0, 2, 3};
  }
};

// key=value lines; blank lines and lines starting with # are skipped.
inline std::map<std::string, std::string> parse_kv_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ContractError("config: cannot open " + path);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    std::size_t eq = line.find('=', start);
    if (eq == std::string::npos)
      throw ContractError("config: line " + std::to_string(lineno) + " of " + path +
                          " is not key=value");
    std::string key = line.substr(start, eq - start);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    std::string val = line.substr(eq + 1);
    std::size_t vs = val.find_first_not_of(" \t");
    val = vs == std::string::npos ? "" : val.substr(vs);
    while (!val.empty() && (val.back() == ' ' || val.back() == '\t')) val.pop_back();
    if (key.empty()) throw ContractError("config: empty key on line " + std::to_string(lineno));
    out[key] = val;
  }
  return out;
}

namespace detail {

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ContractError("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ContractError("config: '" + key + "' expects a number, got '" + v + "'");
  }
}

inline std::size_t parse_size(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    long long x = std::stoll(v, &used);
    if (used != v.size() || x < 0) throw std::invalid_argument(v);
    return static_cast<std::size_t>(x);
  } catch (const std::exception&) {
    throw ContractError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
}

}  // namespace detail

// Applies file values; unknown keys are an error so typos never pass silently.
inline void apply_kv(RunOptions& opt, const std::map<std::string, std::string>& kv) {
  for (const auto& [key, val] : kv) {
    if (key == "d_model") opt.model.d_model = detail::parse_size(key, val);
    else if (key == "n_encoder_layers") opt.model.n_encoder_layers = detail::parse_size(key, val);
    else if (key == "n_decoder_layers") opt.model.n_decoder_layers = detail::parse_size(key, val);
    else if (key == "n_frozen_encoder") opt.model.n_frozen_encoder = detail::parse_size(key, val);
    else if (key == "n_frozen_decoder") opt.model.n_frozen_decoder = detail::parse_size(key, val);
    else if (key == "n_seq_heads") opt.model.n_seq_heads = detail::parse_size(key, val);
    else if (key == "n_hormone_heads") opt.model.n_hormone_heads = detail::parse_size(key, val);
    else if (key == "ff_width") opt.model.ff_width = detail::parse_size(key, val);
    else if (key == "max_len") opt.model.max_len = detail::parse_size(key, val);
    else if (key == "tau") opt.model.tau = detail::parse_double(key, val);
    else if (key == "alpha_init") opt.model.alpha_init = detail::parse_double(key, val);
    else if (key == "detach_hormone_gradients")
      opt.model.detach_hormone_gradients = detail::parse_bool(key, val);
    else if (key == "random_kv_init") opt.model.random_kv_init = detail::parse_bool(key, val);
    else if (key == "random_query_init") opt.model.random_query_init = detail::parse_bool(key, val);
    else if (key == "fixed_alpha") opt.model.fixed_alpha = detail::parse_bool(key, val);
    else if (key == "epochs") opt.train.epochs = detail::parse_size(key, val);
    else if (key == "batch_size") opt.train.batch_size = detail::parse_size(key, val);
    else if (key == "lr") opt.train.lr = detail::parse_double(key, val);
    else if (key == "weight_decay") opt.train.weight_decay = detail::parse_double(key, val);
    else if (key == "clip_norm") opt.train.clip_norm = detail::parse_double(key, val);
    else if (key == "restart_period") opt.train.restart_period = detail::parse_size(key, val);
    else if (key == "restart_growth") opt.train.restart_growth = detail::parse_size(key, val);
    else if (key == "patience") opt.train.patience = detail::parse_size(key, val);
    else if (key == "min_epochs") opt.train.min_epochs = detail::parse_size(key, val);
    else if (key == "seed") opt.train.seed = detail::parse_size(key, val);
    else if (key == "expansion") opt.expansion = detail::parse_size(key, val);
    else if (key == "train_fraction") opt.train_fraction = detail::parse_double(key, val);
    else if (key == "session_lambda") opt.session_lambda = detail::parse_double(key, val);
    else if (key == "no_diversity_loss") opt.no_diversity_loss = detail::parse_bool(key, val);
    else if (key == "no_margin_loss") opt.no_margin_loss = detail::parse_bool(key, val);
    else if (key == "three_hormones") opt.three_hormones = detail::parse_bool(key, val);
    else throw ContractError("config: unknown key '" + key + "'");
  }
}

}  // namespace endoseq
