#pragma once

// Validation metrics: per-hormone regression error, tolerance-window
// accuracy, tone differentiation ranges and nearest-tone classification.

#include <cmath>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "endoseq/data.hpp"
#include "endoseq/model.hpp"

namespace endoseq {

struct HormoneMetrics {
  std::string name;
  double mse = 0.0;
  double mae = 0.0;
  double accuracy = 0.0;  // fraction within the tolerance window
  double range = 0.0;     // spread of per-tone mean predictions
};

struct EvalReport {
  std::size_t n_examples = 0;
  double window = 0.15;
  std::vector<HormoneMetrics> per_hormone;
  double mean_mse = 0.0;
  double mean_mae = 0.0;
  double mean_accuracy = 0.0;
  double nearest_tone_accuracy = 0.0;
  // tone name -> mean prediction per active hormone
  std::map<std::string, std::vector<double>> tone_means;
};

// Metrics from raw predictions; preds[i] holds the active components for
// example i in the order given by `active`.
inline EvalReport eval_from_predictions(const std::vector<std::vector<double>>& preds,
                                        const std::vector<ToneLabel>& tones,
                                        const std::vector<std::size_t>& active,
                                        double window = 0.15) {
  if (preds.empty()) throw ContractError("eval_from_predictions: no examples");
  if (preds.size() != tones.size())
    throw ContractError("eval_from_predictions: predictions and tones disagree");
  const std::size_t n = preds.size(), k = active.size();
  for (const auto& p : preds)
    if (p.size() != k) throw ContractError("eval_from_predictions: prediction width mismatch");

  EvalReport rep;
  rep.n_examples = n;
  rep.window = window;

  std::vector<double> sq(k, 0.0), ab(k, 0.0), hit(k, 0.0);
  std::map<ToneLabel, std::vector<double>> tone_sum;
  std::map<ToneLabel, std::size_t> tone_count;
  std::size_t nearest_hits = 0;

  for (std::size_t i = 0; i < n; ++i) {
    HormoneVector target = tone_to_hormones(tones[i]);
    auto& sum = tone_sum[tones[i]];
    sum.resize(k, 0.0);
    ++tone_count[tones[i]];
    for (std::size_t j = 0; j < k; ++j) {
      double err = preds[i][j] - target[active[j]];
      sq[j] += err * err;
      ab[j] += std::fabs(err);
      if (std::fabs(err) <= window) hit[j] += 1.0;
      sum[j] += preds[i][j];
    }
    // nearest tone over the active components, first wins on ties
    ToneLabel bestTone = ToneLabel::Friendly;
    double bestDist = std::numeric_limits<double>::infinity();
    for (ToneLabel t : all_tones()) {
      HormoneVector hv = tone_to_hormones(t);
      double d = 0.0;
      for (std::size_t j = 0; j < k; ++j) {
        double diff = preds[i][j] - hv[active[j]];
        d += diff * diff;
      }
      if (d < bestDist) {
        bestDist = d;
        bestTone = t;
      }
    }
    if (bestTone == tones[i]) ++nearest_hits;
  }

  for (ToneLabel t : all_tones())
    if (!tone_count.count(t))
      throw ContractError("eval_from_predictions: no examples with tone '" +
                          std::string(tone_name(t)) + "'");

  for (ToneLabel t : all_tones()) {
    std::vector<double> mean(k);
    for (std::size_t j = 0; j < k; ++j)
      mean[j] = tone_sum[t][j] / static_cast<double>(tone_count[t]);
    rep.tone_means[std::string(tone_name(t))] = std::move(mean);
  }

  for (std::size_t j = 0; j < k; ++j) {
    HormoneMetrics m;
    m.name = hormone_names()[active[j]];
    m.mse = sq[j] / static_cast<double>(n);
    m.mae = ab[j] / static_cast<double>(n);
    m.accuracy = hit[j] / static_cast<double>(n);
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [name, mean] : rep.tone_means) {
      lo = std::min(lo, mean[j]);
      hi = std::max(hi, mean[j]);
    }
    m.range = hi - lo;
    rep.per_hormone.push_back(m);
    rep.mean_mse += m.mse;
    rep.mean_mae += m.mae;
    rep.mean_accuracy += m.accuracy;
  }
  rep.mean_mse /= static_cast<double>(k);
  rep.mean_mae /= static_cast<double>(k);
  rep.mean_accuracy /= static_cast<double>(k);
  rep.nearest_tone_accuracy = static_cast<double>(nearest_hits) / static_cast<double>(n);
  return rep;
}

// Runs the encoder-side hormone path over the pairs and scores it.
inline EvalReport evaluate(const Seq2SeqModel& model, const std::vector<DialoguePair>& pairs,
                           const Vocab& vocab, std::size_t batch_size = 8, double window = 0.15) {
  if (pairs.empty()) throw ContractError("evaluate: no examples");
  NoGrad ng;
  Rng order(0);  // grouping only; metrics are order-independent
  auto batches = make_batches(pairs, vocab, batch_size, model.cfg.max_len, order);
  std::vector<std::vector<double>> preds;
  std::vector<ToneLabel> tones;
  const std::size_t k = model.cfg.active_hormones.size();
  for (const TokenBatch& batch : batches) {
    Tensor h_hat = model.predict_hormones(batch);
    for (std::size_t b = 0; b < batch.size; ++b) {
      std::vector<double> row(k);
      for (std::size_t j = 0; j < k; ++j) row[j] = h_hat.values()[b * k + j];
      preds.push_back(std::move(row));
      tones.push_back(batch.tones[b]);
    }
  }
  return eval_from_predictions(preds, tones, model.cfg.active_hormones, window);
}

inline nlohmann::json eval_report_to_json(const EvalReport& rep) {
  nlohmann::json j;
  j["n_examples"] = rep.n_examples;
  j["window"] = rep.window;
  j["mean_mse"] = rep.mean_mse;
  j["mean_mae"] = rep.mean_mae;
  j["mean_accuracy"] = rep.mean_accuracy;
  j["nearest_tone_accuracy"] = rep.nearest_tone_accuracy;
  nlohmann::json per = nlohmann::json::object();
  for (const HormoneMetrics& m : rep.per_hormone) {
    per[m.name] = {{"mse", m.mse}, {"mae", m.mae}, {"accuracy", m.accuracy}, {"range", m.range}};
  }
  j["per_hormone"] = per;
  nlohmann::json means = nlohmann::json::object();
  for (const auto& [tone, mean] : rep.tone_means) means[tone] = mean;
  j["tone_means"] = means;
  return j;
}

inline void write_eval_json(const EvalReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ContractError("write_eval_json: cannot open " + path);
  f << eval_report_to_json(rep).dump(2) << '\n';
}

// One row per hormone plus an overall row.
inline void write_eval_csv(const EvalReport& rep, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw ContractError("write_eval_csv: cannot open " + path);
  f << "hormone,mse,mae,accuracy,range\n";
  char buf[256];
  for (const HormoneMetrics& m : rep.per_hormone) {
    std::snprintf(buf, sizeof buf, "%s,%.6f,%.6f,%.6f,%.6f\n", m.name.c_str(), m.mse, m.mae,
                  m.accuracy, m.range);
    f << buf;
  }
  std::snprintf(buf, sizeof buf, "overall,%.6f,%.6f,%.6f,\n", rep.mean_mse, rep.mean_mae,
                rep.mean_accuracy);
  f << buf;
}

}  // namespace endoseq
