#pragma once

// Training objective: token cross-entropy, hormone regression with a margin
// penalty pushing extreme targets past soft cutoffs, and a query diversity
// penalty over the per-hormone probe matrices.

#include <cmath>
#include <string>
#include <vector>

#include "endoseq/tensor.hpp"

namespace endoseq {

struct LossWeights {
  double seq_weight = 1.0;
  double hormone_weight = 5.0;
  double diversity_weight = 0.5;
  double margin_coeff = 0.3;
  // targets above/below these thresholds join the margin sets
  double high_threshold = 0.8;
  double low_threshold = 0.2;
  // predictions are pushed past these cutoffs
  double high_cut = 0.7;
  double low_cut = 0.3;
};

struct LossReport {
  double total = 0.0;
  double seq = 0.0;
  double hormone = 0.0;  // mse + margin_coeff * margin
  double hormone_mse = 0.0;
  double margin = 0.0;
  double diversity = 0.0;
};

inline Tensor sequence_loss(const Tensor& logits, const std::vector<int>& targets,
                            const std::vector<int>& mask) {
  return masked_cross_entropy(logits, targets, mask);
}

// Pick the active components out of full B x 6 target rows.
inline std::vector<double> select_hormone_targets(const std::vector<double>& full,
                                                  std::size_t batch,
                                                  const std::vector<std::size_t>& active) {
  if (full.size() != batch * 6)
    throw DimensionError("select_hormone_targets: expected " + std::to_string(batch * 6) +
                         " values, got " + std::to_string(full.size()));
  std::vector<double> out;
  out.reserve(batch * active.size());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h : active) out.push_back(full[b * 6 + h]);
  return out;
}

struct HormoneLossParts {
  Tensor total;   // mse + margin_coeff * margin
  Tensor mse;
  Tensor margin;
};

// h_hat: (B, n) predictions in (0,1); targets: B x n row-major.
inline HormoneLossParts hormone_loss(const Tensor& h_hat, const std::vector<double>& targets,
                                     const LossWeights& w = {}) {
  if (h_hat.ndim() != 2)
    throw DimensionError("hormone_loss: predictions must be (B, n), got " + shape_str(h_hat.shape()));
  const std::size_t B = h_hat.dim(0), n = h_hat.dim(1);
  if (targets.size() != B * n)
    throw DimensionError("hormone_loss: target count " + std::to_string(targets.size()) +
                         " does not cover " + shape_str(h_hat.shape()));

  Tensor h_star({B, n}, targets);
  Tensor diff = sub(h_hat, h_star);
  Tensor mse = mean(mul(diff, diff));

  // Per example: mean over the high set of relu(high_cut - h), plus mean
  // over the low set of relu(h - low_cut); empty sets contribute zero.
  std::vector<double> w_high(B * n, 0.0), w_low(B * n, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    std::size_t n_high = 0, n_low = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (targets[b * n + i] > w.high_threshold) ++n_high;
      if (targets[b * n + i] < w.low_threshold) ++n_low;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (n_high && targets[b * n + i] > w.high_threshold)
        w_high[b * n + i] = 1.0 / static_cast<double>(n_high);
      if (n_low && targets[b * n + i] < w.low_threshold)
        w_low[b * n + i] = 1.0 / static_cast<double>(n_low);
    }
  }
  Tensor high_gap = relu(sub(Tensor({B, n}, w.high_cut), h_hat));
  Tensor low_gap = relu(sub(h_hat, Tensor({B, n}, w.low_cut)));
  Tensor weighted = add(mul(high_gap, Tensor({B, n}, std::move(w_high))),
                        mul(low_gap, Tensor({B, n}, std::move(w_low))));
  Tensor margin = mul_const(sum(weighted), 1.0 / static_cast<double>(B));

  HormoneLossParts out;
  out.mse = mse;
  out.margin = margin;
  out.total = add(mse, mul_const(margin, w.margin_coeff));
  return out;
}

// Mean absolute cosine similarity over ordered pairs of distinct query
// matrices (flattened); symmetric terms make that twice the unordered sum
// over n(n-1).
inline Tensor diversity_loss(const std::vector<Tensor>& queries) {
  const std::size_t n = queries.size();
  if (n < 2) throw ContractError("diversity_loss: needs at least two query matrices");
  Tensor acc;
  bool first = true;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      Tensor term = abs_t(cosine_similarity(queries[i], queries[j]));
      acc = first ? term : add(acc, term);
      first = false;
    }
  return mul_const(acc, 2.0 / static_cast<double>(n * (n - 1)));
}

struct TotalLoss {
  Tensor total;
  LossReport report;
};

inline TotalLoss combine_losses(const Tensor& seq, const HormoneLossParts& hormone,
                                const Tensor& diversity, const LossWeights& w = {}) {
  TotalLoss out;
  out.total = add(add(mul_const(seq, w.seq_weight), mul_const(hormone.total, w.hormone_weight)),
                  mul_const(diversity, w.diversity_weight));
  out.report.seq = seq.item();
  out.report.hormone = hormone.total.item();
  out.report.hormone_mse = hormone.mse.item();
  out.report.margin = hormone.margin.item();
  out.report.diversity = diversity.item();
  out.report.total = out.total.item();
  auto check = [](double v, const char* part) {
    if (std::isnan(v) || std::isinf(v))
      throw TrainingError(std::string("loss part '") + part + "' is not finite");
  };
  check(out.report.seq, "seq");
  check(out.report.hormone, "hormone");
  check(out.report.diversity, "diversity");
  check(out.report.total, "total");
  return out;
}

}  // namespace endoseq
