#pragma once

// Epoch-driven training loop: cosine-restart learning rate, global-norm
// clipping, AdamW, validation tracking with early stopping, metrics CSV and
// best/last checkpoints.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "endoseq/checkpoint.hpp"
#include "endoseq/data.hpp"
#include "endoseq/losses.hpp"
#include "endoseq/model.hpp"
#include "endoseq/optim.hpp"

namespace endoseq {

inline std::string fmt_g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 8;
  double lr = 1e-4;
  double weight_decay = 0.02;
  double clip_norm = 1.0;
  std::size_t restart_period = 10;
  std::size_t restart_growth = 2;
  std::size_t patience = 10;
  std::size_t min_epochs = 15;  // epochs that must complete before early stopping
  std::uint64_t seed = 42;
  LossWeights weights;
  std::string out_dir;  // empty skips metrics/checkpoint files
};

struct EpochStats {
  std::size_t epoch = 0;
  LossReport train;
  LossReport val;
  double lr = 0.0;
  double alpha_eff = 0.0;
};

struct TrainResult {
  std::vector<EpochStats> history;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  bool stopped_early = false;
  std::size_t epochs_run = 0;
  double wall_seconds = 0.0;
};

// Forward plus the three losses for one batch.
inline TotalLoss batch_loss(const Seq2SeqModel& model, const TokenBatch& batch,
                            const LossWeights& w) {
  auto fwd = model.forward(batch);
  Tensor seq = sequence_loss(fwd.logits, batch.target_ids, batch.target_mask);
  auto targets = select_hormone_targets(batch.hormone_targets, batch.size,
                                        model.cfg.active_hormones);
  auto hp = hormone_loss(fwd.h_hat, targets, w);
  auto queries = model.hormones.flattened_queries();
  Tensor div = (w.diversity_weight != 0.0 && queries.size() >= 2) ? diversity_loss(queries)
                                                                  : Tensor::scalar(0.0);
  return combine_losses(seq, hp, div, w);
}

namespace detail {

inline void accumulate(LossReport& into, const LossReport& part, double weight) {
  into.total += weight * part.total;
  into.seq += weight * part.seq;
  into.hormone += weight * part.hormone;
  into.hormone_mse += weight * part.hormone_mse;
  into.margin += weight * part.margin;
  into.diversity += weight * part.diversity;
}

inline void scale(LossReport& r, double s) {
  r.total *= s;
  r.seq *= s;
  r.hormone *= s;
  r.hormone_mse *= s;
  r.margin *= s;
  r.diversity *= s;
}

inline std::string strip_prefix(const std::string& msg) {
  const std::string pre = "training error: ";
  return msg.rfind(pre, 0) == 0 ? msg.substr(pre.size()) : msg;
}

}  // namespace detail

inline TrainResult train_model(Seq2SeqModel& model, const std::vector<DialoguePair>& train_pairs,
                               const std::vector<DialoguePair>& val_pairs, const Vocab& vocab,
                               const TrainConfig& cfg,
                               const std::function<void(const EpochStats&)>& on_epoch = {}) {
  if (cfg.epochs == 0) throw ContractError("train_model: epochs must be positive");
  if (train_pairs.empty() || val_pairs.empty())
    throw ContractError("train_model: both splits must be non-empty");

  const auto t_start = std::chrono::steady_clock::now();
  Rng base(cfg.seed);
  Rng train_order = base.stream("train-batches");

  AdamW opt(model.params());

  std::ofstream metrics;
  const bool writing = !cfg.out_dir.empty();
  if (writing) {
    std::filesystem::create_directories(cfg.out_dir);
    metrics.open(cfg.out_dir + "/metrics.csv");
    if (!metrics) throw ContractError("train_model: cannot write to " + cfg.out_dir);
    metrics << "epoch,split,total,seq,hormone,hormone_mse,margin,diversity,lr,alpha_eff\n";
  }
  auto write_row = [&](std::size_t epoch, const char* split, const LossReport& r, double lr,
                       double alpha) {
    if (!writing) return;
    metrics << epoch << ',' << split << ',' << fmt_g17(r.total) << ',' << fmt_g17(r.seq) << ','
            << fmt_g17(r.hormone) << ',' << fmt_g17(r.hormone_mse) << ',' << fmt_g17(r.margin)
            << ',' << fmt_g17(r.diversity) << ',' << fmt_g17(lr) << ',' << fmt_g17(alpha) << '\n';
    metrics.flush();
  };

  TrainResult result;
  double best = std::numeric_limits<double>::infinity();
  std::size_t since_best = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_warm_restart_lr(epoch, cfg.restart_period, cfg.restart_growth, cfg.lr);

    EpochStats stats;
    stats.epoch = epoch;
    stats.lr = lr;

    auto batches = make_batches(train_pairs, vocab, cfg.batch_size, model.cfg.max_len, train_order);
    std::size_t seen = 0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      const TokenBatch& batch = batches[bi];
      try {
        model.params().zero_grad();
        TotalLoss loss = batch_loss(model, batch, cfg.weights);
        loss.total.backward();
        clip_gradients(model.params(), cfg.clip_norm);
        opt.step(lr, cfg.weight_decay);
        detail::accumulate(stats.train, loss.report, static_cast<double>(batch.size));
        seen += batch.size;
      } catch (const TrainingError& err) {
        throw TrainingError("epoch " + std::to_string(epoch) + ", batch " + std::to_string(bi) +
                            ": " + detail::strip_prefix(err.what()));
      }
    }
    detail::scale(stats.train, 1.0 / static_cast<double>(seen));

    {
      NoGrad ng;
      // Fixed grouping every epoch so a frozen model scores identically.
      Rng val_order = base.stream("val-batches");
      auto val_batches = make_batches(val_pairs, vocab, cfg.batch_size, model.cfg.max_len, val_order);
      std::size_t val_seen = 0;
      for (const TokenBatch& batch : val_batches) {
        TotalLoss loss = batch_loss(model, batch, cfg.weights);
        detail::accumulate(stats.val, loss.report, static_cast<double>(batch.size));
        val_seen += batch.size;
      }
      detail::scale(stats.val, 1.0 / static_cast<double>(val_seen));
    }

    stats.alpha_eff = model.hormones.alpha_effective();
    write_row(epoch, "train", stats.train, lr, stats.alpha_eff);
    write_row(epoch, "val", stats.val, lr, stats.alpha_eff);
    result.history.push_back(stats);
    result.epochs_run = epoch + 1;
    if (on_epoch) on_epoch(stats);

    if (stats.val.total < best) {
      best = stats.val.total;
      result.best_epoch = epoch;
      since_best = 0;
      if (writing) save_checkpoint(cfg.out_dir + "/best.ckpt", model.cfg, model.params());
    } else {
      ++since_best;
    }
    if (writing) save_checkpoint(cfg.out_dir + "/last.ckpt", model.cfg, model.params());

    if (epoch + 1 >= cfg.min_epochs && since_best >= cfg.patience) {
      result.stopped_early = true;
      break;
    }
  }

  result.best_val_loss = best;
  result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();

  if (writing) {
    nlohmann::json summary;
    summary["best_epoch"] = result.best_epoch;
    summary["best_val_loss"] = result.best_val_loss;
    summary["epochs_run"] = result.epochs_run;
    summary["stopped_early"] = result.stopped_early;
    summary["wall_seconds"] = result.wall_seconds;
    std::ofstream f(cfg.out_dir + "/run_summary.json");
    f << summary.dump(2) << '\n';
  }
  return result;
}

}  // namespace endoseq
