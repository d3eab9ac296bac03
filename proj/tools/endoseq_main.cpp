// Command line front end: data generation, training, evaluation, one-shot
// inference, multi-turn sessions and attention inspection.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "endoseq/checkpoint.hpp"
#include "endoseq/config.hpp"
#include "endoseq/data.hpp"
#include "endoseq/eval.hpp"
#include "endoseq/infer.hpp"
#include "endoseq/model.hpp"
#include "endoseq/trainer.hpp"

using namespace endoseq;

namespace {

struct LoadedData {
  std::vector<DialoguePair> train, val;
  Vocab vocab;
};

LoadedData load_data_dir(const std::string& dir) {
  LoadedData d;
  d.train = load_jsonl(dir + "/train.jsonl");
  d.val = load_jsonl(dir + "/val.jsonl");
  d.vocab = Vocab::load(dir + "/vocab.txt");
  return d;
}

Vocab load_vocab_arg(const std::string& vocab_path, const std::string& data_dir) {
  if (!vocab_path.empty()) return Vocab::load(vocab_path);
  if (!data_dir.empty()) return Vocab::load(data_dir + "/vocab.txt");
  throw ContractError("need --vocab or --data to locate vocab.txt");
}

void print_tone_counts(const char* split, const std::vector<DialoguePair>& pairs) {
  std::map<ToneLabel, std::size_t> counts;
  for (const DialoguePair& p : pairs) ++counts[p.tone];
  std::printf("%s: %zu pairs (", split, pairs.size());
  bool first = true;
  for (ToneLabel t : all_tones()) {
    std::printf("%s%s %zu", first ? "" : ", ", tone_name(t).c_str(), counts[t]);
    first = false;
  }
  std::printf(")\n");
}

int cmd_gen_data(const std::string& out_dir, const RunOptions& opt) {
  std::filesystem::create_directories(out_dir);
  Rng base(opt.train.seed);
  Rng corpus_rng = base.stream("seed-corpus");
  Rng jitter_rng = base.stream("jitter");
  Rng split_rng = base.stream("split");

  auto seed_pairs = generate_seed_corpus(corpus_rng);
  auto full = expand_corpus(seed_pairs, opt.expansion, jitter_rng);
  DatasetSplit split = split_dataset(full, opt.train_fraction, split_rng);

  std::vector<DialoguePair> all = split.train;
  all.insert(all.end(), split.val.begin(), split.val.end());
  Vocab vocab = Vocab::build(all);

  save_jsonl(split.train, out_dir + "/train.jsonl");
  save_jsonl(split.val, out_dir + "/val.jsonl");
  vocab.save(out_dir + "/vocab.txt");

  print_tone_counts("train", split.train);
  print_tone_counts("val", split.val);
  std::printf("vocab: %zu tokens\n", vocab.size());
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, RunOptions opt) {
  LoadedData d = load_data_dir(data_dir);
  opt.model.vocab_size = d.vocab.size();
  opt.finalize();
  opt.train.out_dir = out_dir;

  Rng base(opt.train.seed);
  Rng init_rng = base.stream("model-init");
  Seq2SeqModel model(opt.model, init_rng);
  std::printf("model: %zu parameters (%zu trainable)\n", model.params().total_elements(),
              model.params().trainable_elements());

  TrainResult res = train_model(model, d.train, d.val, d.vocab, opt.train,
                                [](const EpochStats& s) {
                                  std::printf(
                                      "epoch %zu  train %.4f  val %.4f  lr %.3g  alpha %.3f\n",
                                      s.epoch, s.train.total, s.val.total, s.lr, s.alpha_eff);
                                  std::fflush(stdout);
                                });
  std::printf("best epoch %zu  best val %.4f  %s after %zu epochs (%.1fs)\n", res.best_epoch,
              res.best_val_loss, res.stopped_early ? "stopped early" : "finished",
              res.epochs_run, res.wall_seconds);
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& out_dir,
             const std::string& split) {
  Seq2SeqModel model = model_from_checkpoint(ckpt);
  LoadedData d = load_data_dir(data_dir);
  const auto& pairs = split == "train" ? d.train : d.val;
  EvalReport rep = evaluate(model, pairs, d.vocab);
  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_eval_json(rep, out_dir + "/eval.json");
    write_eval_csv(rep, out_dir + "/eval.csv");
  }
  std::printf("examples %zu  mean_mse %.4f  mean_mae %.4f  accuracy %.4f  nearest_tone %.4f\n",
              rep.n_examples, rep.mean_mse, rep.mean_mae, rep.mean_accuracy,
              rep.nearest_tone_accuracy);
  for (const HormoneMetrics& m : rep.per_hormone)
    std::printf("%-12s mse %.4f  mae %.4f  acc %.4f  range %.4f\n", m.name.c_str(), m.mse, m.mae,
                m.accuracy, m.range);
  return 0;
}

int cmd_infer(const std::string& ckpt, const std::string& vocab_path, const std::string& data_dir,
              const std::string& text, std::size_t max_gen) {
  Seq2SeqModel model = model_from_checkpoint(ckpt);
  Vocab vocab = load_vocab_arg(vocab_path, data_dir);
  GenerationResult g = generate(model, vocab, text, max_gen);
  std::printf("reply: %s\n", g.text.c_str());
  for (std::size_t j = 0; j < g.hormones.size(); ++j)
    std::printf("%s=%.6f\n", hormone_names()[model.cfg.active_hormones[j]].c_str(), g.hormones[j]);
  return 0;
}

int cmd_session(const std::string& ckpt, const std::string& vocab_path,
                const std::string& data_dir, const std::string& input_file,
                const std::string& out_csv, double lambda) {
  Seq2SeqModel model = model_from_checkpoint(ckpt);
  Vocab vocab = load_vocab_arg(vocab_path, data_dir);
  Session session(model, vocab, lambda);

  std::ifstream file;
  std::istream* in = &std::cin;
  if (!input_file.empty()) {
    file.open(input_file);
    if (!file) throw ContractError("session: cannot open " + input_file);
    in = &file;
  }
  std::string line;
  while (std::getline(*in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    SessionTurn t = session.step(line);
    std::printf("turn %zu: %s\n", t.turn, t.reply.c_str());
    std::printf("  state:");
    for (std::size_t j = 0; j < t.smoothed.size(); ++j)
      std::printf(" %s=%.4f", hormone_names()[model.cfg.active_hormones[j]].c_str(),
                  t.smoothed[j]);
    std::printf("\n");
  }
  if (session.turns().empty()) throw ContractError("session: no input lines");
  if (!out_csv.empty()) session.write_trajectory_csv(out_csv);
  return 0;
}

int cmd_inspect_attention(const std::string& ckpt, const std::string& vocab_path,
                          const std::string& data_dir, const std::string& text,
                          const std::string& out_csv) {
  Seq2SeqModel model = model_from_checkpoint(ckpt);
  Vocab vocab = load_vocab_arg(vocab_path, data_dir);
  GenerationResult g = generate(model, vocab, text, 1);

  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!out_csv.empty()) {
    file.open(out_csv);
    if (!file) throw ContractError("inspect-attention: cannot open " + out_csv);
    out = &file;
  }
  *out << "hormone,head,position,token,weight\n";
  char buf[256];
  for (std::size_t j = 0; j < g.attention.size(); ++j) {
    const std::string& name = hormone_names()[model.cfg.active_hormones[j]];
    const Tensor& a = g.attention[j];  // (1, n_heads, L)
    const std::size_t heads = a.dim(1), L = a.dim(2);
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t pos = 0; pos < L; ++pos) {
        std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%s,%.10f\n", name.c_str(), h, pos,
                      g.input_tokens[pos].c_str(), a.values()[h * L + pos]);
        *out << buf;
      }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hormone-conditioned encoder-decoder for tonal dialogue"};
  app.require_subcommand(1);

  RunOptions opt;
  std::string config_file, data_dir, out_dir, ckpt, vocab_path, text, input_file, out_csv;
  std::string split = "val";
  std::size_t max_gen = 0;

  // Config file values load first; explicit flags then override them.
  for (int i = 1; i + 1 < argc; ++i)
    if (std::string(argv[i]) == "--config") config_file = argv[i + 1];
  try {
    if (!config_file.empty()) apply_kv(opt, parse_kv_file(config_file));
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }

  auto add_common = [&](CLI::App* c) {
    c->add_option("--config", config_file, "key=value settings file");
    c->add_option("--seed", opt.train.seed, "rng seed");
  };
  auto add_model_flags = [&](CLI::App* c) {
    c->add_option("--d-model", opt.model.d_model, "hidden width");
    c->add_option("--enc-layers", opt.model.n_encoder_layers, "encoder layers");
    c->add_option("--dec-layers", opt.model.n_decoder_layers, "decoder layers");
    c->add_option("--frozen-enc", opt.model.n_frozen_encoder, "frozen encoder layers");
    c->add_option("--frozen-dec", opt.model.n_frozen_decoder, "frozen decoder layers");
    c->add_option("--seq-heads", opt.model.n_seq_heads, "sequence attention heads");
    c->add_option("--hormone-heads", opt.model.n_hormone_heads, "heads per hormone");
    c->add_option("--ff-width", opt.model.ff_width, "feed-forward width");
    c->add_option("--max-len", opt.model.max_len, "max sequence length");
    c->add_option("--tau", opt.model.tau, "attention temperature");
    c->add_option("--alpha-init", opt.model.alpha_init, "initial modulation gate");
    c->add_flag("--detach-hormone-gradients", opt.model.detach_hormone_gradients,
                "cut sequence-loss gradients into the hormone block");
    c->add_flag("--random-kv", opt.model.random_kv_init,
                "skip key/value transfer from the top encoder layer");
    c->add_flag("--random-query-init", opt.model.random_query_init,
                "random instead of orthogonal probe queries");
    c->add_flag("--fixed-alpha", opt.model.fixed_alpha, "freeze the modulation gate");
    c->add_flag("--no-diversity-loss", opt.no_diversity_loss, "drop the query diversity term");
    c->add_flag("--no-margin-loss", opt.no_margin_loss, "drop the hormone margin term");
    c->add_flag("--three-hormones", opt.three_hormones,
                "restrict to dopamine, cortisol and oxytocin");
  };

  CLI::App* gen = app.add_subcommand("gen-data", "generate the dialogue corpus");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--expansion", opt.expansion, "jitter copies per seed pair");
  gen->add_option("--train-fraction", opt.train_fraction, "train split fraction");
  add_common(gen);

  CLI::App* train = app.add_subcommand("train", "train a model");
  train->add_option("--data", data_dir, "directory with train.jsonl/val.jsonl/vocab.txt")
      ->required();
  train->add_option("--out", out_dir, "output directory")->required();
  train->add_option("--epochs", opt.train.epochs, "training epochs");
  train->add_option("--batch-size", opt.train.batch_size, "examples per batch");
  train->add_option("--lr", opt.train.lr, "peak learning rate");
  train->add_option("--weight-decay", opt.train.weight_decay, "decoupled weight decay");
  train->add_option("--clip-norm", opt.train.clip_norm, "gradient clipping norm");
  train->add_option("--restart-period", opt.train.restart_period, "first cosine cycle length");
  train->add_option("--restart-growth", opt.train.restart_growth, "cycle growth factor");
  train->add_option("--patience", opt.train.patience, "early stop patience");
  train->add_option("--min-epochs", opt.train.min_epochs, "epochs before early stop can fire");
  add_model_flags(train);
  add_common(train);

  CLI::App* ev = app.add_subcommand("eval", "score a checkpoint");
  ev->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ev->add_option("--data", data_dir, "data directory")->required();
  ev->add_option("--out", out_dir, "where to write eval.json/eval.csv");
  ev->add_option("--split", split, "train or val")->check(CLI::IsMember({"train", "val"}));
  add_common(ev);

  CLI::App* inf = app.add_subcommand("infer", "generate one reply");
  inf->add_option("--ckpt", ckpt, "checkpoint file")->required();
  inf->add_option("--vocab", vocab_path, "vocab.txt path");
  inf->add_option("--data", data_dir, "data directory holding vocab.txt");
  inf->add_option("--text", text, "input utterance")->required();
  inf->add_option("--max-gen", max_gen, "generation length cap");
  add_common(inf);

  CLI::App* ses = app.add_subcommand("session", "multi-turn session with smoothed state");
  ses->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ses->add_option("--vocab", vocab_path, "vocab.txt path");
  ses->add_option("--data", data_dir, "data directory holding vocab.txt");
  ses->add_option("--input", input_file, "utterances, one per line (default stdin)");
  ses->add_option("--out", out_csv, "trajectory csv path");
  ses->add_option("--lambda", opt.session_lambda, "state smoothing factor");
  add_common(ses);

  CLI::App* ins = app.add_subcommand("inspect-attention", "dump probe attention weights");
  ins->add_option("--ckpt", ckpt, "checkpoint file")->required();
  ins->add_option("--vocab", vocab_path, "vocab.txt path");
  ins->add_option("--data", data_dir, "data directory holding vocab.txt");
  ins->add_option("--text", text, "input utterance")->required();
  ins->add_option("--out", out_csv, "csv path (default stdout)");
  add_common(ins);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(out_dir, opt);
    if (train->parsed()) return cmd_train(data_dir, out_dir, opt);
    if (ev->parsed()) return cmd_eval(ckpt, data_dir, out_dir, split);
    if (inf->parsed()) return cmd_infer(ckpt, vocab_path, data_dir, text, max_gen);
    if (ses->parsed())
      return cmd_session(ckpt, vocab_path, data_dir, input_file, out_csv, opt.session_lambda);
    if (ins->parsed()) return cmd_inspect_attention(ckpt, vocab_path, data_dir, text, out_csv);
  } catch (const TrainingError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
