#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "endoseq/model.hpp"
#include "endoseq/nn.hpp"
#include "endoseq/optim.hpp"
#include "endoseq/tensor.hpp"

using namespace endoseq;

namespace {

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.vocab_size = 20;
  cfg.d_model = 16;
  cfg.n_encoder_layers = 2;
  cfg.n_decoder_layers = 2;
  cfg.n_frozen_encoder = 1;
  cfg.n_frozen_decoder = 1;
  cfg.n_seq_heads = 2;
  cfg.n_hormone_heads = 2;
  cfg.ff_width = 32;
  cfg.max_len = 8;
  return cfg;
}

}  // namespace

TEST_CASE("cosine restart schedule hits the documented epochs") {
  const double lr = 1e-4;
  CHECK_THAT(cosine_warm_restart_lr(0, 10, 2, lr), Catch::Matchers::WithinAbs(1e-4, 1e-12));
  CHECK_THAT(cosine_warm_restart_lr(5, 10, 2, lr), Catch::Matchers::WithinAbs(5e-5, 1e-12));
  CHECK_THAT(cosine_warm_restart_lr(10, 10, 2, lr), Catch::Matchers::WithinAbs(1e-4, 1e-12));
  // Epoch 29 sits 19 steps into the 20-epoch cycle that began at epoch 10.
  const double epoch29 = 0.5 * lr * (1.0 - std::cos(kPi / 20.0));
  CHECK_THAT(cosine_warm_restart_lr(29, 10, 2, lr), Catch::Matchers::WithinAbs(epoch29, 1e-12));
  CHECK_THAT(cosine_warm_restart_lr(30, 10, 2, lr), Catch::Matchers::WithinAbs(1e-4, 1e-12));
  // Cycle lengths 10, 20, 40: epoch 70 starts the fourth cycle.
  CHECK_THAT(cosine_warm_restart_lr(70, 10, 2, lr), Catch::Matchers::WithinAbs(1e-4, 1e-12));
}

TEST_CASE("schedule without growth wraps modulo the period") {
  const double lr = 3e-4;
  for (std::size_t e = 0; e < 10; ++e)
    CHECK(cosine_warm_restart_lr(e + 20, 10, 1, lr) == cosine_warm_restart_lr(e, 10, 1, lr));
  CHECK_THROWS_AS(cosine_warm_restart_lr(0, 0, 2, lr), ContractError);
}

TEST_CASE("schedule respects a floor") {
  const double lr = 1e-4, floor = 1e-6;
  double mid = cosine_warm_restart_lr(5, 10, 2, lr, floor);
  CHECK_THAT(mid, Catch::Matchers::WithinAbs(floor + 0.5 * (lr - floor), 1e-12));
  // Last epoch of a cycle stays above the floor, never below.
  CHECK(cosine_warm_restart_lr(9, 10, 2, lr, floor) >= floor);
}

TEST_CASE("global norm clipping rescales a [3,4] gradient to [0.6,0.8]") {
  ParamRegistry reg;
  Tensor a = Tensor::scalar(1.0, true);
  Tensor b = Tensor::scalar(1.0, true);
  reg.add("a", a, false);
  reg.add("b", b, false);
  a.grad()[0] = 3.0;
  b.grad()[0] = 4.0;
  double norm = clip_gradients(reg, 1.0);
  CHECK_THAT(norm, Catch::Matchers::WithinAbs(5.0, 1e-12));
  CHECK_THAT(a.grad()[0], Catch::Matchers::WithinAbs(0.6, 1e-12));
  CHECK_THAT(b.grad()[0], Catch::Matchers::WithinAbs(0.8, 1e-12));
  double after = std::sqrt(a.grad()[0] * a.grad()[0] + b.grad()[0] * b.grad()[0]);
  CHECK_THAT(after, Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("clipping leaves small gradients untouched") {
  ParamRegistry reg;
  Tensor a = Tensor::scalar(1.0, true);
  reg.add("a", a, false);
  a.grad()[0] = 0.25;
  double norm = clip_gradients(reg, 1.0);
  CHECK(norm == 0.25);
  CHECK(a.grad()[0] == 0.25);
  CHECK_THROWS_AS(clip_gradients(reg, 0.0), ContractError);
}

TEST_CASE("clipping ignores frozen parameters and missing gradients") {
  ParamRegistry reg;
  Tensor frozen = Tensor::scalar(1.0);
  Tensor live = Tensor::scalar(1.0, true);
  Tensor unused = Tensor::scalar(1.0, true);  // no grad buffer allocated
  reg.add("frozen", frozen, false);
  reg.add("live", live, false);
  reg.add("unused", unused, false);
  live.grad()[0] = 2.0;
  double norm = clip_gradients(reg, 1.0);
  CHECK_THAT(norm, Catch::Matchers::WithinAbs(2.0, 1e-12));
  CHECK_THAT(live.grad()[0], Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_FALSE(unused.has_grad());
}

TEST_CASE("one AdamW step matches the textbook update") {
  ParamRegistry reg;
  Tensor w({2}, {1.0, -2.0});
  w.set_requires_grad(true);
  reg.add("w", w, false);
  w.grad()[0] = 0.5;
  w.grad()[1] = -0.25;

  const double lr = 0.1, wd = 0.02, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  AdamW opt(reg);
  opt.step(lr, wd);

  for (std::size_t i = 0; i < 2; ++i) {
    double g = (i == 0) ? 0.5 : -0.25;
    double m_hat = ((1.0 - b1) * g) / (1.0 - b1);
    double v_hat = ((1.0 - b2) * g * g) / (1.0 - b2);
    double expect = 1.0;
    if (i == 1) expect = -2.0;
    expect = expect * (1.0 - lr * wd) - lr * m_hat / (std::sqrt(v_hat) + eps);
    CHECK_THAT(w.values()[i], Catch::Matchers::WithinAbs(expect, 1e-15));
  }
  CHECK(opt.step_count() == 1);
}

TEST_CASE("two AdamW steps track running moments and bias correction") {
  ParamRegistry reg;
  Tensor w = Tensor::scalar(0.5, true);
  reg.add("w", w, false);

  const double lr = 0.01, wd = 0.0, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double g1 = 0.3, g2 = -0.1;

  w.grad()[0] = g1;
  AdamW opt(reg);
  opt.step(lr, wd);
  w.grad()[0] = g2;
  opt.step(lr, wd);

  // Reference computed step by step with scalars.
  double m = 0.0, v = 0.0, x = 0.5;
  for (int t = 1; t <= 2; ++t) {
    double g = (t == 1) ? g1 : g2;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    double m_hat = m / (1.0 - std::pow(b1, t));
    double v_hat = v / (1.0 - std::pow(b2, t));
    x -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
  CHECK_THAT(w.values()[0], Catch::Matchers::WithinAbs(x, 1e-15));
}

TEST_CASE("a zero gradient step shrinks decayed weights by exactly 1 - lr*wd") {
  ParamRegistry reg;
  Tensor w = Tensor::scalar(3.0, true);
  Tensor gate = Tensor::scalar(0.3, true);
  reg.add("w", w, false);
  reg.add("gate", gate, true);  // no_decay
  w.zero_grad();
  gate.zero_grad();

  const double lr = 1e-4, wd = 0.02;
  AdamW opt(reg);
  opt.step(lr, wd);
  CHECK(w.values()[0] == 3.0 * (1.0 - lr * wd));
  CHECK(gate.values()[0] == 0.3);
}

TEST_CASE("parameters that never received gradients decay but do not drift") {
  ParamRegistry reg;
  Tensor w = Tensor::scalar(2.0, true);  // no grad buffer at all
  reg.add("w", w, false);
  AdamW opt(reg);
  opt.step(0.1, 0.5);
  CHECK(w.values()[0] == 2.0 * (1.0 - 0.1 * 0.5));
}

TEST_CASE("optimizer state covers exactly the trainable parameters") {
  Rng rng(42);
  Seq2SeqModel model(toy_config(), rng);
  AdamW opt(model.params());

  std::size_t trainable = 0;
  for (const auto& p : model.params().items())
    if (p.tensor.requires_grad()) ++trainable;
  CHECK(opt.slot_count() == trainable);
  CHECK(opt.slot_count() < model.params().items().size());
  for (const std::string& n : opt.slot_names()) {
    CHECK(n.rfind("enc.0.", 0) != 0);
    CHECK(n.rfind("dec.0.", 0) != 0);
  }
}

TEST_CASE("non-finite gradients abort the step with the parameter named") {
  ParamRegistry reg;
  Tensor w = Tensor::scalar(1.0, true);
  reg.add("mlp.fc1.w", w, false);
  w.grad()[0] = std::numeric_limits<double>::quiet_NaN();
  AdamW opt(reg);
  CHECK_THROWS_WITH(opt.step(1e-4, 0.02), Catch::Matchers::ContainsSubstring("mlp.fc1.w"));
}

TEST_CASE("identical inputs produce bitwise identical updates") {
  auto run = [] {
    ParamRegistry reg;
    Tensor w({3}, {0.1, -0.7, 2.0});
    w.set_requires_grad(true);
    reg.add("w", w, false);
    w.grad()[0] = 0.01;
    w.grad()[1] = -0.5;
    w.grad()[2] = 1.5;
    AdamW opt(reg);
    for (int i = 0; i < 5; ++i) opt.step(3e-4, 0.02);
    return w.values();
  };
  CHECK(run() == run());
}
