#include <cmath>
#include <limits>
#include <vector>

#include <catch2/catch_amalgamated.hpp>

#include "endoseq/data.hpp"
#include "endoseq/losses.hpp"
#include "endoseq/tensor.hpp"

using namespace endoseq;

namespace {

std::vector<double> tone_targets(std::initializer_list<ToneLabel> tones) {
  std::vector<double> out;
  for (ToneLabel t : tones) {
    HormoneVector h = tone_to_hormones(t);
    out.insert(out.end(), h.begin(), h.end());
  }
  return out;
}

Tensor one_hot(std::size_t dim, std::size_t idx) {
  std::vector<double> v(dim, 0.0);
  v[idx] = 1.0;
  return Tensor({dim}, std::move(v));
}

}  // namespace

TEST_CASE("hormone loss matches hand-computed mse and margin") {
  // Row 0 against Friendly, row 1 against Rude.
  Tensor h_hat({2, 6}, {0.6, 0.5, 0.2, 0.7, 0.3, 0.8,
                        0.1, 0.2, 0.9, 0.1, 0.8, 0.1});
  h_hat.set_requires_grad(true);
  auto targets = tone_targets({ToneLabel::Friendly, ToneLabel::Rude});
  auto parts = hormone_loss(h_hat, targets);

  // Squared errors summed by hand: 0.4075 for row 0, 0.055 for row 1.
  const double mse = 0.4625 / 12.0;
  CHECK_THAT(parts.mse.item(), Catch::Matchers::WithinAbs(mse, 1e-12));

  // Friendly high set {dopamine, serotonin, oxytocin, endorphins}: gaps to
  // 0.7 are 0.1, 0.2, 0, 0 -> mean 0.075. Low set gaps are zero, and the
  // Rude row clears both cutoffs entirely.
  CHECK_THAT(parts.margin.item(), Catch::Matchers::WithinAbs(0.0375, 1e-12));
  CHECK_THAT(parts.total.item(), Catch::Matchers::WithinAbs(mse + 0.3 * 0.0375, 1e-12));
}

TEST_CASE("margin penalizes low-target components predicted above the cutoff") {
  Tensor h_hat({1, 6}, {0.45, 0.1, 0.9, 0.1, 0.85, 0.1});
  auto targets = tone_targets({ToneLabel::Rude});
  auto parts = hormone_loss(h_hat, targets);
  // Rude low set has four members; only dopamine at 0.45 overshoots 0.3.
  CHECK_THAT(parts.margin.item(), Catch::Matchers::WithinAbs(0.15 / 4.0, 1e-12));
}

TEST_CASE("neutral targets produce an exactly zero margin") {
  Rng rng(7);
  Tensor h_hat = Tensor::randn({3, 6}, rng, 0.2);
  for (double& x : h_hat.values()) x = 0.5 + x;  // arbitrary, need not be in (0,1)
  auto targets = tone_targets({ToneLabel::Neutral, ToneLabel::Neutral, ToneLabel::Neutral});
  auto parts = hormone_loss(h_hat, targets);
  CHECK(parts.margin.item() == 0.0);
}

TEST_CASE("hormone loss gradient matches finite differences") {
  // Keep predictions away from the relu kinks at 0.7 and 0.3.
  Tensor h_hat({2, 6}, {0.55, 0.45, 0.15, 0.65, 0.35, 0.85,
                        0.12, 0.22, 0.92, 0.08, 0.78, 0.14});
  auto targets = tone_targets({ToneLabel::Excited, ToneLabel::Sad});
  auto rep = finite_difference_check(
      [&](const Tensor& x) { return hormone_loss(x, targets).total; }, h_hat);
  INFO("max rel error " << rep.max_rel_error);
  CHECK(rep.pass);
}

TEST_CASE("hormone loss validates shapes") {
  Tensor bad({6}, 0.5);
  CHECK_THROWS_AS(hormone_loss(bad, std::vector<double>(6, 0.5)), DimensionError);
  Tensor ok({1, 6}, 0.5);
  CHECK_THROWS_AS(hormone_loss(ok, std::vector<double>(5, 0.5)), DimensionError);
}

TEST_CASE("select_hormone_targets picks active columns") {
  auto full = tone_targets({ToneLabel::Friendly, ToneLabel::Rude});
  auto picked = select_hormone_targets(full, 2, {0, 2, 3});
  REQUIRE(picked.size() == 6);
  CHECK(picked[0] == 0.95);  // friendly dopamine
  CHECK(picked[1] == 0.05);  // friendly cortisol
  CHECK(picked[2] == 0.90);  // friendly oxytocin
  CHECK(picked[3] == 0.05);  // rude dopamine
  CHECK(picked[4] == 0.95);  // rude cortisol
  CHECK(picked[5] == 0.05);  // rude oxytocin
  CHECK_THROWS_AS(select_hormone_targets(full, 3, {0}), DimensionError);
}

TEST_CASE("diversity loss is zero for orthogonal queries") {
  std::vector<Tensor> qs;
  for (std::size_t i = 0; i < 6; ++i) qs.push_back(one_hot(6, i));
  CHECK(diversity_loss(qs).item() == 0.0);
}

TEST_CASE("diversity loss is one for identical queries") {
  std::vector<Tensor> qs(6, Tensor({4}, {0.3, -1.2, 0.7, 2.0}));
  CHECK_THAT(diversity_loss(qs).item(), Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("one duplicated query among six costs 1/15") {
  std::vector<Tensor> qs;
  for (std::size_t i = 0; i < 5; ++i) qs.push_back(one_hot(6, i));
  qs.push_back(one_hot(6, 0));
  CHECK_THAT(diversity_loss(qs).item(), Catch::Matchers::WithinAbs(1.0 / 15.0, 1e-12));
}

TEST_CASE("diversity loss handles sign and scale of cosines") {
  // Opposed vectors count with absolute value, scaling is irrelevant.
  std::vector<Tensor> qs = {Tensor({2}, {1.0, 0.0}), Tensor({2}, {-3.0, 0.0})};
  CHECK_THAT(diversity_loss(qs).item(), Catch::Matchers::WithinAbs(1.0, 1e-12));
  CHECK_THROWS_AS(diversity_loss({one_hot(2, 0)}), ContractError);
}

TEST_CASE("diversity loss gradient matches finite differences") {
  Rng rng(11);
  Tensor q1 = Tensor::randn({2, 4}, rng);
  Tensor q2 = Tensor::randn({2, 4}, rng);
  Tensor q3 = Tensor::randn({2, 4}, rng);
  auto rep = finite_difference_check(
      [&](const Tensor& x) { return diversity_loss({x, q2, q3}); }, q1);
  INFO("max rel error " << rep.max_rel_error);
  CHECK(rep.pass);
}

TEST_CASE("combined loss is the weighted sum of its parts") {
  Rng rng(3);
  const std::size_t B = 2, T = 3, V = 7;
  Tensor logits = Tensor::randn({B, T, V}, rng);
  logits.set_requires_grad(true);
  std::vector<int> tgt = {1, 4, 2, 5, 1, 0};
  std::vector<int> mask = {1, 1, 1, 1, 1, 0};
  Tensor seq = sequence_loss(logits, tgt, mask);

  Tensor h_hat({B, 6}, {0.62, 0.41, 0.15, 0.72, 0.33, 0.81,
                        0.12, 0.25, 0.88, 0.09, 0.79, 0.11});
  h_hat.set_requires_grad(true);
  auto hp = hormone_loss(h_hat, tone_targets({ToneLabel::Friendly, ToneLabel::Rude}));

  std::vector<Tensor> qs;
  for (std::size_t i = 0; i < 6; ++i) qs.push_back(Tensor::randn({8}, rng));
  Tensor div = diversity_loss(qs);

  auto combined = combine_losses(seq, hp, div);
  const LossReport& r = combined.report;
  CHECK_THAT(r.total, Catch::Matchers::WithinAbs(1.0 * r.seq + 5.0 * r.hormone + 0.5 * r.diversity, 1e-12));
  CHECK_THAT(r.hormone, Catch::Matchers::WithinAbs(r.hormone_mse + 0.3 * r.margin, 1e-12));
  CHECK(r.seq == seq.item());
  CHECK(combined.total.item() == r.total);

  // The combined scalar still backpropagates into every branch.
  combined.total.backward();
  CHECK(logits.has_grad());
  CHECK(h_hat.has_grad());
  double gsum = 0.0;
  for (double g : h_hat.grad()) gsum += std::fabs(g);
  CHECK(gsum > 0.0);
}

TEST_CASE("non-finite loss parts are rejected") {
  Tensor seq = Tensor::scalar(std::numeric_limits<double>::quiet_NaN());
  HormoneLossParts hp;
  hp.total = Tensor::scalar(0.1);
  hp.mse = Tensor::scalar(0.1);
  hp.margin = Tensor::scalar(0.0);
  Tensor div = Tensor::scalar(0.0);
  CHECK_THROWS_AS(combine_losses(seq, hp, div), TrainingError);

  Tensor inf_div = Tensor::scalar(std::numeric_limits<double>::infinity());
  Tensor ok = Tensor::scalar(0.2);
  CHECK_THROWS_AS(combine_losses(ok, hp, inf_div), TrainingError);
}

TEST_CASE("custom weights flow through the combination") {
  LossWeights w;
  w.seq_weight = 2.0;
  w.hormone_weight = 1.0;
  w.diversity_weight = 0.0;
  Tensor seq = Tensor::scalar(0.5);
  HormoneLossParts hp;
  hp.mse = Tensor::scalar(0.25);
  hp.margin = Tensor::scalar(0.1);
  hp.total = Tensor::scalar(0.25 + 0.3 * 0.1);
  Tensor div = Tensor::scalar(0.7);
  auto combined = combine_losses(seq, hp, div, w);
  CHECK_THAT(combined.report.total, Catch::Matchers::WithinAbs(2.0 * 0.5 + 1.0 * 0.28, 1e-12));
}
