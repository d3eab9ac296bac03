#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "endoseq/tensor.hpp"

using namespace endoseq;

TEST_CASE("matmul basic product") {
  Tensor a({1, 2}, {1.0, 2.0});
  Tensor b({2, 1}, {3.0, 4.0});
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{1, 1});
  REQUIRE(c.item() == 11.0);
}

TEST_CASE("matmul shape errors name both shapes") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  REQUIRE_THROWS_AS(matmul(a, b), DimensionError);
  try {
    matmul(a, b);
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    REQUIRE(msg.find("(2, 3)") != std::string::npos);
    REQUIRE(msg.find("(4, 2)") != std::string::npos);
  }
  Tensor c({2, 2, 3});
  Tensor d({3, 3, 4});
  REQUIRE_THROWS_AS(matmul(c, d), DimensionError);
}

TEST_CASE("matmul batched against 2D weight") {
  // (2,2,2) x (2,2): per-slab product
  Tensor a({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor w({2, 2}, {1, 0, 0, 1});
  Tensor c = matmul(a, w);
  REQUIRE(c.shape() == Shape{2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) REQUIRE(c.values()[i] == a.values()[i]);
}

TEST_CASE("softmax of log odds") {
  Tensor x({2}, {std::log(1.0), std::log(3.0)});
  Tensor y = softmax(x, 0);
  REQUIRE_THAT(y.values()[0], Catch::Matchers::WithinAbs(0.25, 1e-12));
  REQUIRE_THAT(y.values()[1], Catch::Matchers::WithinAbs(0.75, 1e-12));
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(7);
  Tensor x = Tensor::randn({3, 5}, rng, 2.0);
  Tensor y = softmax(x, 1);
  for (std::size_t r = 0; r < 3; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += y.values()[r * 5 + j];
    REQUIRE_THAT(s, Catch::Matchers::WithinAbs(1.0, 1e-12));
  }
  Tensor shifted = add_const(x, 17.5);
  Tensor y2 = softmax(shifted, 1);
  for (std::size_t i = 0; i < y.size(); ++i)
    REQUIRE_THAT(y2.values()[i], Catch::Matchers::WithinAbs(y.values()[i], 1e-12));
}

TEST_CASE("backward of sum of squares") {
  Tensor w({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  Tensor loss = sum(mul(w, w));
  loss.backward();
  REQUIRE(w.grad()[0] == 2.0);
  REQUIRE(w.grad()[1] == 4.0);
}

TEST_CASE("backward accumulates across calls, interior grads reset") {
  Tensor w({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  Tensor loss = sum(mul(w, w));
  loss.backward();
  loss.backward();
  REQUIRE(w.grad()[0] == 4.0);
  REQUIRE(w.grad()[1] == 8.0);
  w.zero_grad();
  loss.backward();
  REQUIRE(w.grad()[0] == 2.0);
}

TEST_CASE("backward rejects non-scalar root") {
  Tensor w({2}, {1.0, 2.0});
  w.set_requires_grad(true);
  Tensor y = mul(w, w);
  REQUIRE_THROWS_AS(y.backward(), ContractError);
}

TEST_CASE("diamond graph accumulates both paths") {
  Tensor w = Tensor::scalar(3.0, true);
  Tensor a = mul(w, w);        // w^2
  Tensor loss = add(a, a);     // 2 w^2, d/dw = 4w = 12
  loss.backward();
  REQUIRE(w.grad()[0] == 12.0);
}

TEST_CASE("clamp saturates and blocks gradient outside range") {
  Tensor x = Tensor::scalar(0.7, true);
  Tensor y = clamp(x, 0.1, 0.5);
  REQUIRE(y.item() == 0.5);
  y.backward();
  REQUIRE(x.grad()[0] == 0.0);

  Tensor z = Tensor::scalar(0.3, true);
  Tensor y2 = clamp(z, 0.1, 0.5);
  REQUIRE(y2.item() == 0.3);
  y2.backward();
  REQUIRE(z.grad()[0] == 1.0);
}

TEST_CASE("detach stops gradient flow") {
  Tensor w = Tensor::scalar(2.0, true);
  Tensor y = mul(w, w);
  Tensor z = mul(y.detach(), w);  // d/dw = y.value = 4
  z.backward();
  REQUIRE(w.grad()[0] == 4.0);
}

TEST_CASE("no-grad mode builds no graph") {
  Tensor w = Tensor::scalar(2.0, true);
  {
    NoGrad ng;
    Tensor y = mul(w, w);
    REQUIRE_FALSE(y.requires_grad());
    REQUIRE(y.node()->parents.empty());
  }
  Tensor y = mul(w, w);
  REQUIRE(y.requires_grad());
}

TEST_CASE("frozen leaf receives no gradient") {
  Tensor w = Tensor::scalar(2.0, false);
  Tensor v = Tensor::scalar(3.0, true);
  Tensor loss = mul(w, v);
  loss.backward();
  REQUIRE(v.grad()[0] == 2.0);
  REQUIRE_FALSE(w.has_grad());
}

TEST_CASE("orthogonal init produces orthonormal rows") {
  Rng rng(42);
  Tensor g = orthogonal_init(6, 8, rng);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 8; ++k) dot += g.values()[i * 8 + k] * g.values()[j * 8 + k];
      REQUIRE_THAT(dot, Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-6));
    }
  REQUIRE_THROWS_AS(orthogonal_init(0, 4, rng), ContractError);
}

TEST_CASE("orthogonal init columns when tall") {
  Rng rng(3);
  Tensor g = orthogonal_init(8, 3, rng);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < 8; ++k) dot += g.values()[k * 3 + i] * g.values()[k * 3 + j];
      REQUIRE_THAT(dot, Catch::Matchers::WithinAbs(i == j ? 1.0 : 0.0, 1e-6));
    }
}

TEST_CASE("seeded draws are reproducible") {
  Rng a(42), b(42);
  Tensor ta = Tensor::randn({4, 4}, a);
  Tensor tb = Tensor::randn({4, 4}, b);
  REQUIRE(ta.values() == tb.values());
  Tensor oa = orthogonal_init(4, 6, a);
  Tensor ob = orthogonal_init(4, 6, b);
  REQUIRE(oa.values() == ob.values());

  Rng s1 = Rng(42).stream("init");
  Rng s2 = Rng(42).stream("init");
  Rng s3 = Rng(42).stream("shuffle");
  REQUIRE(s1.next_u64() == s2.next_u64());
  REQUIRE(s1.next_u64() != s3.next_u64());
}

TEST_CASE("rng shuffle is a permutation and seed-stable") {
  Rng a(11), b(11);
  std::vector<int> v1{0, 1, 2, 3, 4, 5, 6, 7};
  std::vector<int> v2 = v1;
  a.shuffle(v1);
  b.shuffle(v2);
  REQUIRE(v1 == v2);
  std::vector<int> sorted = v1;
  std::sort(sorted.begin(), sorted.end());
  REQUIRE(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("layer norm output statistics") {
  Rng rng(5);
  Tensor x = Tensor::randn({4, 16}, rng, 1.5);
  Tensor gain({16}, std::vector<double>(16, 1.0));
  Tensor bias({16}, std::vector<double>(16, 0.0));
  Tensor y = layer_norm(x, gain, bias, 1e-6);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 16; ++j) m += y.values()[r * 16 + j];
    m /= 16.0;
    for (std::size_t j = 0; j < 16; ++j) {
      double dlt = y.values()[r * 16 + j] - m;
      var += dlt * dlt;
    }
    var /= 16.0;
    REQUIRE_THAT(m, Catch::Matchers::WithinAbs(0.0, 1e-6));
    REQUIRE_THAT(var, Catch::Matchers::WithinAbs(1.0, 1e-4));
  }
}

TEST_CASE("masked fill zeroes attention to padded keys exactly") {
  Tensor logits({2, 3}, {1.0, 2.0, 3.0, 0.5, 0.25, -1.0});
  std::vector<int> mask{1, 1, 0, 1, 0, 1};
  Tensor filled = masked_fill_lastdim(logits, mask, kMaskFill);
  Tensor w = softmax(filled, 1);
  REQUIRE(w.values()[2] == 0.0);
  REQUIRE(w.values()[4] == 0.0);
  double s0 = w.values()[0] + w.values()[1];
  REQUIRE_THAT(s0, Catch::Matchers::WithinAbs(1.0, 1e-12));
}

TEST_CASE("causal fill blocks future keys") {
  Tensor scores({1, 3, 3}, std::vector<double>(9, 1.0));
  Tensor filled = causal_fill(scores, kMaskFill);
  Tensor w = softmax(filled, 2);
  REQUIRE(w.values()[0 * 3 + 0] == 1.0);
  REQUIRE(w.values()[0 * 3 + 1] == 0.0);
  REQUIRE(w.values()[1 * 3 + 2] == 0.0);
  REQUIRE_THAT(w.values()[1 * 3 + 0], Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("masked cross entropy matches hand computation") {
  // logits row [0, ln3]: p(target=1) = 0.75, nll = -ln 0.75
  Tensor logits({1, 2, 2}, {0.0, std::log(3.0), 5.0, 5.0});
  std::vector<int> targets{1, 0};
  std::vector<int> mask{1, 0};
  Tensor loss = masked_cross_entropy(logits, targets, mask);
  REQUIRE_THAT(loss.item(), Catch::Matchers::WithinAbs(-std::log(0.75), 1e-12));
  REQUIRE_THROWS_AS(masked_cross_entropy(logits, targets, std::vector<int>{0, 0}), ContractError);
}

TEST_CASE("cosine similarity basics") {
  Tensor a({2}, {1.0, 0.0});
  Tensor b({2}, {0.0, 1.0});
  REQUIRE_THAT(cosine_similarity(a, b).item(), Catch::Matchers::WithinAbs(0.0, 1e-15));
  REQUIRE_THAT(cosine_similarity(a, a).item(), Catch::Matchers::WithinAbs(1.0, 1e-15));
  Tensor c({2}, {-2.0, 0.0});
  REQUIRE_THAT(cosine_similarity(a, c).item(), Catch::Matchers::WithinAbs(-1.0, 1e-15));
  Tensor z({2}, {0.0, 0.0});
  REQUIRE(cosine_similarity(a, z).item() == 0.0);
}

TEST_CASE("gather rows and range check") {
  Tensor table({3, 2}, {0, 1, 10, 11, 20, 21});
  Tensor out = gather_rows(table, {2, 0, 1, 1}, 2, 2);
  REQUIRE(out.shape() == Shape{2, 2, 2});
  REQUIRE(out.values()[0] == 20.0);
  REQUIRE(out.values()[2] == 0.0);
  REQUIRE_THROWS_AS(gather_rows(table, {3, 0, 0, 0}, 2, 2), ContractError);
}

TEST_CASE("slice and concat round trip") {
  Rng rng(9);
  Tensor x = Tensor::randn({2, 5, 3}, rng);
  Tensor left = slice(x, 1, 0, 2);
  Tensor right = slice(x, 1, 2, 3);
  Tensor back = concat({left, right}, 1);
  REQUIRE(back.values() == x.values());
  REQUIRE_THROWS_AS(slice(x, 1, 4, 3), DimensionError);
}

TEST_CASE("transpose involution") {
  Rng rng(13);
  Tensor x = Tensor::randn({2, 3, 4, 5}, rng);
  Tensor t = transpose(x, 1, 2);
  REQUIRE(t.shape() == Shape{2, 4, 3, 5});
  Tensor back = transpose(t, 1, 2);
  REQUIRE(back.values() == x.values());
  REQUIRE(t.at({1, 2, 1, 3}) == x.at({1, 1, 2, 3}));
}

// ---------------------------------------------------------------------------
// finite-difference property checks, one per differentiable op

namespace {

double fd_scalar(const std::function<Tensor(const Tensor&)>& f, Tensor x) {
  return finite_difference_check(f, std::move(x), 1e-5, 1e-4).max_rel_error;
}

}  // namespace

TEST_CASE("gradients match finite differences") {
  Rng rng(42);

  SECTION("add, sub, mul chain") {
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor other = Tensor::randn({3, 4}, rng);
    auto f = [&](const Tensor& t) { return sum(mul(add(t, other), sub(t, other))); };
    REQUIRE(fd_scalar(f, x) < 1e-4);
  }
  SECTION("matmul both sides") {
    Tensor a = Tensor::randn({4, 3}, rng);
    Tensor b = Tensor::randn({3, 5}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(matmul(t, b)); }, a) < 1e-4);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(matmul(a, t), matmul(a, t))); }, b) <
            1e-4);
  }
  SECTION("matmul batched") {
    Tensor a = Tensor::randn({2, 3, 4}, rng);
    Tensor b = Tensor::randn({2, 4, 2}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(matmul(t, b), matmul(t, b))); }, a) <
            1e-4);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(matmul(a, t), matmul(a, t))); }, b) <
            1e-4);
  }
  SECTION("softmax") {
    Tensor x = Tensor::randn({2, 6}, rng);
    Tensor w = Tensor::randn({2, 6}, rng);
    auto f = [&](const Tensor& t) { return sum(mul(softmax(t, 1), w)); };
    REQUIRE(fd_scalar(f, x) < 1e-4);
  }
  SECTION("layer norm") {
    Tensor x = Tensor::randn({3, 8}, rng);
    Tensor gain = Tensor::randn({8}, rng, 0.5);
    Tensor bias = Tensor::randn({8}, rng, 0.5);
    Tensor w = Tensor::randn({3, 8}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(layer_norm(t, gain, bias), w)); }, x) <
            1e-4);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(layer_norm(x, t, bias), w)); }, gain) <
            1e-4);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(layer_norm(x, gain, t), w)); }, bias) <
            1e-4);
  }
  SECTION("activations, points kept away from kinks") {
    std::vector<double> vals{-2.0, -0.9, -0.4, 0.3, 0.8, 1.7, 2.5, -1.3};
    Tensor x({8}, vals);
    REQUIRE(fd_scalar([](const Tensor& t) { return sum(mul(relu(t), relu(t))); }, x) < 1e-4);
    REQUIRE(fd_scalar([](const Tensor& t) { return sum(sigmoid(t)); }, x) < 1e-4);
    REQUIRE(fd_scalar([](const Tensor& t) { return sum(tanh_act(t)); }, x) < 1e-4);
    REQUIRE(fd_scalar([](const Tensor& t) { return sum(gelu(t)); }, x) < 1e-4);
    REQUIRE(fd_scalar([](const Tensor& t) { return sum(abs_t(t)); }, x) < 1e-4);
    REQUIRE(fd_scalar([](const Tensor& t) { return sum(clamp(t, -1.0, 1.0)); }, x) < 1e-4);
  }
  SECTION("mean and scale") {
    Tensor x = Tensor::randn({7}, rng);
    REQUIRE(fd_scalar([](const Tensor& t) { return mean(mul(t, t)); }, x) < 1e-4);
    Tensor s = Tensor::scalar(0.37);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(scale_by(t, s), scale_by(t, s))); },
                      x) < 1e-4);
    Tensor big = Tensor::randn({5}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(scale_by(big, t), scale_by(big, t))); },
                      s) < 1e-4);
  }
  SECTION("bias adds") {
    Tensor x = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(add_bias(x, t), add_bias(x, t))); },
                      b) < 1e-4);
    Tensor h = Tensor::randn({2, 3, 4}, rng);
    Tensor p = Tensor::randn({3, 4}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(add_seq_bias(h, t), add_seq_bias(h, t))); },
                      p) < 1e-4);
    Tensor s = Tensor::scalar(0.2);
    REQUIRE(fd_scalar(
                [&](const Tensor& t) { return sum(mul(add_scalar_tensor(x, t), add_scalar_tensor(x, t))); },
                s) < 1e-4);
  }
  SECTION("rowwise scale") {
    Tensor h = Tensor::randn({2, 3, 4}, rng);
    Tensor s = Tensor::randn({2, 4}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(rowwise_scale(t, s), rowwise_scale(t, s))); },
                      h) < 1e-4);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(rowwise_scale(h, t), rowwise_scale(h, t))); },
                      s) < 1e-4);
  }
  SECTION("shape ops") {
    Tensor x = Tensor::randn({2, 3, 4}, rng);
    Tensor w = Tensor::randn({2, 4, 3}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(transpose(t, 1, 2), w)); }, x) < 1e-4);
    Tensor w2 = Tensor::randn({24}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(reshape(t, {24}), w2)); }, x) < 1e-4);
    Tensor w3 = Tensor::randn({2, 2, 4}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(slice(t, 1, 1, 2), w3)); }, x) < 1e-4);
    Tensor other = Tensor::randn({2, 3, 4}, rng);
    Tensor w4 = Tensor::randn({2, 6, 4}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return sum(mul(concat({t, other}, 1), w4)); }, x) <
            1e-4);
  }
  SECTION("gather rows") {
    Tensor table = Tensor::randn({5, 3}, rng);
    std::vector<int> ids{0, 2, 4, 2};
    auto f = [&](const Tensor& t) {
      Tensor g = gather_rows(t, ids, 2, 2);
      return sum(mul(g, g));
    };
    REQUIRE(fd_scalar(f, table) < 1e-4);
  }
  SECTION("masked cross entropy") {
    Tensor logits = Tensor::randn({2, 3, 5}, rng);
    std::vector<int> targets{1, 4, 0, 2, 2, 3};
    std::vector<int> mask{1, 1, 0, 1, 0, 1};
    auto f = [&](const Tensor& t) { return masked_cross_entropy(t, targets, mask); };
    REQUIRE(fd_scalar(f, logits) < 1e-4);
  }
  SECTION("cosine similarity") {
    Tensor a = Tensor::randn({6}, rng);
    Tensor b = Tensor::randn({6}, rng);
    REQUIRE(fd_scalar([&](const Tensor& t) { return cosine_similarity(t, b); }, a) < 1e-4);
    REQUIRE(fd_scalar([&](const Tensor& t) { return abs_t(cosine_similarity(a, t)); }, b) < 1e-4);
  }
  SECTION("masked and causal fill") {
    Tensor x = Tensor::randn({2, 2, 3}, rng);
    std::vector<int> mask{1, 1, 0, 1, 0, 1};
    Tensor w = Tensor::randn({2, 2, 3}, rng);
    auto f = [&](const Tensor& t) {
      return sum(mul(softmax(masked_fill_lastdim(t, mask, kMaskFill), 2), w));
    };
    REQUIRE(fd_scalar(f, x) < 1e-4);
    Tensor y = Tensor::randn({2, 3, 3}, rng);
    Tensor w2 = Tensor::randn({2, 3, 3}, rng);
    auto g = [&](const Tensor& t) {
      return sum(mul(softmax(causal_fill(t, kMaskFill), 2), w2));
    };
    REQUIRE(fd_scalar(g, y) < 1e-4);
  }
}
