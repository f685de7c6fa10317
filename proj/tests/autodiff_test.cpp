#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "flowhijack/autodiff.hpp"
#include "flowhijack/checkpoint.hpp"
#include "flowhijack/optim.hpp"
#include "flowhijack/rng.hpp"
#include "support/random_graphs.hpp"

using namespace flowhijack;

TEST_CASE("forward values for elementary graphs") {
  SECTION("tanh at origin") {
    Graph g;
    NodeId x = g.input(Tensor::scalar(0.0));
    NodeId y = g.tanh(x);
    REQUIRE(g.value(y).v[0] == 0.0);
  }
  SECTION("l2norm of a 3-4 vector") {
    Graph g;
    NodeId x = g.input(Tensor::vec({3.0, 4.0}));
    NodeId y = g.l2norm(x);
    REQUIRE(g.value(y).v[0] == Catch::Approx(5.0));
  }
  SECTION("detach is identity in the forward pass") {
    Graph g;
    NodeId x = g.param(Tensor::scalar(2.0), "x");
    NodeId y = g.mul(g.detach(x), x);
    REQUIRE(g.value(y).v[0] == Catch::Approx(4.0));
  }
  SECTION("matmul rank combinations") {
    Graph g;
    NodeId m = g.input(Tensor({2, 2}, {1, 2, 3, 4}));
    NodeId v = g.input(Tensor::vec({1.0, 1.0}));
    REQUIRE(g.value(g.matmul(m, v)).v == std::vector<double>{3.0, 7.0});
    REQUIRE(g.value(g.matmul(v, m)).v == std::vector<double>{4.0, 6.0});
    NodeId mm = g.matmul(m, m);
    REQUIRE(g.value(mm).v == std::vector<double>{7.0, 10.0, 15.0, 22.0});
  }
}

TEST_CASE("shape mismatches name the node and shapes") {
  Graph g;
  NodeId a = g.input(Tensor::vec({1.0, 2.0}));
  NodeId b = g.input(Tensor::vec({1.0, 2.0, 3.0}));
  REQUIRE_THROWS_WITH(g.add(a, b),
                      Catch::Matchers::ContainsSubstring("add") &&
                          Catch::Matchers::ContainsSubstring("[2]") &&
                          Catch::Matchers::ContainsSubstring("[3]"));
  REQUIRE_THROWS_AS(g.matmul(a, b), GraphError);
}

TEST_CASE("backward on hand-derived cases") {
  SECTION("d/dx of x^2 at x=3 is 6") {
    Graph g;
    NodeId x = g.param(Tensor::scalar(3.0), "x");
    NodeId y = g.mul(x, x);
    g.backward(y);
    REQUIRE(g.grad(x).v[0] == Catch::Approx(6.0));
  }
  SECTION("stop-gradient: d/dx detach(x)*x at x=2 is 2") {
    Graph g;
    NodeId x = g.param(Tensor::scalar(2.0), "x");
    NodeId y = g.mul(g.detach(x), x);
    g.backward(y);
    REQUIRE(g.grad(x).v[0] == Catch::Approx(2.0));
  }
  SECTION("gradient of l2norm([3,4]) is x/|x|") {
    Graph g;
    NodeId x = g.param(Tensor::vec({3.0, 4.0}), "x");
    NodeId y = g.l2norm(x);
    g.backward(y);
    REQUIRE(g.grad(x).v[0] == Catch::Approx(0.6));
    REQUIRE(g.grad(x).v[1] == Catch::Approx(0.8));
  }
  SECTION("backward rejects non-scalar outputs") {
    Graph g;
    NodeId x = g.param(Tensor::vec({1.0, 2.0}), "x");
    REQUIRE_THROWS_AS(g.backward(x), GraphError);
  }
  SECTION("detached subgraph gradient is exactly the zero tensor") {
    Graph g;
    NodeId x = g.param(Tensor::vec({0.3, -0.7}), "x");
    NodeId y = g.sum(g.detach(g.tanh(x)));
    g.backward(y);
    // x is reached by nothing outside the detach, so its grad stays empty
    REQUIRE(g.grad(x).numel() == 0);

    Graph g2;
    NodeId a = g2.param(Tensor::vec({0.3, -0.7}), "a");
    NodeId out = g2.add(g2.sum(g2.detach(g2.tanh(a))), g2.scale(g2.sum(a), 0.0));
    g2.backward(out);
    REQUIRE(g2.grad(a).v == std::vector<double>{0.0, 0.0});
  }
}

TEST_CASE("chain rule matches a hand-derived two-layer closed form") {
  // f(w1, w2) = w2 * tanh(w1 * x); df/dw1 = w2 * (1 - tanh^2(w1 x)) * x
  const double x = 0.7, w1v = -1.3, w2v = 0.9;
  Graph g;
  NodeId w1 = g.param(Tensor::scalar(w1v), "w1");
  NodeId w2 = g.param(Tensor::scalar(w2v), "w2");
  NodeId xin = g.input(Tensor::scalar(x));
  NodeId h = g.tanh(g.mul(w1, xin));
  NodeId f = g.sum(g.mul(w2, h));
  g.backward(f);
  double th = std::tanh(w1v * x);
  REQUIRE(g.grad(w1).v[0] == Catch::Approx(w2v * (1.0 - th * th) * x));
  REQUIRE(g.grad(w2).v[0] == Catch::Approx(th));
}

TEST_CASE("forward and backward are bit-deterministic") {
  auto run = [](std::uint64_t seed) {
    auto rg = fhtest::make_random_graph(seed);
    rg.graph.forward();
    rg.graph.backward(rg.output);
    std::vector<double> bits;
    bits.push_back(rg.graph.value(rg.output).v[0]);
    for (NodeId p : rg.graph.params())
      for (double v : rg.graph.grad(p).v) bits.push_back(v);
    return bits;
  };
  for (std::uint64_t s : {7ULL, 99ULL, 1234ULL})
    REQUIRE(run(s) == run(s));
}

TEST_CASE("finite differences agree with backward") {
  SECTION("quadratic graph is exact to rounding") {
    Graph g;
    NodeId x = g.param(Tensor::vec({1.5, -2.0, 0.5}), "x");
    NodeId y = g.sqnorm(x);
    REQUIRE(finite_diff_check(g, y, 1e-5) < 1e-6);
  }
  SECTION("tanh mlp with random weights") {
    Rng rng(42);
    Graph g;
    NodeId w1 = g.param(fhtest::random_tensor(rng, {4, 3}), "w1");
    NodeId b1 = g.param(fhtest::random_tensor(rng, {4}), "b1");
    NodeId w2 = g.param(fhtest::random_tensor(rng, {2, 4}), "w2");
    NodeId xin = g.input(fhtest::random_tensor(rng, {3}));
    NodeId h = g.tanh(g.add(g.matmul(w1, xin), b1));
    NodeId out = g.sqnorm(g.matmul(w2, h));
    REQUIRE(finite_diff_check(g, out, 1e-5) < 1e-4);
  }
  SECTION("detach checked against the frozen-constant surrogate") {
    Graph g;
    NodeId x = g.param(Tensor::vec({0.8, -0.4}), "x");
    NodeId n_attack = g.l2norm(g.tanh(x));
    NodeId n_benign = g.detach(g.l2norm(g.tanh(g.scale(x, 0.5))));
    NodeId out = g.sum(g.abs(g.sub(n_attack, n_benign)));
    REQUIRE(finite_diff_check(g, out, 1e-5) < 1e-4);
  }
  SECTION("100 random graphs cover all operation kinds under 1e-4") {
    std::set<Op> covered;
    for (std::uint64_t s = 0; s < 100; ++s) {
      auto rg = fhtest::make_random_graph(1000 + s);
      double err = finite_diff_check(rg.graph, rg.output, 1e-5);
      INFO("seed " << 1000 + s);
      REQUIRE(err < 1e-4);
      covered.insert(rg.ops_used.begin(), rg.ops_used.end());
    }
    REQUIRE(covered.size() == 13);
  }
}

TEST_CASE("adamw update rule") {
  SECTION("zero gradient and zero decay leave parameters unchanged") {
    Tensor p = Tensor::vec({1.0, -2.0});
    Tensor zero = Tensor::zeros({2});
    OptState st = OptState::init({{"p", &p}});
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    adamw_step({{"p", &p}}, {&zero}, st, 0.01, cfg);
    REQUIRE(p.v == std::vector<double>{1.0, -2.0});
    REQUIRE(st.step == 1);
  }
  SECTION("first step follows the published recurrence") {
    // Hand recurrence: m=(1-b1)g, v=(1-b2)g^2, mhat=g, vhat=g^2,
    // update = -lr * g / (|g| + eps).
    const double g0 = 0.5, lr = 0.01, eps = 1e-8;
    Tensor p = Tensor::scalar(1.0);
    Tensor grad = Tensor::scalar(g0);
    OptState st = OptState::init({{"p", &p}});
    AdamWConfig cfg;
    cfg.weight_decay = 0.0;
    cfg.eps = eps;
    adamw_step({{"p", &p}}, {&grad}, st, lr, cfg);
    double expect = 1.0 - lr * (g0 / (std::fabs(g0) + eps));
    REQUIRE(p.v[0] == Catch::Approx(expect).epsilon(1e-12));
  }
  SECTION("decoupled decay shrinks by (1 - lr*wd) under zero gradient") {
    Tensor p = Tensor::scalar(2.0);
    Tensor zero = Tensor::scalar(0.0);
    OptState st = OptState::init({{"p", &p}});
    AdamWConfig cfg;
    cfg.weight_decay = 0.01;
    adamw_step({{"p", &p}}, {&zero}, st, 0.1, cfg);
    REQUIRE(p.v[0] == Catch::Approx(2.0 * (1.0 - 0.1 * 0.01)).epsilon(1e-12));
  }
  SECTION("non-finite gradient raises with the tensor name") {
    Tensor p = Tensor::scalar(1.0);
    Tensor bad = Tensor::scalar(std::nan(""));
    OptState st = OptState::init({{"enc.w1", &p}});
    REQUIRE_THROWS_WITH(adamw_step({{"enc.w1", &p}}, {&bad}, st, 0.01),
                        Catch::Matchers::ContainsSubstring("enc.w1"));
  }
}

TEST_CASE("cosine schedule endpoints") {
  REQUIRE(cosine_lr(1e-3, 0, 1000) == Catch::Approx(1e-3));
  REQUIRE(cosine_lr(1e-3, 500, 1000) == Catch::Approx(5e-4));
  REQUIRE(cosine_lr(1e-3, 1000, 1000) == Catch::Approx(0.0).margin(1e-18));
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  namespace fs = std::filesystem;
  Rng rng(777);
  NamedTensors ts;
  ts.emplace_back("enc.w1", fhtest::random_tensor(rng, {5, 3}, -10.0, 10.0));
  ts.emplace_back("enc.b1", fhtest::random_tensor(rng, {5}, -1e-12, 1e-12));
  ts.emplace_back("head.w", fhtest::random_tensor(rng, {2, 2, 3}, -1e9, 1e9));
  fs::path dir = fs::temp_directory_path() / "fh_ckpt_test";
  fs::create_directories(dir);
  std::string p1 = (dir / "a.ckpt").string();
  std::string p2 = (dir / "b.ckpt").string();
  save_checkpoint(p1, ts);
  NamedTensors back = load_checkpoint(p1);
  REQUIRE(back.size() == ts.size());
  for (std::size_t i = 0; i < ts.size(); ++i) {
    REQUIRE(back[i].first == ts[i].first);
    REQUIRE(back[i].second == ts[i].second);
  }
  save_checkpoint(p2, back);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), {});
  std::string s2((std::istreambuf_iterator<char>(f2)), {});
  REQUIRE(s1 == s2);
  REQUIRE(s1.substr(0, 8) == "FHCK0001");
}

TEST_CASE("beta sampler statistics") {
  Rng rng(2024);
  auto mean_of = [&](double a, double b) {
    double s = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) s += rng.beta(a, b);
    return s / n;
  };
  REQUIRE(mean_of(1.0, 1.0) == Catch::Approx(0.5).margin(0.01));
  REQUIRE(mean_of(1.0, 1.5) == Catch::Approx(0.4).margin(0.01));
  Rng r1(9), r2(9);
  for (int i = 0; i < 50; ++i) REQUIRE(r1.beta(1.0, 1.5) == r2.beta(1.0, 1.5));
}
