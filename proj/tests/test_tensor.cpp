#include "oracles.hpp"

#include "raad/checkpoint.hpp"
#include "raad/errors.hpp"
#include "raad/ops.hpp"
#include "raad/optim.hpp"

#include <doctest.h>

#include <filesystem>

using namespace raad;

namespace {

void check_values(const Tensor& t, std::initializer_list<double> want, double tol = 1e-12) {
  REQUIRE(t.numel() == want.size());
  std::size_t i = 0;
  for (double w : want) CHECK(t[i++] == doctest::Approx(w).epsilon(tol));
}

}  // namespace

TEST_CASE("tensor construction checks sizes") {
  CHECK_THROWS_AS(Tensor(Shape{2, 2}, Buffer::Zero(3)), DimensionError);
  Tensor t(Shape{2, 3}, 1.5);
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[5] == 1.5);
  CHECK_THROWS_AS(t.item(), ContractError);
  CHECK_THROWS_AS(t.grad(), ContractError);
}

TEST_CASE("tensor handles alias, clone copies") {
  Tensor a(Shape{2}, {1.0, 2.0});
  Tensor b = a;
  Tensor c = a.clone();
  b[0] = 7.0;
  CHECK(a[0] == 7.0);
  CHECK(c[0] == 1.0);
  CHECK(a.same_node(b));
  CHECK_FALSE(a.same_node(c));
}

TEST_CASE("conv2d hand values") {
  SUBCASE("sum of ones") {
    const Tensor y = conv2d(Tensor(Shape{1, 1, 3, 3}, 1.0), Tensor(Shape{1, 1, 3, 3}, 1.0), Tensor(Shape{1}, 0.0), 1, 0);
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    check_values(y, {9.0});
  }
  SUBCASE("1x1 kernel with bias") {
    const Tensor y = conv2d(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), Tensor(Shape{1, 1, 1, 1}, {2}),
                            Tensor(Shape{1}, {1}), 1, 0);
    check_values(y, {3, 5, 7, 9});
  }
  SUBCASE("identity kernel") {
    Rng rng(3);
    const Tensor x = oracle::random_tensor({2, 1, 4, 5}, rng);
    const Tensor y = conv2d(x, Tensor(Shape{1, 1, 1, 1}, {1}), Tensor(Shape{1}, {0}), 1, 0);
    CHECK(y.shape() == x.shape());
    CHECK((y.data() - x.data()).norm() == 0.0);
  }
}

TEST_CASE("conv2d matches a direct loop over stride and padding") {
  Rng rng(11);
  for (std::size_t stride : {1u, 2u, 3u})
    for (std::size_t pad : {0u, 1u, 2u}) {
      const Tensor x = oracle::random_tensor({2, 3, 7, 6}, rng);
      const Tensor w = oracle::random_tensor({4, 3, 3, 2}, rng);
      const Tensor b = oracle::random_tensor({4}, rng);
      const Tensor got = conv2d(x, w, b, stride, pad);
      const Tensor want = oracle::conv2d(x, w, b, stride, pad);
      REQUIRE(got.shape() == want.shape());
      CHECK((got.data() - want.data()).lpNorm<Eigen::Infinity>() < 1e-12);
    }
}

TEST_CASE("conv2d errors name the axis") {
  const Tensor x(Shape{1, 2, 4, 4});
  try {
    conv2d(x, Tensor(Shape{1, 3, 3, 3}), Tensor(Shape{1}), 1, 0);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("channel") != std::string::npos);
  }
  CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 2, 5, 5}), Tensor(Shape{1}), 1, 0), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 2, 3, 3}), Tensor(Shape{2}), 1, 0), DimensionError);
  CHECK_THROWS_AS(conv2d(x, Tensor(Shape{1, 2, 3, 3}), Tensor(Shape{1}), 0, 0), ParameterError);
}

TEST_CASE("conv2d is linear in input and weight") {
  Rng rng(5);
  const Tensor x = oracle::random_tensor({1, 2, 5, 5}, rng);
  const Tensor w = oracle::random_tensor({3, 2, 3, 3}, rng);
  const Tensor zero(Shape{3});
  const Tensor base = conv2d(x, w, zero, 1, 1);
  CHECK((conv2d(scale(x, 2.5), w, zero, 1, 1).data() - 2.5 * base.data()).norm() < 1e-12);
  CHECK((conv2d(x, scale(w, -3.0), zero, 1, 1).data() + 3.0 * base.data()).norm() < 1e-12);
}

TEST_CASE("avg_pool2d") {
  check_values(avg_pool2d(Tensor(Shape{1, 1, 2, 2}, {1, 2, 3, 4}), 2, 2), {2.5});
  const Tensor c = avg_pool2d(Tensor(Shape{1, 2, 6, 4}, 0.75), 2, 2);
  CHECK(c.shape() == Shape{1, 2, 3, 2});
  CHECK(c.data().isConstant(0.75));
  Rng rng(1);
  const Tensor x = oracle::random_tensor({1, 1, 3, 4}, rng);
  CHECK((avg_pool2d(x, 1, 1).data() - x.data()).norm() == 0.0);
  CHECK_THROWS_AS(avg_pool2d(x, 0, 1), ParameterError);
  CHECK_THROWS_AS(avg_pool2d(x, 2, 0), ParameterError);
  CHECK_THROWS_AS(avg_pool2d(x, 5, 1), DimensionError);
}

TEST_CASE("relu") {
  check_values(relu(Tensor(Shape{3}, {-1, 0, 2})), {0, 0, 2});
  CHECK(relu(Tensor(Shape{4}, -0.5)).data().isZero());
  Tensor x = Tensor(Shape{2}, {-1, 2}).set_requires_grad(true);
  Tape tape;
  {
    Tape::Recording rec(tape);
    backward(sum(relu(x)), tape);
  }
  check_values(Tensor(Shape{2}, x.grad()), {0, 1});
  Tensor z = Tensor(Shape{1}, {0.0}).set_requires_grad(true);
  Tape t2;
  {
    Tape::Recording rec(t2);
    backward(sum(relu(z)), t2);
  }
  CHECK(z.grad()[0] == 0.0);
}

TEST_CASE("bilinear_resize") {
  Rng rng(2);
  const Tensor x = oracle::random_tensor({1, 2, 3, 5}, rng);
  CHECK((bilinear_resize(x, 3, 5).data() - x.data()).norm() == 0.0);

  const Tensor y = bilinear_resize(Tensor(Shape{1, 1, 2, 2}, {0, 1, 2, 3}), 3, 3);
  check_values(y, {0, 0.5, 1, 1, 1.5, 2, 2, 2.5, 3});

  const Tensor c = bilinear_resize(Tensor(Shape{1, 3, 4, 4}, 0.3), 17, 9);
  CHECK(c.shape() == Shape{1, 3, 17, 9});
  CHECK((c.data().array() == 0.3).all());

  const Tensor big = bilinear_resize(x, 11, 7);
  const std::size_t hw = 11 * 7;
  CHECK(big[0] == x[0]);
  CHECK(big[6] == x[4]);
  CHECK(big[hw - 7] == x[10]);
  CHECK(big[hw - 1] == x[14]);
  CHECK_THROWS_AS(bilinear_resize(x, 0, 3), ParameterError);
}

TEST_CASE("mse_mean") {
  const Tensor a(Shape{2}, {1, 3}), b(Shape{2}, {0, 1});
  CHECK(mse_mean(a, a).item() == 0.0);
  CHECK(mse_mean(a, b).item() == 2.5);
  Tensor leaf = a.detach().set_requires_grad(true);
  Tape tape;
  {
    Tape::Recording rec(tape);
    backward(mse_mean(leaf, b), tape);
  }
  check_values(Tensor(Shape{2}, leaf.grad()), {1, 2});
  CHECK_THROWS_AS(mse_mean(a, Tensor(Shape{3})), DimensionError);
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    Tensor x = Tensor(Shape{2, 3, 2}, 0.4).set_requires_grad(true);
    Tape tape;
    {
      Tape::Recording rec(tape);
      backward(sum(x), tape);
    }
    CHECK(x.grad().isOnes());
  }
  SUBCASE("conv loss matches finite differences") {
    Rng rng(17);
    const std::vector<Tensor> in{oracle::random_tensor({1, 2, 5, 5}, rng), oracle::random_tensor({3, 2, 3, 3}, rng),
                                 oracle::random_tensor({3}, rng)};
    const Tensor target = oracle::random_tensor({1, 3, 5, 5}, rng);
    const double err = oracle::gradient_error(
        [&](const std::vector<Tensor>& v) { return mse_mean(conv2d(v[0], v[1], v[2], 1, 1), target); }, in);
    CHECK(err <= 1e-4);
  }
  SUBCASE("detached tensors get no grad") {
    Tensor x = Tensor(Shape{2}, {1, 2}).set_requires_grad(true);
    const Tensor c = x.detach();
    Tape tape;
    {
      Tape::Recording rec(tape);
      backward(sum(mul(x, c)), tape);
    }
    CHECK(x.has_grad());
    CHECK_FALSE(c.has_grad());
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor x = Tensor(Shape{2}, {1, 2}).set_requires_grad(true);
    Tape tape;
    Tape::Recording rec(tape);
    const Tensor y = square(x);
    CHECK_THROWS_AS(backward(y, tape), ContractError);
  }
  SUBCASE("repeated backward accumulates") {
    Tensor x = Tensor(Shape{3}, {1, 2, 3}).set_requires_grad(true);
    Tape tape;
    Tape::Recording rec(tape);
    const Tensor l = sum(square(x));
    backward(l, tape);
    backward(l, tape);
    CHECK((x.grad() - 4.0 * x.data()).norm() < 1e-12);
  }
  SUBCASE("no recording outside a tape") {
    Tensor x = Tensor(Shape{2}, 1.0).set_requires_grad(true);
    const Tensor y = square(x);
    CHECK_FALSE(y.requires_grad());
  }
}

TEST_CASE("tape linearity: grad of a sum of losses is the sum of grads") {
  Rng rng(8);
  const Tensor x0 = oracle::random_tensor({1, 2, 4, 4}, rng);
  const Tensor w = oracle::random_tensor({2, 2, 3, 3}, rng);
  const Tensor b(Shape{2});
  auto grad_of = [&](int which) {
    Tensor x = x0.detach().set_requires_grad(true);
    Tape tape;
    Tape::Recording rec(tape);
    const Tensor y = conv2d(x, w, b, 1, 1);
    const Tensor l1 = mean(square(y));
    const Tensor l2 = sum(relu(y));
    backward(which == 0 ? l1 : which == 1 ? l2 : add(l1, l2), tape);
    return Buffer(x.grad());
  };
  CHECK((grad_of(2) - grad_of(0) - grad_of(1)).norm() < 1e-12);
}

TEST_CASE("finite-difference checks of every differentiable op") {
  Rng rng(2024);
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t n = 1 + rng.below(2), c = 1 + rng.below(3), h = 3 + rng.below(4), w = 3 + rng.below(4);
    const Shape s{n, c, h, w};
    const Tensor a = oracle::random_tensor(s, rng), b = oracle::random_tensor(s, rng);
    CHECK(oracle::gradient_error([](const std::vector<Tensor>& v) { return sum(mul(add(v[0], v[1]), sub(v[0], v[1]))); }, {a, b}) <= 1e-4);
    CHECK(oracle::gradient_error([](const std::vector<Tensor>& v) { return mean(square(scale(v[0], 1.7))); }, {a}) <= 1e-4);
    CHECK(oracle::gradient_error([&](const std::vector<Tensor>& v) { return mse_mean(v[0], v[1]); }, {a, b}) <= 1e-4);
    CHECK(oracle::gradient_error([](const std::vector<Tensor>& v) { return sum(square(relu(v[0]))); },
                                 {oracle::random_away_from_zero(s, rng)}) <= 1e-4);
    CHECK(oracle::gradient_error([](const std::vector<Tensor>& v) { return sum(square(avg_pool2d(v[0], 2, 1))); }, {a}) <= 1e-4);
    CHECK(oracle::gradient_error([&](const std::vector<Tensor>& v) { return sum(square(bilinear_resize(v[0], h + 3, w - 1))); }, {a}) <= 1e-4);
    CHECK(oracle::gradient_error([&](const std::vector<Tensor>& v) { return sum(square(slice_channels(v[0], 0, c))); }, {a}) <= 1e-4);
    CHECK(oracle::gradient_error([&](const std::vector<Tensor>& v) { return sum(square(batch_item(concat_batch({v[0], v[1]}), n))); }, {a, b}) <= 1e-4);
    const std::size_t co = 1 + rng.below(3), k = 1 + rng.below(3), stride = 1 + rng.below(2), pad = rng.below(2);
    const Tensor wt = oracle::random_tensor({co, c, k, k}, rng), bias = oracle::random_tensor({co}, rng);
    CHECK(oracle::gradient_error([&](const std::vector<Tensor>& v) { return sum(square(conv2d(v[0], v[1], v[2], stride, pad))); },
                                 {a, wt, bias}) <= 1e-4);
    // distinct values keep the selection stable under the perturbation
    Tensor spread(s);
    for (std::size_t i = 0; i < spread.numel(); ++i) spread[i] = 0.01 * static_cast<double>((i * 7919) % spread.numel()) + 0.001 * rng.uniform();
    CHECK(oracle::gradient_error([](const std::vector<Tensor>& v) { return top_k_mean(square(v[0]), 0.3); }, {spread}) <= 1e-4);
  }
}

TEST_CASE("top_k selection") {
  CHECK(top_k_count(10, 0.1) == 1);
  CHECK(top_k_count(11, 0.1) == 2);
  CHECK(top_k_count(100, 0.1) == 10);
  CHECK(top_k_count(3, 1.0) == 3);
  CHECK_THROWS_AS(top_k_count(3, 0.0), ParameterError);
  CHECK_THROWS_AS(top_k_count(3, 1.5), ParameterError);
  Buffer v(5);
  v << 1, 3, 3, 0, 3;
  CHECK(top_k_indices(v, 2) == std::vector<std::size_t>{1, 2});
}

TEST_CASE("adam") {
  SUBCASE("zero gradient leaves parameters") {
    ParameterSet p{{"w", Tensor(Shape{2}, {1, -1}).set_requires_grad(true)}};
    AdamState st(p, AdamConfig{1e-3});
    p[0].second.accumulate_grad(Buffer::Zero(2));
    adam_step(p, st);
    check_values(p[0].second, {1, -1});
    CHECK(st.step == 1);
    CHECK_FALSE(p[0].second.has_grad());
  }
  SUBCASE("first step moves by lr") {
    ParameterSet p{{"w", Tensor(Shape{1}, {0.5}).set_requires_grad(true)}};
    AdamState st(p, AdamConfig{1e-3});
    p[0].second.accumulate_grad(Buffer::Ones(1));
    adam_step(p, st);
    CHECK(p[0].second[0] == doctest::Approx(0.5 - 1e-3).epsilon(1e-6));
  }
  SUBCASE("constant gradient gives monotone descent") {
    ParameterSet p{{"w", Tensor(Shape{1}, {0.0}).set_requires_grad(true)}};
    AdamState st(p, AdamConfig{1e-2});
    std::vector<double> trace{0.0};
    for (int i = 0; i < 3; ++i) {
      p[0].second.accumulate_grad(Buffer::Constant(1, -2.0));
      adam_step(p, st);
      trace.push_back(p[0].second[0]);
    }
    CHECK(std::is_sorted(trace.begin(), trace.end()));
    CHECK(trace.back() > trace.front());
    CHECK(st.step == 3);
  }
  SUBCASE("missing gradient is a contract error") {
    ParameterSet p{{"w", Tensor(Shape{1}, {0.0}).set_requires_grad(true)}};
    AdamState st(p, AdamConfig{});
    CHECK_THROWS_AS(adam_step(p, st), ContractError);
  }
  SUBCASE("frozen parameters are skipped") {
    ParameterSet p{{"w", Tensor(Shape{1}, {0.25})}};
    AdamState st(p, AdamConfig{});
    adam_step(p, st);
    CHECK(p[0].second[0] == 0.25);
  }
}

TEST_CASE("non-finite values are rejected") {
  Tensor x = Tensor(Shape{2}, {1.0, 1e300}).set_requires_grad(true);
  Tape tape;
  Tape::Recording rec(tape);
  const Tensor l = sum(square(square(x)));
  CHECK_THROWS_AS(backward(l, tape), NumericError);
  CHECK_THROWS_AS(check_finite(Tensor(Shape{1}, {NAN}), "test"), NumericError);
}

TEST_CASE("checkpoint round trip and parse errors") {
  Checkpoint c;
  c.put("a/w", Tensor(Shape{2, 3}, {1, 2, 3, 4, 5, -6.5}));
  c.put("b", Tensor(Shape{1}, {0.125}));
  const std::string bytes = encode_checkpoint(c);
  CHECK(bytes.substr(0, 8) == "RAADCKPT");
  const Checkpoint d = decode_checkpoint(bytes);
  REQUIRE(d.tensors.size() == 2);
  CHECK(d.get("a/w").shape() == Shape{2, 3});
  CHECK((d.get("a/w").data() - c.get("a/w").data()).norm() == 0.0);
  CHECK(encode_checkpoint(d) == bytes);

  CHECK_THROWS_AS(decode_checkpoint("NOTACKPT"), ParseError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
  CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), ParseError);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), ParseError);

  const auto path = std::filesystem::temp_directory_path() / "raad_test_ckpt.bin";
  save_checkpoint(path, c);
  CHECK(encode_checkpoint(load_checkpoint(path)) == bytes);
  std::filesystem::remove(path);
}
