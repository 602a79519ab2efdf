#include "oracles.hpp"

#include "raad/errors.hpp"
#include "raad/ops.hpp"
#include "raad/train.hpp"

#include <doctest.h>

using namespace raad;

namespace {

ModelGeometry small_geometry() {
  ModelGeometry g;
  g.image_size = 32;
  g.teacher_channels = 4;
  g.hidden_channels = 8;
  g.latent = 4;
  return g;
}

std::vector<Tensor> images(std::size_t n, std::uint64_t seed, std::size_t size = 32) {
  Rng rng(seed);
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(oracle::random_tensor({3, size, size}, rng, 0.0, 1.0));
  return out;
}

struct Trio {
  Network teacher, student, ae;
};

Trio trio(std::uint64_t seed) {
  const auto g = small_geometry();
  Trio t{build_pdn(g.teacher_channels, 1, g, seed), build_pdn(g.teacher_channels, 2, g, seed + 1),
         build_autoencoder(g.latent, g.teacher_channels, g, seed + 2)};
  t.teacher.set_frozen(true);
  return t;
}

bool same(const Network& a, const Network& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i)
    if ((a.parameters()[i].second.data() - b.parameters()[i].second.data()).norm() != 0.0) return false;
  return true;
}

}  // namespace

TEST_CASE("pair_loss") {
  const Tensor a(Shape{1, 1, 2}, {1, 3}), b(Shape{1, 1, 2}, {0, 1});
  CHECK(pair_loss(a, b).item() == 2.5);
  CHECK(pair_loss(a, a).item() == 0.0);
  Rng rng(4);
  const Tensor x = oracle::random_tensor({2, 3, 4}, rng), y = oracle::random_tensor({2, 3, 4}, rng);
  CHECK(pair_loss(scale(x, 3.0), scale(y, 3.0)).item() == doctest::Approx(9.0 * pair_loss(x, y).item()).epsilon(1e-12));
  CHECK_THROWS_AS(pair_loss(x, Tensor(Shape{2, 3, 5})), DimensionError);
}

TEST_CASE("diff_cube") {
  const Tensor a(Shape{1, 1, 2}, {1, 2}), b(Shape{1, 1, 2}, {0, 4});
  CHECK(diff_cube(a, a).values.data().isZero());
  const DiffCube d = diff_cube(a, b);
  CHECK(d.values[0] == 1.0);
  CHECK(d.values[1] == 4.0);
  CHECK((diff_cube(b, a).values.data() - d.values.data()).norm() == 0.0);
  CHECK_THROWS_AS(diff_cube(a, Tensor(Shape{1, 2, 1})), DimensionError);
}

TEST_CASE("hard_mined_loss") {
  Tensor ten(Shape{1, 2, 5});
  for (std::size_t i = 0; i < 10; ++i) ten[i] = static_cast<double>(i + 1);
  CHECK(hard_mined_loss({ten}, 0.1).item() == 10.0);
  CHECK(hard_mined_loss({ten}, 1.0).item() == doctest::Approx(5.5).epsilon(1e-15));
  CHECK(hard_mined_loss({ten}, 0.2).item() == 9.5);
  CHECK_THROWS_AS(hard_mined_loss({Tensor(Shape{0})}, 0.1), ContractError);
  CHECK_THROWS_AS(hard_mined_loss({ten}, 0.0), ParameterError);

  Tensor leaf = ten.detach().set_requires_grad(true);
  Tape tape;
  {
    Tape::Recording rec(tape);
    backward(hard_mined_loss({leaf}, 0.2), tape);
  }
  for (std::size_t i = 0; i < 10; ++i) CHECK(leaf.grad()[static_cast<long>(i)] == (i >= 8 ? 0.5 : 0.0));
}

TEST_CASE("hard mining ties keep the lowest linear index") {
  Tensor flat = Tensor(Shape{1, 4, 5}, 2.0).set_requires_grad(true);
  Tape tape;
  {
    Tape::Recording rec(tape);
    backward(hard_mined_loss({flat}, 0.1), tape);
  }
  CHECK(flat.grad()[0] == 0.5);
  CHECK(flat.grad()[1] == 0.5);
  CHECK(flat.grad().tail(18).isZero());
}

TEST_CASE("hard mining gradient touches exactly ceil(0.1 CWH) entries of D") {
  Rng rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t c = 1 + rng.below(8), h = 1 + rng.below(9), w = 1 + rng.below(9);
    Tensor a = oracle::random_tensor({1, c, h, w}, rng).set_requires_grad(true);
    const Tensor b = oracle::random_tensor({1, c, h, w}, rng);
    Tape tape;
    DiffCube d;
    {
      Tape::Recording rec(tape);
      d = diff_cube(a, b);
      backward(hard_mined_loss(d, 0.1), tape);
    }
    const std::size_t n = c * h * w;
    const auto want = static_cast<long>(std::ceil(0.1 * static_cast<double>(n) - 1e-9));
    CHECK((d.values.grad().array() != 0.0).count() == want);
  }
}

TEST_CASE("joint_step") {
  const auto xs = images(2, 5);
  const Tensor batch = concat_batch(xs);

  SUBCASE("unit weights sum the three losses") {
    Trio n = trio(1);
    TrainConfig cfg;
    JointOptimizer opt(n.student, n.ae, 1e-3);
    const LossBreakdown l = joint_step(n.teacher, n.student, n.ae, batch, cfg, opt);
    CHECK(l.total == l.ts + l.aes + l.tae);
    CHECK(l.ts > 0.0);
  }
  SUBCASE("weights are applied") {
    Trio n = trio(1);
    TrainConfig cfg;
    cfg.lambda_ts = 0.5;
    cfg.lambda_aes = 2.0;
    cfg.lambda_tae = 3.0;
    JointOptimizer opt(n.student, n.ae, 1e-3);
    const LossBreakdown l = joint_step(n.teacher, n.student, n.ae, batch, cfg, opt);
    CHECK(l.total == doctest::Approx(0.5 * l.ts + 2.0 * l.aes + 3.0 * l.tae).epsilon(1e-12));
  }
  SUBCASE("no autoencoder terms leaves the autoencoder alone") {
    Trio n = trio(2);
    const Network ae0 = n.ae.clone(), s0 = n.student.clone();
    TrainConfig cfg;
    cfg.lambda_aes = cfg.lambda_tae = 0.0;
    JointOptimizer opt(n.student, n.ae, 1e-3);
    joint_step(n.teacher, n.student, n.ae, batch, cfg, opt);
    CHECK(same(ae0, n.ae));
    CHECK_FALSE(same(s0, n.student));
  }
  SUBCASE("teacher-autoencoder term trains only the autoencoder") {
    Trio n = trio(3);
    const Network ae0 = n.ae.clone(), s0 = n.student.clone();
    TrainConfig cfg;
    cfg.lambda_ts = cfg.lambda_aes = 0.0;
    JointOptimizer opt(n.student, n.ae, 1e-3);
    joint_step(n.teacher, n.student, n.ae, batch, cfg, opt);
    CHECK(same(s0, n.student));
    CHECK_FALSE(same(ae0, n.ae));
  }
  SUBCASE("teacher is untouched") {
    Trio n = trio(4);
    const Network t0 = n.teacher.clone();
    JointOptimizer opt(n.student, n.ae, 1e-3);
    for (int i = 0; i < 3; ++i) joint_step(n.teacher, n.student, n.ae, batch, TrainConfig{}, opt);
    CHECK(same(t0, n.teacher));
    for (const auto& [name, p] : n.teacher.parameters()) CHECK_FALSE(p.has_grad());
  }
  SUBCASE("unfrozen teacher is rejected") {
    Trio n = trio(5);
    n.teacher.set_frozen(false);
    JointOptimizer opt(n.student, n.ae, 1e-3);
    CHECK_THROWS_AS(joint_step(n.teacher, n.student, n.ae, batch, TrainConfig{}, opt), ContractError);
  }
}

TEST_CASE("train is deterministic and zero iterations is the identity") {
  const auto xs = images(4, 8);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.iterations = 5;
  cfg.seed = 99;
  Trio a = trio(10), b = trio(10);
  const auto la = train(a.teacher, a.student, a.ae, xs, cfg);
  const auto lb = train(b.teacher, b.student, b.ae, xs, cfg);
  CHECK(format_loss_log(la) == format_loss_log(lb));
  CHECK(same(a.student, b.student));
  CHECK(same(a.ae, b.ae));

  Trio c = trio(10);
  const Network s0 = c.student.clone();
  cfg.iterations = 0;
  CHECK(train(c.teacher, c.student, c.ae, xs, cfg).empty());
  CHECK(same(s0, c.student));
}

TEST_CASE("training lowers the loss") {
  const auto xs = images(6, 12);
  Trio n = trio(20);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.iterations = 300;
  cfg.seed = 1;
  const auto log = train(n.teacher, n.student, n.ae, xs, cfg);
  auto window = [&](std::size_t from) {
    double s = 0;
    for (std::size_t i = from; i < from + 50; ++i) s += log[i].total;
    return s / 50;
  };
  CHECK(window(250) < window(50));
}

TEST_CASE("loss log format") {
  const std::string s = format_loss_log({{0.1, 0.2, 0.3, 0.6000000000000001}});
  CHECK(s == "1,0.10000000000000001,0.20000000000000001,0.29999999999999999,0.60000000000000009\n");
  CHECK(format_double(2.5) == "2.5");
}

TEST_CASE("pretrain_teacher") {
  const auto g = small_geometry();
  const auto xs = images(4, 3);
  const Network extractor = build_extractor(7, g);
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.seed = 2;

  SUBCASE("teacher equal to the extractor does not move") {
    Network copy = extractor.clone();
    copy.set_frozen(false);
    const Network before = copy.clone();
    cfg.iterations = 3;
    const auto trace = pretrain_teacher(copy, extractor, xs, cfg);
    for (double l : trace) CHECK(l == 0.0);
    CHECK(same(before, copy));
  }
  SUBCASE("loss falls window by window and the extractor stays gradient-free") {
    Network t = build_pdn(g.teacher_channels, 1, g, 5);
    cfg.iterations = 200;
    const auto trace = pretrain_teacher(t, extractor, xs, cfg);
    std::vector<double> windows;
    for (std::size_t w = 0; w < 4; ++w) {
      double s = 0;
      for (std::size_t i = 50 * w; i < 50 * w + 50; ++i) s += trace[i];
      windows.push_back(s);
    }
    CHECK(std::is_sorted(windows.rbegin(), windows.rend()));
    for (const auto& [name, p] : extractor.parameters()) CHECK_FALSE(p.has_grad());
    CHECK(t.provenance() == "pretrained");
  }
  SUBCASE("mismatched output shape is a configuration error") {
    Network wide = build_pdn(g.teacher_channels, 2, g, 5);
    cfg.iterations = 1;
    CHECK_THROWS_AS(pretrain_teacher(wide, extractor, xs, cfg), ConfigError);
  }
}

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.lambda_aes = -1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = TrainConfig{};
  c.hard_fraction = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.hard_fraction = 1.01;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}
