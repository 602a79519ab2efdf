#include "oracles.hpp"

#include "raad/errors.hpp"
#include "raad/hqs.hpp"

#include <doctest.h>

using namespace raad;

namespace {

std::vector<LayerScore> raw(std::vector<double> r) {
  std::vector<LayerScore> s;
  for (std::size_t i = 0; i < r.size(); ++i) s.push_back({i + 1, r[i], 0.0});
  return s;
}

std::vector<LayerScore> normalized(std::vector<double> n) {
  std::vector<LayerScore> s;
  for (std::size_t i = 0; i < n.size(); ++i) s.push_back({i + 1, 0.0, n[i]});
  return s;
}

ModelGeometry tiny() {
  ModelGeometry g;
  g.image_size = 32;
  g.teacher_channels = 4;
  g.hidden_channels = 4;
  g.latent = 4;
  return g;
}

// Student whose layers equal the teacher's, with the last conv widened so
// that its teacher head reproduces the teacher output.
Network copied_student(const Network& teacher) {
  Network s = build_pdn(4, 2, tiny(), 999);
  for (std::size_t q = 0; q + 1 < teacher.conv_count(); ++q) {
    s.weight(q).data() = teacher.weight(q).data();
    s.bias(q).data() = teacher.bias(q).data();
  }
  const std::size_t last = teacher.conv_count() - 1;
  const auto n = static_cast<Eigen::Index>(teacher.weight(last).numel());
  s.weight(last).data().head(n) = teacher.weight(last).data();
  s.bias(last).data().head(static_cast<Eigen::Index>(teacher.bias(last).numel())) = teacher.bias(last).data();
  s.set_provenance("trained");
  return s;
}

}  // namespace

TEST_CASE("layer_scores hand value") {
  const LayerTaps t{{Tensor(Shape{1, 2, 2}, {1, 2, 3, 4})}};
  const LayerTaps s{{Tensor(Shape{1, 2, 2}, {1, 2, 3, 0})}};
  const auto sc = layer_scores(std::span(&t, 1), std::span(&s, 1));
  REQUIRE(sc.size() == 1);
  CHECK(sc[0].raw == 4.0);
  CHECK(sc[0].layer == 1);
  CHECK(layer_scores(std::span(&t, 1), std::span(&t, 1))[0].raw == 0.0);

  const LayerTaps t2{{Tensor(Shape{1, 2, 2}, {2, 4, 6, 8})}};
  const LayerTaps s2{{Tensor(Shape{1, 2, 2}, {2, 4, 6, 0})}};
  CHECK(layer_scores(std::span(&t2, 1), std::span(&s2, 1))[0].raw == 16.0);

  const LayerTaps bad{{Tensor(Shape{1, 2, 3})}};
  CHECK_THROWS_AS(layer_scores(std::span(&t, 1), std::span(&bad, 1)), ContractError);
}

TEST_CASE("layer_scores averages over images and ignores their order") {
  Rng rng(3);
  std::vector<LayerTaps> t, s;
  for (int i = 0; i < 5; ++i) {
    t.push_back({{oracle::random_tensor({1, 2, 3, 3}, rng), oracle::random_tensor({1, 4, 2, 2}, rng)}});
    s.push_back({{oracle::random_tensor({1, 2, 3, 3}, rng), oracle::random_tensor({1, 8, 2, 2}, rng)}});
  }
  const auto a = layer_scores(t, s);
  std::reverse(t.begin(), t.end());
  std::reverse(s.begin(), s.end());
  const auto b = layer_scores(t, s);
  for (std::size_t l = 0; l < 2; ++l) CHECK(a[l].raw == doctest::Approx(b[l].raw).epsilon(1e-14));

  // Final layer compares against the first half of the student channels.
  double want = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t k = 0; k < 16; ++k) {
      const double d = t[i].taps[1][k] - s[i].taps[1][k];
      want += d * d / 16.0;
    }
  CHECK(a[1].raw == doctest::Approx(want / 5.0).epsilon(1e-14));
}

TEST_CASE("normalize_scores") {
  const auto n = normalize_scores(raw({0, 2, 4, 8}));
  CHECK(n[0].normalized == 0.0);
  CHECK(n[1].normalized == 0.25);
  CHECK(n[2].normalized == 0.5);
  CHECK(n[3].normalized == 1.0);
  for (const auto& s : normalize_scores(raw({3, 3, 3}))) CHECK(s.normalized == 0.5);
  const auto p = normalize_scores(raw({5, 1, 9, 2}));
  CHECK(p[1].normalized < p[3].normalized);
  CHECK(p[3].normalized < p[0].normalized);
  CHECK(p[0].normalized < p[2].normalized);
  CHECK_THROWS_AS(normalize_scores({}), ContractError);
}

TEST_CASE("assign_bits") {
  const BitPolicy ends = BitPolicy::with_forced_ends(4);
  CHECK(assign_bits(normalized({0.1, 0.3, 0.6, 0.9}), ends) == std::vector<int>{8, 3, 4, 8});
  CHECK(assign_bits(normalized({0.5, 0.5, 0.5, 0.5}), ends) == std::vector<int>{8, 4, 4, 8});
  const BitPolicy free;
  CHECK(assign_bits(normalized({0.75}), free) == std::vector<int>{8});
  CHECK(assign_bits(normalized({0.0, 0.2499, 0.25, 0.4999, 0.5, 0.7499, 1.0}), free) ==
        std::vector<int>{2, 2, 3, 3, 4, 4, 8});

  BitPolicy bad;
  bad.thresholds = {0.5, 0.25, 0.75};
  CHECK_THROWS_AS(assign_bits(normalized({0.1}), bad), ConfigError);
  bad = BitPolicy{};
  bad.bits = {2, 3, 5, 8};
  CHECK_THROWS_AS(assign_bits(normalized({0.1}), bad), ConfigError);
}

TEST_CASE("bit assignment is monotone, in range, and scale invariant") {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 2 + rng.below(10);
    std::vector<double> r(n);
    for (auto& v : r) v = rng.uniform(0.0, 5.0);
    const BitPolicy p = BitPolicy::with_forced_ends(n);
    const auto sc = normalize_scores(raw(r));
    const auto bits = assign_bits(sc, p);
    CHECK(bits.front() == 8);
    CHECK(bits.back() == 8);
    for (std::size_t a = 0; a < n; ++a) {
      CHECK(is_supported_bits(bits[a]));
      for (std::size_t b = 1; b + 1 < n; ++b)
        if (a > 0 && a + 1 < n && sc[a].normalized < sc[b].normalized) CHECK(bits[a] <= bits[b]);
    }
    std::vector<double> scaled = r;
    const double k = rng.uniform(0.01, 100.0);
    for (auto& v : scaled) v *= k;
    CHECK(assign_bits(normalize_scores(raw(scaled)), p) == bits);
  }
}

TEST_CASE("constructed discrepancy fixture") {
  // Four layers; the student matches the teacher except for a controlled gap
  // per layer, largest at layer 3 and zero at layer 2.
  const std::vector<double> gaps{0.4, 0.0, 3.0, 1.0};
  Rng rng(12);
  std::vector<LayerTaps> t, s;
  for (int i = 0; i < 3; ++i) {
    LayerTaps ti, si;
    for (double g : gaps) {
      const Tensor x = oracle::random_tensor({1, 3, 4, 4}, rng);
      Tensor y = x.detach();
      y.data().array() += g;
      ti.taps.push_back(x);
      si.taps.push_back(y);
    }
    t.push_back(ti);
    s.push_back(si);
  }
  const auto sc = normalize_scores(layer_scores(t, s));
  BitPolicy p;
  const auto bits = assign_bits(sc, p);
  CHECK(sc[2].raw == doctest::Approx(9.0).epsilon(1e-12));
  CHECK(bits[2] == 8);
  CHECK(bits[1] == 2);
  CHECK(assign_bits(sc, BitPolicy::with_forced_ends(4)) == std::vector<int>{8, 2, 8, 8});
}

TEST_CASE("hqs_pipeline") {
  const ModelGeometry g = tiny();
  Network teacher = build_pdn(4, 1, g, 1);
  teacher.set_provenance("pretrained");
  const Network ae = build_autoencoder(4, 4, g, 3);
  Rng rng(2);
  std::vector<Tensor> calib;
  for (int i = 0; i < 3; ++i) calib.push_back(oracle::random_tensor({3, 32, 32}, rng, 0.0, 1.0));
  const BitPolicy p = BitPolicy::with_forced_ends(4);

  SUBCASE("copied student is degenerate") {
    const Network student = copied_student(teacher);
    const HqsResult r = hqs_pipeline(teacher, student, ae, calib, p);
    for (const auto& s : r.scores) CHECK(s.raw == 0.0);
    CHECK(r.bits == std::vector<int>{8, 4, 4, 8});
    CHECK(r.ae_bits == std::vector<int>(ae.conv_count(), 8));
  }
  SUBCASE("perturbing one layer leaves the earlier layers at the minimum") {
    Network student = copied_student(teacher);
    student.weight(2).data().array() += 0.05;
    const HqsResult r = hqs_pipeline(teacher, student, ae, calib, p);
    CHECK(r.scores[0].raw == 0.0);
    CHECK(r.scores[1].raw == 0.0);
    CHECK(r.scores[2].raw > 0.0);
    CHECK(r.bits[1] == 2);
    const HqsResult again = hqs_pipeline(teacher, student, ae, calib, p);
    CHECK(format_hqs_report(again) == format_hqs_report(r));
  }
  SUBCASE("untrained networks") {
    const Network fresh = build_pdn(4, 2, g, 7);
    CHECK_THROWS_AS(hqs_pipeline(teacher, fresh, ae, calib, p), PipelineOrderError);
  }
}

TEST_CASE("hqs report format") {
  HqsResult r;
  r.scores = {{1, 0.5, 0.0}, {2, 1.5, 1.0}};
  r.bits = {8, 8};
  r.forced = {1};
  CHECK(format_hqs_report(r) == "layer,raw_score,normalized,bits,forced\n1,0.5,0,8,true\n2,1.5,1,8,false\n");
}
