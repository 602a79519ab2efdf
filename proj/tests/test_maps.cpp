#include "oracles.hpp"

#include "raad/errors.hpp"
#include "raad/image_io.hpp"
#include "raad/maps.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace raad;

namespace {

Mask mask_of(std::size_t h, std::size_t w, std::initializer_list<std::uint8_t> v) {
  Mask m(static_cast<long>(h), static_cast<long>(w));
  std::copy(v.begin(), v.end(), m.data());
  return m;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("channel_mean") {
  const Heatmap m = channel_mean({Tensor(Shape{2, 1, 1}, {4, 2})});
  REQUIRE(m.rows() == 1);
  CHECK(m(0, 0) == 3.0);

  const Tensor one(Shape{1, 2, 3}, {1, 2, 3, 4, 5, 6});
  const Heatmap id = channel_mean({one});
  CHECK(id.rows() == 2);
  CHECK(id.cols() == 3);
  for (long i = 0; i < 6; ++i) CHECK(id.data()[i] == one[static_cast<std::size_t>(i)]);

  CHECK(channel_mean({Tensor(Shape{1, 3, 4, 5}, 0.0)}).isZero());
  CHECK(channel_mean({Tensor(Shape{1, 3, 4, 5}, 0.0)}).rows() == 4);
}

TEST_CASE("compose_maps") {
  SUBCASE("hand example") {
    const Tensor t(Shape{2, 1, 1}, {2, 0}), s(Shape{2, 1, 1}, {0, 0});
    const Tensor a(Shape{1, 1, 1}, {2}), sa(Shape{1, 1, 1}, {0});
    const AnomalyMap m = compose_maps(t, s, a, sa, 4, 4);
    CHECK(m.local(0, 0) == 2.0);
    CHECK(m.global(0, 0) == 4.0);
    CHECK(m.combined(0, 0) == 3.0);
    CHECK(m.resized.rows() == 4);
    CHECK(m.resized.cols() == 4);
    CHECK((m.resized.array() == 3.0).all());
    CHECK(m.image_score == 3.0);
  }
  SUBCASE("matching heads give zero maps") {
    Rng rng(2);
    const Tensor t = oracle::random_tensor({1, 3, 5, 5}, rng), a = oracle::random_tensor({1, 3, 5, 5}, rng);
    const AnomalyMap m = compose_maps(t, t, a, a, 20, 20);
    CHECK(m.resized.isZero());
    CHECK(m.image_score == 0.0);
  }
  SUBCASE("score is the max and swapping branches keeps the combined map") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
      const Tensor t = oracle::random_tensor({1, 4, 6, 6}, rng), s = oracle::random_tensor({1, 4, 6, 6}, rng);
      const Tensor a = oracle::random_tensor({1, 4, 6, 6}, rng), sa = oracle::random_tensor({1, 4, 6, 6}, rng);
      const AnomalyMap m = compose_maps(t, s, a, sa, 24, 24);
      const AnomalyMap w = compose_maps(a, sa, t, s, 24, 24);
      CHECK(m.image_score == m.resized.maxCoeff());
      CHECK((m.resized.array() >= 0.0).all());
      CHECK((m.combined - w.combined).cwiseAbs().maxCoeff() == 0.0);
      CHECK((m.combined - (m.local + m.global) / 2.0).cwiseAbs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("shape mismatch") {
    const Tensor a(Shape{2, 3, 3}), b(Shape{2, 3, 4});
    CHECK_THROWS_AS(compose_maps(a, b, a, a, 8, 8), DimensionError);
    CHECK_THROWS_AS(compose_maps(a, a, a, b, 8, 8), DimensionError);
  }
}

TEST_CASE("detect runs the three networks") {
  ModelGeometry g;
  g.image_size = 32;
  g.teacher_channels = 4;
  g.hidden_channels = 4;
  g.latent = 4;
  const Network t = build_pdn(4, 1, g, 1), s = build_pdn(4, 2, g, 2), ae = build_autoencoder(4, 4, g, 3);
  Rng rng(1);
  const Tensor img = oracle::random_tensor({3, 32, 32}, rng, 0.0, 1.0);
  const AnomalyMap m = detect(t, s, ae, img);
  CHECK(m.resized.rows() == 32);
  CHECK(m.local.rows() == 6);
  CHECK(m.image_score == m.resized.maxCoeff());
  const AnomalyMap again = detect(t, s, ae, img);
  CHECK(again.resized == m.resized);
}

TEST_CASE("bias_mass") {
  SUBCASE("uniform heat follows the mask fraction") {
    const Heatmap flat = Heatmap::Constant(10, 10, 0.7);
    Mask m = Mask::Zero(10, 10);
    m.topRows(3).setOnes();
    CHECK(bias_mass(std::span(&flat, 1), m) == doctest::Approx(0.3).epsilon(1e-14));
  }
  SUBCASE("all heat inside") {
    Heatmap h = Heatmap::Zero(2, 2);
    h(0, 1) = 5.0;
    CHECK(bias_mass(std::span(&h, 1), mask_of(2, 2, {0, 1, 0, 0})) == 1.0);
  }
  SUBCASE("hand example") {
    Heatmap h(2, 2);
    h << 1, 1, 0, 2;
    CHECK(bias_mass(std::span(&h, 1), mask_of(2, 2, {1, 0, 1, 0})) == 0.25);
  }
  SUBCASE("averages over maps and stays in [0,1]") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<Heatmap> maps;
      for (int k = 0; k < 3; ++k) {
        Heatmap h(4, 4);
        for (long i = 0; i < 16; ++i) h.data()[i] = rng.uniform();
        maps.push_back(h);
      }
      Mask m(4, 4);
      for (long i = 0; i < 16; ++i) m.data()[i] = rng.uniform() < 0.5;
      m(0, 0) = 1;
      const double v = bias_mass(maps, m);
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      const Heatmap mean = (maps[0] + maps[1] + maps[2]) / 3.0;
      CHECK(v == doctest::Approx(bias_mass(std::span(&mean, 1), m)).epsilon(1e-13));
    }
  }
  SUBCASE("errors") {
    const Heatmap h = Heatmap::Ones(2, 2);
    CHECK_THROWS_AS(bias_mass(std::span(&h, 1), Mask::Zero(2, 2)), ParameterError);
    CHECK_THROWS_AS(bias_mass({}, Mask::Ones(2, 2)), ParameterError);
    CHECK(bias_mass(std::span(&h, 1), Mask::Ones(2, 2)) == 1.0);
  }
}

TEST_CASE("heatmap export") {
  const auto dir = std::filesystem::temp_directory_path() / "raad_test_maps";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  CHECK(heatmap_stem("test", 3, "raad") == "test_3_raad");

  Heatmap h(2, 2);
  h << 0.0, 1.0, 2.0, 4.0;
  const Tensor img(Shape{3, 2, 2}, 0.5);
  export_heatmap(dir, "test_3_raad", img, h);
  const Image8 gray = decode_pnm(slurp(dir / "test_3_raad.pgm"));
  CHECK(gray.channels == 1);
  CHECK(gray.pixels == std::vector<std::uint8_t>{0, 64, 128, 255});
  const Image8 over = decode_pnm(slurp(dir / "test_3_raad_overlay.ppm"));
  CHECK(over.channels == 3);
  CHECK(over.width == 2);
  CHECK(heatmap_to_gray(Heatmap::Constant(3, 3, 2.0)).pixels == std::vector<std::uint8_t>(9, 0));
  std::filesystem::remove_all(dir);
}
