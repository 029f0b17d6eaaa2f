#include "cst/cem.hpp"
#include "cst/errors.hpp"
#include "cst/synth.hpp"
#include "checks.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace cst;
using namespace cst::cem;
namespace fs = std::filesystem;

namespace {

// A one-pixel bright line on a dark field plus its centerline mask.
std::pair<torch::Tensor, torch::Tensor> line_image(int k) {
  auto img = torch::zeros({1, 1, 32, 32});
  auto mask = torch::zeros({32, 32});
  const int pos = 8 + k % 16;
  if (k % 2) {
    img.index_put_({0, 0, torch::indexing::Slice(), pos}, 1.0);
    mask.index_put_({torch::indexing::Slice(), pos}, 1.0);
  } else {
    img.index_put_({0, 0, pos, torch::indexing::Slice()}, 1.0);
    mask.index_put_({pos, torch::indexing::Slice()}, 1.0);
  }
  return {img, mask};
}

}  // namespace

// sigmoid(-4): a flat image has no Hessian response, so only the bias remains.
TEST(Ridge, ConstantImageMeanIsPinned) {
  RidgeBackend rb;
  for (float c : {0.0F, 0.25F, 0.5F, 1.0F}) {
    const double mean = rb.extract_batch(torch::full({1, 1, 32, 32}, c)).mean().item<double>();
    EXPECT_NEAR(mean, 0.0179862, 1e-6);
    EXPECT_LT(mean, 0.05);
  }
}

TEST(Ridge, LineRespondsOnCenterline) {
  RidgeBackend rb;
  for (int k = 0; k < 20; ++k) {
    auto [img, mask] = line_image(k);
    auto m = rb.extract_batch(img)[0][0];
    const double on = (m * mask).sum().item<double>() / mask.sum().item<double>();
    const double off = (m * (1 - mask)).sum().item<double>() / (1 - mask).sum().item<double>();
    EXPECT_GE(on, 2.0 * off) << "line " << k;
  }
}

// Pilot maximum over 20 rendered images and three angles was 7.3e-8.
TEST(Ridge, CommutesWithRotation) {
  RidgeBackend rb;
  for (uint64_t s = 0; s < 5; ++s) {
    auto x = synth::render(synth::sample_vessel_tree(s, {}, 64, 64), synth::domain_b_style(), s).tensor().unsqueeze(0);
    for (int n = 1; n <= 3; ++n) {
      auto a = rb.extract_batch(rotate_tensor(x, RotationAngle(n)));
      auto b = rotate_tensor(rb.extract_batch(x), RotationAngle(n));
      EXPECT_LE((a - b).abs().mean().item<double>(), 1e-6);
    }
  }
}

TEST(Ridge, OutputInUnitIntervalAndFrozen) {
  RidgeBackend rb;
  torch::manual_seed(0);
  for (auto x : {torch::rand({3, 1, 24, 24}), torch::bernoulli(torch::full({2, 1, 24, 24}, 0.5)), torch::rand({2, 3, 24, 24})}) {
    auto m = rb.extract_batch(x);
    ASSERT_EQ(m.size(1), 1);
    EXPECT_TRUE(torch::isfinite(m).all().item<bool>());
    EXPECT_GE(m.min().item<float>(), 0.0F);
    EXPECT_LE(m.max().item<float>(), 1.0F);
    EXPECT_TRUE(torch::equal(m, rb.extract_batch(x)));
  }
}

TEST(Ridge, GradientMatchesFiniteDifferences) {
  EXPECT_LT(checks::cem_gradient_error(10, 4), 1e-3);
}

// At a step small enough to stay clear of the eigenvalue-ordering and
// max-over-scales kinks, central differences converge onto autograd.
TEST(Ridge, GradientConvergesAtFineStep) {
  EXPECT_LT(checks::cem_gradient_error(10, 4, 1e-5), 1e-5);
}

TEST(Ridge, AddingBrightRidgeRaisesResponse) {
  RidgeFilterConfig cfg;
  cfg.polarity = RidgePolarity::Bright;
  RidgeBackend rb(cfg);
  auto base = torch::full({1, 1, 32, 32}, 0.1);
  auto [line, mask] = line_image(3);
  const double before = (rb.extract_batch(base)[0][0] * mask).sum().item<double>();
  for (double amp : {0.2, 0.5, 0.9}) {
    const double after = (rb.extract_batch(base + amp * line)[0][0] * mask).sum().item<double>();
    EXPECT_GE(after, before);
  }
}

TEST(Ridge, PolarityGate) {
  auto [line, mask] = line_image(4);
  RidgeFilterConfig dark;
  dark.polarity = RidgePolarity::Dark;
  RidgeFilterConfig bright;
  bright.polarity = RidgePolarity::Bright;
  const double on_dark = (RidgeBackend(dark).extract_batch(line)[0][0] * mask).mean().item<double>();
  const double on_bright = (RidgeBackend(bright).extract_batch(line)[0][0] * mask).mean().item<double>();
  EXPECT_GT(on_bright, on_dark);
}

TEST(Ridge, ColorInputIsReducedToLuminance) {
  RidgeBackend rb;
  auto g = torch::rand({1, 1, 20, 20});
  auto rgb = g.expand({1, 3, 20, 20}).contiguous();
  EXPECT_LE((rb.extract_batch(rgb) - rb.extract_batch(g)).abs().max().item<float>(), 1e-5F);
}

TEST(Ridge, ScaleLargerThanImageIsRejected) {
  RidgeFilterConfig cfg;
  cfg.scales = {8.0};
  EXPECT_THROW(RidgeBackend(cfg).extract_batch(torch::zeros({1, 1, 16, 16})), ParameterError);
  cfg.scales = {};
  EXPECT_THROW(RidgeBackend{cfg}, ParameterError);
}

TEST(Extract, SingleImageAndStructureMapValidation) {
  auto img = ImageTensor(torch::rand({1, 32, 32}) * 2 - 1, ValueRange::SignedUnit);
  RidgeBackend rb;
  auto m = extract(img, rb);
  EXPECT_EQ(m.height(), 32);
  EXPECT_EQ(m.width(), 32);
  auto direct = rb.extract_batch(to_range(img, ValueRange::Unit).tensor().unsqueeze(0))[0][0];
  EXPECT_TRUE(torch::equal(m.tensor(), direct));
  EXPECT_THROW(StructureMap(torch::full({4, 4}, 1.5F)), BackendError);
  EXPECT_THROW(StructureMap(torch::full({4, 4}, std::nanf(""))), BackendError);
}

TEST(Backends, SpecParsing) {
  EXPECT_TRUE(make_backend("ridge")->differentiable());
  auto r = make_backend("ridge:1,3");
  auto* rb = dynamic_cast<RidgeBackend*>(r.get());
  ASSERT_NE(rb, nullptr);
  EXPECT_EQ(rb->config().scales, (std::vector<double>{1.0, 3.0}));
  EXPECT_THROW(make_backend("ridge:x"), ConfigError);
  EXPECT_THROW(make_backend("unet"), ConfigError);
  EXPECT_THROW(make_backend("external:ftp:host"), ConfigError);
}

TEST(Backends, ExternalDirectoryLookup) {
  const auto dir = fs::temp_directory_path() / "cst_test_cem_dir";
  fs::remove_all(dir);
  fs::create_directories(dir);
  auto img = torch::rand({1, 1, 16, 16});
  auto map = torch::rand({16, 16});
  save_image(ImageTensor(map, ValueRange::Unit), dir / (content_hash(img[0][0]) + ".png"));

  auto backend = make_backend("external:dir:" + dir.string());
  EXPECT_FALSE(backend->differentiable());
  auto out = backend->extract_batch(img);
  auto expected = (torch::floor(map * 255 + 0.5) / 255.0).to(torch::kFloat);
  EXPECT_TRUE(torch::allclose(out[0][0], expected, 0, 1e-6));

  EXPECT_THROW(backend->extract_batch(torch::rand({1, 1, 16, 16})), BackendError);  // no map for this content
  save_image(ImageTensor(torch::rand({8, 8}), ValueRange::Unit), dir / (content_hash(img[0][0]) + ".png"));
  EXPECT_THROW(backend->extract_batch(img), BackendError);  // wrong dims
  EXPECT_THROW(make_backend("external:dir:" + (dir / "nope").string()), BackendError);
}

TEST(Backends, ExternalExecutableProtocol) {
  const auto dir = fs::temp_directory_path() / "cst_test_cem_exec";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const auto script = dir / "adapter.sh";
  {
    std::ofstream s(script);
    s << "#!/bin/sh\nfor f in \"$1\"/*.png; do\n  case \"$f\" in *.map.png) ;; *) cp \"$f\" \"${f%.png}.map.png\" ;; esac\n"
         "done\n";
  }
  fs::permissions(script, fs::perms::owner_all);
  auto backend = make_backend("external:exec:" + script.string());
  auto img = torch::rand({3, 1, 12, 12});
  auto out = backend->extract_batch(img);
  auto expected = (torch::floor(img * 255 + 0.5) / 255.0).to(torch::kFloat);
  EXPECT_TRUE(torch::allclose(out, expected, 0, 1e-6));

  const auto failing = dir / "broken.sh";
  std::ofstream(failing) << "#!/bin/sh\nexit 0\n";
  fs::permissions(failing, fs::perms::owner_all);
  EXPECT_THROW(make_backend("external:exec:" + failing.string())->extract_batch(img), BackendError);
}
