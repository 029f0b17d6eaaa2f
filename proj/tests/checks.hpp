#pragma once

// Gradient checks shared by the unit suites and the acceptance runner. Each
// returns the worst norm-wise relative error between autograd and central
// differences over `instances` random 16x16 cases.

#include "cst/cem.hpp"
#include "cst/image.hpp"
#include "cst/losses.hpp"
#include "cst/perceptual.hpp"
#include "oracles.hpp"

#include <torch/torch.h>

#include <algorithm>

namespace checks {

struct GradientErrors {
  double dice = 0;
  double iou = 0;
  double perceptual = 0;
  double cur = 0;
  double rot = 0;
};

// Smooth stand-in generator with no rotational symmetry: a fixed 3x3
// convolution followed by tanh.
inline torch::Tensor skewed_generator(const torch::Tensor& x) {
  static const auto w = torch::tensor({{0.9, -0.4, 0.1}, {0.3, 0.5, -0.7}, {-0.2, 0.6, 0.25}}, torch::kDouble)
                            .reshape({1, 1, 3, 3});
  return torch::tanh(torch::conv2d(x, w.to(x.scalar_type()), {}, 1, 1));
}

inline GradientErrors gradient_errors(int instances, uint64_t seed, double h = 1e-3) {
  torch::manual_seed(seed);
  cst::cem::RidgeBackend cem;
  cst::loss::PerceptualNet perceptual;
  GradientErrors worst;
  const double eps = 1e-6;
  for (int k = 0; k < instances; ++k) {
    auto real = torch::rand({1, 1, 16, 16}, torch::kDouble) * 2 - 1;
    auto fake = torch::rand({1, 1, 16, 16}, torch::kDouble) * 2 - 1;
    torch::Tensor m_r;
    {
      torch::NoGradGuard no_grad;
      m_r = cem.extract_batch(cst::signed_to_unit(real));
    }
    auto map_of = [&](const torch::Tensor& f) { return cem.extract_batch(cst::signed_to_unit(f)); };
    worst.dice = std::max(worst.dice, oracle::gradient_relative_error(
                                          [&](const torch::Tensor& f) { return cst::loss::dice_loss(map_of(f), m_r, eps); }, fake, h));
    worst.iou = std::max(worst.iou, oracle::gradient_relative_error(
                                        [&](const torch::Tensor& f) { return cst::loss::iou_loss(map_of(f), m_r, eps); }, fake, h));
    worst.perceptual = std::max(
        worst.perceptual, oracle::gradient_relative_error(
                              [&](const torch::Tensor& f) { return cst::loss::perceptual_distance(perceptual, real, f); }, fake, h));
    worst.cur = std::max(worst.cur, oracle::gradient_relative_error(
                                        [&](const torch::Tensor& f) {
                                          return cst::loss::curvilinear_structure_loss(real, f, cem, perceptual, {eps, false}).total;
                                        },
                                        fake, h));
  }
  // The rotation loss is an absolute difference; instances where an aligned
  // pixel pair nearly coincides sit on a kink and are skipped.
  int done = 0;
  for (int attempt = 0; done < instances && attempt < 50 * instances; ++attempt) {
    auto x = torch::rand({1, 1, 16, 16}, torch::kDouble) * 2 - 1;
    const cst::RotationAngle a(1 + done % 3);
    torch::Tensor gap;
    {
      torch::NoGradGuard no_grad;
      gap = (skewed_generator(x) - cst::inverse_rotate_tensor(skewed_generator(cst::rotate_tensor(x, a)), a)).abs();
    }
    if (gap.min().item<double>() < 3 * h) continue;  // > 3x the largest change one step can cause
    worst.rot = std::max(worst.rot, oracle::gradient_relative_error(
                                        [&](const torch::Tensor& t) {
                                          return cst::loss::rotation_consistency_loss(skewed_generator, t, a);
                                        },
                                        x, h));
    ++done;
  }
  if (done < instances) worst.rot = 1.0;
  return worst;
}

inline double cem_gradient_error(int instances, uint64_t seed, double h = 1e-3) {
  torch::manual_seed(seed);
  cst::cem::RidgeBackend cem;
  double worst = 0;
  for (int k = 0; k < instances; ++k) {
    auto x = torch::rand({1, 1, 16, 16}, torch::kDouble);
    worst = std::max(worst, oracle::gradient_relative_error([&](const torch::Tensor& t) { return cem.extract_batch(t).sum(); }, x, h));
  }
  return worst;
}

}  // namespace checks
