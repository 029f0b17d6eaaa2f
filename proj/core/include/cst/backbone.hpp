#pragma once

#include "cst/image.hpp"
#include "cst/random.hpp"

#include <torch/torch.h>

#include <deque>
#include <functional>

namespace cst::backbone {

/// Any image -> image (or image -> score grid) map over [N, C, H, W] batches.
/// Losses take these instead of concrete modules so they can be exercised
/// with analytic stand-ins.
using ImageMap = std::function<torch::Tensor(const torch::Tensor&)>;

struct GeneratorSpec {
  int64_t channels = 1;
  int64_t base_channels = 32;
  int64_t n_resblocks = 4;
  int64_t downsamples = 2;

  void validate() const;
  [[nodiscard]] int64_t stride() const { return int64_t{1} << downsamples; }
};

struct DiscriminatorSpec {
  int64_t channels = 1;
  int64_t base_channels = 32;
  int64_t n_layers = 3;

  void validate() const;
};

class ResidualBlockImpl : public torch::nn::Module {
 public:
  explicit ResidualBlockImpl(int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential body_{nullptr};
};
TORCH_MODULE(ResidualBlock);

/// ResNet-style encoder / residual trunk / decoder with a tanh head, so the
/// output is always in the signed unit range. The final convolution starts
/// at zero, making a fresh generator output exactly 0.
class GeneratorImpl : public torch::nn::Module {
 public:
  explicit GeneratorImpl(GeneratorSpec spec = {});
  torch::Tensor forward(const torch::Tensor& x);
  [[nodiscard]] const GeneratorSpec& spec() const { return spec_; }

 private:
  GeneratorSpec spec_;
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(Generator);

/// PatchGAN critic: emits a spatial grid of realness scores.
class PatchDiscriminatorImpl : public torch::nn::Module {
 public:
  explicit PatchDiscriminatorImpl(DiscriminatorSpec spec = {});
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Sequential net_{nullptr};
};
TORCH_MODULE(PatchDiscriminator);

/// N(0, 0.02) weights, zero biases; draws from the global torch generator.
void init_weights(torch::nn::Module& m);

/// Evaluation-mode translation of a single signed-unit image.
ImageTensor translate(Generator& g, const ImageTensor& img);

struct BaselineLossWeights {
  double lambda_cyc = 10.0;
  double lambda_idt = 5.0;
  bool use_identity = true;

  void validate() const;
};

/// Generator-side terms of the least-squares CycleGAN objective.
struct BaselineTerms {
  torch::Tensor adversarial;  // mse(D_B(G_AB(A)), 1) + mse(D_A(G_BA(B)), 1)
  torch::Tensor cycle;        // mean|G_BA(G_AB(A)) - A| + mean|G_AB(G_BA(B)) - B|
  torch::Tensor identity;     // mean|G_AB(B) - B| + mean|G_BA(A) - A|
  torch::Tensor total;        // adversarial + lambda_cyc * cycle + lambda_idt * identity
  torch::Tensor fake_a;       // G_BA(B)
  torch::Tensor fake_b;       // G_AB(A)
};

BaselineTerms baseline_losses(const ImageMap& g_ab, const ImageMap& g_ba, const ImageMap& d_a,
                              const ImageMap& d_b, const torch::Tensor& batch_a,
                              const torch::Tensor& batch_b, const BaselineLossWeights& w);

/// Least-squares critic loss: 0.5 * (mse(D(real), 1) + mse(D(fake), 0)).
torch::Tensor discriminator_loss(const ImageMap& d, const torch::Tensor& real, const torch::Tensor& fake);

/// Least-squares generator loss against the real label.
torch::Tensor lsgan_real_loss(const torch::Tensor& scores);

/// History buffer of generated images for critic updates. Capacity 0
/// disables it (query returns its input).
class ImagePool {
 public:
  ImagePool(size_t capacity, uint64_t seed) : capacity_(capacity), rng_(seed) {}
  torch::Tensor query(const torch::Tensor& images);
  [[nodiscard]] size_t size() const { return images_.size(); }

  /// Stored images stacked as [K, C, H, W] (empty tensor when K = 0).
  [[nodiscard]] torch::Tensor snapshot() const;
  void restore(const torch::Tensor& stacked);
  [[nodiscard]] std::mt19937_64& engine() { return rng_.engine(); }

 private:
  size_t capacity_;
  Rng rng_;
  std::vector<torch::Tensor> images_;
};

}  // namespace cst::backbone
