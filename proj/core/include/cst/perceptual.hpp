#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <utility>
#include <vector>

namespace cst::loss {

struct PerceptualLayer {
  int64_t channels;
  int64_t stride;
};

struct PerceptualSpec {
  std::vector<PerceptualLayer> layers{{16, 2}, {32, 2}, {48, 2}, {64, 2}};
  uint64_t seed = 0x5eed;
  // First stage without bias followed by the even activation sqrt(z^2 + 1),
  // so an image and its intensity negative (in the signed range) have equal
  // features. Off: every stage is conv + bias + SiLU.
  bool polarity_invariant = true;
  std::filesystem::path weights_file;  // optional; overrides the seeded weights
};

/// Frozen feature stack for LPIPS-form distances: strided 3x3 convolutions
/// with SiLU activations (see PerceptualSpec::polarity_invariant for the
/// first stage), weights drawn once from `seed` (He-normal weights,
/// N(0, 0.1^2) biases) or imported from a torch archive whose keys match
/// named_parameters().
/// Parameters never require grad; gradients still flow to the inputs.
class PerceptualNetImpl : public torch::nn::Module {
 public:
  explicit PerceptualNetImpl(PerceptualSpec spec = {});

  /// Per-stage activations for a [N, C, H, W] signed-unit batch (C reduced
  /// to luminance first).
  std::vector<torch::Tensor> features(const torch::Tensor& x);

  void load_weights(const std::filesystem::path& file);
  [[nodiscard]] const PerceptualSpec& spec() const { return spec_; }

 private:
  PerceptualSpec spec_;
  std::vector<torch::nn::Conv2d> stages_;
};
TORCH_MODULE(PerceptualNet);

/// Per-sample LPIPS-form distance, shape [N]: for every stage, unit-normalize
/// features along channels, take the squared difference summed over
/// channels and averaged over space, then sum over stages.
torch::Tensor perceptual_distance_per_sample(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b);

/// Batch mean of perceptual_distance_per_sample.
torch::Tensor perceptual_distance(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b);

}  // namespace cst::loss
