#pragma once

#include "cst/image.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <vector>

namespace cst::eval {

struct SegHarnessConfig {
  int64_t depth = 2;  // number of 2x poolings
  int64_t base_channels = 8;
  int epochs = 25;
  double lr = 1e-3;
  int64_t batch_size = 8;
  double threshold = 0.5;
  uint64_t seed = 0;
  int64_t channels = 1;

  void validate() const;
};

/// Small U-Net: two 3x3 conv + ReLU per level, max-pool down, transposed
/// conv up with skip concatenation, 1x1 logits head.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(const SegHarnessConfig& cfg);
  torch::Tensor forward(const torch::Tensor& x);  // logits [N, 1, H, W]

 private:
  std::vector<torch::nn::Sequential> down_;
  std::vector<torch::nn::ConvTranspose2d> up_;
  std::vector<torch::nn::Sequential> up_conv_;
  torch::nn::Sequential bottom_{nullptr};
  torch::nn::Conv2d head_{nullptr};
};
TORCH_MODULE(UNet);

struct SegModel {
  SegHarnessConfig cfg;
  UNet net{nullptr};

  /// Binarized predictions for signed-unit [N, C, H, W] images.
  std::vector<BinaryMask> predict(const torch::Tensor& images);
  BinaryMask predict(const ImageTensor& image);

  /// Writes DIR/seg.pt and DIR/seg.json.
  void save(const std::filesystem::path& dir) const;
  static SegModel load(const std::filesystem::path& dir);
};

/// Trains the segmenter on images in `image_dir` with same-named masks in
/// `mask_dir` (binary PNG). Throws DataError if any mask is missing.
SegModel train_seg(const std::filesystem::path& image_dir, const std::filesystem::path& mask_dir,
                   const SegHarnessConfig& cfg);

/// Same, on in-memory signed-unit images [N, C, H, W] and masks [N, 1, H, W].
SegModel train_seg(const torch::Tensor& images, const torch::Tensor& masks, const SegHarnessConfig& cfg);

}  // namespace cst::eval
