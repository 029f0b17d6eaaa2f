#pragma once

#include "cst/backbone.hpp"
#include "cst/cem.hpp"
#include "cst/image.hpp"
#include "cst/perceptual.hpp"
#include "cst/random.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <string>

namespace cst::loss {

struct CstWeights {
  double lambda1 = 1.0;  // structure term
  double lambda2 = 1.0;  // rotation term
  double epsilon = 1e-6;

  void validate() const;
};

/// Soft Dice loss 1 - (2 sum(f r) + eps) / (sum f + sum r + eps). Maps are
/// [H, W] (one sample) or [N, ...] (per-sample loss, then batch mean).
torch::Tensor dice_loss(const torch::Tensor& m_f, const torch::Tensor& m_r, double eps);

/// Soft IoU loss 1 - (sum(f r) + eps) / (sum f + sum r - sum(f r) + eps).
torch::Tensor iou_loss(const torch::Tensor& m_f, const torch::Tensor& m_r, double eps);

struct CurvilinearTerms {
  torch::Tensor dice;
  torch::Tensor iou;
  torch::Tensor perceptual;
  torch::Tensor total;  // dice + iou + perceptual
  torch::Tensor map_fake;
};

struct StructureLossOptions {
  double epsilon = 1e-6;
  /// Treat the generated image's map as a constant (no gradient through the
  /// extractor). Off by default: gradients flow through the frozen backend.
  bool detach_maps = false;
};

/// Structure loss between a source image `real` and the generator output
/// `fake`, both signed-unit [N, C, H, W]. The extractor sees unit-range
/// copies. `map_real` may carry a precomputed map of `real` ([N, 1, H, W]).
CurvilinearTerms curvilinear_structure_loss(const torch::Tensor& real, const torch::Tensor& fake,
                                            const cem::Backend& backend, PerceptualNet& perceptual,
                                            const StructureLossOptions& opts = {},
                                            const torch::Tensor& map_real = {});

/// mean |G(x) - R^-1(G(R(x)))|, both branches through the same `g`.
torch::Tensor rotation_consistency_loss(const backbone::ImageMap& g, const torch::Tensor& x, RotationAngle a);

/// Same, reusing an already computed un-rotated output G(x).
torch::Tensor rotation_consistency_loss(const torch::Tensor& original_output, const backbone::ImageMap& g,
                                        const torch::Tensor& x, RotationAngle a);

/// Uniform over {90, 180, 270} degrees.
RotationAngle sample_rotation(Rng& rng);

/// l_base + lambda1 * l_cur + lambda2 * l_rot.
torch::Tensor total_loss(const torch::Tensor& l_base, const torch::Tensor& l_cur, const torch::Tensor& l_rot,
                         const CstWeights& w);
double total_loss(double l_base, double l_cur, double l_rot, const CstWeights& w);

struct LossBreakdown {
  int64_t step = 0;
  double l_base = 0;
  double l_dice = 0;
  double l_iou = 0;
  double l_perc = 0;
  double l_cur = 0;
  double l_rot = 0;
  double l_total = 0;

  /// Checks l_cur == l_dice + l_iou + l_perc and the weighted total,
  /// both to `tol` relative to magnitude.
  [[nodiscard]] bool consistent(const CstWeights& w, double tol = 1e-9) const;
};

/// Line-oriented CSV log: step,l_base,l_dice,l_iou,l_perc,l_cur,l_rot,l_total.
class LossLog {
 public:
  static constexpr const char* kHeader = "step,l_base,l_dice,l_iou,l_perc,l_cur,l_rot,l_total";

  /// Appends to `file`, writing the header if the file is new or empty.
  explicit LossLog(const std::filesystem::path& file);
  void append(const LossBreakdown& row);
  void flush() { out_.flush(); }

  static std::vector<LossBreakdown> read(const std::filesystem::path& file);

 private:
  std::ofstream out_;
};

}  // namespace cst::loss
