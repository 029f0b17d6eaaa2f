#pragma once

#include "cst/image.hpp"

namespace cst::eval {

struct SsimOptions {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  double dynamic_range = 1.0;
};

/// Mean SSIM over all valid (fully inside) window positions of the
/// grayscale reductions of `a` and `b` (both converted to the unit range).
double ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& opts = {});

/// Classical set overlap scores. Both masks empty -> 1.
double dice_coeff(const BinaryMask& pred, const BinaryMask& gt);
double iou_coeff(const BinaryMask& pred, const BinaryMask& gt);

/// Topology-preserving thinning to a (mostly) 1-pixel-wide skeleton.
///
/// Directional thinning in four sub-passes (north, south, east, west). A
/// sub-pass takes as candidates the foreground pixels whose neighbor on that
/// side was background when the sub-pass began, then visits them in raster
/// order and deletes each one that, in the current image, is simple (its 8
/// neighbors hold exactly one 8-connected foreground component and exactly
/// one 4-connected background component touching it) and is not an end
/// point (at least two foreground neighbors). Every deletion is of a simple
/// point, so topology is preserved. Sub-passes repeat until nothing changes.
BinaryMask skeletonize(const BinaryMask& mask);

/// Centerline Dice: harmonic mean of topology precision |S(pred) & gt| / |S(pred)|
/// and topology sensitivity |S(gt) & pred| / |S(gt)|. Both skeletons empty
/// -> 1, exactly one empty -> 0.
double cldice(const BinaryMask& pred, const BinaryMask& gt);

/// Number of 8-connected foreground components.
int count_components(const BinaryMask& mask);

}  // namespace cst::eval
