#pragma once

#include "cst/image.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace cst::cem {

/// H x W structure probability map with every value in [0, 1].
class StructureMap {
 public:
  StructureMap() = default;
  /// Accepts [H, W] or [1, H, W]; rejects NaN/Inf and values outside [0, 1].
  explicit StructureMap(torch::Tensor values);

  [[nodiscard]] int64_t height() const { return values_.size(0); }
  [[nodiscard]] int64_t width() const { return values_.size(1); }
  [[nodiscard]] const torch::Tensor& tensor() const { return values_; }

 private:
  torch::Tensor values_;
};

enum class RidgePolarity { Bright, Dark, Both };

struct RidgeFilterConfig {
  std::vector<double> scales{1.0, 2.0, 4.0};  // Gaussian sigma, pixels
  double beta = 0.5;                          // blobness sensitivity
  double c = 0.0;  // structureness sensitivity; <= 0 means half the per-image max norm
  // Lower bound on the automatic c. Flat regions have structureness at the
  // level of the eigenvalue regularizer (~1e-6); without a floor that noise
  // would be normalized up to a full-strength response.
  double c_floor = 1e-2;
  RidgePolarity polarity = RidgePolarity::Both;
  double squash_gain = 8.0;
  double squash_bias = -4.0;

  void validate() const;
  [[nodiscard]] std::string describe() const;
};

/// A frozen image -> structure-map extractor.
class Backend {
 public:
  virtual ~Backend() = default;

  /// [N, C, H, W] unit-range batch -> [N, 1, H, W] map in [0, 1].
  [[nodiscard]] virtual torch::Tensor extract_batch(const torch::Tensor& unit_batch) const = 0;

  /// True when gradients flow from the map back into the input.
  [[nodiscard]] virtual bool differentiable() const = 0;
  [[nodiscard]] virtual std::string name() const = 0;
};

/// Multiscale Hessian vesselness, max over scales, squashed by a sigmoid.
/// Built only from convolutions and pointwise ops, so autograd applies.
class RidgeBackend final : public Backend {
 public:
  explicit RidgeBackend(RidgeFilterConfig cfg = {});
  [[nodiscard]] torch::Tensor extract_batch(const torch::Tensor& unit_batch) const override;
  [[nodiscard]] bool differentiable() const override { return true; }
  [[nodiscard]] std::string name() const override;
  [[nodiscard]] const RidgeFilterConfig& config() const { return cfg_; }

 private:
  RidgeFilterConfig cfg_;
};

/// Non-differentiable adapter around maps produced outside this process.
///
///   dir:PATH   PATH/<content-hash>.png holds the map for an input image;
///              the hash is content_hash() of the 8-bit quantized input.
///   exec:PATH  For each batch a fresh request directory is filled with
///              NNNN.png inputs; PATH is run with that directory as its only
///              argument and must leave NNNN.map.png next to each input.
class ExternalBackend final : public Backend {
 public:
  explicit ExternalBackend(const std::string& adapter_spec);
  [[nodiscard]] torch::Tensor extract_batch(const torch::Tensor& unit_batch) const override;
  [[nodiscard]] bool differentiable() const override { return false; }
  [[nodiscard]] std::string name() const override { return "external:" + spec_; }

 private:
  enum class Mode { Directory, Executable };
  [[nodiscard]] torch::Tensor from_directory(const torch::Tensor& gray) const;
  [[nodiscard]] torch::Tensor from_executable(const torch::Tensor& gray) const;

  std::string spec_;
  Mode mode_;
  std::filesystem::path target_;
  mutable std::mutex mutex_;
};

/// Parses "ridge", "ridge:1,2,4" (explicit scale set) or "external:SPEC".
std::unique_ptr<Backend> make_backend(const std::string& spec);

/// Pre-sigmoid response: max over scales of the polarity-gated vesselness.
/// Input [N, C, H, W] unit range; output [N, 1, H, W].
torch::Tensor ridge_response(const torch::Tensor& unit_batch, const RidgeFilterConfig& cfg);

/// Single-image extraction; `img` is converted to the unit range first.
StructureMap extract(const ImageTensor& img, const Backend& backend);

/// FNV-1a 64 over (H, W, 8-bit quantized gray bytes), as 16 hex digits.
std::string content_hash(const torch::Tensor& gray_hw);

}  // namespace cst::cem
