#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

namespace cst {

/// Declared value interval of an image.
enum class ValueRange { SignedUnit, Unit };

std::string_view to_string(ValueRange r);

/// An H x W x C real image stored channel-first as a float32 tensor [C, H, W].
///
/// Construction validates the shape (C in {1, 3}, H, W > 0) and that every
/// value lies in the declared range. Values are shared with the underlying
/// tensor, so treat instances as immutable.
class ImageTensor {
 public:
  ImageTensor() = default;

  /// Accepts [H, W] or [C, H, W]; converts to float32 and validates.
  ImageTensor(torch::Tensor values, ValueRange range);

  /// Builds a single-channel image from row-major values.
  static ImageTensor from_rows(const std::vector<std::vector<float>>& rows, ValueRange range);

  [[nodiscard]] int64_t height() const { return values_.size(1); }
  [[nodiscard]] int64_t width() const { return values_.size(2); }
  [[nodiscard]] int64_t channels() const { return values_.size(0); }
  [[nodiscard]] ValueRange range() const { return range_; }
  [[nodiscard]] const torch::Tensor& tensor() const { return values_; }
  [[nodiscard]] bool empty() const { return !values_.defined(); }

  [[nodiscard]] float at(int64_t c, int64_t y, int64_t x) const;

  /// Exact element-wise equality including range tag.
  [[nodiscard]] bool identical(const ImageTensor& other) const;

 private:
  torch::Tensor values_;
  ValueRange range_ = ValueRange::Unit;
};

/// H x W mask with values exactly 0 or 1, row-major.
class BinaryMask {
 public:
  BinaryMask() = default;
  BinaryMask(int64_t height, int64_t width, uint8_t fill = 0);
  BinaryMask(int64_t height, int64_t width, std::vector<uint8_t> values);

  /// Thresholds a [H, W] (or [1, H, W]) tensor: value > threshold -> 1.
  static BinaryMask from_tensor(const torch::Tensor& t, double threshold = 0.5);
  static BinaryMask from_rows(const std::vector<std::vector<int>>& rows);

  [[nodiscard]] int64_t height() const { return height_; }
  [[nodiscard]] int64_t width() const { return width_; }
  [[nodiscard]] int64_t size() const { return height_ * width_; }

  [[nodiscard]] uint8_t operator()(int64_t y, int64_t x) const { return values_[y * width_ + x]; }
  void set(int64_t y, int64_t x, bool on) { values_[y * width_ + x] = on ? 1 : 0; }

  /// Out-of-bounds reads return 0.
  [[nodiscard]] uint8_t get_or_zero(int64_t y, int64_t x) const {
    return (y < 0 || x < 0 || y >= height_ || x >= width_) ? 0 : values_[y * width_ + x];
  }

  [[nodiscard]] const std::vector<uint8_t>& values() const { return values_; }
  [[nodiscard]] int64_t count() const;

  /// float32 [H, W] tensor of 0/1.
  [[nodiscard]] torch::Tensor to_tensor() const;

  friend bool operator==(const BinaryMask&, const BinaryMask&) = default;

 private:
  int64_t height_ = 0;
  int64_t width_ = 0;
  std::vector<uint8_t> values_;
};

/// A rotation by 90 * n degrees, n in {1, 2, 3}. The identity is not a
/// RotationAngle: the un-rotated branch is handled separately by callers.
class RotationAngle {
 public:
  explicit RotationAngle(int quarter_turns);
  [[nodiscard]] int quarter_turns() const { return n_; }
  [[nodiscard]] RotationAngle inverse() const { return RotationAngle(4 - n_); }
  friend bool operator==(RotationAngle, RotationAngle) = default;

 private:
  int n_;
};

/// Rotates the last two dims of `t` counter-clockwise by 90 * n degrees
/// (row 0 moves to the left edge). Pure index permutation; differentiable.
torch::Tensor rotate_tensor(const torch::Tensor& t, RotationAngle a);
torch::Tensor inverse_rotate_tensor(const torch::Tensor& t, RotationAngle a);

ImageTensor rotate(const ImageTensor& img, RotationAngle a);
ImageTensor inverse_rotate(const ImageTensor& img, RotationAngle a);

/// Affine remap between [0, 1] and [-1, 1]. Tensor forms are differentiable.
torch::Tensor signed_to_unit(const torch::Tensor& t);
torch::Tensor unit_to_signed(const torch::Tensor& t);
ImageTensor to_range(const ImageTensor& img, ValueRange target);

/// Luminance reduction of a [..., C, H, W] tensor to one channel.
torch::Tensor to_grayscale(const torch::Tensor& t);

/// Loads an 8-bit gray or RGB PNG, values scaled to the unit range.
ImageTensor load_image(const std::filesystem::path& path);
/// Quantizes to 8 bits with round-half-up (unit range) and writes PNG.
void save_image(const ImageTensor& img, const std::filesystem::path& path);

BinaryMask load_mask(const std::filesystem::path& path);
void save_mask(const BinaryMask& mask, const std::filesystem::path& path);

/// 8-bit quantization used by save_image: floor(v * 255 + 0.5).
uint8_t quantize_unit(float v);

}  // namespace cst
