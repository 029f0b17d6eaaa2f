#include "cst/image.hpp"

#include "cst/errors.hpp"

#include <cmath>
#include <string>

namespace cst {

std::string_view to_string(ValueRange r) {
  return r == ValueRange::SignedUnit ? "signed_unit" : "unit";
}

namespace {

std::pair<float, float> bounds(ValueRange r) {
  return r == ValueRange::SignedUnit ? std::pair{-1.0F, 1.0F} : std::pair{0.0F, 1.0F};
}

}  // namespace

ImageTensor::ImageTensor(torch::Tensor values, ValueRange range) : range_(range) {
  if (!values.defined()) throw_parameter("image tensor is undefined");
  if (values.dim() == 2) values = values.unsqueeze(0);
  if (values.dim() != 3) throw_parameter("image tensor must be [H,W] or [C,H,W]");
  if (values.size(0) != 1 && values.size(0) != 3)
    throw_parameter("image must have 1 or 3 channels, got " + std::to_string(values.size(0)));
  if (values.size(1) <= 0 || values.size(2) <= 0) throw_parameter("image dims must be positive");
  values = values.detach().to(torch::kFloat32).contiguous();
  if (!torch::isfinite(values).all().item<bool>()) throw_parameter("image contains non-finite values");
  auto [lo, hi] = bounds(range);
  if (values.min().item<float>() < lo || values.max().item<float>() > hi)
    throw_parameter("image values outside declared range " + std::string(to_string(range)));
  values_ = std::move(values);
}

ImageTensor ImageTensor::from_rows(const std::vector<std::vector<float>>& rows, ValueRange range) {
  if (rows.empty() || rows.front().empty()) throw_parameter("empty image rows");
  const auto h = static_cast<int64_t>(rows.size());
  const auto w = static_cast<int64_t>(rows.front().size());
  auto t = torch::empty({h, w});
  auto acc = t.accessor<float, 2>();
  for (int64_t y = 0; y < h; ++y) {
    if (static_cast<int64_t>(rows[y].size()) != w) throw_parameter("ragged image rows");
    for (int64_t x = 0; x < w; ++x) acc[y][x] = rows[y][x];
  }
  return {t, range};
}

float ImageTensor::at(int64_t c, int64_t y, int64_t x) const {
  return values_.accessor<float, 3>()[c][y][x];
}

bool ImageTensor::identical(const ImageTensor& other) const {
  return range_ == other.range_ && values_.sizes() == other.values_.sizes() &&
         torch::equal(values_, other.values_);
}

BinaryMask::BinaryMask(int64_t height, int64_t width, uint8_t fill)
    : height_(height), width_(width), values_(static_cast<size_t>(height * width), fill ? 1 : 0) {
  if (height <= 0 || width <= 0) throw_parameter("mask dims must be positive");
}

BinaryMask::BinaryMask(int64_t height, int64_t width, std::vector<uint8_t> values)
    : height_(height), width_(width), values_(std::move(values)) {
  if (height <= 0 || width <= 0) throw_parameter("mask dims must be positive");
  if (static_cast<int64_t>(values_.size()) != height * width) throw_parameter("mask size mismatch");
  for (auto v : values_)
    if (v > 1) throw_parameter("mask values must be 0 or 1");
}

BinaryMask BinaryMask::from_tensor(const torch::Tensor& t, double threshold) {
  auto v = t.detach().to(torch::kFloat32).contiguous();
  while (v.dim() > 2) {
    if (v.size(0) != 1) throw_parameter("mask tensor must be single-channel");
    v = v.squeeze(0);
  }
  if (v.dim() != 2) throw_parameter("mask tensor must be 2-D");
  auto bin = (v > threshold).to(torch::kUInt8).contiguous();
  const auto* p = bin.data_ptr<uint8_t>();
  return {v.size(0), v.size(1), std::vector<uint8_t>(p, p + bin.numel())};
}

BinaryMask BinaryMask::from_rows(const std::vector<std::vector<int>>& rows) {
  if (rows.empty() || rows.front().empty()) throw_parameter("empty mask rows");
  const auto h = static_cast<int64_t>(rows.size());
  const auto w = static_cast<int64_t>(rows.front().size());
  std::vector<uint8_t> v;
  v.reserve(static_cast<size_t>(h * w));
  for (const auto& r : rows) {
    if (static_cast<int64_t>(r.size()) != w) throw_parameter("ragged mask rows");
    for (int x : r) v.push_back(static_cast<uint8_t>(x));
  }
  return {h, w, std::move(v)};
}

int64_t BinaryMask::count() const {
  int64_t n = 0;
  for (auto v : values_) n += v;
  return n;
}

torch::Tensor BinaryMask::to_tensor() const {
  auto t = torch::empty({height_, width_});
  auto* p = t.data_ptr<float>();
  for (size_t i = 0; i < values_.size(); ++i) p[i] = values_[i];
  return t;
}

RotationAngle::RotationAngle(int quarter_turns) : n_(quarter_turns) {
  if (quarter_turns < 1 || quarter_turns > 3)
    throw_parameter("rotation quarter turns must be in {1,2,3}, got " + std::to_string(quarter_turns));
}

torch::Tensor rotate_tensor(const torch::Tensor& t, RotationAngle a) {
  return torch::rot90(t, a.quarter_turns(), {-2, -1});
}

torch::Tensor inverse_rotate_tensor(const torch::Tensor& t, RotationAngle a) {
  return torch::rot90(t, -a.quarter_turns(), {-2, -1});
}

ImageTensor rotate(const ImageTensor& img, RotationAngle a) {
  return {rotate_tensor(img.tensor(), a).contiguous(), img.range()};
}

ImageTensor inverse_rotate(const ImageTensor& img, RotationAngle a) {
  return {inverse_rotate_tensor(img.tensor(), a).contiguous(), img.range()};
}

torch::Tensor signed_to_unit(const torch::Tensor& t) { return (t + 1.0) * 0.5; }

torch::Tensor unit_to_signed(const torch::Tensor& t) { return t * 2.0 - 1.0; }

ImageTensor to_range(const ImageTensor& img, ValueRange target) {
  if (img.range() == target) return img;
  auto v = target == ValueRange::Unit ? signed_to_unit(img.tensor()) : unit_to_signed(img.tensor());
  auto [lo, hi] = bounds(target);
  return {v.clamp(lo, hi), target};
}

torch::Tensor to_grayscale(const torch::Tensor& t) {
  const auto cdim = t.dim() - 3;
  if (t.size(cdim) == 1) return t;
  if (t.size(cdim) != 3) throw_parameter("grayscale reduction expects 1 or 3 channels");
  auto w = torch::tensor({0.299, 0.587, 0.114}, t.options());
  std::vector<int64_t> shape(static_cast<size_t>(t.dim()), 1);
  shape[static_cast<size_t>(cdim)] = 3;
  return (t * w.view(shape)).sum(cdim, /*keepdim=*/true);
}

uint8_t quantize_unit(float v) {
  const float s = std::floor(v * 255.0F + 0.5F);
  return static_cast<uint8_t>(std::clamp(s, 0.0F, 255.0F));
}

}  // namespace cst
