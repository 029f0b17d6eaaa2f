#include <png.h>

#include "cst/errors.hpp"
#include "cst/image.hpp"

#include <csetjmp>
#include <cstdio>
#include <memory>

namespace cst {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct Raster {
  int64_t height = 0;
  int64_t width = 0;
  int64_t channels = 0;
  std::vector<uint8_t> bytes;  // interleaved rows
};

Raster read_png(const std::filesystem::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open image " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw IoError("not a PNG file: " + path.string());

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("libpng init failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng init failed");
  }

  Raster r;
  std::vector<png_bytep> rows;
  std::string failure;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("corrupt PNG: " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (depth != 8) {
    failure = "unsupported bit depth " + std::to_string(depth) + " in " + path.string();
  } else if (color != PNG_COLOR_TYPE_GRAY && color != PNG_COLOR_TYPE_RGB) {
    failure = "unsupported PNG color type in " + path.string() + " (need 8-bit gray or RGB)";
  } else if (png_get_interlace_type(png, info) != PNG_INTERLACE_NONE) {
    failure = "interlaced PNG not supported: " + path.string();
  }
  if (failure.empty()) {
    r.width = png_get_image_width(png, info);
    r.height = png_get_image_height(png, info);
    r.channels = color == PNG_COLOR_TYPE_GRAY ? 1 : 3;
    r.bytes.resize(static_cast<size_t>(r.width * r.height * r.channels));
    rows.resize(static_cast<size_t>(r.height));
    for (int64_t y = 0; y < r.height; ++y) rows[y] = r.bytes.data() + y * r.width * r.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
  }
  png_destroy_read_struct(&png, &info, nullptr);
  if (!failure.empty()) throw IoError(failure);
  return r;
}

void write_png(const Raster& r, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(r.width);
  image.height = static_cast<png_uint_32>(r.height);
  image.format = r.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!png_image_write_to_file(&image, path.c_str(), 0, r.bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG " + path.string() + ": " + image.message);
}

}  // namespace

ImageTensor load_image(const std::filesystem::path& path) {
  Raster r = read_png(path);
  auto t = torch::empty({r.channels, r.height, r.width});
  auto acc = t.accessor<float, 3>();
  for (int64_t y = 0; y < r.height; ++y)
    for (int64_t x = 0; x < r.width; ++x)
      for (int64_t c = 0; c < r.channels; ++c)
        acc[c][y][x] = static_cast<float>(r.bytes[(y * r.width + x) * r.channels + c]) / 255.0F;
  return {t, ValueRange::Unit};
}

void save_image(const ImageTensor& img, const std::filesystem::path& path) {
  const ImageTensor unit = to_range(img, ValueRange::Unit);
  Raster r{unit.height(), unit.width(), unit.channels(), {}};
  r.bytes.resize(static_cast<size_t>(r.height * r.width * r.channels));
  auto acc = unit.tensor().accessor<float, 3>();
  for (int64_t y = 0; y < r.height; ++y)
    for (int64_t x = 0; x < r.width; ++x)
      for (int64_t c = 0; c < r.channels; ++c)
        r.bytes[(y * r.width + x) * r.channels + c] = quantize_unit(acc[c][y][x]);
  write_png(r, path);
}

BinaryMask load_mask(const std::filesystem::path& path) {
  Raster r = read_png(path);
  if (r.channels != 1) throw IoError("mask must be single-channel: " + path.string());
  std::vector<uint8_t> v(r.bytes.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = r.bytes[i] >= 128 ? 1 : 0;
  return {r.height, r.width, std::move(v)};
}

void save_mask(const BinaryMask& mask, const std::filesystem::path& path) {
  Raster r{mask.height(), mask.width(), 1, {}};
  r.bytes.resize(mask.values().size());
  for (size_t i = 0; i < r.bytes.size(); ++i) r.bytes[i] = mask.values()[i] ? 255 : 0;
  write_png(r, path);
}

}  // namespace cst
