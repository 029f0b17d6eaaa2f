#include "cst/metrics.hpp"

#include "cst/errors.hpp"

#include <cmath>
#include <vector>

namespace cst::eval {

namespace {

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(static_cast<size_t>(size));
  const double c = (size - 1) / 2.0;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    w[static_cast<size_t>(i)] = std::exp(-(i - c) * (i - c) / (2.0 * sigma * sigma));
    sum += w[static_cast<size_t>(i)];
  }
  for (auto& v : w) v /= sum;
  return w;
}

std::vector<double> gray_values(const ImageTensor& img) {
  auto g = to_grayscale(to_range(img, ValueRange::Unit).tensor()).to(torch::kFloat64).contiguous();
  const double* p = g.data_ptr<double>();
  return {p, p + g.numel()};
}

// Valid-mode separable filtering: output is (h - k + 1) x (w - k + 1).
std::vector<double> filter_valid(const std::vector<double>& src, int64_t h, int64_t w, const std::vector<double>& k) {
  const auto n = static_cast<int64_t>(k.size());
  const int64_t ow = w - n + 1;
  const int64_t oh = h - n + 1;
  std::vector<double> tmp(static_cast<size_t>(h * ow));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += k[static_cast<size_t>(i)] * src[static_cast<size_t>(y * w + x + i)];
      tmp[static_cast<size_t>(y * ow + x)] = acc;
    }
  std::vector<double> out(static_cast<size_t>(oh * ow));
  for (int64_t y = 0; y < oh; ++y)
    for (int64_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += k[static_cast<size_t>(i)] * tmp[static_cast<size_t>((y + i) * ow + x)];
      out[static_cast<size_t>(y * ow + x)] = acc;
    }
  return out;
}

void check_same(const BinaryMask& a, const BinaryMask& b) {
  if (a.height() != b.height() || a.width() != b.width()) throw_parameter("masks have different dims");
}

}  // namespace

double ssim(const ImageTensor& a, const ImageTensor& b, const SsimOptions& o) {
  if (a.height() != b.height() || a.width() != b.width()) throw_parameter("ssim: image dims differ");
  if (a.height() < o.window || a.width() < o.window) throw_parameter("ssim: image smaller than the window");
  const int64_t h = a.height();
  const int64_t w = a.width();
  const auto x = gray_values(a);
  const auto y = gray_values(b);
  std::vector<double> xx(x.size()), yy(x.size()), xy(x.size());
  for (size_t i = 0; i < x.size(); ++i) {
    xx[i] = x[i] * x[i];
    yy[i] = y[i] * y[i];
    xy[i] = x[i] * y[i];
  }
  const auto k = gaussian_window(o.window, o.sigma);
  const auto mx = filter_valid(x, h, w, k);
  const auto my = filter_valid(y, h, w, k);
  const auto exx = filter_valid(xx, h, w, k);
  const auto eyy = filter_valid(yy, h, w, k);
  const auto exy = filter_valid(xy, h, w, k);
  const double c1 = std::pow(o.k1 * o.dynamic_range, 2);
  const double c2 = std::pow(o.k2 * o.dynamic_range, 2);
  double total = 0.0;
  for (size_t i = 0; i < mx.size(); ++i) {
    const double sxx = exx[i] - mx[i] * mx[i];
    const double syy = eyy[i] - my[i] * my[i];
    const double sxy = exy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * sxy + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (sxx + syy + c2));
  }
  return total / static_cast<double>(mx.size());
}

double dice_coeff(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  int64_t inter = 0, sp = 0, sg = 0;
  for (size_t i = 0; i < pred.values().size(); ++i) {
    inter += pred.values()[i] & gt.values()[i];
    sp += pred.values()[i];
    sg += gt.values()[i];
  }
  if (sp + sg == 0) return 1.0;
  return 2.0 * static_cast<double>(inter) / static_cast<double>(sp + sg);
}

double iou_coeff(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < pred.values().size(); ++i) {
    inter += pred.values()[i] & gt.values()[i];
    uni += pred.values()[i] | gt.values()[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

double cldice(const BinaryMask& pred, const BinaryMask& gt) {
  check_same(pred, gt);
  const BinaryMask sp = skeletonize(pred);
  const BinaryMask sg = skeletonize(gt);
  const int64_t np = sp.count();
  const int64_t ng = sg.count();
  if (np == 0 && ng == 0) return 1.0;
  if (np == 0 || ng == 0) return 0.0;
  int64_t hit_p = 0, hit_g = 0;
  for (size_t i = 0; i < sp.values().size(); ++i) {
    hit_p += sp.values()[i] & gt.values()[i];
    hit_g += sg.values()[i] & pred.values()[i];
  }
  const double tprec = static_cast<double>(hit_p) / static_cast<double>(np);
  const double tsens = static_cast<double>(hit_g) / static_cast<double>(ng);
  if (tprec + tsens == 0.0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

}  // namespace cst::eval
