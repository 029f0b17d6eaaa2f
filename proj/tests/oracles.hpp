#pragma once

// Independent reference implementations used as test oracles. They are
// written from the textbook definitions, in double precision and with plain
// loops, and deliberately share no code with the library.

#include "cst/image.hpp"

#include <torch/torch.h>

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

namespace oracle {

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const torch::Tensor& hw) {
  auto t = hw.to(torch::kDouble).contiguous();
  Grid g(static_cast<size_t>(t.size(0)), std::vector<double>(static_cast<size_t>(t.size(1))));
  auto a = t.accessor<double, 2>();
  for (int64_t y = 0; y < t.size(0); ++y)
    for (int64_t x = 0; x < t.size(1); ++x) g[static_cast<size_t>(y)][static_cast<size_t>(x)] = a[y][x];
  return g;
}

// Counter-clockwise quarter turn of a row-major grid: the first row becomes
// the left column read bottom-up.
inline Grid rot90_ccw(const Grid& in) {
  const size_t h = in.size(), w = in[0].size();
  Grid out(w, std::vector<double>(h));
  for (size_t i = 0; i < w; ++i)
    for (size_t j = 0; j < h; ++j) out[i][j] = in[j][w - 1 - i];
  return out;
}

inline Grid rot90_cw(const Grid& in) {
  const size_t h = in.size(), w = in[0].size();
  Grid out(w, std::vector<double>(h));
  for (size_t i = 0; i < w; ++i)
    for (size_t j = 0; j < h; ++j) out[i][j] = in[h - 1 - j][i];
  return out;
}

// splitmix64 as a stream: the (k+1)-th output of a generator seeded with `seed`.
inline uint64_t splitmix_output(uint64_t seed, uint64_t k) {
  uint64_t state = seed;
  uint64_t z = 0;
  for (uint64_t i = 0; i <= k; ++i) {
    state += 0x9E3779B97F4A7C15ULL;
    z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z = z ^ (z >> 31);
  }
  return z;
}

// Number of 8-connected foreground components by union-find over pixels.
inline int components8(const cst::BinaryMask& m) {
  const int64_t h = m.height(), w = m.width();
  std::vector<int64_t> parent(static_cast<size_t>(h * w));
  std::iota(parent.begin(), parent.end(), 0);
  std::function<int64_t(int64_t)> find = [&](int64_t i) {
    return parent[static_cast<size_t>(i)] == i ? i : parent[static_cast<size_t>(i)] = find(parent[static_cast<size_t>(i)]);
  };
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!m(y, x)) continue;
      for (auto [dy, dx] : {std::pair{0, 1}, {1, -1}, {1, 0}, {1, 1}}) {
        const int64_t ny = y + dy, nx = x + dx;
        if (ny < h && nx >= 0 && nx < w && m(ny, nx)) parent[static_cast<size_t>(find(y * w + x))] = find(ny * w + nx);
      }
    }
  std::set<int64_t> roots;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      if (m(y, x)) roots.insert(find(y * w + x));
  return static_cast<int>(roots.size());
}

// SSIM evaluated window by window: for each valid top-left corner, weighted
// means, variances and covariance are summed directly over the 11x11 patch.
inline double ssim_direct(const Grid& a, const Grid& b, int win = 11, double sigma = 1.5, double k1 = 0.01,
                          double k2 = 0.03) {
  const int h = static_cast<int>(a.size()), w = static_cast<int>(a[0].size());
  std::vector<double> g1(static_cast<size_t>(win));
  double s = 0;
  for (int i = 0; i < win; ++i) {
    const double d = i - (win - 1) / 2.0;
    g1[static_cast<size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma));
    s += g1[static_cast<size_t>(i)];
  }
  for (auto& v : g1) v /= s;
  const double c1 = k1 * k1, c2 = k2 * k2;
  double total = 0;
  int n = 0;
  for (int y0 = 0; y0 + win <= h; ++y0)
    for (int x0 = 0; x0 + win <= w; ++x0) {
      double ma = 0, mb = 0, saa = 0, sbb = 0, sab = 0;
      for (int i = 0; i < win; ++i)
        for (int j = 0; j < win; ++j) {
          const double wt = g1[static_cast<size_t>(i)] * g1[static_cast<size_t>(j)];
          const double va = a[static_cast<size_t>(y0 + i)][static_cast<size_t>(x0 + j)];
          const double vb = b[static_cast<size_t>(y0 + i)][static_cast<size_t>(x0 + j)];
          ma += wt * va;
          mb += wt * vb;
          saa += wt * va * va;
          sbb += wt * vb * vb;
          sab += wt * va * vb;
        }
      const double va = saa - ma * ma, vb = sbb - mb * mb, cov = sab - ma * mb;
      total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return total / n;
}

// Centerline Dice from skeleton pixel sets, counted by brute force.
inline double cldice_bruteforce(const cst::BinaryMask& pred, const cst::BinaryMask& gt, const cst::BinaryMask& skel_pred,
                                const cst::BinaryMask& skel_gt) {
  std::set<std::pair<int64_t, int64_t>> sp, sg, p, g;
  for (int64_t y = 0; y < pred.height(); ++y)
    for (int64_t x = 0; x < pred.width(); ++x) {
      if (skel_pred(y, x)) sp.insert({y, x});
      if (skel_gt(y, x)) sg.insert({y, x});
      if (pred(y, x)) p.insert({y, x});
      if (gt(y, x)) g.insert({y, x});
    }
  if (sp.empty() && sg.empty()) return 1.0;
  if (sp.empty() || sg.empty()) return 0.0;
  double hit_p = 0, hit_g = 0;
  for (const auto& q : sp) hit_p += g.count(q);
  for (const auto& q : sg) hit_g += p.count(q);
  const double tprec = hit_p / static_cast<double>(sp.size());
  const double tsens = hit_g / static_cast<double>(sg.size());
  if (tprec + tsens == 0.0) return 0.0;
  return 2 * tprec * tsens / (tprec + tsens);
}

// Norm-wise relative error between the autograd gradient of `f` at `x` and
// central differences with step `h`. `f` must return a scalar tensor.
inline double gradient_relative_error(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                                      const torch::Tensor& x0, double h = 1e-3) {
  auto x = x0.detach().to(torch::kDouble).clone().requires_grad_(true);
  auto y = f(x);
  auto analytic = torch::autograd::grad({y}, {x})[0].detach();
  auto flat = x.detach().clone().reshape({-1});
  auto numeric = torch::zeros_like(flat);
  torch::NoGradGuard no_grad;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    const double v = flat[i].item<double>();
    flat[i] = v + h;
    const double up = f(flat.reshape(x.sizes())).item<double>();
    flat[i] = v - h;
    const double down = f(flat.reshape(x.sizes())).item<double>();
    flat[i] = v;
    numeric[i] = (up - down) / (2 * h);
  }
  const double diff = (analytic.reshape({-1}) - numeric).norm().item<double>();
  const double scale = std::max({analytic.norm().item<double>(), numeric.norm().item<double>(), 1e-12});
  return diff / scale;
}

inline cst::BinaryMask random_mask(torch::Generator& gen, int64_t h, int64_t w, double p) {
  auto t = torch::rand({h, w}, gen);
  return cst::BinaryMask::from_tensor((t < p).to(torch::kFloat), 0.5);
}

}  // namespace oracle
