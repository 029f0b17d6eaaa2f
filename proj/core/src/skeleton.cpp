#include "cst/metrics.hpp"

#include <cstdlib>
#include <vector>

namespace cst::eval {

namespace {

// Neighbor offsets in clockwise order starting north: N NE E SE S SW W NW.
constexpr int kDy[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
constexpr int kDx[8] = {0, 1, 1, 1, 0, -1, -1, -1};

bool is_simple(const BinaryMask& m, int64_t y, int64_t x) {
  uint8_t nb[8];
  int fg = 0;
  for (int i = 0; i < 8; ++i) {
    nb[i] = m.get_or_zero(y + kDy[i], x + kDx[i]);
    fg += nb[i];
  }
  if (fg == 0 || fg == 8) return false;

  // 8-connected foreground components among the neighbors (union-find over the ring).
  int parent[8];
  for (int i = 0; i < 8; ++i) parent[i] = i;
  auto find = [&parent](int i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  auto unite = [&](int a, int b) { parent[find(a)] = find(b); };
  auto adjacent8 = [](int a, int b) {
    const int dy = std::abs(kDy[a] - kDy[b]);
    const int dx = std::abs(kDx[a] - kDx[b]);
    return dy <= 1 && dx <= 1;
  };
  auto adjacent4 = [](int a, int b) { return std::abs(kDy[a] - kDy[b]) + std::abs(kDx[a] - kDx[b]) == 1; };
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j)
      if (nb[i] && nb[j] && adjacent8(i, j)) unite(i, j);
  int fg_components = 0;
  for (int i = 0; i < 8; ++i)
    if (nb[i] && find(i) == i) ++fg_components;
  if (fg_components != 1) return false;

  // 4-connected background components among the neighbors that are
  // 4-adjacent to the center (edge neighbors N, E, S, W).
  for (int i = 0; i < 8; ++i) parent[i] = i;
  for (int i = 0; i < 8; ++i)
    for (int j = i + 1; j < 8; ++j)
      if (!nb[i] && !nb[j] && adjacent4(i, j)) unite(i, j);
  int bg_components = 0;
  bool counted[8] = {};
  for (int i : {0, 2, 4, 6}) {
    if (nb[i]) continue;
    const int r = find(i);
    if (!counted[r]) {
      counted[r] = true;
      ++bg_components;
    }
  }
  return bg_components == 1;
}

}  // namespace

BinaryMask skeletonize(const BinaryMask& mask) {
  BinaryMask m = mask;
  const int64_t h = m.height();
  const int64_t w = m.width();
  // Border direction per sub-pass: N, S, E, W neighbor must be background.
  constexpr int kBorder[4] = {0, 4, 2, 6};
  bool changed = true;
  while (changed) {
    changed = false;
    for (int dir : kBorder) {
      // Border pixels are chosen on the image as it was when the sub-pass
      // began, so each sub-pass peels at most one layer from that side.
      const BinaryMask snapshot = m;
      for (int64_t y = 0; y < h; ++y) {
        for (int64_t x = 0; x < w; ++x) {
          if (!snapshot(y, x) || snapshot.get_or_zero(y + kDy[dir], x + kDx[dir])) continue;
          int fg = 0;
          for (int i = 0; i < 8; ++i) fg += m.get_or_zero(y + kDy[i], x + kDx[i]);
          if (fg < 2) continue;  // end point or isolated pixel
          if (!is_simple(m, y, x)) continue;
          m.set(y, x, false);
          changed = true;
        }
      }
    }
  }
  return m;
}

int count_components(const BinaryMask& mask) {
  const int64_t h = mask.height();
  const int64_t w = mask.width();
  std::vector<uint8_t> seen(static_cast<size_t>(h * w), 0);
  std::vector<int64_t> stack;
  int n = 0;
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      if (!mask(y, x) || seen[static_cast<size_t>(y * w + x)]) continue;
      ++n;
      stack.push_back(y * w + x);
      seen[static_cast<size_t>(y * w + x)] = 1;
      while (!stack.empty()) {
        const int64_t p = stack.back();
        stack.pop_back();
        const int64_t py = p / w;
        const int64_t px = p % w;
        for (int i = 0; i < 8; ++i) {
          const int64_t ny = py + kDy[i];
          const int64_t nx = px + kDx[i];
          if (ny < 0 || nx < 0 || ny >= h || nx >= w) continue;
          const auto q = static_cast<size_t>(ny * w + nx);
          if (mask(ny, nx) && !seen[q]) {
            seen[q] = 1;
            stack.push_back(ny * w + nx);
          }
        }
      }
    }
  return n;
}

}  // namespace cst::eval
