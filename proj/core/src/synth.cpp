#include "cst/synth.hpp"

#include "cst/errors.hpp"
#include "cst/random.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <set>
#include <sstream>

namespace cst::synth {

using nlohmann::json;

uint64_t mix_seed(uint64_t master, uint64_t index) {
  uint64_t z = master + 0x9E3779B97F4A7C15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void VesselTreeParams::validate() const {
  if (n_roots < 0) throw_parameter("n_roots must be >= 0");
  if (!(branch_prob >= 0.0 && branch_prob <= 1.0)) throw_parameter("branch_prob must lie in [0,1]");
  if (!(step_len > 0.0) || max_steps <= 0) throw_parameter("vessel walk has zero steps (step_len and max_steps must be > 0)");
  if (max_depth < 0) throw_parameter("max_depth must be >= 0");
  if (!(radius_root >= 0.5)) throw_parameter("radius_root must be >= 0.5");
  if (!(radius_decay > 0.0 && radius_decay <= 1.0)) throw_parameter("radius_decay must lie in (0,1]");
  if (!(curvature_jitter >= 0.0)) throw_parameter("curvature_jitter must be >= 0");
}

void DomainStyle::validate() const {
  if (!(noise_std >= 0.0)) throw_parameter("noise_std must be >= 0");
  if (!(blur_sigma >= 0.0)) throw_parameter("blur_sigma must be >= 0");
  if (!(gamma > 0.0)) throw_parameter("gamma must be > 0");
  if (!(texture_amp >= 0.0)) throw_parameter("texture_amp must be >= 0");
}

DomainStyle domain_a_style() {
  return {Polarity::BrightOnDark, Background::Speckle, 0.10, 0.10, 0.05, 0.6, 1.0, 0.75};
}

DomainStyle domain_b_style() {
  return {Polarity::DarkOnBright, Background::SmoothTexture, 0.15, 0.12, 0.02, 1.0, 0.8, 0.5};
}

namespace {

// Pixels whose center lies within this distance of a segment form an
// 8-connected set, so thin children never fragment.
constexpr double kMinStampRadius = 0.7072;

void stamp_segment(std::vector<uint8_t>& m, int64_t h, int64_t w, double x0, double y0, double x1,
                   double y1, double radius) {
  const double r = std::max(radius, kMinStampRadius);
  const auto xmin = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(x0, x1) - r)));
  const auto xmax = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(std::max(x0, x1) + r)));
  const auto ymin = std::max<int64_t>(0, static_cast<int64_t>(std::floor(std::min(y0, y1) - r)));
  const auto ymax = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(std::max(y0, y1) + r)));
  const double dx = x1 - x0;
  const double dy = y1 - y0;
  const double len2 = dx * dx + dy * dy;
  for (int64_t y = ymin; y <= ymax; ++y) {
    for (int64_t x = xmin; x <= xmax; ++x) {
      double t = len2 > 0 ? ((x - x0) * dx + (y - y0) * dy) / len2 : 0.0;
      t = std::clamp(t, 0.0, 1.0);
      const double px = x0 + t * dx - x;
      const double py = y0 + t * dy - y;
      if (px * px + py * py <= r * r) m[static_cast<size_t>(y * w + x)] = 1;
    }
  }
}

std::vector<float> gaussian_kernel(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<float> k(static_cast<size_t>(2 * radius + 1));
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    const double v = std::exp(-0.5 * i * i / (sigma * sigma));
    k[static_cast<size_t>(i + radius)] = static_cast<float>(v);
    sum += v;
  }
  for (auto& v : k) v = static_cast<float>(v / sum);
  return k;
}

// Separable blur with clamp-to-edge borders.
std::vector<float> blur(const std::vector<float>& src, int64_t h, int64_t w, double sigma) {
  if (sigma <= 0.0) return src;
  const auto k = gaussian_kernel(sigma);
  const auto r = static_cast<int64_t>(k.size() / 2);
  std::vector<float> tmp(src.size());
  std::vector<float> out(src.size());
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float acc = 0;
      for (int64_t i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * src[static_cast<size_t>(y * w + std::clamp<int64_t>(x + i, 0, w - 1))];
      tmp[static_cast<size_t>(y * w + x)] = acc;
    }
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      float acc = 0;
      for (int64_t i = -r; i <= r; ++i)
        acc += k[static_cast<size_t>(i + r)] * tmp[static_cast<size_t>(std::clamp<int64_t>(y + i, 0, h - 1) * w + x)];
      out[static_cast<size_t>(y * w + x)] = acc;
    }
  return out;
}

std::vector<float> texture(Rng& rng, int64_t h, int64_t w, Background kind) {
  std::vector<float> noise(static_cast<size_t>(h * w));
  for (auto& v : noise) v = static_cast<float>(rng.normal());
  auto field = blur(noise, h, w, kind == Background::Speckle ? 0.8 : 6.0);
  double mean = 0.0;
  for (float v : field) mean += v;
  mean /= static_cast<double>(field.size());
  double var = 0.0;
  for (float v : field) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(field.size()));
  for (auto& v : field) v = static_cast<float>((v - mean) / (sd > 0 ? sd : 1.0));
  return field;
}

}  // namespace

BinaryMask sample_vessel_tree(uint64_t seed, const VesselTreeParams& p, int64_t height, int64_t width) {
  p.validate();
  if (height < 32 || width < 32) throw_parameter("vessel tree size must be at least 32x32");
  std::vector<uint8_t> m(static_cast<size_t>(height * width), 0);
  Rng rng(seed);

  struct Branch {
    double x, y, angle, radius;
    int depth;
  };
  const double h = static_cast<double>(height);
  const double w = static_cast<double>(width);

  for (int root = 0; root < p.n_roots; ++root) {
    // Enter from a random side, heading roughly inward.
    const auto side = rng.below(4);
    const double t = rng.uniform(0.15, 0.85);
    Branch b{};
    switch (side) {
      case 0: b = {t * w, 1.0, std::numbers::pi / 2, p.radius_root, 0}; break;
      case 1: b = {w - 2.0, t * h, std::numbers::pi, p.radius_root, 0}; break;
      case 2: b = {t * w, h - 2.0, -std::numbers::pi / 2, p.radius_root, 0}; break;
      default: b = {1.0, t * h, 0.0, p.radius_root, 0}; break;
    }
    b.angle += rng.uniform(-0.5, 0.5);

    std::vector<Branch> stack{b};
    while (!stack.empty()) {
      Branch cur = stack.back();
      stack.pop_back();
      for (int step = 0; step < p.max_steps; ++step) {
        cur.angle += p.curvature_jitter * rng.normal();
        const double nx = cur.x + p.step_len * std::cos(cur.angle);
        const double ny = cur.y + p.step_len * std::sin(cur.angle);
        stamp_segment(m, height, width, cur.x, cur.y, nx, ny, cur.radius);
        if (nx < -1.0 || ny < -1.0 || nx > w || ny > h) break;
        if (cur.depth < p.max_depth && rng.bernoulli(p.branch_prob)) {
          const double sign = rng.bernoulli(0.5) ? 1.0 : -1.0;
          stack.push_back({nx, ny, cur.angle + sign * rng.uniform(0.4, 0.9),
                           cur.radius * p.radius_decay, cur.depth + 1});
        }
        cur.x = nx;
        cur.y = ny;
      }
    }
  }
  return {height, width, std::move(m)};
}

ImageTensor render(const BinaryMask& mask, const DomainStyle& style, uint64_t seed) {
  style.validate();
  const int64_t h = mask.height();
  const int64_t w = mask.width();
  Rng rng(seed);

  std::vector<float> vessel(mask.values().begin(), mask.values().end());
  vessel = blur(vessel, h, w, style.blur_sigma);

  std::vector<float> tex;
  if (style.texture_amp > 0.0) tex = texture(rng, h, w, style.background);

  auto out = torch::empty({1, h, w});
  float* px = out.data_ptr<float>();
  for (int64_t i = 0; i < h * w; ++i) {
    const auto k = static_cast<size_t>(i);
    double v = style.background_level + style.contrast * vessel[k];
    if (!tex.empty()) v += style.texture_amp * tex[k];
    if (style.polarity == Polarity::DarkOnBright) v = 1.0 - v;
    if (style.noise_std > 0.0) v += style.noise_std * rng.normal();
    v = std::clamp(v, 0.0, 1.0);
    px[i] = static_cast<float>(std::pow(v, style.gamma));
  }
  return {out, ValueRange::Unit};
}

namespace {

uint64_t stream(Domain d, Split s) { return static_cast<uint64_t>(d) * 2 + static_cast<uint64_t>(s); }

std::string index_name(int i) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << i << ".png";
  return os.str();
}

std::string image_dir(Domain d, Split s) {
  return std::string(s == Split::Train ? "train" : "test") + (d == Domain::A ? "A" : "B");
}

json to_json(const VesselTreeParams& p) {
  return {{"n_roots", p.n_roots},       {"branch_prob", p.branch_prob},   {"step_len", p.step_len},
          {"max_steps", p.max_steps},   {"max_depth", p.max_depth},       {"radius_root", p.radius_root},
          {"radius_decay", p.radius_decay}, {"curvature_jitter", p.curvature_jitter}};
}

VesselTreeParams tree_from_json(const json& j) {
  VesselTreeParams p;
  p.n_roots = j.at("n_roots");
  p.branch_prob = j.at("branch_prob");
  p.step_len = j.at("step_len");
  p.max_steps = j.at("max_steps");
  p.max_depth = j.at("max_depth");
  p.radius_root = j.at("radius_root");
  p.radius_decay = j.at("radius_decay");
  p.curvature_jitter = j.at("curvature_jitter");
  return p;
}

json to_json(const DomainStyle& s) {
  return {{"polarity", s.polarity == Polarity::BrightOnDark ? "bright_on_dark" : "dark_on_bright"},
          {"background", s.background == Background::Speckle ? "speckle" : "smooth_texture"},
          {"background_level", s.background_level},
          {"texture_amp", s.texture_amp},
          {"noise_std", s.noise_std},
          {"blur_sigma", s.blur_sigma},
          {"gamma", s.gamma},
          {"contrast", s.contrast}};
}

DomainStyle style_from_json(const json& j) {
  DomainStyle s;
  s.polarity = j.at("polarity") == "bright_on_dark" ? Polarity::BrightOnDark : Polarity::DarkOnBright;
  s.background = j.at("background") == "speckle" ? Background::Speckle : Background::SmoothTexture;
  s.background_level = j.at("background_level");
  s.texture_amp = j.at("texture_amp");
  s.noise_std = j.at("noise_std");
  s.blur_sigma = j.at("blur_sigma");
  s.gamma = j.at("gamma");
  s.contrast = j.at("contrast");
  return s;
}

}  // namespace

std::string to_string(Domain d) { return d == Domain::A ? "A" : "B"; }
std::string to_string(Split s) { return s == Split::Train ? "train" : "test"; }

uint64_t mask_seed_for(uint64_t master, Domain d, Split s, int index) {
  return mix_seed(master, (stream(d, s) << 32) | static_cast<uint32_t>(index));
}

uint64_t render_seed_for(uint64_t master, Domain d, Split s, int index) {
  return mix_seed(master, ((stream(d, s) + 4) << 32) | static_cast<uint32_t>(index));
}

void Manifest::save(const std::filesystem::path& file) const {
  json j;
  j["version"] = version;
  j["master_seed"] = master_seed;
  j["size"] = size;
  j["n_train"] = n_train;
  j["n_test"] = n_test;
  j["tree"] = to_json(tree);
  j["style_a"] = to_json(style_a);
  j["style_b"] = to_json(style_b);
  json arr = json::array();
  for (const auto& e : entries) {
    json je{{"path", e.path},
            {"domain", to_string(e.domain)},
            {"split", to_string(e.split)},
            {"index", e.index},
            {"mask_seed", e.mask_seed},
            {"render_seed", e.render_seed}};
    if (!e.mask_path.empty()) je["mask_path"] = e.mask_path;
    arr.push_back(std::move(je));
  }
  j["entries"] = std::move(arr);
  const auto tmp = std::filesystem::path(file.string() + ".tmp");
  {
    std::ofstream os(tmp);
    if (!os) throw IoError("cannot write manifest " + file.string());
    os << j.dump(2) << '\n';
  }
  std::filesystem::rename(tmp, file);
}

Manifest Manifest::load(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot read manifest " + file.string());
  json j;
  try {
    is >> j;
    Manifest m;
    m.version = j.at("version");
    if (m.version != 1) throw DataError("unsupported manifest version " + std::to_string(m.version));
    m.master_seed = j.at("master_seed");
    m.size = j.at("size");
    m.n_train = j.at("n_train");
    m.n_test = j.at("n_test");
    m.tree = tree_from_json(j.at("tree"));
    m.style_a = style_from_json(j.at("style_a"));
    m.style_b = style_from_json(j.at("style_b"));
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.path = je.at("path");
      e.domain = je.at("domain") == "A" ? Domain::A : Domain::B;
      e.split = je.at("split") == "train" ? Split::Train : Split::Test;
      e.index = je.at("index");
      e.mask_seed = je.at("mask_seed");
      e.render_seed = je.at("render_seed");
      if (je.contains("mask_path")) e.mask_path = je.at("mask_path");
      m.entries.push_back(std::move(e));
    }
    return m;
  } catch (const json::exception& ex) {
    throw DataError("malformed manifest " + file.string() + ": " + ex.what());
  }
}

void check_unpaired(const Manifest& m) {
  std::set<uint64_t> a;
  for (const auto& e : m.entries)
    if (e.split == Split::Train && e.domain == Domain::A) a.insert(e.mask_seed);
  for (const auto& e : m.entries)
    if (e.split == Split::Train && e.domain == Domain::B && a.contains(e.mask_seed))
      throw ConfigError("train split is paired: mask seed " + std::to_string(e.mask_seed) +
                        " used by both domains");
}

std::pair<ImageTensor, BinaryMask> regenerate(const Manifest& m, const ManifestEntry& e) {
  BinaryMask mask = sample_vessel_tree(e.mask_seed, m.tree, m.size, m.size);
  const DomainStyle& style = e.domain == Domain::A ? m.style_a : m.style_b;
  return {render(mask, style, e.render_seed), mask};
}

Manifest generate_dataset(const DatasetRequest& req) {
  if (req.n_train < 0 || req.n_test < 0) throw_parameter("image counts must be >= 0");
  req.tree.validate();
  req.style_a.validate();
  req.style_b.validate();

  Manifest m;
  m.master_seed = req.seed;
  m.size = req.size;
  m.n_train = req.n_train;
  m.n_test = req.n_test;
  m.tree = req.tree;
  m.style_a = req.style_a;
  m.style_b = req.style_b;

  for (Split s : {Split::Train, Split::Test}) {
    for (Domain d : {Domain::A, Domain::B}) {
      const int n = s == Split::Train ? req.n_train : req.n_test;
      for (int i = 0; i < n; ++i) {
        ManifestEntry e;
        e.domain = d;
        e.split = s;
        e.index = i;
        e.mask_seed = mask_seed_for(req.seed, d, s, i);
        e.render_seed = render_seed_for(req.seed, d, s, i);
        e.path = image_dir(d, s) + "/" + index_name(i);
        if (s == Split::Test) e.mask_path = std::string("masks") + to_string(d) + "/" + index_name(i);
        m.entries.push_back(std::move(e));
      }
    }
  }
  check_unpaired(m);

  std::filesystem::create_directories(req.out_dir);
  for (const char* sub : {"trainA", "trainB", "testA", "testB", "masksA", "masksB"})
    std::filesystem::create_directories(req.out_dir / sub);
  for (const auto& e : m.entries) {
    auto [img, mask] = regenerate(m, e);
    save_image(img, req.out_dir / e.path);
    if (!e.mask_path.empty()) save_mask(mask, req.out_dir / e.mask_path);
  }
  m.save(req.out_dir / "manifest.json");
  return m;
}

}  // namespace cst::synth
