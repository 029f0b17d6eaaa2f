#include "cst/cem.hpp"

#include "cst/errors.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <atomic>
#include <unistd.h>
#include <iomanip>
#include <sstream>

namespace cst::cem {

namespace F = torch::nn::functional;

StructureMap::StructureMap(torch::Tensor values) {
  if (values.dim() == 3 && values.size(0) == 1) values = values.squeeze(0);
  if (values.dim() != 2) throw_parameter("structure map must be [H,W]");
  if (!torch::isfinite(values).all().item<bool>()) throw BackendError("structure map contains NaN/Inf");
  if (values.min().item<double>() < 0.0 || values.max().item<double>() > 1.0)
    throw BackendError("structure map values outside [0,1]");
  values_ = std::move(values);
}

void RidgeFilterConfig::validate() const {
  if (scales.empty()) throw_parameter("ridge filter needs at least one scale");
  for (double s : scales)
    if (!(s > 0.0)) throw_parameter("ridge filter scales must be > 0");
  if (!(beta > 0.0)) throw_parameter("ridge filter beta must be > 0");
  if (!(c_floor > 0.0)) throw_parameter("ridge filter c_floor must be > 0");
}

std::string RidgeFilterConfig::describe() const {
  std::ostringstream os;
  os << "ridge(scales=";
  for (size_t i = 0; i < scales.size(); ++i) os << (i ? "," : "") << scales[i];
  os << ";beta=" << beta << ";c=" << (c > 0 ? std::to_string(c) : std::string("auto"))
     << ";polarity=" << (polarity == RidgePolarity::Bright ? "bright" : polarity == RidgePolarity::Dark ? "dark" : "both")
     << ";gain=" << squash_gain << ";bias=" << squash_bias << ")";
  return os.str();
}

namespace {

constexpr double kTiny = 1e-12;

struct DerivativeKernels {
  torch::Tensor g, d1, d2;  // 1-D, length 2r+1
  int64_t radius;
};

DerivativeKernels make_kernels(double sigma, const torch::TensorOptions& opts) {
  const auto r = static_cast<int64_t>(std::ceil(3.0 * sigma));
  auto i = torch::arange(-r, r + 1, torch::TensorOptions().dtype(torch::kFloat64));
  auto g = torch::exp(-0.5 * i * i / (sigma * sigma));
  g = g / g.sum();
  auto d1 = -i / (sigma * sigma) * g;
  auto d2 = (i * i / std::pow(sigma, 4) - 1.0 / (sigma * sigma)) * g;
  d2 = d2 - d2.mean();  // zero response on constant images
  return {g.to(opts), d1.to(opts), d2.to(opts), r};
}

torch::Tensor conv_x(const torch::Tensor& x, const torch::Tensor& k) {
  return F::conv2d(x, k.view({1, 1, 1, -1}));
}

torch::Tensor conv_y(const torch::Tensor& x, const torch::Tensor& k) {
  return F::conv2d(x, k.view({1, 1, -1, 1}));
}

}  // namespace

torch::Tensor ridge_response(const torch::Tensor& unit_batch, const RidgeFilterConfig& cfg) {
  cfg.validate();
  if (unit_batch.dim() != 4) throw_parameter("ridge filter expects [N,C,H,W]");
  auto gray = to_grayscale(unit_batch);
  const int64_t h = gray.size(2);
  const int64_t w = gray.size(3);

  std::vector<torch::Tensor> per_scale;
  per_scale.reserve(cfg.scales.size());
  for (double sigma : cfg.scales) {
    auto k = make_kernels(sigma, gray.options());
    if (k.radius >= std::min(h, w))
      throw_parameter("ridge scale sigma=" + std::to_string(sigma) + " too large for " + std::to_string(h) +
                      "x" + std::to_string(w) + " image");
    const int64_t r = k.radius;
    auto padded = F::pad(gray, F::PadFuncOptions({r, r, r, r}).mode(torch::kReflect));
    // Horizontal pass over all rows first, then vertical; scale-normalized by sigma^2.
    auto gx = conv_x(padded, k.g);
    auto d1x = conv_x(padded, k.d1);
    auto d2x = conv_x(padded, k.d2);
    const double norm = sigma * sigma;
    auto hxx = conv_y(d2x, k.g) * norm;
    auto hyy = conv_y(gx, k.d2) * norm;
    auto hxy = conv_y(d1x, k.d1) * norm;

    auto half_trace = 0.5 * (hxx + hyy);
    auto half_diff = 0.5 * (hxx - hyy);
    auto disc = torch::sqrt(half_diff * half_diff + hxy * hxy + kTiny);
    // |lambda1| <= |lambda2|: the large-magnitude root shares the trace's sign.
    auto sgn = torch::where(half_trace >= 0, torch::ones_like(half_trace), -torch::ones_like(half_trace));
    auto l2 = half_trace + sgn * disc;
    auto l1 = half_trace - sgn * disc;

    auto rb2 = (l1 * l1) / (l2 * l2 + kTiny);
    auto s2 = l1 * l1 + l2 * l2;
    torch::Tensor c2;
    if (cfg.c > 0.0) {
      c2 = torch::full({gray.size(0), 1, 1, 1}, cfg.c * cfg.c, gray.options());
    } else {
      auto smax = torch::sqrt(s2 + kTiny).amax({1, 2, 3}, /*keepdim=*/true);
      auto c = torch::clamp_min(0.5 * smax, cfg.c_floor);
      c2 = c * c;
    }
    auto v = torch::exp(-rb2 / (2.0 * cfg.beta * cfg.beta)) * (1.0 - torch::exp(-s2 / (2.0 * c2)));
    if (cfg.polarity == RidgePolarity::Bright) {
      v = torch::where(l2 < 0, v, torch::zeros_like(v));
    } else if (cfg.polarity == RidgePolarity::Dark) {
      v = torch::where(l2 > 0, v, torch::zeros_like(v));
    }
    per_scale.push_back(v);
  }
  if (per_scale.size() == 1) return per_scale.front();
  return std::get<0>(torch::stack(per_scale, 0).max(0));
}

RidgeBackend::RidgeBackend(RidgeFilterConfig cfg) : cfg_(std::move(cfg)) { cfg_.validate(); }

torch::Tensor RidgeBackend::extract_batch(const torch::Tensor& unit_batch) const {
  auto response = ridge_response(unit_batch, cfg_);
  return torch::sigmoid(cfg_.squash_gain * response + cfg_.squash_bias);
}

std::string RidgeBackend::name() const { return cfg_.describe(); }

std::string content_hash(const torch::Tensor& gray_hw) {
  auto t = gray_hw.detach().to(torch::kFloat32).contiguous();
  if (t.dim() != 2) throw_parameter("content_hash expects [H,W]");
  uint64_t hash = 0xcbf29ce484222325ULL;
  auto mix = [&hash](uint8_t b) {
    hash ^= b;
    hash *= 0x100000001b3ULL;
  };
  for (int64_t dim : {t.size(0), t.size(1)})
    for (int s = 0; s < 8; ++s) mix(static_cast<uint8_t>((static_cast<uint64_t>(dim) >> (8 * s)) & 0xFF));
  const float* p = t.data_ptr<float>();
  for (int64_t i = 0; i < t.numel(); ++i) mix(quantize_unit(p[i]));
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << hash;
  return os.str();
}

ExternalBackend::ExternalBackend(const std::string& adapter_spec) : spec_(adapter_spec) {
  if (adapter_spec.rfind("dir:", 0) == 0) {
    mode_ = Mode::Directory;
    target_ = adapter_spec.substr(4);
    if (!std::filesystem::is_directory(target_))
      throw BackendError("external map directory not found: " + target_.string());
  } else if (adapter_spec.rfind("exec:", 0) == 0) {
    mode_ = Mode::Executable;
    target_ = adapter_spec.substr(5);
    if (!std::filesystem::exists(target_)) throw BackendError("external adapter not found: " + target_.string());
  } else {
    throw ConfigError("external backend spec must be dir:PATH or exec:PATH, got '" + adapter_spec + "'");
  }
}

namespace {

torch::Tensor read_map(const std::filesystem::path& file, int64_t h, int64_t w) {
  if (!std::filesystem::exists(file)) throw BackendError("missing structure map " + file.string());
  ImageTensor m;
  try {
    m = load_image(file);
  } catch (const IoError& e) {
    throw BackendError(std::string("unreadable structure map: ") + e.what());
  }
  if (m.height() != h || m.width() != w)
    throw BackendError("structure map " + file.string() + " has dims " + std::to_string(m.height()) + "x" +
                       std::to_string(m.width()) + ", expected " + std::to_string(h) + "x" + std::to_string(w));
  auto g = to_grayscale(m.tensor());
  if (g.min().item<float>() < 0.0F || g.max().item<float>() > 1.0F)
    throw BackendError("structure map " + file.string() + " outside [0,1]");
  return g;
}

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char ch : s) {
    if (ch == '\'') out += "'\\''";
    else out += ch;
  }
  return out + "'";
}

}  // namespace

torch::Tensor ExternalBackend::extract_batch(const torch::Tensor& unit_batch) const {
  if (unit_batch.dim() != 4) throw_parameter("external backend expects [N,C,H,W]");
  auto gray = to_grayscale(unit_batch.detach()).to(torch::kFloat32);
  std::lock_guard lock(mutex_);
  auto maps = mode_ == Mode::Directory ? from_directory(gray) : from_executable(gray);
  return maps.to(unit_batch.scalar_type());
}

torch::Tensor ExternalBackend::from_directory(const torch::Tensor& gray) const {
  std::vector<torch::Tensor> out;
  for (int64_t n = 0; n < gray.size(0); ++n) {
    auto img = gray[n][0];
    out.push_back(read_map(target_ / (content_hash(img) + ".png"), img.size(0), img.size(1)));
  }
  return torch::stack(out, 0);
}

torch::Tensor ExternalBackend::from_executable(const torch::Tensor& gray) const {
  static std::atomic<uint64_t> counter{0};
  const auto request = std::filesystem::temp_directory_path() /
                       ("cst_cem_request_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(request);
  struct Cleanup {
    std::filesystem::path p;
    ~Cleanup() {
      std::error_code ec;
      std::filesystem::remove_all(p, ec);
    }
  } cleanup{request};

  auto name = [](int64_t n) {
    std::ostringstream os;
    os << std::setw(4) << std::setfill('0') << n;
    return os.str();
  };
  for (int64_t n = 0; n < gray.size(0); ++n)
    save_image(ImageTensor(gray[n].clamp(0.0, 1.0), ValueRange::Unit), request / (name(n) + ".png"));

  const std::string cmd = shell_quote(target_.string()) + " " + shell_quote(request.string());
  const int rc = std::system(cmd.c_str());
  if (rc != 0) throw BackendError("external adapter failed (status " + std::to_string(rc) + "): " + cmd);

  std::vector<torch::Tensor> out;
  for (int64_t n = 0; n < gray.size(0); ++n)
    out.push_back(read_map(request / (name(n) + ".map.png"), gray.size(2), gray.size(3)));
  return torch::stack(out, 0);
}

std::unique_ptr<Backend> make_backend(const std::string& spec) {
  if (spec == "ridge") return std::make_unique<RidgeBackend>();
  if (spec.rfind("ridge:", 0) == 0) {
    RidgeFilterConfig cfg;
    cfg.scales.clear();
    std::stringstream ss(spec.substr(6));
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        cfg.scales.push_back(std::stod(tok));
      } catch (const std::exception&) {
        throw ConfigError("bad ridge scale '" + tok + "' in backend spec " + spec);
      }
    }
    return std::make_unique<RidgeBackend>(cfg);
  }
  if (spec.rfind("external:", 0) == 0) return std::make_unique<ExternalBackend>(spec.substr(9));
  throw ConfigError("unknown CEM backend '" + spec + "' (expected ridge, ridge:S1,S2,..., external:SPEC)");
}

StructureMap extract(const ImageTensor& img, const Backend& backend) {
  auto unit = to_range(img, ValueRange::Unit).tensor().unsqueeze(0);
  return StructureMap(backend.extract_batch(unit)[0][0]);
}

}  // namespace cst::cem
