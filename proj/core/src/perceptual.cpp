#include "cst/perceptual.hpp"

#include "cst/errors.hpp"
#include "cst/image.hpp"

#include <cmath>

namespace cst::loss {

namespace nn = torch::nn;

PerceptualNetImpl::PerceptualNetImpl(PerceptualSpec spec) : spec_(std::move(spec)) {
  if (spec_.layers.empty()) throw_parameter("perceptual net needs at least one layer");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(spec_.seed);
  int64_t in = 1;
  for (size_t i = 0; i < spec_.layers.size(); ++i) {
    const auto& l = spec_.layers[i];
    if (l.channels <= 0 || l.stride <= 0) throw_parameter("invalid perceptual layer spec");
    const bool even_stage = spec_.polarity_invariant && i == 0;
    nn::Conv2d conv(nn::Conv2dOptions(in, l.channels, 3).stride(l.stride).padding(1).bias(!even_stage));
    {
      torch::NoGradGuard no_grad;
      const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
      conv->weight.copy_(torch::randn(conv->weight.sizes(), gen) * std);
      // Nonzero biases keep features of a constant (for example all-zero)
      // input away from the origin, where unit normalization has unbounded
      // gradient. The even first stage gets the same guarantee from the +1
      // inside its square root.
      if (!even_stage) conv->bias.copy_(torch::randn(conv->bias.sizes(), gen) * 0.1);
    }
    stages_.push_back(register_module("stage" + std::to_string(i), conv));
    in = l.channels;
  }
  if (!spec_.weights_file.empty()) load_weights(spec_.weights_file);
  for (auto& p : parameters()) p.set_requires_grad(false);
  eval();
}

void PerceptualNetImpl::load_weights(const std::filesystem::path& file) {
  if (!std::filesystem::exists(file)) throw IoError("perceptual weights not found: " + file.string());
  torch::serialize::InputArchive archive;
  try {
    archive.load_from(file.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read perceptual weights " + file.string() + ": " + e.what_without_backtrace());
  }
  torch::NoGradGuard no_grad;
  for (auto& p : named_parameters()) {
    torch::Tensor t;
    if (!archive.try_read(p.key(), t)) throw IoError("perceptual weights missing key " + p.key());
    if (t.sizes() != p.value().sizes()) throw IoError("perceptual weights shape mismatch for " + p.key());
    p.value().copy_(t);
  }
}

std::vector<torch::Tensor> PerceptualNetImpl::features(const torch::Tensor& x) {
  auto h = to_grayscale(x);
  if (h.scalar_type() != stages_.front()->weight.scalar_type()) to(h.scalar_type());
  std::vector<torch::Tensor> out;
  out.reserve(stages_.size());
  for (size_t i = 0; i < stages_.size(); ++i) {
    auto z = stages_[i]->forward(h);
    h = spec_.polarity_invariant && i == 0 ? torch::sqrt(z * z + 1.0) : torch::silu(z);
    out.push_back(h);
  }
  return out;
}

namespace {

torch::Tensor unit_normalize(const torch::Tensor& f) {
  return f / torch::sqrt((f * f).sum(1, /*keepdim=*/true) + 1e-10);
}

}  // namespace

torch::Tensor perceptual_distance_per_sample(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b) {
  if (a.sizes() != b.sizes()) throw_parameter("perceptual_distance: shape mismatch");
  if (a.dim() != 4) throw_parameter("perceptual_distance expects [N,C,H,W]");
  auto fa = net->features(a);
  auto fb = net->features(b);
  torch::Tensor total = torch::zeros({a.size(0)}, a.options());
  for (size_t l = 0; l < fa.size(); ++l) {
    auto diff = unit_normalize(fa[l]) - unit_normalize(fb[l]);
    total = total + (diff * diff).sum(1).mean({1, 2});
  }
  return total;
}

torch::Tensor perceptual_distance(PerceptualNet& net, const torch::Tensor& a, const torch::Tensor& b) {
  return perceptual_distance_per_sample(net, a, b).mean();
}

}  // namespace cst::loss
