#include "cst/backbone.hpp"

#include "cst/errors.hpp"

namespace cst::backbone {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void GeneratorSpec::validate() const {
  if (channels != 1 && channels != 3) throw_parameter("generator channels must be 1 or 3");
  if (base_channels <= 0 || n_resblocks < 0 || downsamples < 0 || downsamples > 4)
    throw_parameter("invalid generator spec");
}

void DiscriminatorSpec::validate() const {
  if (channels != 1 && channels != 3) throw_parameter("discriminator channels must be 1 or 3");
  if (base_channels <= 0 || n_layers < 1) throw_parameter("invalid discriminator spec");
}

void BaselineLossWeights::validate() const {
  if (lambda_cyc < 0 || lambda_idt < 0) throw_parameter("baseline loss weights must be >= 0");
}

ResidualBlockImpl::ResidualBlockImpl(int64_t c) {
  body_ = register_module(
      "body", nn::Sequential(nn::ReflectionPad2d(1), nn::Conv2d(nn::Conv2dOptions(c, c, 3)),
                             nn::InstanceNorm2d(c), nn::ReLU(), nn::ReflectionPad2d(1),
                             nn::Conv2d(nn::Conv2dOptions(c, c, 3)), nn::InstanceNorm2d(c)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) { return x + body_->forward(x); }

GeneratorImpl::GeneratorImpl(GeneratorSpec spec) : spec_(spec) {
  spec_.validate();
  const int64_t b = spec_.base_channels;
  nn::Sequential s;
  s->push_back(nn::ReflectionPad2d(3));
  s->push_back(nn::Conv2d(nn::Conv2dOptions(spec_.channels, b, 7)));
  s->push_back(nn::InstanceNorm2d(b));
  s->push_back(nn::ReLU());
  int64_t c = b;
  for (int64_t i = 0; i < spec_.downsamples; ++i) {
    s->push_back(nn::Conv2d(nn::Conv2dOptions(c, 2 * c, 3).stride(2).padding(1)));
    s->push_back(nn::InstanceNorm2d(2 * c));
    s->push_back(nn::ReLU());
    c *= 2;
  }
  for (int64_t i = 0; i < spec_.n_resblocks; ++i) s->push_back(ResidualBlock(c));
  for (int64_t i = 0; i < spec_.downsamples; ++i) {
    s->push_back(nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, c / 2, 3).stride(2).padding(1).output_padding(1)));
    s->push_back(nn::InstanceNorm2d(c / 2));
    s->push_back(nn::ReLU());
    c /= 2;
  }
  s->push_back(nn::ReflectionPad2d(3));
  nn::Conv2d head(nn::Conv2dOptions(c, spec_.channels, 7));
  s->push_back(head);
  s->push_back(nn::Tanh());
  net_ = register_module("net", s);

  init_weights(*this);
  torch::NoGradGuard no_grad;
  head->weight.zero_();
  head->bias.zero_();
}

torch::Tensor GeneratorImpl::forward(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != spec_.channels) throw_parameter("generator input must be [N,C,H,W] with matching C");
  const int64_t stride = spec_.stride();
  if (x.size(2) % stride != 0 || x.size(3) % stride != 0)
    throw_parameter("image size " + std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)) +
                    " not divisible by generator stride " + std::to_string(stride) +
                    "; pad or resize to a multiple of " + std::to_string(stride));
  return net_->forward(x);
}

PatchDiscriminatorImpl::PatchDiscriminatorImpl(DiscriminatorSpec spec) {
  spec.validate();
  const int64_t b = spec.base_channels;
  nn::Sequential s;
  s->push_back(nn::Conv2d(nn::Conv2dOptions(spec.channels, b, 4).stride(2).padding(1)));
  s->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  int64_t c = b;
  for (int64_t i = 1; i < spec.n_layers; ++i) {
    const int64_t next = b * std::min<int64_t>(int64_t{1} << i, 8);
    s->push_back(nn::Conv2d(nn::Conv2dOptions(c, next, 4).stride(2).padding(1)));
    s->push_back(nn::InstanceNorm2d(next));
    s->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
    c = next;
  }
  const int64_t next = b * std::min<int64_t>(int64_t{1} << spec.n_layers, 8);
  s->push_back(nn::Conv2d(nn::Conv2dOptions(c, next, 4).stride(1).padding(1)));
  s->push_back(nn::InstanceNorm2d(next));
  s->push_back(nn::LeakyReLU(nn::LeakyReLUOptions().negative_slope(0.2)));
  s->push_back(nn::Conv2d(nn::Conv2dOptions(next, 1, 4).stride(1).padding(1)));
  net_ = register_module("net", s);
  init_weights(*this);
}

torch::Tensor PatchDiscriminatorImpl::forward(const torch::Tensor& x) { return net_->forward(x); }

void init_weights(torch::nn::Module& m) {
  torch::NoGradGuard no_grad;
  for (auto& p : m.named_parameters()) {
    if (p.key().find("bias") != std::string::npos) {
      p.value().zero_();
    } else {
      p.value().normal_(0.0, 0.02);
    }
  }
}

ImageTensor translate(Generator& g, const ImageTensor& img) {
  if (img.range() != ValueRange::SignedUnit) throw_parameter("translate expects a signed_unit image");
  if (img.channels() != g->spec().channels) throw_parameter("channel count does not match the generator");
  torch::NoGradGuard no_grad;
  const bool was_training = g->is_training();
  g->eval();
  auto out = g->forward(img.tensor().unsqueeze(0))[0].clamp(-1.0, 1.0);
  g->train(was_training);
  return {out, ValueRange::SignedUnit};
}

torch::Tensor lsgan_real_loss(const torch::Tensor& scores) {
  return F::mse_loss(scores, torch::ones_like(scores));
}

BaselineTerms baseline_losses(const ImageMap& g_ab, const ImageMap& g_ba, const ImageMap& d_a,
                              const ImageMap& d_b, const torch::Tensor& batch_a,
                              const torch::Tensor& batch_b, const BaselineLossWeights& w) {
  w.validate();
  BaselineTerms t;
  t.fake_b = g_ab(batch_a);
  t.fake_a = g_ba(batch_b);
  t.adversarial = lsgan_real_loss(d_b(t.fake_b)) + lsgan_real_loss(d_a(t.fake_a));
  t.cycle = (g_ba(t.fake_b) - batch_a).abs().mean() + (g_ab(t.fake_a) - batch_b).abs().mean();
  if (w.use_identity) {
    t.identity = (g_ab(batch_b) - batch_b).abs().mean() + (g_ba(batch_a) - batch_a).abs().mean();
  } else {
    t.identity = torch::zeros({}, batch_a.options());
  }
  t.total = t.adversarial + w.lambda_cyc * t.cycle;
  if (w.use_identity) t.total = t.total + w.lambda_idt * t.identity;
  return t;
}

torch::Tensor discriminator_loss(const ImageMap& d, const torch::Tensor& real, const torch::Tensor& fake) {
  auto real_scores = d(real);
  auto fake_scores = d(fake);
  return 0.5 * (F::mse_loss(real_scores, torch::ones_like(real_scores)) +
                F::mse_loss(fake_scores, torch::zeros_like(fake_scores)));
}

torch::Tensor ImagePool::query(const torch::Tensor& images) {
  if (capacity_ == 0) return images;
  std::vector<torch::Tensor> out;
  out.reserve(static_cast<size_t>(images.size(0)));
  for (int64_t i = 0; i < images.size(0); ++i) {
    auto img = images[i].detach().clone();
    if (images_.size() < capacity_) {
      images_.push_back(img);
      out.push_back(img);
    } else if (rng_.bernoulli(0.5)) {
      const auto k = static_cast<size_t>(rng_.below(capacity_));
      out.push_back(images_[k].clone());
      images_[k] = img;
    } else {
      out.push_back(img);
    }
  }
  return torch::stack(out, 0);
}

torch::Tensor ImagePool::snapshot() const {
  if (images_.empty()) return torch::empty({0});
  return torch::stack(images_, 0);
}

void ImagePool::restore(const torch::Tensor& stacked) {
  images_.clear();
  if (stacked.dim() < 1 || stacked.numel() == 0) return;
  for (int64_t i = 0; i < stacked.size(0); ++i) images_.push_back(stacked[i].clone());
}

}  // namespace cst::backbone
