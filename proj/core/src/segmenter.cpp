#include "cst/segmenter.hpp"

#include "cst/errors.hpp"
#include "cst/random.hpp"
#include "cst/trainer.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>

namespace cst::eval {

namespace nn = torch::nn;
namespace F = torch::nn::functional;

void SegHarnessConfig::validate() const {
  if (depth < 1 || depth > 4 || base_channels <= 0) throw_parameter("invalid U-Net shape");
  if (epochs <= 0 || !(lr > 0.0) || batch_size <= 0) throw_parameter("invalid segmenter training settings");
  if (!(threshold > 0.0 && threshold < 1.0)) throw_parameter("segmentation threshold must lie in (0,1)");
}

namespace {

nn::Sequential double_conv(int64_t in, int64_t out) {
  return nn::Sequential(nn::Conv2d(nn::Conv2dOptions(in, out, 3).padding(1)), nn::ReLU(),
                        nn::Conv2d(nn::Conv2dOptions(out, out, 3).padding(1)), nn::ReLU());
}

}  // namespace

UNetImpl::UNetImpl(const SegHarnessConfig& cfg) {
  cfg.validate();
  int64_t in = cfg.channels;
  int64_t c = cfg.base_channels;
  for (int64_t i = 0; i < cfg.depth; ++i) {
    down_.push_back(register_module("down" + std::to_string(i), double_conv(in, c)));
    in = c;
    c *= 2;
  }
  bottom_ = register_module("bottom", double_conv(in, c));
  for (int64_t i = cfg.depth - 1; i >= 0; --i) {
    const int64_t skip = cfg.base_channels << i;
    up_.push_back(register_module("up" + std::to_string(i),
                                  nn::ConvTranspose2d(nn::ConvTranspose2dOptions(c, skip, 2).stride(2))));
    up_conv_.push_back(register_module("upconv" + std::to_string(i), double_conv(2 * skip, skip)));
    c = skip;
  }
  head_ = register_module("head", nn::Conv2d(nn::Conv2dOptions(c, 1, 1)));
}

torch::Tensor UNetImpl::forward(const torch::Tensor& x) {
  const int64_t factor = int64_t{1} << down_.size();
  if (x.size(2) % factor != 0 || x.size(3) % factor != 0)
    throw_parameter("segmenter input size must be divisible by " + std::to_string(factor));
  std::vector<torch::Tensor> skips;
  auto h = x;
  for (auto& d : down_) {
    h = d->forward(h);
    skips.push_back(h);
    h = F::max_pool2d(h, F::MaxPool2dFuncOptions(2));
  }
  h = bottom_->forward(h);
  for (size_t i = 0; i < up_.size(); ++i) {
    h = up_[i]->forward(h);
    h = up_conv_[i]->forward(torch::cat({h, skips[skips.size() - 1 - i]}, 1));
  }
  return head_->forward(h);
}

std::vector<BinaryMask> SegModel::predict(const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  net->eval();
  std::vector<BinaryMask> out;
  for (int64_t start = 0; start < images.size(0); start += 16) {
    const int64_t n = std::min<int64_t>(16, images.size(0) - start);
    auto prob = torch::sigmoid(net->forward(images.narrow(0, start, n))).cpu();
    for (int64_t i = 0; i < n; ++i) out.push_back(BinaryMask::from_tensor(prob[i][0], cfg.threshold));
  }
  return out;
}

BinaryMask SegModel::predict(const ImageTensor& image) {
  return predict(to_range(image, ValueRange::SignedUnit).tensor().unsqueeze(0)).front();
}

void SegModel::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  torch::save(net, (dir / "seg.pt").string());
  nlohmann::json j{{"format", "cst-segmenter"}, {"version", 1},           {"depth", cfg.depth},
                   {"base_channels", cfg.base_channels}, {"threshold", cfg.threshold}, {"channels", cfg.channels},
                   {"epochs", cfg.epochs},          {"lr", cfg.lr},        {"batch_size", cfg.batch_size},
                   {"seed", cfg.seed}};
  std::ofstream(dir / "seg.json") << j.dump(2) << '\n';
}

SegModel SegModel::load(const std::filesystem::path& dir) {
  std::ifstream in(dir / "seg.json");
  if (!in) throw IoError("not a segmenter checkpoint (no seg.json): " + dir.string());
  SegModel m;
  try {
    nlohmann::json j;
    in >> j;
    if (j.at("format") != "cst-segmenter") throw DataError("unexpected segmenter format in " + dir.string());
    m.cfg.depth = j.at("depth");
    m.cfg.base_channels = j.at("base_channels");
    m.cfg.threshold = j.at("threshold");
    m.cfg.channels = j.at("channels");
    m.cfg.epochs = j.at("epochs");
    m.cfg.lr = j.at("lr");
    m.cfg.batch_size = j.at("batch_size");
    m.cfg.seed = j.at("seed");
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed seg.json in " + dir.string() + ": " + e.what());
  }
  m.net = UNet(m.cfg);
  try {
    torch::load(m.net, (dir / "seg.pt").string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read segmenter weights in " + dir.string() + ": " + e.what_without_backtrace());
  }
  m.net->eval();
  return m;
}

SegModel train_seg(const torch::Tensor& images, const torch::Tensor& masks, const SegHarnessConfig& cfg) {
  cfg.validate();
  if (images.size(0) != masks.size(0) || images.size(0) == 0) throw DataError("segmenter needs matching images and masks");
  torch::manual_seed(cfg.seed);
  SegModel m{cfg, UNet(cfg)};
  torch::optim::Adam opt(m.net->parameters(), torch::optim::AdamOptions(cfg.lr));
  Rng rng(cfg.seed ^ 0xA5A5A5A5ULL);
  const int64_t n = images.size(0);
  std::vector<int64_t> idx(static_cast<size_t>(n));
  m.net->train();
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(rng.below(static_cast<uint64_t>(i + 1)))]);
    for (int64_t start = 0; start < n; start += cfg.batch_size) {
      const int64_t len = std::min(cfg.batch_size, n - start);
      auto sel = torch::tensor(std::vector<int64_t>(idx.begin() + start, idx.begin() + start + len), torch::kLong);
      auto x = images.index_select(0, sel);
      auto y = masks.index_select(0, sel);
      // Random 90-degree turns and flips; vessel masks have no preferred orientation.
      const int turns = static_cast<int>(rng.below(4));
      if (turns) {
        x = torch::rot90(x, turns, {2, 3});
        y = torch::rot90(y, turns, {2, 3});
      }
      if (rng.bernoulli(0.5)) {
        x = torch::flip(x, {3});
        y = torch::flip(y, {3});
      }
      opt.zero_grad();
      auto logits = m.net->forward(x);
      auto prob = torch::sigmoid(logits);
      auto bce = F::binary_cross_entropy_with_logits(logits, y);
      auto inter = (prob * y).sum({1, 2, 3});
      auto soft_dice = 1.0 - (2.0 * inter + 1.0) / (prob.sum({1, 2, 3}) + y.sum({1, 2, 3}) + 1.0);
      auto loss = bce + soft_dice.mean();
      loss.backward();
      opt.step();
    }
  }
  m.net->eval();
  return m;
}

SegModel train_seg(const std::filesystem::path& image_dir, const std::filesystem::path& mask_dir,
                   const SegHarnessConfig& cfg) {
  std::vector<std::string> names;
  auto images = load_image_stack(image_dir, 0, &names);
  std::vector<torch::Tensor> masks;
  for (const auto& n : names) {
    const auto p = mask_dir / n;
    if (!std::filesystem::exists(p)) throw DataError("missing ground-truth mask " + p.string());
    auto mk = load_mask(p);
    if (mk.height() != images.size(2) || mk.width() != images.size(3))
      throw DataError("mask " + p.string() + " does not match its image size");
    masks.push_back(mk.to_tensor().unsqueeze(0));
  }
  SegHarnessConfig c = cfg;
  c.channels = images.size(1);
  return train_seg(images, torch::stack(masks, 0), c);
}

}  // namespace cst::eval
