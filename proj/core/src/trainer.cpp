#include "cst/trainer.hpp"

#include "cst/checkpoint.hpp"
#include "cst/errors.hpp"
#include "cst/image.hpp"
#include "cst/synth.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <sstream>

namespace cst {

namespace fs = std::filesystem;
using backbone::ImageMap;

double scheduled_lr(const TrainConfig& cfg, int epoch) {
  if (epoch < cfg.epochs_constant_lr) return cfg.lr;
  const int decay = cfg.epochs_total - cfg.epochs_constant_lr;
  if (decay <= 0) return cfg.lr;
  const int k = epoch - cfg.epochs_constant_lr;
  return cfg.lr * std::max(0.0, 1.0 - static_cast<double>(k) / static_cast<double>(decay));
}

torch::Tensor load_image_stack(const fs::path& dir, int limit, std::vector<std::string>* names) {
  if (!fs::is_directory(dir)) throw DataError("image directory not found: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (limit > 0 && static_cast<int>(files.size()) > limit) files.resize(static_cast<size_t>(limit));
  if (files.empty()) throw DataError("no PNG images in " + dir.string());
  std::vector<torch::Tensor> imgs;
  imgs.reserve(files.size());
  for (const auto& f : files) {
    auto img = to_range(load_image(f), ValueRange::SignedUnit).tensor();
    if (!imgs.empty() && img.sizes() != imgs.front().sizes())
      throw DataError("image " + f.string() + " differs in size from the rest of " + dir.string());
    imgs.push_back(img);
    if (names) names->push_back(f.filename().string());
  }
  return torch::stack(imgs, 0);
}

namespace {

std::string rng_to_string(const std::mt19937_64& e) {
  std::ostringstream os;
  os << e;
  return os.str();
}

void rng_from_string(std::mt19937_64& e, const std::string& s) {
  std::istringstream is(s);
  is >> e;
  if (!is) throw DataError("corrupt RNG state in checkpoint");
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

ImageMap as_map(backbone::Generator& g) {
  return [g](const torch::Tensor& x) mutable { return g->forward(x); };
}

ImageMap as_map(backbone::PatchDiscriminator& d) {
  return [d](const torch::Tensor& x) mutable { return d->forward(x); };
}

// Rotation loss with one independent draw per image.
torch::Tensor per_image_rotation_loss(const torch::Tensor& out, const ImageMap& g, const torch::Tensor& x, Rng& rng) {
  torch::Tensor acc;
  for (int64_t i = 0; i < x.size(0); ++i) {
    const auto a = loss::sample_rotation(rng);
    auto l = loss::rotation_consistency_loss(out.narrow(0, i, 1), g, x.narrow(0, i, 1), a);
    acc = acc.defined() ? acc + l : l;
  }
  return acc / static_cast<double>(x.size(0));
}

}  // namespace

Trainer::Trainer(TrainConfig cfg)
    : cfg_(std::move(cfg)),
      device_(default_device()),
      pool_a_(static_cast<size_t>(std::max(0, cfg_.pool_size)), synth::mix_seed(cfg_.seed, 11)),
      pool_b_(static_cast<size_t>(std::max(0, cfg_.pool_size)), synth::mix_seed(cfg_.seed, 12)),
      data_rng_(synth::mix_seed(cfg_.seed, 13)),
      rot_rng_(synth::mix_seed(cfg_.seed, 14)) {
  cfg_.validate();
  torch::set_num_threads(cfg_.threads);
  torch::manual_seed(cfg_.seed);

  g_ab_ = backbone::Generator(cfg_.generator);
  g_ba_ = backbone::Generator(cfg_.generator);
  d_a_ = backbone::PatchDiscriminator(cfg_.discriminator);
  d_b_ = backbone::PatchDiscriminator(cfg_.discriminator);
  for (torch::nn::Module* m : std::initializer_list<torch::nn::Module*>{g_ab_.get(), g_ba_.get(), d_a_.get(), d_b_.get()})
    m->to(device_);

  const auto adam = torch::optim::AdamOptions(cfg_.lr).betas({cfg_.adam_beta1, cfg_.adam_beta2});
  std::vector<torch::Tensor> gp = g_ab_->parameters();
  for (auto& p : g_ba_->parameters()) gp.push_back(p);
  std::vector<torch::Tensor> dp = d_a_->parameters();
  for (auto& p : d_b_->parameters()) dp.push_back(p);
  opt_g_ = std::make_unique<torch::optim::Adam>(gp, adam);
  opt_d_ = std::make_unique<torch::optim::Adam>(dp, adam);

  if (cfg_.structure_loss_active()) {
    cem_ = cem::make_backend(cfg_.cem_backend);
    if (!cem_->differentiable())
      throw ConfigError("CEM backend '" + cem_->name() +
                        "' is not differentiable; external backends are evaluation-only and cannot drive the "
                        "structure loss");
    loss::PerceptualSpec ps;
    ps.seed = cfg_.perceptual_seed;
    ps.weights_file = cfg_.perceptual_weights;
    ps.polarity_invariant = cfg_.perceptual_polarity_invariant;
    perceptual_ = loss::PerceptualNet(ps);
    perceptual_->to(device_);
  }

  if (!cfg_.data_dir.empty()) load_data();
  if (!cfg_.resume_from.empty()) load_checkpoint(cfg_.resume_from);
}

void Trainer::load_data() {
  train_a_ = load_image_stack(cfg_.data_dir / "trainA", cfg_.max_train_images).to(device_);
  train_b_ = load_image_stack(cfg_.data_dir / "trainB", cfg_.max_train_images).to(device_);
  for (const auto* t : {&train_a_, &train_b_}) {
    if (t->size(2) != cfg_.image_size || t->size(3) != cfg_.image_size)
      throw DataError("training images are " + std::to_string(t->size(2)) + "x" + std::to_string(t->size(3)) +
                      " but image_size=" + std::to_string(cfg_.image_size));
    if (t->size(1) != cfg_.generator.channels)
      throw DataError("training images have " + std::to_string(t->size(1)) + " channels, generator expects " +
                      std::to_string(cfg_.generator.channels));
  }
  if (train_a_.size(0) < cfg_.batch_size || train_b_.size(0) < cfg_.batch_size)
    throw DataError("fewer training images than batch_size");
  if (cem_) {
    torch::NoGradGuard no_grad;
    maps_a_ = cem_->extract_batch(signed_to_unit(train_a_));
    maps_b_ = cem_->extract_batch(signed_to_unit(train_b_));
  }
}

void Trainer::set_lr(double lr) {
  for (auto* opt : {opt_g_.get(), opt_d_.get()})
    for (auto& group : opt->param_groups()) static_cast<torch::optim::AdamOptions&>(group.options()).lr(lr);
}

void Trainer::dump_batch(const torch::Tensor& a, const torch::Tensor& b, const std::string& why) const {
  const fs::path dir = cfg_.run_dir / "nan_dump" / ("step_" + std::to_string(step_));
  fs::create_directories(dir);
  // batch.pt keeps the exact values; the PNGs are previews with non-finite
  // pixels shown as mid-gray.
  torch::save(std::vector<torch::Tensor>{a.detach().cpu(), b.detach().cpu()}, (dir / "batch.pt").string());
  auto preview = [](const torch::Tensor& t) {
    return ImageTensor(torch::nan_to_num(t.detach().cpu(), 0.0, 0.0, 0.0).clamp(-1, 1), ValueRange::SignedUnit);
  };
  for (int64_t i = 0; i < a.size(0); ++i) save_image(preview(a[i]), dir / ("A_" + std::to_string(i) + ".png"));
  for (int64_t i = 0; i < b.size(0); ++i) save_image(preview(b[i]), dir / ("B_" + std::to_string(i) + ".png"));
  std::ofstream(dir / "reason.txt") << why << '\n';
}

loss::LossBreakdown Trainer::train_step(const torch::Tensor& batch_a, const torch::Tensor& batch_b,
                                        const torch::Tensor& map_a, const torch::Tensor& map_b) {
  const ImageMap gab = as_map(g_ab_);
  const ImageMap gba = as_map(g_ba_);
  const ImageMap da = as_map(d_a_);
  const ImageMap db = as_map(d_b_);

  set_requires_grad(*d_a_, false);
  set_requires_grad(*d_b_, false);
  opt_g_->zero_grad();

  auto base = backbone::baseline_losses(gab, gba, da, db, batch_a, batch_b, cfg_.baseline);
  torch::Tensor total = base.total;
  loss::LossBreakdown row;
  row.step = step_;

  if (cfg_.structure_loss_active()) {
    const loss::StructureLossOptions opts{cfg_.cst.epsilon, cfg_.cst_detach_maps};
    auto ab = loss::curvilinear_structure_loss(batch_a, base.fake_b, *cem_, perceptual_, opts, map_a);
    torch::Tensor dice = ab.dice, iou = ab.iou, perc = ab.perceptual, cur = ab.total;
    if (cfg_.cst_symmetric) {
      auto ba = loss::curvilinear_structure_loss(batch_b, base.fake_a, *cem_, perceptual_, opts, map_b);
      dice = 0.5 * (ab.dice + ba.dice);
      iou = 0.5 * (ab.iou + ba.iou);
      perc = 0.5 * (ab.perceptual + ba.perceptual);
      cur = 0.5 * (ab.total + ba.total);
    }
    total = total + cfg_.cst.lambda1 * cur;
    row.l_dice = dice.item<double>();
    row.l_iou = iou.item<double>();
    row.l_perc = perc.item<double>();
    // Stored as the component sum so the log satisfies l_cur = dice + iou + perc to the last bit.
    row.l_cur = row.l_dice + row.l_iou + row.l_perc;
  }

  if (cfg_.rotation_loss_active()) {
    torch::Tensor rot;
    auto one_direction = [&](const torch::Tensor& out, const ImageMap& g, const torch::Tensor& x) {
      if (cfg_.per_image_rotation) return per_image_rotation_loss(out, g, x, rot_rng_);
      return loss::rotation_consistency_loss(out, g, x, loss::sample_rotation(rot_rng_));
    };
    rot = one_direction(base.fake_b, gab, batch_a);
    if (cfg_.cst_symmetric) rot = 0.5 * (rot + one_direction(base.fake_a, gba, batch_b));
    total = total + cfg_.cst.lambda2 * rot;
    row.l_rot = rot.item<double>();
  }

  row.l_base = base.total.item<double>();
  row.l_total = loss::total_loss(row.l_base, row.l_cur, row.l_rot, cfg_.cst);

  if (!torch::isfinite(total).item<bool>()) {
    dump_batch(batch_a, batch_b, "non-finite generator loss at step " + std::to_string(step_));
    throw TrainingError("non-finite generator loss at step " + std::to_string(step_) + "; batch dumped to " +
                        (cfg_.run_dir / "nan_dump").string());
  }
  total.backward();
  opt_g_->step();

  set_requires_grad(*d_a_, true);
  set_requires_grad(*d_b_, true);
  opt_d_->zero_grad();
  auto pooled_a = pool_a_.query(base.fake_a.detach());
  auto pooled_b = pool_b_.query(base.fake_b.detach());
  auto d_loss = backbone::discriminator_loss(da, batch_a, pooled_a) + backbone::discriminator_loss(db, batch_b, pooled_b);
  if (!torch::isfinite(d_loss).item<bool>()) {
    dump_batch(batch_a, batch_b, "non-finite critic loss at step " + std::to_string(step_));
    throw TrainingError("non-finite critic loss at step " + std::to_string(step_));
  }
  d_loss.backward();
  opt_d_->step();

  if (log_) log_->append(row);
  ++step_;
  return row;
}

EpochSummary Trainer::train_epoch() {
  if (!train_a_.defined()) throw DataError("trainer has no data (data_dir unset)");
  EpochSummary s;
  s.epoch = epoch_;
  s.lr = scheduled_lr(cfg_, epoch_);
  set_lr(s.lr);

  const int64_t na = train_a_.size(0);
  const int64_t nb = train_b_.size(0);
  auto permutation = [this](int64_t n) {
    std::vector<int64_t> idx(static_cast<size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int64_t i = n - 1; i > 0; --i)
      std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(data_rng_.below(static_cast<uint64_t>(i + 1)))]);
    return idx;
  };
  const auto perm_a = permutation(na);
  const auto perm_b = permutation(nb);
  const int64_t bs = cfg_.batch_size;
  const int64_t steps = std::max(na, nb) / bs;

  for (int64_t k = 0; k < steps; ++k) {
    std::vector<int64_t> ia, ib;
    for (int64_t j = 0; j < bs; ++j) {
      ia.push_back(perm_a[static_cast<size_t>((k * bs + j) % na)]);
      ib.push_back(perm_b[static_cast<size_t>((k * bs + j) % nb)]);
    }
    auto index_a = torch::tensor(ia, torch::kLong).to(device_);
    auto index_b = torch::tensor(ib, torch::kLong).to(device_);
    torch::Tensor ma, mb;
    if (maps_a_.defined()) {
      ma = maps_a_.index_select(0, index_a);
      mb = maps_b_.index_select(0, index_b);
    }
    auto row = train_step(train_a_.index_select(0, index_a), train_b_.index_select(0, index_b), ma, mb);
    s.mean_g_total += row.l_total;
    ++s.steps;
  }
  if (s.steps) s.mean_g_total /= static_cast<double>(s.steps);
  if (log_) log_->flush();
  ++epoch_;
  return s;
}

fs::path Trainer::run() {
  fs::create_directories(cfg_.run_dir / "checkpoints");
  cfg_.save(cfg_.run_dir / "config.cfg");
  const fs::path log_file = cfg_.run_dir / "loss.csv";
  // A fresh run starts a new log; a resumed one drops rows written after the
  // checkpoint it resumed from, so the log always matches the parameters.
  std::vector<loss::LossBreakdown> kept;
  if (step_ > 0 && fs::exists(log_file))
    for (const auto& row : loss::LossLog::read(log_file))
      if (row.step < step_) kept.push_back(row);
  fs::remove(log_file);
  log_ = std::make_unique<loss::LossLog>(log_file);
  for (const auto& row : kept) log_->append(row);
  if (cfg_.verbose)
    std::cout << "config fingerprint " << cfg_.fingerprint() << "  run_dir " << cfg_.run_dir.string() << std::endl;
  while (epoch_ < cfg_.epochs_total) {
    const auto t0 = std::chrono::steady_clock::now();
    auto s = train_epoch();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (cfg_.verbose)
      std::cout << "epoch " << std::setw(3) << s.epoch + 1 << "/" << cfg_.epochs_total << "  lr " << s.lr
                << "  mean L_total " << std::setprecision(5) << s.mean_g_total << "  (" << std::setprecision(3)
                << secs << " s)" << std::endl;
    if (cfg_.checkpoint_every > 0 && epoch_ % cfg_.checkpoint_every == 0) {
      std::ostringstream name;
      name << "epoch_" << std::setw(3) << std::setfill('0') << epoch_;
      save_checkpoint(cfg_.run_dir / "checkpoints" / name.str());
    }
  }
  save_checkpoint(cfg_.run_dir / "final");
  log_.reset();
  return cfg_.run_dir;
}

void Trainer::save_checkpoint(const fs::path& dir) const {
  ckpt::write_atomically(dir, [this](const fs::path& tmp) {
    torch::save(g_ab_, (tmp / "g_ab.pt").string());
    torch::save(g_ba_, (tmp / "g_ba.pt").string());
    torch::save(d_a_, (tmp / "d_a.pt").string());
    torch::save(d_b_, (tmp / "d_b.pt").string());
    torch::save(*opt_g_, (tmp / "opt_g.pt").string());
    torch::save(*opt_d_, (tmp / "opt_d.pt").string());
    torch::save(std::vector<torch::Tensor>{pool_a_.snapshot(), pool_b_.snapshot()}, (tmp / "pools.pt").string());
    ckpt::Manifest m;
    m.epoch = epoch_;
    m.step = step_;
    m.fingerprint = cfg_.fingerprint();
    m.config_text = cfg_.to_text();
    m.rng_state = {{"data", rng_to_string(const_cast<Rng&>(data_rng_).engine())},
                   {"rotation", rng_to_string(const_cast<Rng&>(rot_rng_).engine())},
                   {"pool_a", rng_to_string(const_cast<backbone::ImagePool&>(pool_a_).engine())},
                   {"pool_b", rng_to_string(const_cast<backbone::ImagePool&>(pool_b_).engine())}};
    m.files = {"g_ab.pt", "g_ba.pt", "d_a.pt", "d_b.pt", "opt_g.pt", "opt_d.pt", "pools.pt"};
    ckpt::write_manifest(tmp, m);
  });
}

void Trainer::load_checkpoint(const fs::path& dir) {
  const auto m = ckpt::read_manifest(dir);
  const auto saved = TrainConfig::from_text(m.config_text);
  if (saved.generator.base_channels != cfg_.generator.base_channels ||
      saved.generator.n_resblocks != cfg_.generator.n_resblocks ||
      saved.generator.downsamples != cfg_.generator.downsamples ||
      saved.discriminator.base_channels != cfg_.discriminator.base_channels ||
      saved.discriminator.n_layers != cfg_.discriminator.n_layers)
    throw ConfigError("checkpoint architecture does not match the configuration");
  try {
    torch::load(g_ab_, (dir / "g_ab.pt").string());
    torch::load(g_ba_, (dir / "g_ba.pt").string());
    torch::load(d_a_, (dir / "d_a.pt").string());
    torch::load(d_b_, (dir / "d_b.pt").string());
    torch::load(*opt_g_, (dir / "opt_g.pt").string());
    torch::load(*opt_d_, (dir / "opt_d.pt").string());
    std::vector<torch::Tensor> pools;
    torch::load(pools, (dir / "pools.pt").string());
    if (pools.size() != 2) throw DataError("checkpoint pools.pt is malformed");
    pool_a_.restore(pools[0]);
    pool_b_.restore(pools[1]);
  } catch (const c10::Error& e) {
    throw IoError("cannot read checkpoint " + dir.string() + ": " + e.what_without_backtrace());
  }
  rng_from_string(data_rng_.engine(), m.rng_state.at("data"));
  rng_from_string(rot_rng_.engine(), m.rng_state.at("rotation"));
  rng_from_string(pool_a_.engine(), m.rng_state.at("pool_a"));
  rng_from_string(pool_b_.engine(), m.rng_state.at("pool_b"));
  epoch_ = m.epoch;
  step_ = m.step;
}

std::vector<torch::Tensor> Trainer::parameter_snapshot() const {
  std::vector<torch::Tensor> out;
  for (const torch::nn::Module* mod : {static_cast<const torch::nn::Module*>(g_ab_.get()),
                                       static_cast<const torch::nn::Module*>(g_ba_.get()),
                                       static_cast<const torch::nn::Module*>(d_a_.get()),
                                       static_cast<const torch::nn::Module*>(d_b_.get())})
    for (const auto& p : mod->parameters()) out.push_back(p.detach().clone());
  return out;
}

fs::path train(const TrainConfig& cfg) {
  Trainer t(cfg);
  return t.run();
}

Direction parse_direction(const std::string& s) {
  if (s == "A2B" || s == "a2b") return Direction::AtoB;
  if (s == "B2A" || s == "b2a") return Direction::BtoA;
  throw ConfigError("direction must be A2B or B2A, got '" + s + "'");
}

TrainConfig checkpoint_config(const fs::path& checkpoint) {
  return TrainConfig::from_text(ckpt::read_manifest(checkpoint).config_text);
}

backbone::Generator load_generator(const fs::path& checkpoint, Direction d) {
  const auto cfg = checkpoint_config(checkpoint);
  backbone::Generator g(cfg.generator);
  const auto file = checkpoint / (d == Direction::AtoB ? "g_ab.pt" : "g_ba.pt");
  try {
    torch::load(g, file.string());
  } catch (const c10::Error& e) {
    throw IoError("cannot read generator " + file.string() + ": " + e.what_without_backtrace());
  }
  g->eval();
  return g;
}

std::vector<std::string> translate_dir(backbone::Generator& g, const fs::path& in_dir, const fs::path& out_dir) {
  if (!fs::is_directory(in_dir)) throw DataError("input directory not found: " + in_dir.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  fs::create_directories(out_dir);
  const int64_t stride = g->spec().stride();
  std::vector<std::string> names;
  for (const auto& f : files) {
    auto img = load_image(f);
    if (img.height() % stride != 0 || img.width() % stride != 0)
      throw DataError(f.string() + " is " + std::to_string(img.height()) + "x" + std::to_string(img.width()) +
                      ", not divisible by the generator stride " + std::to_string(stride) +
                      "; pad or crop inputs to a multiple of " + std::to_string(stride));
    auto out = backbone::translate(g, to_range(img, ValueRange::SignedUnit));
    save_image(out, out_dir / f.filename());
    names.push_back(f.filename().string());
  }
  nlohmann::json j{{"input_dir", in_dir.string()}, {"files", names}};
  std::ofstream(out_dir / "translate_manifest.json") << j.dump(2) << '\n';
  return names;
}

std::vector<std::string> translate_dir(const fs::path& checkpoint, const fs::path& in_dir, const fs::path& out_dir,
                                       Direction d) {
  auto g = load_generator(checkpoint, d);
  return translate_dir(g, in_dir, out_dir);
}

}  // namespace cst
