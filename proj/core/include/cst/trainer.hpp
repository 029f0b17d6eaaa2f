#pragma once

#include "cst/backbone.hpp"
#include "cst/cem.hpp"
#include "cst/config.hpp"
#include "cst/losses.hpp"
#include "cst/perceptual.hpp"
#include "cst/random.hpp"

#include <torch/torch.h>

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace cst {

/// Learning rate for a 0-based epoch: constant for the first
/// epochs_constant_lr epochs, then lr * (1 - k / (total - constant)) at
/// epoch constant + k.
double scheduled_lr(const TrainConfig& cfg, int epoch);

/// Loads every *.png under `dir` (sorted by name) as a signed-unit
/// [N, C, H, W] tensor. Throws DataError when sizes differ or the directory
/// is empty.
torch::Tensor load_image_stack(const std::filesystem::path& dir, int limit = 0,
                               std::vector<std::string>* names = nullptr);

struct EpochSummary {
  int epoch = 0;
  double lr = 0;
  double mean_g_total = 0;
  double mean_d = 0;
  int64_t steps = 0;
};

/// CycleGAN training loop with the optional structure and rotation terms.
///
/// Per step: generators are updated jointly on l_base + lambda1 * l_cur +
/// lambda2 * l_rot, then both critics on their least-squares loss with
/// pooled fakes. Data order, rotation draws, and pool draws use separate
/// seeded streams, so switching the CST terms off does not perturb the rest.
class Trainer {
 public:
  explicit Trainer(TrainConfig cfg);

  /// Runs all remaining epochs; returns the run directory.
  std::filesystem::path run();

  EpochSummary train_epoch();

  /// One generator + critic update on explicit batches; appends the
  /// breakdown to the log when one is open. Exposed for tests.
  loss::LossBreakdown train_step(const torch::Tensor& batch_a, const torch::Tensor& batch_b,
                                 const torch::Tensor& map_a = {}, const torch::Tensor& map_b = {});

  void save_checkpoint(const std::filesystem::path& dir) const;
  void load_checkpoint(const std::filesystem::path& dir);

  [[nodiscard]] int epoch() const { return epoch_; }
  [[nodiscard]] int64_t step() const { return step_; }
  [[nodiscard]] const TrainConfig& config() const { return cfg_; }
  backbone::Generator& g_ab() { return g_ab_; }
  backbone::Generator& g_ba() { return g_ba_; }
  backbone::PatchDiscriminator& d_a() { return d_a_; }
  backbone::PatchDiscriminator& d_b() { return d_b_; }

  /// Flattened copy of all generator and critic parameters, in a fixed order.
  [[nodiscard]] std::vector<torch::Tensor> parameter_snapshot() const;

 private:
  void load_data();
  void set_lr(double lr);
  void dump_batch(const torch::Tensor& a, const torch::Tensor& b, const std::string& why) const;

  TrainConfig cfg_;
  torch::Device device_;
  backbone::Generator g_ab_{nullptr}, g_ba_{nullptr};
  backbone::PatchDiscriminator d_a_{nullptr}, d_b_{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g_, opt_d_;
  std::unique_ptr<cem::Backend> cem_;
  loss::PerceptualNet perceptual_{nullptr};
  backbone::ImagePool pool_a_, pool_b_;
  Rng data_rng_, rot_rng_;

  torch::Tensor train_a_, train_b_;
  torch::Tensor maps_a_, maps_b_;  // cached structure maps of the real images
  std::unique_ptr<loss::LossLog> log_;

  int epoch_ = 0;  // epochs completed
  int64_t step_ = 0;
};

/// Trains from scratch (or resumes per cfg.resume_from); returns the run dir.
std::filesystem::path train(const TrainConfig& cfg);

enum class Direction { AtoB, BtoA };
Direction parse_direction(const std::string& s);

/// Reads the config snapshot stored in a checkpoint directory.
TrainConfig checkpoint_config(const std::filesystem::path& checkpoint);

/// Restores one generator from a checkpoint directory.
backbone::Generator load_generator(const std::filesystem::path& checkpoint, Direction d);

/// Translates every PNG in `in_dir` into `out_dir`, keeping file names, and
/// writes out_dir/translate_manifest.json. Returns the written file names.
std::vector<std::string> translate_dir(const std::filesystem::path& checkpoint, const std::filesystem::path& in_dir,
                                       const std::filesystem::path& out_dir, Direction d);
std::vector<std::string> translate_dir(backbone::Generator& g, const std::filesystem::path& in_dir,
                                       const std::filesystem::path& out_dir);

}  // namespace cst
