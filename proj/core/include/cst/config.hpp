#pragma once

#include "cst/backbone.hpp"
#include "cst/losses.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace cst {

/// Every hyperparameter of a training run. Serialized as a flat
/// `key = value` document (see to_text) with dotted keys for nested groups.
struct TrainConfig {
  static constexpr int kVersion = 1;

  std::filesystem::path data_dir;
  std::filesystem::path run_dir = "run";
  std::filesystem::path resume_from;  // checkpoint directory, empty = fresh run

  int64_t image_size = 64;
  int64_t batch_size = 4;
  int epochs_total = 30;
  int epochs_constant_lr = 15;
  double lr = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  uint64_t seed = 0;
  int checkpoint_every = 5;  // epochs; 0 = only final
  int max_train_images = 0;  // per domain; 0 = all
  int threads = 1;
  bool verbose = true;

  loss::CstWeights cst;
  bool cst_symmetric = true;        // apply structure/rotation terms to both directions, averaged
  bool cst_detach_maps = false;     // stop gradients at the extractor
  bool per_image_rotation = false;  // one rotation sample per image instead of per batch
  bool disable_cur = false;
  bool disable_rot = false;

  backbone::BaselineLossWeights baseline;
  int pool_size = 50;
  backbone::GeneratorSpec generator;
  backbone::DiscriminatorSpec discriminator;

  std::string cem_backend = "ridge";
  uint64_t perceptual_seed = 0x5eed;
  std::filesystem::path perceptual_weights;
  bool perceptual_polarity_invariant = true;

  void validate() const;

  /// Applies one `key=value` assignment; throws ConfigError on unknown keys
  /// or unparsable values.
  void set(const std::string& key, const std::string& value);
  [[nodiscard]] std::string get(const std::string& key) const;
  [[nodiscard]] static const std::vector<std::string>& keys();

  /// Canonical document: a `version` line then every key in keys() order.
  [[nodiscard]] std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
  static TrainConfig load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  /// Applies a dotted `k=v` override string.
  void apply_override(const std::string& assignment);

  /// 16 hex digits of FNV-1a over the canonical text of all keys except
  /// filesystem locations (data_dir, run_dir, resume_from).
  [[nodiscard]] std::string fingerprint() const;

  [[nodiscard]] bool structure_loss_active() const { return !disable_cur; }
  [[nodiscard]] bool rotation_loss_active() const { return !disable_rot; }
};

/// 64-bit FNV-1a of a byte string, rendered as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

/// Device from the CST_DEVICE environment variable ("cpu" when unset).
torch::Device default_device();

}  // namespace cst
