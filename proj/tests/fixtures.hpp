#pragma once

// Small on-disk datasets and configs shared by the trainer, evaluation and
// CLI suites. Everything lives under one per-process temporary root.

#include "cst/config.hpp"
#include "cst/synth.hpp"

#include <unistd.h>

#include <filesystem>
#include <string>

namespace fixtures {

// Removes the temporary root when the test process exits.
inline struct TempCleanup {
  std::filesystem::path dir;
  ~TempCleanup() {
    std::error_code ec;
    if (!dir.empty()) std::filesystem::remove_all(dir, ec);
  }
} temp_cleanup;

inline std::filesystem::path temp_root() {
  static const std::filesystem::path root = [] {
    auto p = std::filesystem::temp_directory_path() / ("cst_tests_" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    temp_cleanup.dir = p;
    return p;
  }();
  return root;
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto p = temp_root() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// 8 train and 4 test images per domain at 32x32.
inline std::filesystem::path tiny_dataset() {
  static const std::filesystem::path dir = [] {
    cst::synth::DatasetRequest req;
    req.out_dir = temp_root() / "tiny_data";
    req.n_train = 8;
    req.n_test = 4;
    req.size = 32;
    req.seed = 3;
    cst::synth::generate_dataset(req);
    return req.out_dir;
  }();
  return dir;
}

inline cst::TrainConfig tiny_config(const std::string& run_name) {
  cst::TrainConfig c;
  c.data_dir = tiny_dataset();
  c.run_dir = temp_root() / run_name;
  c.image_size = 32;
  c.batch_size = 4;
  c.epochs_total = 2;
  c.epochs_constant_lr = 1;
  c.checkpoint_every = 0;
  c.verbose = false;
  c.generator.base_channels = 4;
  c.generator.n_resblocks = 1;
  c.discriminator.base_channels = 4;
  c.discriminator.n_layers = 2;
  c.seed = 7;
  return c;
}

}  // namespace fixtures
