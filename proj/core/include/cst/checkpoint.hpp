#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace cst::ckpt {

inline constexpr const char* kFormat = "cst-checkpoint";
inline constexpr int kVersion = 1;

/// Top-level manifest.json of a checkpoint directory. `files` lists the
/// tensor archives next to it (generators, critics, optimizers, pools).
struct Manifest {
  int version = kVersion;
  int epoch = 0;  // epochs completed
  int64_t step = 0;
  std::string fingerprint;
  std::string config_text;
  std::map<std::string, std::string> rng_state;
  std::vector<std::string> files;
};

void write_manifest(const std::filesystem::path& dir, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& dir);

/// Populates `<dir>.tmp` through `fill`, then replaces `dir` with it, so a
/// crash never leaves a half-written checkpoint under the final name.
void write_atomically(const std::filesystem::path& dir, const std::function<void(const std::filesystem::path&)>& fill);

}  // namespace cst::ckpt
