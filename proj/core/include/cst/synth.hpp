#pragma once

#include "cst/image.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cst::synth {

/// splitmix64 finalizer applied to master + golden * (index + 1); the
/// per-image seed derivation used throughout dataset generation.
uint64_t mix_seed(uint64_t master, uint64_t index);

struct VesselTreeParams {
  int n_roots = 2;
  double branch_prob = 0.08;   // per step
  double step_len = 2.0;       // pixels
  int max_steps = 26;          // steps per branch
  int max_depth = 3;
  double radius_root = 1.6;    // pixels
  double radius_decay = 0.75;  // per branching generation
  double curvature_jitter = 0.22;  // radians, std-dev per step

  void validate() const;
};

enum class Polarity { BrightOnDark, DarkOnBright };
enum class Background { Speckle, SmoothTexture };

struct DomainStyle {
  Polarity polarity = Polarity::BrightOnDark;
  Background background = Background::Speckle;
  double background_level = 0.1;  // base intensity before polarity flip
  double texture_amp = 0.15;      // 0 disables the background texture
  double noise_std = 0.04;
  double blur_sigma = 0.6;
  double gamma = 1.0;
  double contrast = 0.7;

  void validate() const;
};

/// Style presets for the two synthetic domains: A is bright vessels on a
/// speckled dark field, B is dark vessels on a smoothly textured bright field.
DomainStyle domain_a_style();
DomainStyle domain_b_style();

/// Rasterizes a random branching walk into an H x W mask. Deterministic in
/// (seed, params, size). Each root's tree is 8-connected.
BinaryMask sample_vessel_tree(uint64_t seed, const VesselTreeParams& params, int64_t height,
                              int64_t width);

/// Renders a unit-range single-channel image from a mask.
ImageTensor render(const BinaryMask& mask, const DomainStyle& style, uint64_t seed);

enum class Split { Train, Test };
enum class Domain { A, B };

struct ManifestEntry {
  std::string path;       // relative to the dataset root
  Domain domain = Domain::A;
  Split split = Split::Train;
  int index = 0;
  uint64_t mask_seed = 0;
  uint64_t render_seed = 0;
  std::string mask_path;  // empty for train images
};

struct Manifest {
  int version = 1;
  uint64_t master_seed = 0;
  int64_t size = 64;
  int n_train = 0;
  int n_test = 0;
  VesselTreeParams tree;
  DomainStyle style_a;
  DomainStyle style_b;
  std::vector<ManifestEntry> entries;

  void save(const std::filesystem::path& file) const;
  static Manifest load(const std::filesystem::path& file);
};

struct DatasetRequest {
  std::filesystem::path out_dir;
  int n_train = 400;  // per domain
  int n_test = 100;   // per domain
  uint64_t seed = 0;
  int64_t size = 64;
  VesselTreeParams tree;
  DomainStyle style_a = domain_a_style();
  DomainStyle style_b = domain_b_style();
};

/// Mask seed for image `index` of (domain, split). The four streams are
/// disjoint by construction; generate_dataset re-checks the train streams.
uint64_t mask_seed_for(uint64_t master, Domain d, Split s, int index);
uint64_t render_seed_for(uint64_t master, Domain d, Split s, int index);

/// Writes out_dir/{trainA,trainB,testA,testB,masksA,masksB}/NNNN.png and
/// manifest.json. Throws ConfigError if train A/B mask seeds intersect.
Manifest generate_dataset(const DatasetRequest& req);

/// Rebuilds one entry's image (and mask) from the manifest seeds.
std::pair<ImageTensor, BinaryMask> regenerate(const Manifest& m, const ManifestEntry& e);

/// Throws ConfigError when the train-split seed sets of A and B overlap.
void check_unpaired(const Manifest& m);

std::string to_string(Domain d);
std::string to_string(Split s);

}  // namespace cst::synth
