#pragma once

#include "cst/config.hpp"
#include "cst/evaluation.hpp"
#include "cst/segmenter.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cst::eval {

struct ExperimentOptions {
  std::filesystem::path out_dir = "experiments";
  std::vector<uint64_t> seeds{0, 1, 2};
  SegHarnessConfig seg;
  bool reuse_runs = true;  // skip training when run/final matches the config fingerprint
  bool verbose = true;
};

/// Downstream scores of one trained variant, per seed and median over seeds.
struct VariantResult {
  std::string name;
  bool uses_cur = false;
  bool uses_rot = false;
  std::vector<double> dice, iou, cldice, ssim, lpips_like;  // one entry per seed
  double median_dice = 0, median_iou = 0, median_cldice = 0, median_ssim = 0, median_lpips = 0;
};

struct ExperimentTable {
  std::string title;
  std::vector<VariantResult> rows;  // rows[0] is the reference (full model)

  /// Relative decline of `row` from the reference in median Dice, in percent.
  [[nodiscard]] double relative_decline(size_t row) const;
  [[nodiscard]] const VariantResult& find(const std::string& name) const;
  [[nodiscard]] std::string to_markdown() const;
  void write(const std::filesystem::path& dir, const std::string& stem) const;
};

double median(std::vector<double> v);

/// Trains one configuration (reusing a matching finished run when allowed),
/// translates testA with the A->B generator, and scores it against masksA.
/// Returns the report; also writes it to `run_dir/eval`.
MetricsReport train_and_evaluate(const TrainConfig& cfg, SegModel& seg, const ExperimentOptions& opt);

/// Trains (or reloads from out_dir/seg) the downstream segmenter on the
/// target-domain test split: data_dir/testB with data_dir/masksB.
SegModel target_segmenter(const TrainConfig& base, const ExperimentOptions& opt);

/// Full model, without the structure loss, without the rotation loss, and
/// the plain baseline, each over every seed. Writes ablation.md/.json.
ExperimentTable run_ablation(const TrainConfig& base, const ExperimentOptions& opt);

/// Full model once per extraction backend spec (e.g. "ridge:1,2",
/// "ridge:1,2,4"). Writes cem_swap.md/.json.
ExperimentTable run_extractor_swap(const TrainConfig& base, const std::vector<std::string>& backends,
                                   const ExperimentOptions& opt);

}  // namespace cst::eval
