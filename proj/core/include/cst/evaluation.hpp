#pragma once

#include "cst/cem.hpp"
#include "cst/perceptual.hpp"
#include "cst/segmenter.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cst::eval {

struct MetricsRow {
  std::string image_id;
  double lpips_like = 0;
  double ssim = 0;
  double dice = 0;
  double iou = 0;
  double cldice = 0;
  std::optional<double> cem_dice;  // structure map of the translation vs the source mask
};

struct Aggregate {
  double mean = 0;
  double std = 0;  // population standard deviation
};

/// Per-image rows plus mean/std per column. Aggregates are always derived
/// from the rows, never stored independently.
class MetricsReport {
 public:
  MetricsReport() = default;
  MetricsReport(std::vector<MetricsRow> rows, std::string fingerprint);

  [[nodiscard]] const std::vector<MetricsRow>& rows() const { return rows_; }
  [[nodiscard]] const std::string& fingerprint() const { return fingerprint_; }
  [[nodiscard]] static const std::vector<std::string>& columns();
  [[nodiscard]] bool has_cem_column() const;

  /// Aggregate of one column by name ("dice", "ssim", ...).
  [[nodiscard]] Aggregate aggregate(const std::string& column) const;

  /// Writes DIR/report.csv (rows) and DIR/report.json (aggregates and
  /// fingerprint).
  void write(const std::filesystem::path& dir) const;
  /// Reads rows and fingerprint back from DIR/report.csv and DIR/report.json.
  static MetricsReport read(const std::filesystem::path& dir);

 private:
  std::vector<MetricsRow> rows_;
  std::string fingerprint_;
};

/// Column value of a row; throws ParameterError for an unknown column.
double column_value(const MetricsRow& row, const std::string& column);

struct EvaluationInputs {
  std::filesystem::path src_dir;
  std::filesystem::path translated_dir;
  std::filesystem::path gt_masks_dir;
  const cem::Backend* cem = nullptr;  // adds the cem_dice column when set
  double cem_threshold = 0.5;
  std::string fingerprint;
};

/// For every PNG in src_dir: LPIPS-form distance and SSIM between source and
/// translation, then Dice/IoU/clDice of seg(translation) against the
/// source's ground-truth mask. Throws DataError when file sets differ.
MetricsReport evaluate_translation(const EvaluationInputs& in, SegModel& seg, loss::PerceptualNet& perceptual);

}  // namespace cst::eval
