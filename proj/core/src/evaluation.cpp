#include "cst/evaluation.hpp"

#include "cst/errors.hpp"
#include "cst/metrics.hpp"
#include "cst/trainer.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace cst::eval {

namespace fs = std::filesystem;

MetricsReport::MetricsReport(std::vector<MetricsRow> rows, std::string fingerprint)
    : rows_(std::move(rows)), fingerprint_(std::move(fingerprint)) {}

const std::vector<std::string>& MetricsReport::columns() {
  static const std::vector<std::string> cols{"lpips_like", "ssim", "dice", "iou", "cldice", "cem_dice"};
  return cols;
}

bool MetricsReport::has_cem_column() const {
  return !rows_.empty() && rows_.front().cem_dice.has_value();
}

double column_value(const MetricsRow& row, const std::string& column) {
  if (column == "lpips_like") return row.lpips_like;
  if (column == "ssim") return row.ssim;
  if (column == "dice") return row.dice;
  if (column == "iou") return row.iou;
  if (column == "cldice") return row.cldice;
  if (column == "cem_dice") {
    if (!row.cem_dice) throw_parameter("report has no cem_dice column");
    return *row.cem_dice;
  }
  throw_parameter("unknown metrics column '" + column + "'");
}

Aggregate MetricsReport::aggregate(const std::string& column) const {
  Aggregate a;
  if (rows_.empty()) return a;
  const double n = static_cast<double>(rows_.size());
  for (const auto& r : rows_) a.mean += column_value(r, column);
  a.mean /= n;
  double ss = 0;
  for (const auto& r : rows_) {
    const double d = column_value(r, column) - a.mean;
    ss += d * d;
  }
  a.std = std::sqrt(ss / n);
  return a;
}

void MetricsReport::write(const fs::path& dir) const {
  fs::create_directories(dir);
  const bool cem = has_cem_column();
  std::ofstream csv(dir / "report.csv");
  csv << "image_id,lpips_like,ssim,dice,iou,cldice" << (cem ? ",cem_dice" : "") << '\n';
  csv << std::setprecision(17);
  for (const auto& r : rows_) {
    csv << r.image_id << ',' << r.lpips_like << ',' << r.ssim << ',' << r.dice << ',' << r.iou << ',' << r.cldice;
    if (cem) csv << ',' << r.cem_dice.value_or(0.0);
    csv << '\n';
  }
  if (!csv) throw IoError("cannot write " + (dir / "report.csv").string());

  nlohmann::json j;
  j["fingerprint"] = fingerprint_;
  j["n_images"] = rows_.size();
  for (const auto& c : columns()) {
    if (c == "cem_dice" && !cem) continue;
    const auto a = aggregate(c);
    j["aggregate"][c] = {{"mean", a.mean}, {"std", a.std}};
  }
  std::ofstream(dir / "report.json") << j.dump(2) << '\n';
}

MetricsReport MetricsReport::read(const fs::path& dir) {
  std::ifstream csv(dir / "report.csv");
  if (!csv) throw IoError("cannot read " + (dir / "report.csv").string());
  std::string line;
  std::getline(csv, line);
  const bool cem = line.find("cem_dice") != std::string::npos;
  std::vector<MetricsRow> rows;
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> f;
    while (std::getline(ss, field, ',')) f.push_back(field);
    if (f.size() != (cem ? 7u : 6u)) throw DataError("malformed report row: " + line);
    MetricsRow r;
    r.image_id = f[0];
    r.lpips_like = std::stod(f[1]);
    r.ssim = std::stod(f[2]);
    r.dice = std::stod(f[3]);
    r.iou = std::stod(f[4]);
    r.cldice = std::stod(f[5]);
    if (cem) r.cem_dice = std::stod(f[6]);
    rows.push_back(std::move(r));
  }
  std::string fp;
  std::ifstream js(dir / "report.json");
  if (js) {
    nlohmann::json j;
    js >> j;
    fp = j.value("fingerprint", "");
  }
  return MetricsReport(std::move(rows), fp);
}

MetricsReport evaluate_translation(const EvaluationInputs& in, SegModel& seg, loss::PerceptualNet& perceptual) {
  std::vector<std::string> names;
  auto src = load_image_stack(in.src_dir, 0, &names);
  std::vector<std::string> tnames;
  auto translated = load_image_stack(in.translated_dir, 0, &tnames);
  if (names != tnames) throw DataError("source and translated directories hold different file sets");
  if (src.sizes() != translated.sizes()) throw DataError("source and translated images differ in size");

  torch::Tensor lp;
  {
    torch::NoGradGuard no_grad;
    lp = loss::perceptual_distance_per_sample(perceptual, src, translated).to(torch::kDouble);
  }
  auto preds = seg.predict(translated);

  torch::Tensor cem_maps;
  if (in.cem) {
    torch::NoGradGuard no_grad;
    cem_maps = in.cem->extract_batch(signed_to_unit(translated));
  }

  std::vector<MetricsRow> rows;
  rows.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    const auto mask_path = in.gt_masks_dir / names[i];
    if (!fs::exists(mask_path)) throw DataError("missing ground-truth mask " + mask_path.string());
    const auto gt = load_mask(mask_path);
    const auto& pred = preds[i];
    if (gt.height() != pred.height() || gt.width() != pred.width())
      throw DataError("mask " + mask_path.string() + " does not match its image size");
    const auto idx = static_cast<int64_t>(i);
    MetricsRow r;
    r.image_id = fs::path(names[i]).stem().string();
    r.lpips_like = lp[idx].item<double>();
    r.ssim = ssim(ImageTensor(src[idx], ValueRange::SignedUnit), ImageTensor(translated[idx], ValueRange::SignedUnit));
    r.dice = dice_coeff(pred, gt);
    r.iou = iou_coeff(pred, gt);
    r.cldice = cldice(pred, gt);
    if (in.cem) r.cem_dice = dice_coeff(BinaryMask::from_tensor(cem_maps[idx][0], in.cem_threshold), gt);
    rows.push_back(std::move(r));
  }
  return MetricsReport(std::move(rows), in.fingerprint);
}

}  // namespace cst::eval
