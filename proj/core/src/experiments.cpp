#include "cst/experiments.hpp"

#include "cst/checkpoint.hpp"
#include "cst/errors.hpp"
#include "cst/trainer.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

namespace cst::eval {

namespace fs = std::filesystem;

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

double ExperimentTable::relative_decline(size_t row) const {
  const double ref = rows.at(0).median_dice;
  if (ref == 0.0) return 0.0;
  return 100.0 * (ref - rows.at(row).median_dice) / ref;
}

const VariantResult& ExperimentTable::find(const std::string& name) const {
  for (const auto& r : rows)
    if (r.name == name) return r;
  throw_parameter("no row named '" + name + "'");
}

std::string ExperimentTable::to_markdown() const {
  std::ostringstream o;
  o << "## " << title << "\n\n";
  o << "| variant | L_Cur | L_rot | mDice | mIoU | mclDice | SSIM | LPIPS-like | decline vs full |\n";
  o << "|---|:-:|:-:|---|---|---|---|---|---|\n";
  o << std::fixed;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    o << "| " << r.name << " | " << (r.uses_cur ? "x" : "") << " | " << (r.uses_rot ? "x" : "") << " | "
      << std::setprecision(4) << r.median_dice << " | " << r.median_iou << " | " << r.median_cldice << " | "
      << r.median_ssim << " | " << r.median_lpips << " | ";
    if (i == 0)
      o << "-";
    else
      o << std::setprecision(1) << relative_decline(i) << "%";
    o << " |\n";
  }
  o << "\nValues are medians over " << (rows.empty() ? 0 : rows[0].dice.size())
    << " training seeds of per-run means over the translated test split.\n";
  return o.str();
}

void ExperimentTable::write(const fs::path& dir, const std::string& stem) const {
  fs::create_directories(dir);
  std::ofstream(dir / (stem + ".md")) << to_markdown();
  nlohmann::json j;
  j["title"] = title;
  for (size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    j["rows"].push_back({{"variant", r.name},
                         {"uses_cur", r.uses_cur},
                         {"uses_rot", r.uses_rot},
                         {"dice", r.dice},
                         {"iou", r.iou},
                         {"cldice", r.cldice},
                         {"ssim", r.ssim},
                         {"lpips_like", r.lpips_like},
                         {"median_dice", r.median_dice},
                         {"median_iou", r.median_iou},
                         {"median_cldice", r.median_cldice},
                         {"median_ssim", r.median_ssim},
                         {"median_lpips_like", r.median_lpips},
                         {"relative_decline_pct", i == 0 ? 0.0 : relative_decline(i)}});
  }
  std::ofstream(dir / (stem + ".json")) << j.dump(2) << '\n';
}

namespace {

bool finished_run_matches(const TrainConfig& cfg) {
  const fs::path final_dir = cfg.run_dir / "final";
  if (!fs::exists(final_dir / "manifest.json")) return false;
  try {
    const auto m = ckpt::read_manifest(final_dir);
    return m.fingerprint == cfg.fingerprint() && m.epoch == cfg.epochs_total;
  } catch (const Error&) {
    return false;
  }
}

// Latest intermediate checkpoint of an interrupted run with the same config.
fs::path resumable_checkpoint(const TrainConfig& cfg) {
  const fs::path dir = cfg.run_dir / "checkpoints";
  if (!fs::is_directory(dir)) return {};
  fs::path best;
  int best_epoch = -1;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_directory() || e.path().extension() == ".tmp") continue;
    try {
      const auto m = ckpt::read_manifest(e.path());
      if (m.fingerprint == cfg.fingerprint() && m.epoch > best_epoch) {
        best_epoch = m.epoch;
        best = e.path();
      }
    } catch (const Error&) {
    }
  }
  return best;
}

void finalize(VariantResult& r) {
  r.median_dice = median(r.dice);
  r.median_iou = median(r.iou);
  r.median_cldice = median(r.cldice);
  r.median_ssim = median(r.ssim);
  r.median_lpips = median(r.lpips_like);
}

void add_seed(VariantResult& r, const MetricsReport& rep) {
  r.dice.push_back(rep.aggregate("dice").mean);
  r.iou.push_back(rep.aggregate("iou").mean);
  r.cldice.push_back(rep.aggregate("cldice").mean);
  r.ssim.push_back(rep.aggregate("ssim").mean);
  r.lpips_like.push_back(rep.aggregate("lpips_like").mean);
}

std::string seed_dir(uint64_t seed) { return "seed_" + std::to_string(seed); }

}  // namespace

SegModel target_segmenter(const TrainConfig& base, const ExperimentOptions& opt) {
  const fs::path dir = opt.out_dir / "seg";
  if (opt.reuse_runs && fs::exists(dir / "seg.json")) {
    auto m = SegModel::load(dir);
    if (m.cfg.depth == opt.seg.depth && m.cfg.base_channels == opt.seg.base_channels &&
        m.cfg.epochs == opt.seg.epochs && m.cfg.seed == opt.seg.seed && m.cfg.lr == opt.seg.lr &&
        m.cfg.batch_size == opt.seg.batch_size && m.cfg.threshold == opt.seg.threshold)
      return m;
  }
  if (opt.verbose) std::cout << "training downstream segmenter on " << (base.data_dir / "testB").string() << std::endl;
  auto m = train_seg(base.data_dir / "testB", base.data_dir / "masksB", opt.seg);
  m.save(dir);
  return m;
}

MetricsReport train_and_evaluate(const TrainConfig& cfg_in, SegModel& seg, const ExperimentOptions& opt) {
  TrainConfig cfg = cfg_in;
  cfg.verbose = opt.verbose;
  if (!(opt.reuse_runs && finished_run_matches(cfg))) {
    cfg.resume_from = opt.reuse_runs ? resumable_checkpoint(cfg) : fs::path{};
    if (cfg.resume_from.empty()) fs::remove_all(cfg.run_dir);
    train(cfg);
  } else if (opt.verbose) {
    std::cout << "reusing finished run " << cfg.run_dir.string() << " (fingerprint " << cfg.fingerprint() << ")"
              << std::endl;
  }
  const fs::path translated = cfg.run_dir / "translated_testA";
  fs::remove_all(translated);
  translate_dir(cfg.run_dir / "final", cfg.data_dir / "testA", translated, Direction::AtoB);

  loss::PerceptualSpec pspec;
  pspec.seed = cfg.perceptual_seed;
  pspec.weights_file = cfg.perceptual_weights;
  pspec.polarity_invariant = cfg.perceptual_polarity_invariant;
  loss::PerceptualNet perceptual(pspec);
  EvaluationInputs in;
  in.src_dir = cfg.data_dir / "testA";
  in.translated_dir = translated;
  in.gt_masks_dir = cfg.data_dir / "masksA";
  in.fingerprint = cfg.fingerprint();
  auto rep = evaluate_translation(in, seg, perceptual);
  rep.write(cfg.run_dir / "eval");
  if (opt.verbose)
    std::cout << cfg.run_dir.string() << ": mean Dice " << rep.aggregate("dice").mean << "  SSIM "
              << rep.aggregate("ssim").mean << std::endl;
  return rep;
}

ExperimentTable run_ablation(const TrainConfig& base, const ExperimentOptions& opt) {
  base.validate();
  auto seg = target_segmenter(base, opt);

  struct Variant {
    std::string name;
    bool cur;
    bool rot;
  };
  const std::vector<Variant> variants{
      {"full", true, true}, {"w/o L_Cur", false, true}, {"w/o L_rot", true, false}, {"baseline", false, false}};
  const std::vector<std::string> dirs{"full", "no_cur", "no_rot", "baseline"};

  ExperimentTable table;
  table.title = "Ablation of the structure and rotation losses";
  for (size_t v = 0; v < variants.size(); ++v) {
    VariantResult r;
    r.name = variants[v].name;
    r.uses_cur = variants[v].cur;
    r.uses_rot = variants[v].rot;
    for (const auto seed : opt.seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.disable_cur = !variants[v].cur;
      cfg.disable_rot = !variants[v].rot;
      cfg.run_dir = opt.out_dir / dirs[v] / seed_dir(seed);
      add_seed(r, train_and_evaluate(cfg, seg, opt));
    }
    finalize(r);
    table.rows.push_back(std::move(r));
  }
  table.write(opt.out_dir, "ablation");
  return table;
}

ExperimentTable run_extractor_swap(const TrainConfig& base, const std::vector<std::string>& backends,
                                   const ExperimentOptions& opt) {
  base.validate();
  if (backends.empty()) throw ConfigError("extractor swap needs at least one backend");
  auto seg = target_segmenter(base, opt);
  ExperimentTable table;
  table.title = "Extraction backend swap (full model)";
  for (const auto& spec : backends) {
    const auto backend = cem::make_backend(spec);
    if (!backend->differentiable())
      throw ConfigError("backend '" + spec + "' is not differentiable and cannot drive the structure loss");
    VariantResult r;
    r.name = spec;
    r.uses_cur = r.uses_rot = true;
    std::string safe = spec;
    std::replace_if(safe.begin(), safe.end(), [](char c) { return !std::isalnum(static_cast<unsigned char>(c)); }, '_');
    for (const auto seed : opt.seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.disable_cur = cfg.disable_rot = false;
      cfg.cem_backend = spec;
      cfg.run_dir = opt.out_dir / ("cem_" + safe) / seed_dir(seed);
      add_seed(r, train_and_evaluate(cfg, seg, opt));
    }
    finalize(r);
    table.rows.push_back(std::move(r));
  }
  table.write(opt.out_dir, "cem_swap");
  return table;
}

}  // namespace cst::eval
