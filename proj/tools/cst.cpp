// Command line front end: data generation, extraction, training,
// translation, evaluation and the two experiment runners.

#include <CLI11.hpp>

#include "cst/cem.hpp"
#include "cst/config.hpp"
#include "cst/errors.hpp"
#include "cst/evaluation.hpp"
#include "cst/experiments.hpp"
#include "cst/synth.hpp"
#include "cst/trainer.hpp"

#include <algorithm>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kRuntime = 3 };

void print_fingerprint(const std::string& fp) { std::cout << "config fingerprint " << fp << std::endl; }

cst::TrainConfig resolve_config(const fs::path& file, const std::vector<std::string>& overrides) {
  auto cfg = cst::TrainConfig::load(file);
  for (const auto& o : overrides) cfg.apply_override(o);
  cfg.validate();
  return cfg;
}

std::string seg_fingerprint(const cst::eval::SegHarnessConfig& s) {
  std::ostringstream o;
  o << "seg depth=" << s.depth << " base=" << s.base_channels << " epochs=" << s.epochs << " lr=" << s.lr
    << " batch=" << s.batch_size << " threshold=" << s.threshold << " seed=" << s.seed;
  return o.str();
}

void add_seg_flags(CLI::App* cmd, cst::eval::SegHarnessConfig& s) {
  cmd->add_option("--seg-epochs", s.epochs, "Segmenter training epochs")->capture_default_str();
  cmd->add_option("--seg-depth", s.depth, "Segmenter U-Net depth (number of poolings)")->capture_default_str();
  cmd->add_option("--seg-channels", s.base_channels, "Segmenter base channel count")->capture_default_str();
  cmd->add_option("--seg-lr", s.lr, "Segmenter Adam learning rate")->capture_default_str();
  cmd->add_option("--seg-batch", s.batch_size, "Segmenter batch size")->capture_default_str();
  cmd->add_option("--seg-threshold", s.threshold, "Binarization threshold for predictions, in (0,1)")
      ->capture_default_str();
  cmd->add_option("--seg-seed", s.seed, "Segmenter initialization and shuffling seed")->capture_default_str();
}

// Writes the map of every PNG under `in` (a file or directory) to `out`.
void extract_maps(const fs::path& in, const fs::path& out, const cst::cem::Backend& backend) {
  std::vector<fs::path> files;
  if (fs::is_directory(in)) {
    for (const auto& e : fs::directory_iterator(in))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
  } else if (fs::exists(in)) {
    files.push_back(in);
  } else {
    throw cst::DataError("input not found: " + in.string());
  }
  if (files.empty()) throw cst::DataError("no PNG files under " + in.string());
  fs::create_directories(out);
  for (const auto& f : files) {
    const auto map = cst::cem::extract(cst::load_image(f), backend);
    cst::save_image(cst::ImageTensor(map.tensor(), cst::ValueRange::Unit), out / f.filename());
  }
  std::cout << "wrote " << files.size() << " structure maps to " << out.string() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Structure-preserving unpaired image translation toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Intra-op CPU threads for commands without a config")->capture_default_str();

  // gen-data
  cst::synth::DatasetRequest gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic two-domain vessel dataset");
  gen_cmd->add_option("--out", gen.out_dir, "Output directory")->required();
  gen_cmd->add_option("--n", gen.n_train, "Training images per domain")->capture_default_str();
  gen_cmd->add_option("--n-test", gen.n_test, "Test images per domain")->capture_default_str();
  gen_cmd->add_option("--seed", gen.seed, "Master seed")->capture_default_str();
  gen_cmd->add_option("--size", gen.size, "Image side length in pixels")->capture_default_str();

  // extract
  fs::path ex_in, ex_out;
  std::string ex_backend = "ridge";
  auto* ex_cmd = app.add_subcommand("extract", "Compute structure maps for an image or a directory of images");
  ex_cmd->add_option("--in", ex_in, "Input PNG file or directory")->required();
  ex_cmd->add_option("--out", ex_out, "Output directory for the maps")->required();
  ex_cmd->add_option("--backend", ex_backend, "ridge | ridge:S1,S2,... | external:dir:PATH | external:exec:PATH")
      ->capture_default_str();

  // train
  fs::path tr_config;
  std::vector<std::string> tr_overrides;
  auto* tr_cmd = app.add_subcommand("train", "Train a translation model");
  tr_cmd->add_option("--config", tr_config, "Configuration file (key = value)")->required();
  tr_cmd->add_option("--override", tr_overrides, "Dotted key=value override applied after loading (repeatable)");

  // translate
  fs::path tl_ckpt, tl_in, tl_out;
  std::string tl_dir = "A2B";
  auto* tl_cmd = app.add_subcommand("translate", "Translate a directory of images with a trained generator");
  tl_cmd->add_option("--checkpoint", tl_ckpt, "Checkpoint directory (e.g. RUN/final)")->required();
  tl_cmd->add_option("--in", tl_in, "Input image directory")->required();
  tl_cmd->add_option("--out", tl_out, "Output directory")->required();
  tl_cmd->add_option("--direction", tl_dir, "A2B or B2A")->capture_default_str();

  // eval
  fs::path ev_src, ev_tr, ev_masks, ev_seg, ev_out = "eval_report", ev_seg_images, ev_seg_masks;
  std::string ev_cem;
  cst::eval::SegHarnessConfig ev_seg_cfg;
  auto* ev_cmd = app.add_subcommand("eval", "Score translated images against source masks");
  ev_cmd->add_option("--src", ev_src, "Source image directory")->required();
  ev_cmd->add_option("--translated", ev_tr, "Translated image directory (same file names)")->required();
  ev_cmd->add_option("--masks", ev_masks, "Ground-truth masks of the source images")->required();
  ev_cmd->add_option("--seg", ev_seg, "Segmenter checkpoint directory (seg.json + seg.pt)")->required();
  ev_cmd->add_option("--out", ev_out, "Report directory (report.csv, report.json)")->capture_default_str();
  ev_cmd->add_option("--train-seg-images", ev_seg_images,
                     "Target-domain images; when given, a segmenter is trained and saved to --seg first");
  ev_cmd->add_option("--train-seg-masks", ev_seg_masks, "Masks for --train-seg-images");
  ev_cmd->add_option("--cem", ev_cem, "Optional extraction backend; adds a cem_dice column");
  add_seg_flags(ev_cmd, ev_seg_cfg);

  // ablate / swap-cem
  fs::path ab_config, ab_out = "ablation";
  std::vector<std::string> ab_overrides;
  std::vector<uint64_t> ab_seeds{0, 1, 2};
  cst::eval::SegHarnessConfig ab_seg;
  bool ab_fresh = false;
  auto* ab_cmd = app.add_subcommand("ablate", "Train full / w/o L_Cur / w/o L_rot / baseline and tabulate");
  ab_cmd->add_option("--config", ab_config, "Base configuration file")->required();
  ab_cmd->add_option("--override", ab_overrides, "Dotted key=value override (repeatable)");
  ab_cmd->add_option("--out", ab_out, "Experiment directory")->capture_default_str();
  ab_cmd->add_option("--seeds", ab_seeds, "Training seeds")->delimiter(',')->capture_default_str();
  ab_cmd->add_flag("--fresh", ab_fresh, "Retrain even when a finished run with the same fingerprint exists");
  add_seg_flags(ab_cmd, ab_seg);

  fs::path sw_config, sw_out = "cem_swap";
  std::vector<std::string> sw_overrides, sw_backends{"ridge:1,2", "ridge:1,2,4", "ridge:2,4"};
  std::vector<uint64_t> sw_seeds{0, 1, 2};
  cst::eval::SegHarnessConfig sw_seg;
  bool sw_fresh = false;
  auto* sw_cmd = app.add_subcommand("swap-cem", "Repeat the full model with different extraction backends");
  sw_cmd->add_option("--config", sw_config, "Base configuration file")->required();
  sw_cmd->add_option("--override", sw_overrides, "Dotted key=value override (repeatable)");
  sw_cmd->add_option("--backend", sw_backends, "Differentiable backend spec (repeatable)")->capture_default_str();
  sw_cmd->add_option("--out", sw_out, "Experiment directory")->capture_default_str();
  sw_cmd->add_option("--seeds", sw_seeds, "Training seeds")->delimiter(',')->capture_default_str();
  sw_cmd->add_flag("--fresh", sw_fresh, "Retrain even when a finished run with the same fingerprint exists");
  add_seg_flags(sw_cmd, sw_seg);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    torch::set_num_threads(std::max(1, threads));
    if (*gen_cmd) {
      std::ostringstream o;
      o << "gen-data n=" << gen.n_train << " n_test=" << gen.n_test << " seed=" << gen.seed << " size=" << gen.size;
      print_fingerprint(cst::fnv1a_hex(o.str()));
      const auto m = cst::synth::generate_dataset(gen);
      std::cout << "wrote " << m.entries.size() << " images to " << gen.out_dir.string() << std::endl;
    } else if (*ex_cmd) {
      const auto backend = cst::cem::make_backend(ex_backend);
      print_fingerprint(cst::fnv1a_hex("extract " + backend->name()));
      extract_maps(ex_in, ex_out, *backend);
    } else if (*tr_cmd) {
      const auto cfg = resolve_config(tr_config, tr_overrides);
      print_fingerprint(cfg.fingerprint());
      const auto run = cst::train(cfg);
      std::cout << "finished run " << run.string() << std::endl;
    } else if (*tl_cmd) {
      const auto d = cst::parse_direction(tl_dir);
      print_fingerprint(cst::checkpoint_config(tl_ckpt).fingerprint());
      const auto names = cst::translate_dir(tl_ckpt, tl_in, tl_out, d);
      std::cout << "translated " << names.size() << " images to " << tl_out.string() << std::endl;
    } else if (*ev_cmd) {
      cst::eval::SegModel seg;
      if (!ev_seg_images.empty()) {
        if (ev_seg_masks.empty()) throw CLI::RequiredError("--train-seg-masks");
        seg = cst::eval::train_seg(ev_seg_images, ev_seg_masks, ev_seg_cfg);
        seg.save(ev_seg);
      } else {
        seg = cst::eval::SegModel::load(ev_seg);
      }
      std::unique_ptr<cst::cem::Backend> cem;
      if (!ev_cem.empty()) cem = cst::cem::make_backend(ev_cem);
      cst::eval::EvaluationInputs in{ev_src, ev_tr, ev_masks, cem.get(), 0.5,
                                     cst::fnv1a_hex("eval " + seg_fingerprint(seg.cfg) + " cem=" + ev_cem)};
      print_fingerprint(in.fingerprint);
      cst::loss::PerceptualNet perceptual{cst::loss::PerceptualSpec{}};
      const auto rep = cst::eval::evaluate_translation(in, seg, perceptual);
      rep.write(ev_out);
      for (const auto& c : cst::eval::MetricsReport::columns()) {
        if (c == "cem_dice" && !rep.has_cem_column()) continue;
        const auto a = rep.aggregate(c);
        std::cout << c << " " << a.mean << " +- " << a.std << '\n';
      }
    } else if (*ab_cmd || *sw_cmd) {
      const bool ablate = ab_cmd->parsed();
      const auto base = resolve_config(ablate ? ab_config : sw_config, ablate ? ab_overrides : sw_overrides);
      print_fingerprint(base.fingerprint());
      cst::eval::ExperimentOptions opt;
      opt.out_dir = ablate ? ab_out : sw_out;
      opt.seeds = ablate ? ab_seeds : sw_seeds;
      opt.seg = ablate ? ab_seg : sw_seg;
      opt.reuse_runs = !(ablate ? ab_fresh : sw_fresh);
      const auto table = ablate ? cst::eval::run_ablation(base, opt)
                                : cst::eval::run_extractor_swap(base, sw_backends, opt);
      std::cout << table.to_markdown();
    }
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kUsage;
  } catch (const cst::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << std::endl;
    return kUsage;
  } catch (const cst::ParameterError& e) {
    std::cerr << "invalid parameter: " << e.what() << std::endl;
    return kUsage;
  } catch (const cst::DataError& e) {
    std::cerr << "data error: " << e.what() << std::endl;
    return kData;
  } catch (const cst::IoError& e) {
    std::cerr << "i/o error: " << e.what() << std::endl;
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return kRuntime;
  }
  return kOk;
}
