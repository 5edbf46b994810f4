#include "ugp/cli.hpp"

#include "ugp/config.hpp"
#include "ugp/data.hpp"
#include "ugp/degrade.hpp"
#include "ugp/errors.hpp"
#include "ugp/metrics.hpp"
#include "ugp/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <optional>

namespace ugp::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig base_config(const std::string& path) { return path.empty() ? RunConfig{} : load_config(path); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IOError("cannot write " + path.string());
  out << text;
}

degrade::DegradationSpec read_spec(const std::string& path) {
  if (!fs::exists(path)) throw NotFound(path);
  try {
    json j;
    std::ifstream(path) >> j;
    return j.get<degrade::DegradationSpec>();
  } catch (const json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

std::optional<Checkpoint> checkpoint_from(const std::string& explicit_path, const fs::path& dir, Stage stage) {
  if (!explicit_path.empty()) return load_checkpoint(explicit_path);
  if (auto p = latest_checkpoint(dir, stage)) return load_checkpoint(*p);
  return std::nullopt;
}

const Checkpoint* ptr(const std::optional<Checkpoint>& c) { return c ? &*c : nullptr; }

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"UGPNet: regression restoration fused with a generative prior"};
  app.name("ugp");
  app.require_subcommand(0, 1);
  bool version = false;
  app.add_flag("--version", version, "Print artifact and config-schema versions");

  std::string config_path;
  auto add_config = [&](CLI::App* sub) { sub->add_option("--config", config_path, "Run config (JSON)"); };

  // toy
  auto* toy = app.add_subcommand("toy", "Write a procedural face corpus");
  std::string toy_out;
  int toy_count = 80, toy_res = 64;
  uint64_t toy_seed = 0;
  toy->add_option("--out", toy_out, "Output directory")->required();
  toy->add_option("--count", toy_count, "Number of images");
  toy->add_option("--res", toy_res, "Resolution");
  toy->add_option("--seed", toy_seed, "Seed");
  add_config(toy);

  // kernels
  auto* kernels = app.add_subcommand("kernels", "Generate a motion-blur kernel bank");
  std::string k_out;
  int k_n = 1000, k_size = 71;
  uint64_t k_seed = 0;
  kernels->add_option("--out", k_out, "Bank file (a .json sidecar is written next to it)")->required();
  kernels->add_option("--n", k_n, "Number of kernels");
  kernels->add_option("--size", k_size, "Odd kernel size");
  kernels->add_option("--seed", k_seed, "Seed");
  add_config(kernels);

  // degrade
  auto* deg = app.add_subcommand("degrade", "Degrade a clean directory and write its manifest");
  std::string d_spec, d_in, d_out, d_manifest;
  uint64_t d_seed = 0;
  double d_fraction = 0.0;
  deg->add_option("--spec", d_spec, "Degradation spec (JSON); defaults to the config's");
  deg->add_option("--in", d_in, "Clean image directory")->required();
  deg->add_option("--out", d_out, "Degraded image directory")->required();
  deg->add_option("--seed", d_seed, "Seed");
  deg->add_option("--manifest", d_manifest, "Manifest path (default <out>/manifest.jsonl)");
  deg->add_option("--test-fraction", d_fraction, "Also write train.jsonl and test.jsonl splits");
  add_config(deg);

  // train
  auto* train = app.add_subcommand("train", "Run one training stage");
  std::string t_stage, t_init, t_rest, t_pre, t_syn, t_manifest, t_dir, t_preset;
  std::optional<int> t_steps, t_batch;
  std::optional<uint64_t> t_seed;
  std::optional<double> t_lr;
  train->add_option("--stage", t_stage, "restoration | synthesis-pretrain | synthesis | fusion")->required();
  train->add_option("--steps", t_steps, "Override train.steps");
  train->add_option("--batch", t_batch, "Override train.batch");
  train->add_option("--seed", t_seed, "Override train.seed");
  train->add_option("--lr", t_lr, "Override every learning rate");
  train->add_option("--train-manifest", t_manifest, "Override train.train_manifest");
  train->add_option("--checkpoint-dir", t_dir, "Override train.checkpoint_dir");
  train->add_option("--preset", t_preset, "Ablation preset a | b | c");
  train->add_option("--init", t_init, "Restoration weights to start from");
  train->add_option("--restoration", t_rest, "Restoration checkpoint (default: latest in the run dir)");
  train->add_option("--pretrain", t_pre, "Synthesis-pretrain checkpoint (default: latest in the run dir)");
  train->add_option("--synthesis", t_syn, "Synthesis checkpoint (default: latest in the run dir)");
  add_config(train);

  // infer
  auto* infer = app.add_subcommand("infer", "Restore every image of a directory");
  std::string i_run, i_in, i_out;
  infer->add_option("--run", i_run, "Run directory holding the three stage checkpoints")->required();
  infer->add_option("--in", i_in, "Degraded image directory")->required();
  infer->add_option("--out", i_out, "Output directory (x_reg/, x_syn/, x_hat/)")->required();
  add_config(infer);

  // evaluate
  auto* eval = app.add_subcommand("evaluate", "Score predictions against ground truth");
  std::string e_pred, e_gt, e_out;
  eval->add_option("--pred", e_pred, "Prediction directory")->required();
  eval->add_option("--gt", e_gt, "Ground-truth directory")->required();
  eval->add_option("--out", e_out, "Report file (JSON); printed to stdout as well");
  add_config(eval);

  // grid
  auto* grid = app.add_subcommand("grid", "Tile input / x_reg / x_syn / x_hat / gt per sample");
  std::string g_run, g_manifest, g_out;
  int g_count = 4;
  grid->add_option("--run", g_run, "Run directory")->required();
  grid->add_option("--manifest", g_manifest, "Manifest of samples")->required();
  grid->add_option("--count", g_count, "Number of rows");
  grid->add_option("--out", g_out, "Output PNG")->required();
  add_config(grid);

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Train and score the three ablation presets");
  std::string a_train, a_test, a_out;
  std::optional<int> a_steps;
  std::optional<uint64_t> a_seed;
  ablate->add_option("--train-manifest", a_train, "Override train.train_manifest");
  ablate->add_option("--test-manifest", a_test, "Override train.test_manifest");
  ablate->add_option("--out", a_out, "Output directory")->required();
  ablate->add_option("--steps", a_steps, "Override train.steps");
  ablate->add_option("--seed", a_seed, "Override train.seed");
  add_config(ablate);

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }
  if (version) {
    out << "ugp " << kVersion << " (config schema " << kConfigSchemaVersion << ")\n";
    return 0;
  }
  if (app.get_subcommands().empty()) {
    err << app.help();
    return 2;
  }

  try {
    const RunConfig base = base_config(config_path);

    if (toy->parsed()) {
      auto files = data::write_toy_corpus(toy_out, toy_count, toy_res, toy_seed);
      out << "wrote " << files.size() << " images to " << toy_out << "\n";
    } else if (kernels->parsed()) {
      const degrade::TrajectoryParams params;
      auto bank = degrade::generate_kernel_bank(k_n, k_size, k_seed, params);
      if (fs::path(k_out).has_parent_path()) fs::create_directories(fs::path(k_out).parent_path());
      degrade::save_kernel_bank(k_out, bank, k_seed, params);
      out << "wrote " << bank.size() << " kernels of " << k_size << "x" << k_size << " to " << k_out << "\n";
    } else if (deg->parsed()) {
      const auto spec = d_spec.empty() ? base.degradation : read_spec(d_spec);
      const degrade::Degrader degrader(spec);
      auto m = data::build_manifest(d_in, spec, d_seed, d_out);
      fs::create_directories(d_out);
      data::materialize(m, degrader);
      const fs::path manifest = d_manifest.empty() ? fs::path(d_out) / "manifest.jsonl" : fs::path(d_manifest);
      data::write_manifest(m, manifest);
      if (d_fraction != 0.0) {
        auto [tr, te] = data::split_manifest(m, d_fraction, d_seed);
        data::write_manifest(tr, manifest.parent_path() / "train.jsonl");
        data::write_manifest(te, manifest.parent_path() / "test.jsonl");
      }
      out << "degraded " << m.size() << " images (" << spec.id() << "), manifest " << manifest.string() << "\n";
    } else if (train->parsed()) {
      RunConfig cfg = base;
      if (!t_preset.empty()) cfg.apply_preset(t_preset);
      if (t_steps) cfg.train.steps = *t_steps;
      if (t_batch) cfg.train.batch = *t_batch;
      if (t_seed) cfg.train.seed = *t_seed;
      if (t_lr) cfg.train.lr = cfg.train.lr_g = cfg.train.lr_d = *t_lr;
      if (!t_manifest.empty()) cfg.train.train_manifest = t_manifest;
      if (!t_dir.empty()) cfg.train.checkpoint_dir = t_dir;
      cfg.train.stage = stage_from_string(t_stage);
      const fs::path dir = cfg.train.checkpoint_dir;
      trainer::StageResult r;
      switch (cfg.train.stage) {
        case Stage::restoration: {
          auto init = t_init.empty() ? std::nullopt : std::optional<Checkpoint>(load_checkpoint(t_init));
          r = trainer::train_restoration(cfg, ptr(init));
          break;
        }
        case Stage::synthesis_pretrain: r = trainer::train_synthesis_pretrain(cfg); break;
        case Stage::synthesis: {
          auto rest = checkpoint_from(t_rest, dir, Stage::restoration);
          auto pre = checkpoint_from(t_pre, dir, Stage::synthesis_pretrain);
          r = trainer::train_synthesis(cfg, ptr(rest), ptr(pre));
          break;
        }
        case Stage::fusion: {
          auto rest = checkpoint_from(t_rest, dir, Stage::restoration);
          auto syn = checkpoint_from(t_syn, dir, Stage::synthesis);
          r = trainer::train_fusion(cfg, ptr(rest), ptr(syn));
          break;
        }
      }
      out << to_string(cfg.train.stage) << ": " << r.tracked.size() << " steps";
      if (!r.tracked.empty()) out << ", tracked loss " << r.head_mean() << " -> " << r.tail_mean();
      if (!r.path.empty()) out << ", checkpoint " << r.path.string();
      out << "\n";
    } else if (infer->parsed()) {
      auto pipeline = trainer::Pipeline::load_dir(i_run);
      const auto files = data::list_images(i_in);
      for (const char* sub : {"x_reg", "x_syn", "x_hat"}) fs::create_directories(fs::path(i_out) / sub);
      for (const auto& f : files) {
        auto x = trainer::prepare_input(data::load_image(f), pipeline.resolution());
        auto o = pipeline.infer(x);
        const auto name = f.filename();
        data::save_image(o.x_reg, fs::path(i_out) / "x_reg" / name);
        data::save_image(o.x_syn, fs::path(i_out) / "x_syn" / name);
        data::save_image(o.x_hat, fs::path(i_out) / "x_hat" / name);
      }
      out << "restored " << files.size() << " images into " << i_out << "\n";
    } else if (eval->parsed()) {
      const auto ext = base.perceptual.build();
      const auto report = metrics::evaluate_dirs(e_pred, e_gt, ext);
      const auto text = metrics::to_json(report).dump(2) + "\n";
      if (!e_out.empty()) write_text(e_out, text);
      out << text;
    } else if (grid->parsed()) {
      if (g_count < 1) throw InvalidArgument("--count must be >= 1");
      auto pipeline = trainer::Pipeline::load_dir(g_run);
      auto m = data::read_manifest(g_manifest);
      if (m.entries.size() > static_cast<size_t>(g_count)) m.entries.resize(static_cast<size_t>(g_count));
      const auto samples = trainer::to_train_data(data::load_pairs(m), pipeline.resolution());
      const auto inputs = unstack_images(samples.degraded);
      const auto gts = unstack_images(samples.clean);
      const auto outs = pipeline.infer_batch(inputs);
      std::vector<std::array<Image, 5>> rows;
      for (size_t i = 0; i < outs.size(); ++i) rows.push_back({inputs[i], outs[i].x_reg, outs[i].x_syn, outs[i].x_hat, gts[i]});
      const fs::path target(g_out);
      if (target.has_parent_path()) fs::create_directories(target.parent_path());
      data::save_image(trainer::make_grid(rows), target);
      out << "wrote " << rows.size() << "x5 grid to " << g_out << "\n";
    } else if (ablate->parsed()) {
      RunConfig cfg = base;
      if (!a_train.empty()) cfg.train.train_manifest = a_train;
      if (!a_test.empty()) cfg.train.test_manifest = a_test;
      if (a_steps) cfg.train.steps = *a_steps;
      if (a_seed) cfg.train.seed = *a_seed;
      if (cfg.train.train_manifest.empty() || cfg.train.test_manifest.empty()) {
        throw InvalidArgument("ablate needs train and test manifests");
      }
      const auto tr = trainer::load_train_data(cfg.train.train_manifest, cfg.resolution());
      const auto te = trainer::load_train_data(cfg.train.test_manifest, cfg.resolution());
      const auto rows = trainer::run_ablation(cfg, tr, te, a_out);
      out << trainer::ablation_table(rows);
    }
    return 0;
  } catch (const Error& e) {
    err << "ugp: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "ugp: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace ugp::cli
