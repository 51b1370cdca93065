// Command-line front end: dataset generation, training, evaluation,
// prediction and the ablation grid. Every run is deterministic given its
// flags; seeds are always explicit, never time-derived.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "subseg/pgm.hpp"
#include "subseg/trainer.hpp"

namespace fs = std::filesystem;
using namespace subseg;

namespace {

void echo_config(const std::map<std::string, std::string>& kv) {
  std::cout << "resolved config:\n";
  for (const auto& [k, v] : kv) std::cout << "  " << k << " = " << v << "\n";
}

int cmd_gen_data(const DatasetParams& params, const std::string& out, bool force) {
  if (fs::exists(out + "/manifest") && !force)
    throw std::runtime_error("gen-data: " + out + " already holds a dataset (use --force)");
  if (params.n_sub > params.n_train)
    throw std::runtime_error("gen-data: n-sub " + std::to_string(params.n_sub) +
                             " exceeds n " + std::to_string(params.n_train));
  echo_config({{"out", out},
               {"n", std::to_string(params.n_train)},
               {"n_sub", std::to_string(params.n_sub)},
               {"val", std::to_string(params.n_val)},
               {"test", std::to_string(params.n_test)},
               {"k_fg", std::to_string(params.gen.k_fg)},
               {"size", std::to_string(params.gen.height)},
               {"sigma", std::to_string(params.gen.noise_sigma)},
               {"seed", std::to_string(params.seed)}});
  write_dataset(out, params);
  std::cout << "wrote " << out << ": " << params.n_train << " train (" << params.n_sub
            << " fine, " << (params.n_train - params.n_sub) << " coarse), " << params.n_val
            << " val, " << params.n_test << " test\n";
  return 0;
}

Model load_model_for(const std::string& ckpt, const std::string& data_dir) {
  const ModelConfig stored = checkpoint_model_config(ckpt);
  const LoadedDataset ds = load_dataset(data_dir);
  if (stored.hierarchy.num_sub() != ds.split.hierarchy.num_sub())
    throw std::runtime_error("checkpoint expects " + std::to_string(stored.hierarchy.num_sub()) +
                             " subclasses but dataset has " +
                             std::to_string(ds.split.hierarchy.num_sub()));
  Model model(stored);
  load_checkpoint(ckpt, model);
  model.training = false;
  return model;
}

const std::vector<Sample>& pick_split(const LoadedDataset& ds, const std::string& name) {
  if (name == "val") return ds.split.val;
  if (name == "test") return ds.split.test;
  if (name == "train-fine") return ds.split.fine;
  throw std::runtime_error("unknown split '" + name + "' (val, test, train-fine)");
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, const std::string& split,
             const std::string& out_csv) {
  Model model = load_model_for(ckpt, data_dir);
  const LoadedDataset ds = load_dataset(data_dir);
  const auto& samples = pick_split(ds, split);
  if (samples.empty()) throw std::runtime_error("eval: split '" + split + "' is empty");
  const ClassReport rep = evaluate_split(model, samples, ds.split.hierarchy);
  std::cout << report_table(rep);
  if (!out_csv.empty()) {
    std::ofstream os(out_csv);
    if (!os) throw std::runtime_error("eval: cannot write " + out_csv);
    write_report_csv(os, rep);
    std::cout << "report written to " << out_csv << "\n";
  } else {
    write_report_csv(std::cout, rep);
  }
  return 0;
}

int cmd_predict(const std::string& ckpt, const std::string& data_dir, const std::string& split,
                const std::string& out_dir) {
  Model model = load_model_for(ckpt, data_dir);
  const LoadedDataset ds = load_dataset(data_dir);
  const auto& samples = pick_split(ds, split);
  fs::create_directories(out_dir);
  const int K = ds.split.hierarchy.num_sub();
  int idx = 0;
  for (const auto& s : samples) {
    const LabelMap pred = predict_labelmap(model, s.image);
    char name[32];
    std::snprintf(name, sizeof name, "pred_%04d", idx++);
    save_tsr1(out_dir + "/" + name + ".tsr1", labelmap_to_tensor(pred));
    write_label_pgm(out_dir + "/" + name + ".pgm", pred, K);
  }
  std::cout << "wrote " << idx << " predictions to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"subclass segmentation workbench"};
  app.require_subcommand(1);

  // gen-data
  DatasetParams gen_params;
  std::string gen_out;
  bool gen_force = false;
  int gen_size = 64;
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic hierarchical dataset");
  gen->add_option("--n", gen_params.n_train, "training samples")->capture_default_str();
  gen->add_option("--n-sub", gen_params.n_sub, "training samples keeping subclass labels")
      ->capture_default_str();
  gen->add_option("--val", gen_params.n_val, "validation samples")->capture_default_str();
  gen->add_option("--test", gen_params.n_test, "test samples")->capture_default_str();
  gen->add_option("--k-fg", gen_params.gen.k_fg, "foreground subclasses")->capture_default_str();
  gen->add_option("--size", gen_size, "image side length")->capture_default_str();
  gen->add_option("--sigma", gen_params.gen.noise_sigma, "intensity noise sigma")
      ->capture_default_str();
  gen->add_option("--ring-gap", gen_params.gen.ring_gap, "mean intensity step between rings")
      ->capture_default_str();
  gen->add_option("--jitter", gen_params.gen.object_jitter, "per-object brightness offset range")
      ->capture_default_str();
  gen->add_option("--seed", gen_params.seed, "dataset seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_flag("--force", gen_force, "overwrite an existing dataset");

  // train
  TrainConfig tc;
  std::string train_config_path;
  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", train_config_path, "run.cfg file with key = value lines");
  train->add_option("--data", tc.data_dir, "dataset directory");
  train->add_option("--out", tc.out_dir, "run directory");
  bool f_pc = false, f_sn = false, f_hm = false, f_nl = false, f_subonly = false,
       f_hm_super = false;
  train->add_flag("--pc", f_pc, "enable prior concatenation");
  train->add_flag("--sn", f_sn, "enable separate normalization");
  train->add_flag("--hm", f_hm, "enable HierarchicalMix");
  train->add_flag("--nl", f_nl, "enable the negative-learning comparison loss");
  train->add_flag("--subclass-only", f_subonly,
                  "plain U-Net regime: fine samples only, no superclass loss");
  train->add_flag("--hm-super-loss", f_hm_super, "also supervise the superclass head on x_mix");
  auto* o_iters = train->add_option("--iters", tc.sgd.total_iters, "total iterations");
  o_iters->capture_default_str();
  auto* o_batch = train->add_option("--batch", tc.batch_size, "batch size (even)");
  o_batch->capture_default_str();
  auto* o_patch = train->add_option("--patch", tc.patch_h, "square crop side");
  o_patch->capture_default_str();
  auto* o_lr = train->add_option("--lr", tc.sgd.base_lr, "base learning rate");
  o_lr->capture_default_str();
  auto* o_seed = train->add_option("--seed", tc.seed, "run seed");
  o_seed->capture_default_str();
  auto* o_eval = train->add_option("--eval-every", tc.eval_every, "validation period");
  o_eval->capture_default_str();
  auto* o_base = train->add_option("--base-channels", tc.model.base_channels, "U-Net width");
  o_base->capture_default_str();
  auto* o_depth = train->add_option("--depth", tc.model.depth, "U-Net depth");
  o_depth->capture_default_str();

  // eval / predict
  std::string ev_ckpt, ev_data, ev_split = "test", ev_out;
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset split");
  ev->add_option("--ckpt", ev_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--split", ev_split, "val | test | train-fine")->capture_default_str();
  ev->add_option("--out", ev_out, "report csv path (default: stdout)");

  std::string pr_ckpt, pr_data, pr_split = "test", pr_out;
  auto* pr = app.add_subcommand("predict", "write predicted label maps and PGM previews");
  pr->add_option("--ckpt", pr_ckpt, "checkpoint directory")->required();
  pr->add_option("--data", pr_data, "dataset directory")->required();
  pr->add_option("--split", pr_split, "val | test | train-fine")->capture_default_str();
  pr->add_option("--out", pr_out, "output directory")->required();

  // ablate
  std::string ab_data, ab_out, ab_grid = "mod,hm,pc,sn,hm+pc+sn", ab_seeds = "1,2,3";
  int ab_jobs = 1;
  TrainConfig ab_base;
  auto* ab = app.add_subcommand("ablate", "run the mechanism-toggle grid over seeds");
  ab->add_option("--data", ab_data, "dataset directory")->required();
  ab->add_option("--out", ab_out, "output directory")->required();
  ab->add_option("--grid", ab_grid, "comma-separated variant tokens")->capture_default_str();
  ab->add_option("--seeds", ab_seeds, "comma-separated seeds")->capture_default_str();
  ab->add_option("--jobs", ab_jobs, "concurrent runs (results unchanged)")->capture_default_str();
  auto* ao_iters = ab->add_option("--iters", ab_base.sgd.total_iters, "iterations per run");
  ao_iters->capture_default_str();
  auto* ao_batch = ab->add_option("--batch", ab_base.batch_size, "batch size");
  ao_batch->capture_default_str();
  auto* ao_patch = ab->add_option("--patch", ab_base.patch_h, "square crop side");
  ao_patch->capture_default_str();
  auto* ao_base = ab->add_option("--base-channels", ab_base.model.base_channels, "U-Net width");
  ao_base->capture_default_str();
  auto* ao_depth = ab->add_option("--depth", ab_base.model.depth, "U-Net depth");
  ao_depth->capture_default_str();
  auto* ao_eval = ab->add_option("--eval-every", ab_base.eval_every, "validation period");
  ao_eval->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      gen_params.gen.height = gen_params.gen.width = gen_size;
      return cmd_gen_data(gen_params, gen_out, gen_force);
    }
    if (train->parsed()) {
      if (!train_config_path.empty()) {
        TrainConfig file_cfg;
        train_config_from_map(file_cfg, parse_config_file(train_config_path));
        // Command-line flags override file values.
        if (tc.data_dir.empty()) tc.data_dir = file_cfg.data_dir;
        if (tc.out_dir.empty()) tc.out_dir = file_cfg.out_dir;
        if (!*o_iters) tc.sgd.total_iters = file_cfg.sgd.total_iters;
        if (!*o_batch) tc.batch_size = file_cfg.batch_size;
        if (!*o_patch) tc.patch_h = file_cfg.patch_h;
        if (!*o_lr) tc.sgd.base_lr = file_cfg.sgd.base_lr;
        if (!*o_seed) tc.seed = file_cfg.seed;
        if (!*o_eval) tc.eval_every = file_cfg.eval_every;
        if (!*o_base) tc.model.base_channels = file_cfg.model.base_channels;
        if (!*o_depth) tc.model.depth = file_cfg.model.depth;
        tc.model.enable_pc = f_pc || file_cfg.model.enable_pc;
        tc.model.enable_sn = f_sn || file_cfg.model.enable_sn;
        tc.enable_hm = f_hm || file_cfg.enable_hm;
        tc.enable_nl = f_nl || file_cfg.enable_nl;
        tc.use_super = f_subonly ? false : file_cfg.use_super;
        tc.hm_super_loss = f_hm_super || file_cfg.hm_super_loss;
      } else {
        tc.model.enable_pc = f_pc;
        tc.model.enable_sn = f_sn;
        tc.enable_hm = f_hm;
        tc.enable_nl = f_nl;
        tc.use_super = !f_subonly;
        tc.hm_super_loss = f_hm_super;
      }
      if (tc.data_dir.empty() || tc.out_dir.empty())
        throw std::runtime_error("train: --data and --out are required (flag or config file)");
      tc.patch_w = tc.patch_h;
      run_experiment(tc);
      return 0;
    }
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_split, ev_out);
    if (pr->parsed()) return cmd_predict(pr_ckpt, pr_data, pr_split, pr_out);
    if (ab->parsed()) {
      ab_base.data_dir = ab_data;
      ab_base.patch_w = ab_base.patch_h;
      std::vector<std::string> tokens;
      std::vector<uint64_t> seeds;
      for (size_t pos = 0; pos < ab_grid.size();) {
        auto next = ab_grid.find(',', pos);
        if (next == std::string::npos) next = ab_grid.size();
        tokens.push_back(ab_grid.substr(pos, next - pos));
        pos = next + 1;
      }
      for (size_t pos = 0; pos < ab_seeds.size();) {
        auto next = ab_seeds.find(',', pos);
        if (next == std::string::npos) next = ab_seeds.size();
        seeds.push_back(std::stoull(ab_seeds.substr(pos, next - pos)));
        pos = next + 1;
      }
      fs::create_directories(ab_out);
      const auto rows = run_ablation(ab_base, tokens, seeds, ab_out, ab_jobs);
      std::ofstream os(ab_out + "/ablation.csv");
      write_ablation_csv(os, rows);
      std::ostringstream echo;
      write_ablation_csv(echo, rows);
      std::cout << echo.str();
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
