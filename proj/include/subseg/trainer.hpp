#pragma once

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>
#include <vector>

#include "subseg/config.hpp"
#include "subseg/dataset.hpp"
#include "subseg/hiermix.hpp"
#include "subseg/metrics.hpp"
#include "subseg/model.hpp"

namespace subseg {

struct TrainConfig {
  ModelConfig model;
  bool enable_hm = false;
  bool enable_nl = false;
  bool use_super = true;       // false: plain subclass-only U-Net training regime
  bool hm_super_loss = false;  // optional superclass supervision on mixed images
  SgdConfig sgd;
  int batch_size = 8;
  int patch_h = 32;
  int patch_w = 32;
  int n_sub = 5;  // informational; on-disk roles are authoritative
  uint64_t seed = 1;
  int eval_every = 200;
  std::string data_dir;
  std::string out_dir;

  void validate() const {
    model.validate();
    sgd.validate();
    if (batch_size < 2 || batch_size % 2 != 0)
      throw std::invalid_argument("train: batch_size must be even and >= 2");
    const int div = 1 << model.depth;
    if (patch_h % div != 0 || patch_w % div != 0)
      throw std::invalid_argument("train: patch dims must be divisible by 2^depth");
    if (enable_hm && patch_h != patch_w)
      throw std::invalid_argument("train: HierarchicalMix needs square patches (rotations)");
    if (eval_every < 1) throw std::invalid_argument("train: eval_every must be >= 1");
  }
};

struct StepRecord {
  int iteration = 0;
  float l_c = 0.f, l_f = 0.f, l_p = 0.f, l_nl = 0.f;
  float tau = 0.f;
  float lr = 0.f;
};

struct TrainBatch {
  Tensor x;  // B x C x ph x pw
  std::vector<LabelMap> y;
  std::vector<std::optional<LabelMap>> z;
  int n_fine = 0;  // slots [0, n_fine) carry z
};

namespace detail {

inline Tensor stack_chw(const std::vector<Tensor>& samples) {
  const int N = static_cast<int>(samples.size());
  const auto& s0 = samples.front();
  Tensor out({N, s0.dim(0), s0.dim(1), s0.dim(2)});
  const int64_t sz = s0.numel();
  for (int n = 0; n < N; ++n) {
    if (samples[static_cast<size_t>(n)].shape != s0.shape)
      throw std::invalid_argument("stack: ragged sample shapes");
    std::copy_n(samples[static_cast<size_t>(n)].ptr(), sz, out.ptr() + n * sz);
  }
  return out;
}

inline Tensor slice_chw(const Tensor& batch, int n) {
  Tensor out({batch.dim(1), batch.dim(2), batch.dim(3)});
  std::copy_n(batch.ptr() + static_cast<int64_t>(n) * out.numel(), out.numel(), out.ptr());
  return out;
}

}  // namespace detail

/// Half fine / half coarse batch of random crops. Falls back to all-fine
/// when the coarse pool is empty or superclass supervision is off entirely.
/// Slot draws are index-then-crop in slot order on one stream.
inline TrainBatch build_batch(const DatasetSplit& split, const TrainConfig& cfg, Rng& rng) {
  if (split.fine.empty()) throw std::runtime_error("build_batch: empty fine set");
  const bool fine_only = (!cfg.use_super && !cfg.enable_nl) || split.coarse.empty();
  const int nf = fine_only ? cfg.batch_size : cfg.batch_size / 2;
  const int nc = cfg.batch_size - nf;

  TrainBatch batch;
  batch.n_fine = nf;
  std::vector<Tensor> images;
  for (int i = 0; i < nf; ++i) {
    const auto& s = split.fine[rng.below(split.fine.size())];
    const Sample crop = random_crop(s, cfg.patch_h, cfg.patch_w, rng);
    images.push_back(crop.image);
    batch.y.push_back(crop.y);
    batch.z.push_back(crop.z);
  }
  for (int i = 0; i < nc; ++i) {
    const auto& s = split.coarse[rng.below(split.coarse.size())];
    const Sample crop = random_crop(s, cfg.patch_h, cfg.patch_w, rng);
    images.push_back(crop.image);
    batch.y.push_back(crop.y);
    batch.z.push_back(std::nullopt);
  }
  batch.x = detail::stack_chw(images);
  return batch;
}

/// One optimization step: supervised losses on the batch, the HierarchicalMix
/// pipeline on coarse slots when enabled, backward, SGD update.
inline StepRecord train_step(Model& model, const TrainBatch& batch, int iter,
                             const TrainConfig& cfg, Rng& hm_rng) {
  const auto& hier = model.config().hierarchy;
  StepRecord rec;
  rec.iteration = iter;
  rec.lr = lr_schedule(iter, cfg.sgd);
  rec.tau = tau_schedule(iter, cfg.sgd.total_iters);

  model.training = true;
  const auto outs = model.forward(batch.x, /*update_stats=*/true);
  const auto sup = supervised_losses(outs, batch.y, batch.z, hier, cfg.use_super);
  Var total = ops::add(sup.l_c, sup.l_f);

  Var l_nl;
  if (cfg.enable_nl) {
    l_nl = negative_learning_loss(outs.sub_logits, batch.y, hier);
    total = ops::add(total, l_nl);
  }

  Var l_p;
  const int nc = cfg.batch_size - batch.n_fine;
  if (cfg.enable_hm && nc > 0 && batch.n_fine > 0) {
    struct HmDraw {
      SpatialTransform t;
      int pair;
      float alpha;
    };
    // All stochastic choices are drawn up front in slot order, so skipping a
    // slot never shifts another slot's stream.
    std::vector<HmDraw> draws;
    for (int j = 0; j < nc; ++j) {
      HmDraw d;
      d.t = sample_transform(hm_rng);
      d.pair = static_cast<int>(hm_rng.below(static_cast<uint64_t>(batch.n_fine)));
      d.alpha = static_cast<float>(hm_rng.uniform(0.5, 1.0));
      draws.push_back(d);
    }

    // Inference-style probe passes: running statistics, no taping.
    std::vector<Tensor> probe;
    for (int j = 0; j < nc; ++j) probe.push_back(detail::slice_chw(batch.x, batch.n_fine + j));
    for (int j = 0; j < nc; ++j)
      probe.push_back(apply_transform(draws[static_cast<size_t>(j)].t, probe[static_cast<size_t>(j)]));
    Tensor probs_all;
    {
      autodiff::NoGradGuard ng;
      model.training = false;
      const auto po = model.forward(detail::stack_chw(probe), /*update_stats=*/false);
      probs_all = ops::softmax_channels(po.sub_logits)->value;
      model.training = true;
    }

    std::vector<Tensor> mix_imgs;
    std::vector<Tensor> mix_targets;
    for (int j = 0; j < nc; ++j) {
      const int slot = batch.n_fine + j;
      const auto& d = draws[static_cast<size_t>(j)];
      if (!foreground_bbox(batch.y[static_cast<size_t>(slot)])) continue;  // nothing to mix
      if (!foreground_bbox(batch.y[static_cast<size_t>(d.pair)])) continue;

      const Tensor probs_a = detail::slice_chw(probs_all, j);
      const Tensor probs_b =
          apply_inverse_transform(d.t, detail::slice_chw(probs_all, nc + j));
      const auto pseudo =
          make_pseudo_label(probs_a, probs_b, batch.y[static_cast<size_t>(slot)], rec.tau, hier);

      const auto mix = mix_images(detail::slice_chw(batch.x, slot), batch.y[static_cast<size_t>(slot)],
                                  detail::slice_chw(batch.x, d.pair), batch.y[static_cast<size_t>(d.pair)],
                                  *batch.z[static_cast<size_t>(d.pair)], d.alpha);
      auto [target, weight] = mixed_target(mix.z_full, pseudo, d.alpha, hier.num_sub());
      mix_imgs.push_back(mix.x_mix);
      mix_targets.push_back(std::move(target));
    }

    if (!mix_imgs.empty()) {
      const auto mix_outs = model.forward(detail::stack_chw(mix_imgs), /*update_stats=*/true);
      const int Nm = static_cast<int>(mix_imgs.size());
      Tensor target({Nm, hier.num_sub(), cfg.patch_h, cfg.patch_w});
      for (int n = 0; n < Nm; ++n)
        std::copy_n(mix_targets[static_cast<size_t>(n)].ptr(), mix_targets[static_cast<size_t>(n)].numel(),
                    target.ptr() + static_cast<int64_t>(n) * mix_targets[static_cast<size_t>(n)].numel());
      l_p = ce_dice_loss(mix_outs.sub_logits, target);
      if (cfg.hm_super_loss) {
        std::vector<LabelMap> y_mix;
        for (int n = 0; n < Nm; ++n) {
          LabelMap zm(cfg.patch_h, cfg.patch_w);
          const int64_t plane = static_cast<int64_t>(cfg.patch_h) * cfg.patch_w;
          for (int64_t i = 0; i < plane; ++i) {
            int best = 0;
            for (int c = 1; c < hier.num_sub(); ++c)
              if (target[(static_cast<int64_t>(n) * hier.num_sub() + c) * plane + i] >
                  target[(static_cast<int64_t>(n) * hier.num_sub() + best) * plane + i])
                best = c;
            zm.v[static_cast<size_t>(i)] = hier.parent[static_cast<size_t>(best)];
          }
          y_mix.push_back(zm);
        }
        l_p = ops::add(l_p, ce_dice_loss(mix_outs.super_logits, onehot<float>(y_mix, hier.num_super)));
      }
      total = ops::add(total, l_p);
    }
  }

  backward(total);
  sgd_step(model.params(), rec.lr, cfg.sgd.momentum);

  rec.l_c = sup.l_c->value[0];
  rec.l_f = sup.l_f->value[0];
  rec.l_p = l_p ? l_p->value[0] : 0.f;
  rec.l_nl = l_nl ? l_nl->value[0] : 0.f;
  if (!std::isfinite(rec.l_c) || !std::isfinite(rec.l_f) || !std::isfinite(rec.l_p))
    throw std::runtime_error("train_step: non-finite loss at iteration " + std::to_string(iter));
  return rec;
}

/// Per-iteration RNG streams so a run can be resumed at any iteration
/// boundary with bit-identical behavior.
inline Rng batch_stream(uint64_t seed, int iter) {
  return Rng(seed, rng_stream::kBatch + (static_cast<uint64_t>(iter) << 8));
}
inline Rng hiermix_stream(uint64_t seed, int iter) {
  return Rng(seed, rng_stream::kHierMix + (static_cast<uint64_t>(iter) << 8));
}

inline LabelMap predict_labelmap(Model& model, const Tensor& image_chw) {
  autodiff::NoGradGuard ng;
  const bool was_training = model.training;
  model.training = false;
  Tensor batch({1, image_chw.dim(0), image_chw.dim(1), image_chw.dim(2)});
  std::copy_n(image_chw.ptr(), image_chw.numel(), batch.ptr());
  const auto outs = model.forward(batch, false);
  model.training = was_training;
  const auto& logits = outs.sub_logits->value;
  const int K = logits.dim(1), H = logits.dim(2), W = logits.dim(3);
  const int64_t plane = static_cast<int64_t>(H) * W;
  LabelMap pred(H, W);
  for (int64_t i = 0; i < plane; ++i) {
    int best = 0;
    for (int c = 1; c < K; ++c)
      if (logits[c * plane + i] > logits[best * plane + i]) best = c;
    pred.v[static_cast<size_t>(i)] = best;
  }
  return pred;
}

inline ClassReport evaluate_split(Model& model, const std::vector<Sample>& samples,
                                  const HierarchySpec& hier) {
  ReportAccumulator acc;
  for (const auto& s : samples) {
    if (!s.z) throw std::runtime_error("evaluate_split: sample lacks subclass labels");
    acc.add(evaluate(predict_labelmap(model, s.image), *s.z, hier));
  }
  return acc.finalize();
}

// ---------------------------------------------------------------------------
// Checkpoints: a directory of named TSR1 tensors plus model.cfg.

inline void save_checkpoint(const std::string& dir, Model& model, int iteration) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  for (auto& p : model.params()) {
    save_tsr1(dir + "/" + p.name + ".tsr1", p.value());
    save_tsr1(dir + "/" + p.name + ".momentum.tsr1", p.momentum);
  }
  for (auto& [name, st] : model.bn_stats()) {
    save_tsr1(dir + "/" + name + ".running_mean.tsr1", st.running_mean);
    save_tsr1(dir + "/" + name + ".running_var.tsr1", st.running_var);
  }
  const auto& c = model.config();
  write_config_file(dir + "/model.cfg",
                    {{"pc", c.enable_pc ? "1" : "0"},
                     {"sn", c.enable_sn ? "1" : "0"},
                     {"base_channels", std::to_string(c.base_channels)},
                     {"depth", std::to_string(c.depth)},
                     {"k_fg", std::to_string(c.hierarchy.sub_counts.back())},
                     {"iteration", std::to_string(iteration)}});
}

inline ModelConfig checkpoint_model_config(const std::string& dir) {
  const auto kv = parse_config_file(dir + "/model.cfg");
  ModelConfig c;
  c.enable_pc = kv.at("pc") == "1";
  c.enable_sn = kv.at("sn") == "1";
  c.base_channels = std::stoi(kv.at("base_channels"));
  c.depth = std::stoi(kv.at("depth"));
  c.hierarchy = HierarchySpec::binary_foreground(std::stoi(kv.at("k_fg")));
  return c;
}

/// Restores parameters, momentum buffers and running statistics into an
/// already-built model; the stored config must match exactly.
inline int load_checkpoint(const std::string& dir, Model& model) {
  const ModelConfig stored = checkpoint_model_config(dir);
  const ModelConfig& want = model.config();
  if (stored.enable_pc != want.enable_pc || stored.enable_sn != want.enable_sn ||
      stored.base_channels != want.base_channels || stored.depth != want.depth ||
      stored.hierarchy.num_sub() != want.hierarchy.num_sub())
    throw std::runtime_error("checkpoint: stored model config in " + dir +
                             " does not match the requested configuration");
  auto load_into = [&](const std::string& name, Tensor& dst) {
    const std::string path = dir + "/" + name + ".tsr1";
    Tensor t = load_tsr1(path);
    if (t.shape != dst.shape)
      throw std::runtime_error("checkpoint: tensor " + name + " has shape " + t.shape_str() +
                               ", expected " + dst.shape_str());
    dst = std::move(t);
  };
  for (auto& p : model.params()) {
    load_into(p.name, p.value());
    load_into(p.name + ".momentum", p.momentum);
    p.node->zero_grad();
  }
  for (auto& [name, st] : model.bn_stats()) {
    load_into(name + ".running_mean", st.running_mean);
    load_into(name + ".running_var", st.running_var);
  }
  const auto kv = parse_config_file(dir + "/model.cfg");
  return std::stoi(kv.at("iteration"));
}

// ---------------------------------------------------------------------------

inline std::map<std::string, std::string> train_config_to_map(const TrainConfig& c) {
  return {{"data", c.data_dir},
          {"out", c.out_dir},
          {"pc", c.model.enable_pc ? "1" : "0"},
          {"sn", c.model.enable_sn ? "1" : "0"},
          {"hm", c.enable_hm ? "1" : "0"},
          {"nl", c.enable_nl ? "1" : "0"},
          {"subclass_only", c.use_super ? "0" : "1"},
          {"hm_super_loss", c.hm_super_loss ? "1" : "0"},
          {"base_channels", std::to_string(c.model.base_channels)},
          {"depth", std::to_string(c.model.depth)},
          {"base_lr", std::to_string(c.sgd.base_lr)},
          {"momentum", std::to_string(c.sgd.momentum)},
          {"iters", std::to_string(c.sgd.total_iters)},
          {"batch", std::to_string(c.batch_size)},
          {"patch_h", std::to_string(c.patch_h)},
          {"patch_w", std::to_string(c.patch_w)},
          {"n_sub", std::to_string(c.n_sub)},
          {"seed", std::to_string(c.seed)},
          {"eval_every", std::to_string(c.eval_every)}};
}

inline void train_config_from_map(TrainConfig& c, const std::map<std::string, std::string>& kv) {
  auto get = [&](const char* k) -> const std::string* {
    auto it = kv.find(k);
    return it == kv.end() ? nullptr : &it->second;
  };
  if (auto v = get("data")) c.data_dir = *v;
  if (auto v = get("out")) c.out_dir = *v;
  if (auto v = get("pc")) c.model.enable_pc = *v == "1";
  if (auto v = get("sn")) c.model.enable_sn = *v == "1";
  if (auto v = get("hm")) c.enable_hm = *v == "1";
  if (auto v = get("nl")) c.enable_nl = *v == "1";
  if (auto v = get("subclass_only")) c.use_super = *v != "1";
  if (auto v = get("hm_super_loss")) c.hm_super_loss = *v == "1";
  if (auto v = get("base_channels")) c.model.base_channels = std::stoi(*v);
  if (auto v = get("depth")) c.model.depth = std::stoi(*v);
  if (auto v = get("base_lr")) c.sgd.base_lr = std::stof(*v);
  if (auto v = get("momentum")) c.sgd.momentum = std::stof(*v);
  if (auto v = get("iters")) c.sgd.total_iters = std::stoi(*v);
  if (auto v = get("batch")) c.batch_size = std::stoi(*v);
  if (auto v = get("patch_h")) c.patch_h = std::stoi(*v);
  if (auto v = get("patch_w")) c.patch_w = std::stoi(*v);
  if (auto v = get("n_sub")) c.n_sub = std::stoi(*v);
  if (auto v = get("seed")) c.seed = std::stoull(*v);
  if (auto v = get("eval_every")) c.eval_every = std::stoi(*v);
}

struct RunResult {
  ClassReport test_report;
  double best_val_dice = -1.0;
  int best_iter = -1;
  std::vector<StepRecord> log;
};

/// Full training run: iteration loop, periodic validation, best-checkpoint
/// tracking, final test report from the best checkpoint. The run directory
/// receives run.cfg, log.csv, val.csv, best.ckpt/, final.ckpt/, report.csv.
inline RunResult run_experiment(TrainConfig cfg, bool quiet = false) {
  namespace fs = std::filesystem;
  const LoadedDataset ds = load_dataset(cfg.data_dir);
  cfg.model.hierarchy = ds.split.hierarchy;
  cfg.n_sub = static_cast<int>(ds.split.fine.size());
  cfg.validate();
  if (ds.split.val.empty() || ds.split.test.empty())
    throw std::runtime_error("run_experiment: dataset needs val and test samples");

  fs::create_directories(cfg.out_dir);
  write_config_file(cfg.out_dir + "/run.cfg", train_config_to_map(cfg));
  if (!quiet) {
    std::cout << "resolved config:\n";
    for (const auto& [k, v] : train_config_to_map(cfg)) std::cout << "  " << k << " = " << v << "\n";
  }

  Model model(cfg.model);
  model.init_params(cfg.seed);

  std::ofstream log_csv(cfg.out_dir + "/log.csv");
  log_csv << "iter,l_c,l_f,l_p,l_nl,tau,lr\n";
  std::ofstream val_csv(cfg.out_dir + "/val.csv");
  val_csv << "iter,mean_dice,mean_hd95\n";

  RunResult result;
  for (int it = 0; it < cfg.sgd.total_iters; ++it) {
    Rng brng = batch_stream(cfg.seed, it);
    Rng hrng = hiermix_stream(cfg.seed, it);
    const TrainBatch batch = build_batch(ds.split, cfg, brng);
    const StepRecord rec = train_step(model, batch, it, cfg, hrng);
    result.log.push_back(rec);
    log_csv << rec.iteration << ',' << rec.l_c << ',' << rec.l_f << ',' << rec.l_p << ','
            << rec.l_nl << ',' << rec.tau << ',' << rec.lr << '\n';

    if ((it + 1) % cfg.eval_every == 0 || it + 1 == cfg.sgd.total_iters) {
      const ClassReport val = evaluate_split(model, ds.split.val, cfg.model.hierarchy);
      val_csv << it << ',' << val.mean_dice << ','
              << (val.mean_hd95 ? std::to_string(*val.mean_hd95) : std::string()) << '\n';
      val_csv.flush();
      if (val.mean_dice > result.best_val_dice) {
        result.best_val_dice = val.mean_dice;
        result.best_iter = it;
        save_checkpoint(cfg.out_dir + "/best.ckpt", model, it + 1);
      }
      if (!quiet)
        std::cout << "iter " << (it + 1) << "/" << cfg.sgd.total_iters << "  val dice "
                  << val.mean_dice << "  (best " << result.best_val_dice << ")\n";
    }
  }
  save_checkpoint(cfg.out_dir + "/final.ckpt", model, cfg.sgd.total_iters);

  load_checkpoint(cfg.out_dir + "/best.ckpt", model);
  result.test_report = evaluate_split(model, ds.split.test, cfg.model.hierarchy);
  std::ofstream rep(cfg.out_dir + "/report.csv");
  write_report_csv(rep, result.test_report);
  if (!quiet) std::cout << report_table(result.test_report);
  return result;
}

// ---------------------------------------------------------------------------
// Ablation grid mirroring the paper's toggle table.

struct AblationVariant {
  std::string name;
  bool use_super = true, pc = false, sn = false, hm = false, nl = false;
};

/// Tokens: "unet", "mod", "nl", or any +-combination of {hm, pc, sn} such as
/// "hm+pc+sn".
inline AblationVariant parse_variant(const std::string& token) {
  AblationVariant v;
  v.name = token;
  if (token == "unet") {
    v.use_super = false;
    return v;
  }
  if (token == "nl") {
    v.use_super = false;
    v.nl = true;
    return v;
  }
  if (token == "mod") return v;
  size_t pos = 0;
  while (pos < token.size()) {
    auto next = token.find('+', pos);
    if (next == std::string::npos) next = token.size();
    const std::string part = token.substr(pos, next - pos);
    if (part == "hm")
      v.hm = true;
    else if (part == "pc")
      v.pc = true;
    else if (part == "sn")
      v.sn = true;
    else
      throw std::invalid_argument("ablate: unknown variant token '" + part + "' in '" + token + "'");
    pos = next + 1;
  }
  return v;
}

inline TrainConfig apply_variant(TrainConfig base, const AblationVariant& v, uint64_t seed,
                                 const std::string& out_dir) {
  base.model.enable_pc = v.pc;
  base.model.enable_sn = v.sn;
  base.enable_hm = v.hm;
  base.enable_nl = v.nl;
  base.use_super = v.use_super;
  base.seed = seed;
  base.out_dir = out_dir;
  return base;
}

struct AblationRow {
  std::string config;
  uint64_t seed;
  double mean_dice;
  std::optional<double> mean_hd95;
};

/// Runs the (variant x seed) grid, sequentially or with a fixed-size worker
/// pool; per-run seeding makes results identical either way.
inline std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                             const std::vector<std::string>& tokens,
                                             const std::vector<uint64_t>& seeds,
                                             const std::string& out_dir, int jobs = 1) {
  struct Job {
    AblationVariant variant;
    uint64_t seed;
  };
  std::vector<Job> jobs_list;
  for (const auto& t : tokens)
    for (uint64_t s : seeds) jobs_list.push_back({parse_variant(t), s});

  std::vector<AblationRow> rows(jobs_list.size());
  std::atomic<size_t> next(0);
  auto worker = [&] {
    for (;;) {
      const size_t i = next.fetch_add(1);
      if (i >= jobs_list.size()) return;
      const auto& job = jobs_list[i];
      const std::string run_dir =
          out_dir + "/" + job.variant.name + "_seed" + std::to_string(job.seed);
      const TrainConfig cfg = apply_variant(base, job.variant, job.seed, run_dir);
      const RunResult res = run_experiment(cfg, /*quiet=*/true);
      rows[i] = {job.variant.name, job.seed, res.test_report.mean_dice, res.test_report.mean_hd95};
      std::cout << "[ablate] " << job.variant.name << " seed " << job.seed << "  test dice "
                << res.test_report.mean_dice << "\n";
    }
  };
  if (jobs <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return rows;
}

inline void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "config,seed,mean_dice,mean_hd95\n";
  std::vector<std::string> order;
  for (const auto& r : rows) {
    os << r.config << ',' << r.seed << ',' << r.mean_dice << ','
       << (r.mean_hd95 ? std::to_string(*r.mean_hd95) : std::string()) << '\n';
    if (std::find(order.begin(), order.end(), r.config) == order.end()) order.push_back(r.config);
  }
  auto stats = [](const std::vector<double>& v) -> std::pair<double, double> {
    if (v.empty()) return {0.0, 0.0};
    double s = 0.0;
    for (double x : v) s += x;
    const double mean = s / static_cast<double>(v.size());
    double q = 0.0;
    for (double x : v) q += (x - mean) * (x - mean);
    const double sd = v.size() > 1 ? std::sqrt(q / static_cast<double>(v.size() - 1)) : 0.0;
    return {mean, sd};
  };
  for (const auto& cfg : order) {
    std::vector<double> dice, hd;
    for (const auto& r : rows)
      if (r.config == cfg) {
        dice.push_back(r.mean_dice);
        if (r.mean_hd95) hd.push_back(*r.mean_hd95);
      }
    const auto [dm, ds] = stats(dice);
    const auto [hm, hs] = stats(hd);
    os << cfg << ",mean," << dm << ',' << (hd.empty() ? std::string() : std::to_string(hm)) << '\n';
    os << cfg << ",std," << ds << ',' << (hd.empty() ? std::string() : std::to_string(hs)) << '\n';
  }
}

}  // namespace subseg
