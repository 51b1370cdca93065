// Release acceptance checks. Each criterion prints exactly one PASS/FAIL
// line; the process exits nonzero if any selected criterion fails.
//
//   acceptance [N...]      run the given criteria (default: all of 1..7)
//
// Work artifacts (datasets, runs) land under $SUBSEG_ACCEPT_DIR, defaulting
// to <tmp>/subseg_acceptance; datasets are reused across invocations.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <set>
#include <string>

#include "gradcheck.hpp"
#include "op_fd_checks.hpp"
#include "oracles.hpp"
#include "subseg/trainer.hpp"

using namespace subseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string work_dir() {
  static const std::string dir = [] {
    const char* env = std::getenv("SUBSEG_ACCEPT_DIR");
    const std::string d =
        env ? std::string(env) : (fs::temp_directory_path() / "subseg_acceptance").string();
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

struct Checker {
  bool ok = true;
  std::string detail;

  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      if (!detail.empty()) detail += "; ";
      detail += what;
    }
  }
};

// --- criterion 1: gradient oracles ----------------------------------------

bool criterion1(Checker& c) {
  auto checkers = opchecks::op_checkers();
  for (const auto& name : ops::op_catalogue()) {
    if (!checkers.count(name)) {
      c.expect(false, "no finite-difference scenario for op " + name);
      continue;
    }
    Rng rng(1234, 0);
    const double err = checkers[name](rng);
    c.expect(err <= 1e-3, name + " rel err " + std::to_string(err));
  }

  // Full PC+SN model, float32, sampled coordinates compared as one vector
  // (individual float32 readouts are quantized to ~loss*eps/step).
  ModelConfig mc;
  mc.enable_pc = true;
  mc.enable_sn = true;
  mc.hierarchy = HierarchySpec::binary_foreground(3);
  Model model(mc);
  model.init_params(11);
  model.training = true;
  Rng rng(111, 0);
  const int hw = 16;
  Tensor x({1, 1, hw, hw});
  for (auto& v : x.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
  LabelMap z(hw, hw, 0);
  for (int yy = 4; yy < 10; ++yy)
    for (int xx = 4; xx < 10; ++xx) z.at(yy, xx) = 1 + ((yy * 3 + xx) % 3);
  const LabelMap y = mc.hierarchy.collapse(z);
  const Tensor prior0 = model.forward(x, false).super_logits->value;
  auto build_loss = [&]() -> Var {
    const auto outs = model.forward(x, false, &prior0);
    const auto l = supervised_losses(outs, {y}, {z}, mc.hierarchy);
    return ops::add(l.l_c, l.l_f);
  };
  std::vector<Var> leaves;
  for (const char* name : {"enc0.conv1.w", "enc1.conv2.w", "bottleneck.conv2.w", "dec0.conv1.w",
                           "sn.fg.sub.w", "sn.bg.bn.gamma", "sn.fg.conv1.w"})
    leaves.push_back(model.param(name).node);
  Rng pick(112, 0);
  const auto res = gradcheck::check<float>(leaves, build_loss, 3e-4f, 6, &pick);
  c.expect(res.checked >= 20, "too few checkable coordinates");
  c.expect(res.concat_rel_l2 <= 1e-2,
           "e2e sampled-gradient rel err " + std::to_string(res.concat_rel_l2));
  return c.ok;
}

// --- criterion 2: metric oracles -------------------------------------------

bool criterion2(Checker& c) {
  Rng rng(71, 0);
  for (int i = 0; i < 10000 && c.ok; ++i) {
    const auto a = oracles::random_mask(8, 8, rng, 0.3);
    const auto b = oracles::random_mask(8, 8, rng, 0.3);
    c.expect(dice_score(a, b) == oracles::dice_oracle(a, b),
             "dice mismatch at instance " + std::to_string(i));
  }
  Rng rng2(72, 0);
  for (int i = 0; i < 500 && c.ok; ++i) {
    const auto a = oracles::random_mask(16, 16, rng2, i % 3 == 0 ? 0.05 : 0.25);
    const auto b = oracles::random_mask(16, 16, rng2, 0.25);
    const auto got = hd95(a, b);
    const auto want = oracles::hd95_oracle(a, b);
    c.expect(got.has_value() == want.has_value() && (!got || *got == *want),
             "hd95 mismatch at instance " + std::to_string(i));
  }
  return c.ok;
}

// --- criterion 3: pseudo-label rule -----------------------------------------

bool criterion3(Checker& c) {
  const auto hier = HierarchySpec::binary_foreground(2);
  Rng rng(206, 0);
  for (int i = 0; i < 10000 && c.ok; ++i) {
    const auto a = oracles::random_probs(3, 4, 4, rng);
    const auto b = oracles::random_probs(3, 4, 4, rng);
    LabelMap y(4, 4);
    for (auto& v : y.v) v = static_cast<int32_t>(rng.below(2));
    const float tau = static_cast<float>(rng.uniform(0.0, 1.0));
    const auto got = make_pseudo_label(a, b, y, tau, hier);
    const auto want = oracles::pseudo_oracle(a, b, y, tau, hier);
    c.expect(got.valid == want.valid && got.z_pse == want.z_pse,
             "pseudo-label mismatch at instance " + std::to_string(i));
  }

  // Monotonicity in tau and superclass soundness.
  Rng rng2(207, 0);
  const auto hier3 = HierarchySpec::binary_foreground(3);
  for (int i = 0; i < 500 && c.ok; ++i) {
    const auto a = oracles::random_probs(4, 6, 6, rng2);
    const auto b = oracles::random_probs(4, 6, 6, rng2);
    LabelMap y(6, 6);
    for (auto& v : y.v) v = static_cast<int32_t>(rng2.below(2));
    const float t1 = static_cast<float>(rng2.uniform(0.0, 0.5));
    const float t2 = static_cast<float>(rng2.uniform(t1, 1.0));
    const auto p1 = make_pseudo_label(a, b, y, t1, hier3);
    const auto p2 = make_pseudo_label(a, b, y, t2, hier3);
    for (size_t px = 0; px < p1.valid.size(); ++px) {
      c.expect(!p2.valid[px] || p1.valid[px], "tau monotonicity violated");
      c.expect(!p1.valid[px] ||
                   hier3.parent[static_cast<size_t>(p1.z_pse.v[px])] == y.v[px],
               "superclass soundness violated");
    }
  }

  c.expect(tau_schedule(0, 4000) == 1.0f, "tau(0) != 1");
  c.expect(tau_schedule(4000, 4000) == 0.4f, "tau(total) != 0.4");
  return c.ok;
}

// --- criterion 4: mixup arithmetic ------------------------------------------

bool criterion4(Checker& c) {
  Rng rng(300, 0);
  for (int trial = 0; trial < 50; ++trial) {
    const int H = 16, W = 16;
    Tensor x({1, H, W}), xf({1, H, W});
    for (auto& v : x.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    for (auto& v : xf.data) v = static_cast<float>(rng.uniform(0.0, 1.0));
    // random rectangles as foreground
    auto rect = [&](LabelMap& m, int& y0, int& x0, int& h, int& w) {
      h = 2 + static_cast<int>(rng.below(6));
      w = 2 + static_cast<int>(rng.below(6));
      y0 = static_cast<int>(rng.below(static_cast<uint64_t>(H - h)));
      x0 = static_cast<int>(rng.below(static_cast<uint64_t>(W - w)));
      for (int yy = y0; yy < y0 + h; ++yy)
        for (int xx = x0; xx < x0 + w; ++xx) m.at(yy, xx) = 1;
    };
    LabelMap y(H, W, 0), yf(H, W, 0), zf(H, W, 0);
    int by, bx, bh, bw, fy, fx, fh, fw;
    rect(y, by, bx, bh, bw);
    rect(yf, fy, fx, fh, fw);
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx)
        if (yf.at(yy, xx)) zf.at(yy, xx) = 1 + ((yy + xx) % 2);
    const float alpha =
        trial % 5 == 0 ? 1.0f : static_cast<float>(rng.uniform(0.5, 1.0));
    const auto mix = mix_images(x, y, xf, yf, zf, alpha);

    // locality outside the coarse bbox
    for (int yy = 0; yy < H; ++yy)
      for (int xx = 0; xx < W; ++xx) {
        const bool inside = yy >= by && yy < by + bh && xx >= bx && xx < bx + bw;
        if (!inside) {
          c.expect(mix.x_mix[static_cast<int64_t>(yy) * W + xx] ==
                       x[static_cast<int64_t>(yy) * W + xx],
                   "mix changed pixels outside the bbox");
          c.expect(mix.z_full.at(yy, xx) == 0, "labels outside bbox not background");
        }
      }
    // resampling oracle inside
    for (int r = 0; r < bh; ++r)
      for (int cc = 0; cc < bw; ++cc) {
        double sy = (r + 0.5) * fh / static_cast<double>(bh) - 0.5;
        double sx = (cc + 0.5) * fw / static_cast<double>(bw) - 0.5;
        sy = std::clamp(sy, 0.0, fh - 1.0);
        sx = std::clamp(sx, 0.0, fw - 1.0);
        const int y0i = static_cast<int>(sy), x0i = static_cast<int>(sx);
        const int y1i = std::min(y0i + 1, fh - 1), x1i = std::min(x0i + 1, fw - 1);
        const double wy = sy - y0i, wx = sx - x0i;
        auto fv = [&](int yy, int xx) {
          return static_cast<double>(xf[static_cast<int64_t>(fy + yy) * W + fx + xx]);
        };
        const double bil = (1 - wy) * ((1 - wx) * fv(y0i, x0i) + wx * fv(y0i, x1i)) +
                           wy * ((1 - wx) * fv(y1i, x0i) + wx * fv(y1i, x1i));
        const double want =
            alpha * bil + (1.0 - alpha) * x[static_cast<int64_t>(by + r) * W + bx + cc];
        const double got = mix.x_mix[static_cast<int64_t>(by + r) * W + bx + cc];
        c.expect(std::fabs(got - want) <= 1e-6, "resampling oracle deviation > 1e-6");
        if (alpha == 1.0f && bh == fh && bw == fw)
          c.expect(got == fv(r, cc), "alpha=1 equal-size copy not exact");
      }

    // mixed soft targets: rows sum to 1 +- 1e-6
    PseudoLabel pl;
    pl.z_pse = LabelMap(H, W);
    pl.valid.assign(static_cast<size_t>(H) * W, 0);
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
      pl.z_pse.v[static_cast<size_t>(i)] = static_cast<int32_t>(rng.below(3));
      pl.valid[static_cast<size_t>(i)] = rng.coin();
    }
    auto [target, weight] = mixed_target(mix.z_full, pl, alpha, 3);
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) {
      float row = 0.f;
      for (int k = 0; k < 3; ++k) row += target[k * H * W + i];
      c.expect(std::fabs(row - 1.f) <= 1e-6f, "target row sum deviates");
    }
  }
  return c.ok;
}

// --- criteria 5 & 6: training-based checks ----------------------------------

void ensure_dataset(const std::string& dir, int n_sub, uint64_t seed) {
  if (fs::exists(dir + "/manifest")) return;
  DatasetParams p;
  p.n_train = 200;
  p.n_sub = n_sub;
  p.n_val = 10;
  p.n_test = 20;
  p.seed = seed;
  p.gen.k_fg = 3;
  write_dataset(dir, p);
}

bool criterion5(Checker& c) {
  const std::string data = work_dir() + "/data_allfine";
  ensure_dataset(data, 200, 21);
  TrainConfig cfg;
  cfg.use_super = false;  // plain subclass-supervised U-Net
  cfg.sgd.total_iters = 4000;
  cfg.data_dir = data;
  cfg.out_dir = work_dir() + "/run_supervised";
  cfg.seed = 1;
  fs::remove_all(cfg.out_dir);
  const RunResult res = run_experiment(cfg, /*quiet=*/true);
  c.detail = "test mean subclass dice " + std::to_string(res.test_report.mean_dice);
  c.expect(res.test_report.mean_dice >= 0.85, "dice below 0.85");
  return c.ok;
}

bool criterion6(Checker& c) {
  const std::string data = work_dir() + "/data_nsub5";
  ensure_dataset(data, 5, 22);
  TrainConfig base;
  base.sgd.total_iters = 2000;
  base.data_dir = data;
  const std::vector<std::string> tokens = {"unet", "mod", "hm", "pc", "sn", "hm+pc+sn"};
  const std::vector<uint64_t> seeds = {1, 2, 3};
  const std::string out = work_dir() + "/trend_grid";
  const auto rows = run_ablation(base, tokens, seeds, out, /*jobs=*/2);
  {
    std::ofstream os(out + "/ablation.csv");
    write_ablation_csv(os, rows);
  }
  auto mean_of = [&](const std::string& config) {
    double s = 0.0;
    int n = 0;
    for (const auto& r : rows)
      if (r.config == config) {
        s += r.mean_dice;
        ++n;
      }
    return s / std::max(1, n);
  };
  const double unet = mean_of("unet"), mod = mean_of("mod"), full = mean_of("hm+pc+sn");
  const double hm = mean_of("hm"), pc = mean_of("pc"), sn = mean_of("sn");
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "unet %.3f, mod %.3f, hm %.3f, pc %.3f, sn %.3f, full %.3f", unet, mod, hm, pc,
                sn, full);
  c.detail = buf;
  c.expect(mod - unet >= 0.05, "superclass assistance gap below 5 points");
  c.expect(full - mod > 0.0, "full method does not beat Mod");
  c.expect(full >= hm - 0.01, "full below HM-only beyond tolerance");
  c.expect(full >= pc - 0.01, "full below PC-only beyond tolerance");
  c.expect(full >= sn - 0.01, "full below SN-only beyond tolerance");
  return c.ok;
}

// --- criterion 7: determinism and continuation -------------------------------

bool criterion7(Checker& c) {
  const std::string data = work_dir() + "/data_small";
  if (!fs::exists(data + "/manifest")) {
    DatasetParams p;
    p.n_train = 12;
    p.n_sub = 3;
    p.n_val = 2;
    p.n_test = 2;
    p.seed = 31;
    write_dataset(data, p);
  }
  TrainConfig cfg;
  cfg.model.base_channels = 8;
  cfg.model.depth = 2;
  cfg.enable_hm = true;
  cfg.model.enable_pc = true;
  cfg.model.enable_sn = true;
  cfg.sgd.total_iters = 12;
  cfg.batch_size = 4;
  cfg.patch_h = cfg.patch_w = 16;
  cfg.eval_every = 6;
  cfg.seed = 7;
  cfg.data_dir = data;

  cfg.out_dir = work_dir() + "/det_a";
  fs::remove_all(cfg.out_dir);
  run_experiment(cfg, true);
  cfg.out_dir = work_dir() + "/det_b";
  fs::remove_all(cfg.out_dir);
  run_experiment(cfg, true);
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    return std::vector<char>((std::istreambuf_iterator<char>(is)),
                             std::istreambuf_iterator<char>());
  };
  for (const auto& entry : fs::directory_iterator(work_dir() + "/det_a/final.ckpt")) {
    const std::string name = entry.path().filename().string();
    c.expect(slurp(work_dir() + "/det_a/final.ckpt/" + name) ==
                 slurp(work_dir() + "/det_b/final.ckpt/" + name),
             "rerun differs in " + name);
  }
  c.expect(slurp(work_dir() + "/det_a/log.csv") == slurp(work_dir() + "/det_b/log.csv"),
           "rerun log differs");

  // save / load / one step == uninterrupted run, bit-exact
  const auto ds = load_dataset(data);
  cfg.model.hierarchy = ds.split.hierarchy;
  auto do_step = [&](Model& m, int it) {
    Rng br = batch_stream(cfg.seed, it);
    Rng hr = hiermix_stream(cfg.seed, it);
    const auto batch = build_batch(ds.split, cfg, br);
    train_step(m, batch, it, cfg, hr);
  };
  Model uninterrupted(cfg.model);
  uninterrupted.init_params(cfg.seed);
  for (int it = 0; it < 5; ++it) do_step(uninterrupted, it);
  Model resumed(cfg.model);
  resumed.init_params(cfg.seed);
  for (int it = 0; it < 4; ++it) do_step(resumed, it);
  const std::string ck = work_dir() + "/det_ck";
  fs::remove_all(ck);
  save_checkpoint(ck, resumed, 4);
  Model fresh(cfg.model);
  const int it = load_checkpoint(ck, fresh);
  do_step(fresh, it);
  for (size_t i = 0; i < fresh.params().size(); ++i) {
    c.expect(fresh.params()[i].value().data == uninterrupted.params()[i].value().data &&
                 fresh.params()[i].momentum.data == uninterrupted.params()[i].momentum.data,
             "continuation differs in " + fresh.params()[i].name);
  }
  for (auto& [name, st] : fresh.bn_stats()) {
    c.expect(st.running_mean.data == uninterrupted.bn_stats().at(name).running_mean.data &&
                 st.running_var.data == uninterrupted.bn_stats().at(name).running_var.data,
             "continuation differs in stats " + name);
  }
  return c.ok;
}

}  // namespace

int main(int argc, char** argv) {
  struct Entry {
    int id;
    const char* label;
    bool (*fn)(Checker&);
  };
  const Entry entries[] = {
      {1, "gradient oracles (per-op 64-bit, end-to-end 32-bit)", criterion1},
      {2, "metric oracles (dice exhaustive counting, hd95 brute force)", criterion2},
      {3, "pseudo-label rule (fuzzed oracle, monotonicity, soundness, tau)", criterion3},
      {4, "mixup arithmetic (endpoint, locality, resampling oracle, row sums)", criterion4},
      {5, "fully supervised sanity (test dice >= 0.85 in 4000 iters)", criterion5},
      {6, "trend reproduction (unet < mod < full, ablation tolerances)", criterion6},
      {7, "determinism and checkpoint continuation", criterion7},
  };

  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  if (selected.empty())
    for (const auto& e : entries) selected.insert(e.id);

  bool all_ok = true;
  for (const auto& e : entries) {
    if (!selected.count(e.id)) continue;
    Checker c;
    const auto t0 = Clock::now();
    bool ok = false;
    try {
      ok = e.fn(c);
    } catch (const std::exception& ex) {
      c.ok = false;
      c.detail = std::string("exception: ") + ex.what();
    }
    const double secs = std::chrono::duration<double>(Clock::now() - t0).count();
    std::printf("%s: criterion %d - %s (%.1fs)%s%s\n", ok && c.ok ? "PASS" : "FAIL", e.id,
                e.label, secs, c.detail.empty() ? "" : " :: ", c.detail.c_str());
    std::fflush(stdout);
    all_ok = all_ok && ok && c.ok;
  }
  return all_ok ? 0 : 1;
}
