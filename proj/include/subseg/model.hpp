#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "subseg/hierarchy.hpp"
#include "subseg/losses.hpp"
#include "subseg/ops.hpp"
#include "subseg/optimizer.hpp"
#include "subseg/rng.hpp"

namespace subseg {

struct ModelConfig {
  bool enable_pc = false;
  bool enable_sn = false;
  int base_channels = 16;
  int depth = 3;
  HierarchySpec hierarchy = HierarchySpec::binary_foreground(3);

  void validate() const {
    if (depth < 2) throw std::invalid_argument("model: depth must be >= 2");
    if (base_channels < 4) throw std::invalid_argument("model: base_channels must be >= 4");
    hierarchy.validate();
  }
};

struct HeadOutputs {
  Var super_logits;  // N x R x H x W
  Var sub_logits;    // N x K x H x W
  Var features;      // N x base_channels x H x W
};

/// U-Net backbone with superclass/subclass heads. Prior Concatenation feeds
/// detached superclass logits to the subclassifier input; Separate
/// Normalization splits the feature map into independently normalized
/// background and foreground branches with dedicated classifiers sharing a
/// single background logit.
class Model {
 public:
  explicit Model(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build();
  }

  const ModelConfig& config() const { return cfg_; }
  std::vector<Parameter>& params() { return params_; }
  const std::vector<Parameter>& params() const { return params_; }
  std::map<std::string, ops::BnStatsT<float>>& bn_stats() { return bn_stats_; }

  Parameter& param(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return p;
    throw std::invalid_argument("model: no parameter named " + name);
  }

  bool training = true;
  int64_t forwarded_samples = 0;  // running count of samples pushed through forward()

  /// Kaiming-normal conv weights, zero biases, unit BN scales; the draw
  /// order is the registration order, so runs are seed-reproducible.
  void init_params(uint64_t seed) {
    Rng rng(seed, rng_stream::kInit);
    for (auto& p : params_) {
      Tensor& v = p.value();
      if (v.rank() == 4) {
        const int fan_in = v.dim(1) * v.dim(2) * v.dim(3);
        const float std = std::sqrt(2.f / static_cast<float>(fan_in));
        for (auto& x : v.data) x = static_cast<float>(rng.normal()) * std;
      }
      // rank-1 tensors (biases, BN affines) keep their constructed values
    }
    for (auto& [name, st] : bn_stats_) {
      st.running_mean.fill(0.f);
      st.running_var.fill(1.f);
    }
  }

  /// Backbone features at input resolution.
  Var unet_forward(const Var& x, bool update_stats) {
    const int H = x->value.dim(2), W = x->value.dim(3);
    const int div = 1 << cfg_.depth;
    if (H % div != 0 || W % div != 0)
      throw std::invalid_argument("unet_forward: spatial dims " + x->value.shape_str() +
                                  " not divisible by 2^depth = " + std::to_string(div));
    std::vector<Var> skips;
    Var h = x;
    for (int level = 0; level < cfg_.depth; ++level) {
      h = double_conv(enc_[static_cast<size_t>(level)], h, update_stats);
      skips.push_back(h);
      h = ops::max_pool2(h);
    }
    h = double_conv(bottleneck_, h, update_stats);
    for (int level = cfg_.depth - 1; level >= 0; --level) {
      h = ops::upsample_nearest2(h);
      h = ops::concat_channels(skips[static_cast<size_t>(level)], h);
      h = double_conv(dec_[static_cast<size_t>(level)], h, update_stats);
    }
    return h;
  }

  /// Classification heads over backbone features, dispatching on PC/SN.
  /// `pc_prior_override` replaces the detached superclass logits fed to the
  /// subclassifier; finite-difference harnesses use it to freeze the
  /// stop-gradient input so the probed function matches the tape.
  HeadOutputs heads_forward(const Var& f, bool update_stats,
                            const Tensor* pc_prior_override = nullptr) {
    HeadOutputs out;
    out.features = f;
    if (!cfg_.enable_sn) {
      out.super_logits = conv1x1(head_super_, f);
      Var sub_in = f;
      if (cfg_.enable_pc) sub_in = ops::concat_channels(f, prior(out.super_logits, pc_prior_override));
      out.sub_logits = conv1x1(head_sub_, sub_in);
      return out;
    }
    return separate_norm_forward(f, update_stats, pc_prior_override);
  }

  /// Two branches with independent batch-norm affines: the background branch
  /// ends in one background logit b shared by both assembled distributions,
  /// the foreground branch carries the superclassifier (one fg logit) and
  /// the subclassifier (K-1 fg subclass logits).
  HeadOutputs separate_norm_forward(const Var& f, bool update_stats,
                                    const Tensor* pc_prior_override = nullptr) {
    if (!cfg_.enable_sn) throw std::logic_error("separate_norm_forward: SN is disabled");
    HeadOutputs out;
    out.features = f;

    Var bg = branch_features(sn_bg_, f, update_stats);
    Var fg = branch_features(sn_fg_, f, update_stats);

    Var b = conv1x1(sn_bg_head_, bg);        // 1 channel
    Var s = conv1x1(sn_fg_super_, fg);       // 1 channel
    out.super_logits = ops::concat_channels(b, s);

    Var sub_in = fg;
    if (cfg_.enable_pc)
      sub_in = ops::concat_channels(fg, prior(out.super_logits, pc_prior_override));
    Var u = conv1x1(sn_fg_sub_, sub_in);     // K-1 channels
    out.sub_logits = ops::concat_channels(b, u);
    return out;
  }

  HeadOutputs forward(const Tensor& batch, bool update_stats,
                      const Tensor* pc_prior_override = nullptr) {
    auto x = make_const(batch);
    forwarded_samples += batch.dim(0);
    return heads_forward(unet_forward(x, update_stats), update_stats, pc_prior_override);
  }

 private:
  struct ConvLayer {
    int w = -1, b = -1;  // indices into params_
  };
  struct BnLayer {
    int gamma = -1, beta = -1;
    std::string stats_name;
  };
  struct DoubleConv {
    ConvLayer c1, c2;
    BnLayer bn1, bn2;
  };
  struct Branch {
    BnLayer bn;
    ConvLayer c1, c2;
  };

  ModelConfig cfg_;
  std::vector<Parameter> params_;
  std::map<std::string, ops::BnStatsT<float>> bn_stats_;

  std::vector<DoubleConv> enc_, dec_;
  DoubleConv bottleneck_;
  ConvLayer head_super_, head_sub_;
  Branch sn_bg_, sn_fg_;
  ConvLayer sn_bg_head_, sn_fg_super_, sn_fg_sub_;

  int add_param(const std::string& name, Tensor t) {
    params_.emplace_back(name, std::move(t));
    return static_cast<int>(params_.size() - 1);
  }

  ConvLayer make_conv(const std::string& name, int cin, int cout, int k) {
    ConvLayer l;
    l.w = add_param(name + ".w", Tensor({cout, cin, k, k}));
    l.b = add_param(name + ".b", Tensor({cout}));
    return l;
  }

  BnLayer make_bn(const std::string& name, int channels) {
    BnLayer l;
    l.gamma = add_param(name + ".gamma", Tensor({channels}, 1.f));
    l.beta = add_param(name + ".beta", Tensor({channels}, 0.f));
    l.stats_name = name;
    bn_stats_.emplace(name, ops::BnStatsT<float>(channels));
    return l;
  }

  DoubleConv make_double_conv(const std::string& name, int cin, int cout) {
    DoubleConv d;
    d.c1 = make_conv(name + ".conv1", cin, cout, 3);
    d.bn1 = make_bn(name + ".bn1", cout);
    d.c2 = make_conv(name + ".conv2", cout, cout, 3);
    d.bn2 = make_bn(name + ".bn2", cout);
    return d;
  }

  void build() {
    const int R = cfg_.hierarchy.num_super;
    const int K = cfg_.hierarchy.num_sub();
    const int base = cfg_.base_channels;
    int cin = 1;
    for (int level = 0; level < cfg_.depth; ++level) {
      const int cout = base << level;
      enc_.push_back(make_double_conv("enc" + std::to_string(level), cin, cout));
      cin = cout;
    }
    bottleneck_ = make_double_conv("bottleneck", cin, base << cfg_.depth);
    int up_in = base << cfg_.depth;
    for (int level = cfg_.depth - 1; level >= 0; --level) {
      const int skip = base << level;
      dec_.resize(static_cast<size_t>(cfg_.depth));
      dec_[static_cast<size_t>(level)] =
          make_double_conv("dec" + std::to_string(level), skip + up_in, skip);
      up_in = skip;
    }
    if (!cfg_.enable_sn) {
      head_super_ = make_conv("head.super", base, R, 1);
      head_sub_ = make_conv("head.sub", cfg_.enable_pc ? base + R : base, K, 1);
    } else {
      sn_bg_.bn = make_bn("sn.bg.bn", base);
      sn_bg_.c1 = make_conv("sn.bg.conv1", base, base, 3);
      sn_bg_.c2 = make_conv("sn.bg.conv2", base, base, 3);
      sn_fg_.bn = make_bn("sn.fg.bn", base);
      sn_fg_.c1 = make_conv("sn.fg.conv1", base, base, 3);
      sn_fg_.c2 = make_conv("sn.fg.conv2", base, base, 3);
      sn_bg_head_ = make_conv("sn.bg.head", base, 1, 1);
      sn_fg_super_ = make_conv("sn.fg.super", base, 1, 1);
      sn_fg_sub_ = make_conv("sn.fg.sub", cfg_.enable_pc ? base + R : base, K - 1, 1);
    }
  }

  static Var prior(const Var& super_logits, const Tensor* override_values) {
    if (!override_values) return ops::detach(super_logits);
    subseg::detail::check_same_shape("pc_prior_override", super_logits->value.shape,
                                     override_values->shape);
    return make_const(*override_values);
  }

  Var conv(const ConvLayer& l, const Var& x) {
    return ops::conv2d(x, params_[static_cast<size_t>(l.w)].node,
                       params_[static_cast<size_t>(l.b)].node);
  }
  Var conv1x1(const ConvLayer& l, const Var& x) { return conv(l, x); }

  Var bn(const BnLayer& l, const Var& x, bool update_stats) {
    return ops::batch_norm(x, params_[static_cast<size_t>(l.gamma)].node,
                           params_[static_cast<size_t>(l.beta)].node, bn_stats_.at(l.stats_name),
                           training, training && update_stats);
  }

  Var double_conv(const DoubleConv& d, const Var& x, bool update_stats) {
    Var h = ops::relu(bn(d.bn1, conv(d.c1, x), update_stats));
    return ops::relu(bn(d.bn2, conv(d.c2, h), update_stats));
  }

  // bn -> conv3x3 -> relu -> conv3x3
  Var branch_features(const Branch& br, const Var& f, bool update_stats) {
    Var h = bn(br.bn, f, update_stats);
    h = ops::relu(conv(br.c1, h));
    return conv(br.c2, h);
  }
};

/// L_c on the superclass head over the whole batch; L_f on the subclass head
/// over the slots that carry subclass maps. Missing z contributes exactly
/// zero loss and zero gradient.
struct SupervisedLosses {
  Var l_c;
  Var l_f;
};

inline SupervisedLosses supervised_losses(const HeadOutputs& outs, const std::vector<LabelMap>& y,
                                          const std::vector<std::optional<LabelMap>>& z,
                                          const HierarchySpec& hier, bool super_loss_enabled = true) {
  const int N = outs.sub_logits->value.dim(0);
  if (static_cast<int>(y.size()) != N || static_cast<int>(z.size()) != N)
    throw std::invalid_argument("supervised_losses: batch size mismatch");
  for (int n = 0; n < N; ++n)
    if (z[static_cast<size_t>(n)] && !hier.consistent(*z[static_cast<size_t>(n)], y[static_cast<size_t>(n)]))
      throw std::invalid_argument("supervised_losses: subclass map inconsistent with superclass map at slot " +
                                  std::to_string(n));

  SupervisedLosses out;
  out.l_c = super_loss_enabled
                ? ce_dice_loss(outs.super_logits, onehot<float>(y, hier.num_super))
                : make_const(Tensor({1}, 0.f));

  const int H = y[0].h, W = y[0].w;
  bool any_fine = false;
  Tensor weights({N, H, W}, 0.f);
  std::vector<LabelMap> zmaps;
  for (int n = 0; n < N; ++n) {
    if (z[static_cast<size_t>(n)]) {
      any_fine = true;
      for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i)
        weights[static_cast<int64_t>(n) * H * W + i] = 1.f;
      zmaps.push_back(*z[static_cast<size_t>(n)]);
    } else {
      zmaps.push_back(LabelMap(H, W, 0));  // placeholder rows, weight 0
    }
  }
  out.l_f = any_fine
                ? ce_dice_loss(outs.sub_logits, onehot<float>(zmaps, hier.num_sub()), &weights)
                : make_const(Tensor({1}, 0.f));
  return out;
}

}  // namespace subseg
