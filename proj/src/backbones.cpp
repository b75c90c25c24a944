// Family architectures. Each family has a full reference configuration and a
// tiny configuration built by the same code at reduced width and depth.
#include <algorithm>
#include <cmath>

#include "ckd/error.hpp"
#include "ckd/model_zoo.hpp"

namespace ckd {
namespace {

using nn::Conv2d;
using nn::Dense;
using nn::Padding;
using nn::Var;

// ---------------------------------------------------------------- MobileNetV2

struct InvertedResidualStage {
  std::size_t expansion, channels, repeats, stride;
};

struct MobileNetArch {
  std::size_t stem;
  std::vector<InvertedResidualStage> stages;
  std::size_t top;
};

MobileNetArch mobilenet_arch(Variant v) {
  if (v == Variant::FullPretrained) {
    return {32,
            {{1, 16, 1, 1}, {6, 24, 2, 2}, {6, 32, 3, 2}, {6, 64, 4, 2}, {6, 96, 3, 1},
             {6, 160, 3, 2}, {6, 320, 1, 1}},
            1280};
  }
  return {8, {{1, 8, 1, 1}, {6, 16, 1, 2}, {6, 24, 1, 2}}, 64};
}

class MobileNetV2 final : public FeatureExtractor {
 public:
  MobileNetV2(const BackboneSpec& spec, Rng& rng) : FeatureExtractor(spec) {
    const auto arch = mobilenet_arch(spec.variant);
    stem_ = Conv2d(store_, "stem/conv", "stem", 3, arch.stem, 3, 3, 2, Padding::Same, 1, rng);
    std::size_t in = arch.stem;
    for (std::size_t s = 0; s < arch.stages.size(); ++s) {
      const auto& st = arch.stages[s];
      const std::string group = "stage" + std::to_string(s + 1);
      for (std::size_t r = 0; r < st.repeats; ++r) {
        const std::string name = group + "/block" + std::to_string(r + 1);
        Block b;
        const std::size_t stride = r == 0 ? st.stride : 1;
        const std::size_t hidden = in * st.expansion;
        if (st.expansion != 1) {
          b.expand = Conv2d(store_, name + "/expand", group, in, hidden, 1, 1, 1, Padding::Same, 1, rng);
          b.has_expand = true;
        }
        b.depthwise = Conv2d(store_, name + "/depthwise", group, hidden, hidden, 3, 3, stride,
                             Padding::Same, hidden, rng);
        b.project = Conv2d(store_, name + "/project", group, hidden, st.channels, 1, 1, 1,
                           Padding::Same, 1, rng);
        b.residual = stride == 1 && in == st.channels;
        blocks_.push_back(std::move(b));
        in = st.channels;
      }
    }
    top_ = Conv2d(store_, "top/conv", "top", in, arch.top, 1, 1, 1, Padding::Same, 1, rng);
    last_stage_groups_ = {"stage" + std::to_string(arch.stages.size()), "top"};
  }

 protected:
  Var body(const Var& x) const override {
    Var h = nn::relu6(stem_(x));
    for (const auto& b : blocks_) {
      Var y = b.has_expand ? nn::relu6(b.expand(h)) : h;
      y = nn::relu6(b.depthwise(y));
      y = b.project(y);
      h = b.residual ? nn::add(h, y) : y;
    }
    return nn::global_avg_pool(nn::relu6(top_(h)));
  }

 private:
  struct Block {
    Conv2d expand, depthwise, project;
    bool has_expand = false;
    bool residual = false;
  };
  Conv2d stem_, top_;
  std::vector<Block> blocks_;
};

// ------------------------------------------------------------- EfficientNetV2

struct EfficientStage {
  bool fused;
  std::size_t expansion, channels, repeats, stride;
  double se_ratio;
};

struct EfficientArch {
  std::size_t stem;
  std::vector<EfficientStage> stages;
  std::size_t top;
};

EfficientArch efficientnet_arch(Variant v) {
  if (v == Variant::FullPretrained) {
    // EfficientNetV2-B0.
    return {32,
            {{true, 1, 16, 1, 1, 0.0}, {true, 4, 32, 2, 2, 0.0}, {true, 4, 48, 2, 2, 0.0},
             {false, 4, 96, 3, 2, 0.25}, {false, 6, 112, 5, 1, 0.25}, {false, 6, 192, 8, 2, 0.25}},
            1280};
  }
  return {8, {{true, 1, 8, 1, 1, 0.0}, {true, 4, 16, 1, 2, 0.0}, {false, 4, 24, 1, 2, 0.25}}, 64};
}

class EfficientNetV2 final : public FeatureExtractor {
 public:
  EfficientNetV2(const BackboneSpec& spec, Rng& rng) : FeatureExtractor(spec) {
    const auto arch = efficientnet_arch(spec.variant);
    stem_ = Conv2d(store_, "stem/conv", "stem", 3, arch.stem, 3, 3, 2, Padding::Same, 1, rng);
    std::size_t in = arch.stem;
    for (std::size_t s = 0; s < arch.stages.size(); ++s) {
      const auto& st = arch.stages[s];
      const std::string group = "stage" + std::to_string(s + 1);
      for (std::size_t r = 0; r < st.repeats; ++r) {
        const std::string name = group + "/block" + std::to_string(r + 1);
        const std::size_t stride = r == 0 ? st.stride : 1;
        const std::size_t hidden = in * st.expansion;
        Block b;
        b.fused = st.fused;
        if (st.fused) {
          if (st.expansion == 1) {
            b.expand = Conv2d(store_, name + "/conv", group, in, st.channels, 3, 3, stride,
                              Padding::Same, 1, rng);
          } else {
            b.expand = Conv2d(store_, name + "/expand", group, in, hidden, 3, 3, stride,
                              Padding::Same, 1, rng);
            b.project = Conv2d(store_, name + "/project", group, hidden, st.channels, 1, 1, 1,
                               Padding::Same, 1, rng);
            b.has_project = true;
          }
        } else {
          b.expand = Conv2d(store_, name + "/expand", group, in, hidden, 1, 1, 1, Padding::Same, 1, rng);
          b.depthwise = Conv2d(store_, name + "/depthwise", group, hidden, hidden, 3, 3, stride,
                               Padding::Same, hidden, rng);
          if (st.se_ratio > 0.0) {
            const auto squeezed = std::max<std::size_t>(
                1, static_cast<std::size_t>(static_cast<double>(in) * st.se_ratio));
            b.se_reduce = Dense(store_, name + "/se_reduce", group, hidden, squeezed,
                                Dense::Init::He, rng);
            b.se_expand = Dense(store_, name + "/se_expand", group, squeezed, hidden,
                                Dense::Init::Glorot, rng);
            b.has_se = true;
          }
          b.project = Conv2d(store_, name + "/project", group, hidden, st.channels, 1, 1, 1,
                             Padding::Same, 1, rng);
          b.has_project = true;
        }
        b.residual = stride == 1 && in == st.channels;
        blocks_.push_back(std::move(b));
        in = st.channels;
      }
    }
    top_ = Conv2d(store_, "top/conv", "top", in, arch.top, 1, 1, 1, Padding::Same, 1, rng);
    last_stage_groups_ = {"stage" + std::to_string(arch.stages.size()), "top"};
  }

 protected:
  Var body(const Var& x) const override {
    Var h = nn::silu(stem_(x));
    for (const auto& b : blocks_) {
      Var y = nn::silu(b.expand(h));
      if (!b.fused) {
        y = nn::silu(b.depthwise(y));
        if (b.has_se) {
          Var s = nn::silu(b.se_reduce(nn::global_avg_pool(y)));
          y = nn::scale_channels(y, nn::sigmoid(b.se_expand(s)));
        }
      }
      if (b.has_project) y = b.project(y);
      h = b.residual ? nn::add(h, y) : y;
    }
    return nn::global_avg_pool(nn::silu(top_(h)));
  }

 private:
  struct Block {
    bool fused = false, has_project = false, has_se = false, residual = false;
    Conv2d expand, depthwise, project;
    Dense se_reduce, se_expand;
  };
  Conv2d stem_, top_;
  std::vector<Block> blocks_;
};

// ------------------------------------------------------------------ Inception

// Conv + ReLU unit; pretrained batch-norm statistics are folded into the bias.
class ConvUnit {
 public:
  ConvUnit() = default;
  ConvUnit(nn::ParameterStore& store, const std::string& name, const std::string& group,
           std::size_t in, std::size_t out, std::size_t kh, std::size_t kw, std::size_t stride,
           Padding padding, Rng& rng)
      : conv_(store, name, group, in, out, kh, kw, stride, padding, 1, rng), out_(out) {}
  Var operator()(const Var& x) const { return nn::relu(conv_(x)); }
  std::size_t out() const { return out_; }

 private:
  Conv2d conv_;
  std::size_t out_ = 0;
};

using Chain = std::vector<ConvUnit>;

Var run(const Chain& chain, const Var& x) {
  Var h = x;
  for (const auto& unit : chain) h = unit(h);
  return h;
}

// Channel widths divided by `div` for the tiny variant.
struct Widths {
  std::size_t div = 1;
  std::size_t operator()(std::size_t w) const { return std::max<std::size_t>(1, w / div); }
};

class InceptionNet final : public FeatureExtractor {
 public:
  InceptionNet(const BackboneSpec& spec, Rng& rng) : FeatureExtractor(spec) {
    tiny_ = spec.variant == Variant::TinyRandom;
    const Widths w{tiny_ ? 8u : 1u};
    std::size_t in = 3;
    auto unit = [&](const std::string& name, const std::string& group, std::size_t cin,
                    std::size_t cout, std::size_t kh, std::size_t kw, std::size_t stride,
                    Padding pad) { return ConvUnit(store_, name, group, cin, cout, kh, kw, stride, pad, rng); };

    if (tiny_) {
      stem_ = {unit("stem/conv1", "stem", 3, w(64), 3, 3, 2, Padding::Same)};
      in = w(64);
    } else {
      stem_ = {unit("stem/conv1", "stem", 3, 32, 3, 3, 2, Padding::Valid),
               unit("stem/conv2", "stem", 32, 32, 3, 3, 1, Padding::Valid),
               unit("stem/conv3", "stem", 32, 64, 3, 3, 1, Padding::Same)};
      stem_tail_ = {unit("stem/conv4", "stem", 64, 80, 1, 1, 1, Padding::Valid),
                    unit("stem/conv5", "stem", 80, 192, 3, 3, 1, Padding::Valid)};
      in = 192;
    }

    std::size_t stage = 0;
    auto add_module = [&](Module m) {
      modules_.push_back(std::move(m));
      in = modules_.back().out;
    };
    const std::vector<std::size_t> a_pools = tiny_ ? std::vector<std::size_t>{32}
                                                   : std::vector<std::size_t>{32, 64, 64};
    for (std::size_t pool : a_pools) add_module(inception_a(++stage, in, w(pool), w, unit));
    add_module(reduction_a(++stage, in, w, unit));
    if (!tiny_) {
      for (std::size_t c7 : {128u, 160u, 160u, 192u}) add_module(inception_b(++stage, in, c7, unit));
      add_module(reduction_b(++stage, in, unit));
      add_module(inception_c(++stage, in, unit));
      add_module(inception_c(++stage, in, unit));
      last_stage_groups_ = {"stage" + std::to_string(stage)};
    } else {
      top_ = {unit("top/conv", "top", in, 64, 1, 1, 1, Padding::Same)};
      last_stage_groups_ = {"stage" + std::to_string(stage), "top"};
    }
  }

 protected:
  Var body(const Var& x) const override {
    Var h = run(stem_, x);
    if (!tiny_) {
      h = nn::pool2d(h, nn::PoolKind::Max, 3, 2, Padding::Valid);
      h = run(stem_tail_, h);
      h = nn::pool2d(h, nn::PoolKind::Max, 3, 2, Padding::Valid);
    }
    for (const auto& m : modules_) {
      std::vector<Var> parts;
      for (const auto& branch : m.branches) {
        Var b = h;
        if (branch.pool_first) b = nn::pool2d(b, branch.pool_kind, 3, branch.pool_stride, branch.pool_padding);
        b = run(branch.chain, b);
        if (!branch.split.empty()) {
          std::vector<Var> halves;
          for (const auto& s : branch.split) halves.push_back(s(b));
          b = nn::concat_last(halves);
        }
        parts.push_back(b);
      }
      h = nn::concat_last(parts);
    }
    if (tiny_) h = run(top_, h);
    return nn::global_avg_pool(h);
  }

 private:
  struct Branch {
    Chain chain;
    bool pool_first = false;
    nn::PoolKind pool_kind = nn::PoolKind::Average;
    std::size_t pool_stride = 1;
    Padding pool_padding = Padding::Same;
    // Parallel tail convs whose outputs are concatenated (1x3 / 3x1 pairs).
    Chain split;
  };
  static Branch seq(Chain chain) {
    Branch b;
    b.chain = std::move(chain);
    return b;
  }

  struct Module {
    std::vector<Branch> branches;
    std::size_t out = 0;
  };

  template <typename Unit>
  static Module inception_a(std::size_t stage, std::size_t in, std::size_t pool, const Widths& w,
                            Unit& unit) {
    const std::string g = "stage" + std::to_string(stage);
    Module m;
    m.branches.push_back(seq({unit(g + "/b1x1", g, in, w(64), 1, 1, 1, Padding::Same)}));
    m.branches.push_back(seq({unit(g + "/b5x5_1", g, in, w(48), 1, 1, 1, Padding::Same),
                           unit(g + "/b5x5_2", g, w(48), w(64), 5, 5, 1, Padding::Same)}));
    m.branches.push_back(seq({unit(g + "/b3x3dbl_1", g, in, w(64), 1, 1, 1, Padding::Same),
                           unit(g + "/b3x3dbl_2", g, w(64), w(96), 3, 3, 1, Padding::Same),
                           unit(g + "/b3x3dbl_3", g, w(96), w(96), 3, 3, 1, Padding::Same)}));
    Branch pool_branch = seq({unit(g + "/bpool", g, in, pool, 1, 1, 1, Padding::Same)});
    pool_branch.pool_first = true;
    m.branches.push_back(std::move(pool_branch));
    m.out = w(64) + w(64) + w(96) + pool;
    return m;
  }

  template <typename Unit>
  static Module reduction_a(std::size_t stage, std::size_t in, const Widths& w, Unit& unit) {
    const std::string g = "stage" + std::to_string(stage);
    Module m;
    m.branches.push_back(seq({unit(g + "/b3x3", g, in, w(384), 3, 3, 2, Padding::Valid)}));
    m.branches.push_back(seq({unit(g + "/b3x3dbl_1", g, in, w(64), 1, 1, 1, Padding::Same),
                           unit(g + "/b3x3dbl_2", g, w(64), w(96), 3, 3, 1, Padding::Same),
                           unit(g + "/b3x3dbl_3", g, w(96), w(96), 3, 3, 2, Padding::Valid)}));
    Branch pool;
    pool.pool_first = true;
    pool.pool_kind = nn::PoolKind::Max;
    pool.pool_stride = 2;
    pool.pool_padding = Padding::Valid;
    m.branches.push_back(std::move(pool));
    m.out = w(384) + w(96) + in;
    return m;
  }

  template <typename Unit>
  static Module inception_b(std::size_t stage, std::size_t in, std::size_t c7, Unit& unit) {
    const std::string g = "stage" + std::to_string(stage);
    Module m;
    m.branches.push_back(seq({unit(g + "/b1x1", g, in, 192, 1, 1, 1, Padding::Same)}));
    m.branches.push_back(seq({unit(g + "/b7x7_1", g, in, c7, 1, 1, 1, Padding::Same),
                           unit(g + "/b7x7_2", g, c7, c7, 1, 7, 1, Padding::Same),
                           unit(g + "/b7x7_3", g, c7, 192, 7, 1, 1, Padding::Same)}));
    m.branches.push_back(seq({unit(g + "/b7x7dbl_1", g, in, c7, 1, 1, 1, Padding::Same),
                           unit(g + "/b7x7dbl_2", g, c7, c7, 7, 1, 1, Padding::Same),
                           unit(g + "/b7x7dbl_3", g, c7, c7, 1, 7, 1, Padding::Same),
                           unit(g + "/b7x7dbl_4", g, c7, c7, 7, 1, 1, Padding::Same),
                           unit(g + "/b7x7dbl_5", g, c7, 192, 1, 7, 1, Padding::Same)}));
    Branch pool = seq({unit(g + "/bpool", g, in, 192, 1, 1, 1, Padding::Same)});
    pool.pool_first = true;
    m.branches.push_back(std::move(pool));
    m.out = 768;
    return m;
  }

  template <typename Unit>
  static Module reduction_b(std::size_t stage, std::size_t in, Unit& unit) {
    const std::string g = "stage" + std::to_string(stage);
    Module m;
    m.branches.push_back(seq({unit(g + "/b3x3_1", g, in, 192, 1, 1, 1, Padding::Same),
                           unit(g + "/b3x3_2", g, 192, 320, 3, 3, 2, Padding::Valid)}));
    m.branches.push_back(seq({unit(g + "/b7x7x3_1", g, in, 192, 1, 1, 1, Padding::Same),
                           unit(g + "/b7x7x3_2", g, 192, 192, 1, 7, 1, Padding::Same),
                           unit(g + "/b7x7x3_3", g, 192, 192, 7, 1, 1, Padding::Same),
                           unit(g + "/b7x7x3_4", g, 192, 192, 3, 3, 2, Padding::Valid)}));
    Branch pool;
    pool.pool_first = true;
    pool.pool_kind = nn::PoolKind::Max;
    pool.pool_stride = 2;
    pool.pool_padding = Padding::Valid;
    m.branches.push_back(std::move(pool));
    m.out = 320 + 192 + in;
    return m;
  }

  template <typename Unit>
  static Module inception_c(std::size_t stage, std::size_t in, Unit& unit) {
    const std::string g = "stage" + std::to_string(stage);
    Module m;
    m.branches.push_back(seq({unit(g + "/b1x1", g, in, 320, 1, 1, 1, Padding::Same)}));
    Branch b3 = seq({unit(g + "/b3x3_1", g, in, 384, 1, 1, 1, Padding::Same)});
    b3.split = {unit(g + "/b3x3_2a", g, 384, 384, 1, 3, 1, Padding::Same),
                unit(g + "/b3x3_2b", g, 384, 384, 3, 1, 1, Padding::Same)};
    m.branches.push_back(std::move(b3));
    Branch dbl = seq({unit(g + "/b3x3dbl_1", g, in, 448, 1, 1, 1, Padding::Same),
                unit(g + "/b3x3dbl_2", g, 448, 384, 3, 3, 1, Padding::Same)});
    dbl.split = {unit(g + "/b3x3dbl_3a", g, 384, 384, 1, 3, 1, Padding::Same),
                 unit(g + "/b3x3dbl_3b", g, 384, 384, 3, 1, 1, Padding::Same)};
    m.branches.push_back(std::move(dbl));
    Branch pool = seq({unit(g + "/bpool", g, in, 192, 1, 1, 1, Padding::Same)});
    pool.pool_first = true;
    m.branches.push_back(std::move(pool));
    m.out = 320 + 768 + 768 + 192;
    return m;
  }

  bool tiny_ = false;
  Chain stem_, stem_tail_, top_;
  std::vector<Module> modules_;
};

// ------------------------------------------------------------------------ ViT

struct VitArch {
  std::size_t width, depth, heads, mlp;
};

VitArch vit_arch(Variant v) {
  if (v == Variant::FullPretrained) return {768, 12, 12, 3072};
  return {64, 2, 4, 128};
}

class VisionTransformer final : public FeatureExtractor {
 public:
  VisionTransformer(const BackboneSpec& spec, Rng& rng)
      : FeatureExtractor(spec), geometry_(vit_geometry(spec.input_size)), arch_(vit_arch(spec.variant)) {
    const std::size_t d = arch_.width;
    patch_embed_ = Conv2d(store_, "embed/patch", "embed", 3, d, geometry_.patch, geometry_.patch,
                          geometry_.patch, Padding::Valid, 1, rng);
    class_token_ = store_.add("embed/class_token", "embed", nn::trunc_normal({1, d}, 0.02, rng));
    position_ = store_.add("embed/position", "embed",
                           nn::trunc_normal({geometry_.num_tokens, d}, 0.02, rng));
    for (std::size_t i = 0; i < arch_.depth; ++i) {
      const std::string g = "block" + std::to_string(i + 1);
      Block b;
      b.norm1 = nn::LayerNorm(store_, g + "/norm1", g, d);
      b.qkv = Dense(store_, g + "/qkv", g, d, 3 * d, Dense::Init::Glorot, rng);
      b.proj = Dense(store_, g + "/proj", g, d, d, Dense::Init::Glorot, rng);
      b.norm2 = nn::LayerNorm(store_, g + "/norm2", g, d);
      b.fc1 = Dense(store_, g + "/mlp_fc1", g, d, arch_.mlp, Dense::Init::Glorot, rng);
      b.fc2 = Dense(store_, g + "/mlp_fc2", g, arch_.mlp, d, Dense::Init::Glorot, rng);
      blocks_.push_back(std::move(b));
    }
    final_norm_ = nn::LayerNorm(store_, "top/norm", "top", d);
    last_stage_groups_ = {"block" + std::to_string(arch_.depth), "top"};
  }

  const VitGeometry& geometry() const { return geometry_; }

 protected:
  Var body(const Var& x) const override {
    const std::size_t n = x->value.dim(0);
    const std::size_t d = arch_.width;
    Var tokens = nn::reshape(patch_embed_(x), {n, geometry_.num_patches, d});
    tokens = nn::add_broadcast(nn::prepend_token(tokens, class_token_), position_);
    for (const auto& b : blocks_) {
      Var attn = b.proj(nn::self_attention(b.qkv(b.norm1(tokens)), arch_.heads));
      tokens = nn::add(tokens, attn);
      Var mlp = b.fc2(nn::gelu(b.fc1(b.norm2(tokens))));
      tokens = nn::add(tokens, mlp);
    }
    return nn::select_token(final_norm_(tokens), 0);
  }

 private:
  struct Block {
    nn::LayerNorm norm1, norm2;
    Dense qkv, proj, fc1, fc2;
  };
  VitGeometry geometry_;
  VitArch arch_;
  Conv2d patch_embed_;
  Var class_token_, position_;
  std::vector<Block> blocks_;
  nn::LayerNorm final_norm_;
};

}  // namespace

std::unique_ptr<FeatureExtractor> construct_architecture(const BackboneSpec& spec,
                                                         std::uint64_t seed) {
  Rng rng(derive_seed({seed, static_cast<std::uint64_t>(spec.family), 0xba5e}));
  std::unique_ptr<FeatureExtractor> out;
  switch (spec.family) {
    case BackboneFamily::MobileNetV2: out = std::make_unique<MobileNetV2>(spec, rng); break;
    case BackboneFamily::EfficientNetV2: out = std::make_unique<EfficientNetV2>(spec, rng); break;
    case BackboneFamily::InceptionV2: out = std::make_unique<InceptionNet>(spec, rng); break;
    case BackboneFamily::ViTB16: out = std::make_unique<VisionTransformer>(spec, rng); break;
  }
  return out;
}

}  // namespace ckd
