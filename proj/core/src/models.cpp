#include "dseg/models.hpp"

#include <algorithm>
#include <cmath>

namespace dseg {

namespace {

// Probabilities are kept strictly inside (0,1); float cannot represent
// 1 - 1e-7 as anything but 1.0, so single precision uses a wider margin.
template <typename T>
constexpr T prob_margin() {
  return sizeof(T) == 4 ? static_cast<T>(1e-6) : static_cast<T>(1e-7);
}

template <typename T>
Tensor<T> prob_head(const Tensor<T>& logits) {
  return clamp(sigmoid(logits), prob_margin<T>(), T(1) - prob_margin<T>());
}

// Registers parameters in a stable order while handing out live handles.
template <typename T>
class ParamBank {
 public:
  ParamBank(std::vector<std::pair<std::string, Tensor<T>>>& params, Rng& rng)
      : params_(params), rng_(rng) {}

  Tensor<T> conv_w(const std::string& name, int64_t oc, int64_t ic, int64_t kh, int64_t kw) {
    const T limit = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ic * kh * kw)));
    return reg(name, Tensor<T>::uniform({oc, ic, kh, kw}, limit, rng_));
  }
  // Transposed kernel [x_channels, out_channels, 2, 2].
  Tensor<T> tconv_w(const std::string& name, int64_t xc, int64_t oc) {
    const T limit = static_cast<T>(1.0 / std::sqrt(static_cast<double>(xc * 4)));
    return reg(name, Tensor<T>::uniform({xc, oc, 2, 2}, limit, rng_));
  }
  Tensor<T> linear_w(const std::string& name, int64_t in, int64_t out) {
    const T limit = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in)));
    return reg(name, Tensor<T>::uniform({in, out}, limit, rng_));
  }
  Tensor<T> zeros(const std::string& name, int64_t n) { return reg(name, Tensor<T>::zeros({n})); }
  Tensor<T> ones(const std::string& name, int64_t n) { return reg(name, Tensor<T>::full({n}, T(1))); }

 private:
  Tensor<T> reg(const std::string& name, Tensor<T> t) {
    t.set_requires_grad(true);
    params_.emplace_back(name, t);
    return t;
  }
  std::vector<std::pair<std::string, Tensor<T>>>& params_;
  Rng& rng_;
};

template <typename T>
struct ConvBlock {
  Tensor<T> w, b;
  Tensor<T> operator()(const Tensor<T>& x, int64_t stride = 1, int64_t pad = 1,
                       int64_t dil = 1) const {
    return conv2d(x, w, &b, stride, pad, dil);
  }
};

template <typename T>
ConvBlock<T> conv_block(ParamBank<T>& bank, const std::string& name, int64_t ic, int64_t oc,
                        int64_t k) {
  return {bank.conv_w(name + ".w", oc, ic, k, k), bank.zeros(name + ".b", oc)};
}

template <typename T>
struct TConvBlock {
  Tensor<T> w, b;
  Tensor<T> operator()(const Tensor<T>& x) const { return transposed_conv2d(x, w, &b); }
};

template <typename T>
TConvBlock<T> tconv_block(ParamBank<T>& bank, const std::string& name, int64_t xc, int64_t oc) {
  return {bank.tconv_w(name + ".w", xc, oc), bank.zeros(name + ".b", oc)};
}

constexpr double kDropoutRate = 0.1;

template <typename T>
Tensor<T> maybe_dropout(const Tensor<T>& x, ForwardCtx<T>& ctx) {
  if (!ctx.training) return x;
  require(ctx.rng != nullptr, "training forward needs a dropout rng in the context");
  return dropout(x, kDropoutRate, true, *ctx.rng);
}

template <typename T>
void check_input(const Tensor<T>& x) {
  require(x.rank() == 4 && x.shape()[1] == 1 && x.shape()[2] == 128 && x.shape()[3] == 128,
          "model input must be [N,1,128,128], got " + shape_str(x.shape()));
}

}  // namespace

// ---------------------------------------------------------------------------
// U-Net: 16->256 encoder ladder, mirrored decoder with skip concatenation.
// ---------------------------------------------------------------------------

template <typename T>
ModelGraph<T> build_unet(uint64_t seed) {
  ModelGraph<T> m;
  m.name = "unet";
  m.seed = seed;
  Rng rng(seed);
  ParamBank<T> bank(m.params, rng);

  struct P {
    ConvBlock<T> enc0, enc1, enc2, enc3, enc4;
    TConvBlock<T> up0, up1, up2, up3;
    ConvBlock<T> dec0, dec1, dec2, dec3;
    Tensor<T> head_w, head_b;
  } p;

  p.enc0 = conv_block(bank, "enc0.conv", 1, 16, 3);
  p.enc1 = conv_block(bank, "enc1.conv", 16, 32, 3);
  p.enc2 = conv_block(bank, "enc2.conv", 32, 64, 3);
  p.enc3 = conv_block(bank, "enc3.conv", 64, 128, 3);
  p.enc4 = conv_block(bank, "enc4.conv", 128, 256, 3);
  p.up0 = tconv_block(bank, "dec0.up", 256, 128);
  p.dec0 = conv_block(bank, "dec0.conv", 256, 128, 3);
  p.up1 = tconv_block(bank, "dec1.up", 128, 64);
  p.dec1 = conv_block(bank, "dec1.conv", 128, 64, 3);
  p.up2 = tconv_block(bank, "dec2.up", 64, 32);
  p.dec2 = conv_block(bank, "dec2.conv", 64, 32, 3);
  p.up3 = tconv_block(bank, "dec3.up", 32, 16);
  p.dec3 = conv_block(bank, "dec3.conv", 32, 16, 3);
  p.head_w = bank.conv_w("head.w", 1, 16, 1, 1);
  p.head_b = bank.zeros("head.b", 1);

  m.forward_fn = [p](const Tensor<T>& x, ForwardCtx<T>& ctx) {
    check_input(x);
    Tensor<T> s0 = relu(p.enc0(x));          // [16,128,128]
    Tensor<T> s1 = relu(p.enc1(max_pool2d(s0)));  // [32,64,64]
    Tensor<T> s2 = relu(p.enc2(max_pool2d(s1)));  // [64,32,32]
    Tensor<T> s3 = relu(p.enc3(max_pool2d(s2)));  // [128,16,16]
    Tensor<T> bot = relu(p.enc4(max_pool2d(s3)));  // [256,8,8]
    if (ctx.probe) ctx.probe->note("bottleneck", bot.shape());
    bot = maybe_dropout(bot, ctx);

    Tensor<T> d0 = relu(p.dec0(concat<T>({p.up0(bot), s3}, 1)));  // [128,16,16]
    Tensor<T> d1 = relu(p.dec1(concat<T>({p.up1(d0), s2}, 1)));   // [64,32,32]
    Tensor<T> d2 = relu(p.dec2(concat<T>({p.up2(d1), s1}, 1)));   // [32,64,64]
    Tensor<T> d3 = relu(p.dec3(concat<T>({p.up3(d2), s0}, 1)));   // [16,128,128]
    return prob_head(conv2d(d3, p.head_w, &p.head_b, 1, 0, 1));
  };

  m.config_text = std::string("{\"arch\":\"unet\",\"seed\":") + std::to_string(seed) +
                  ",\"encoder_channels\":[16,32,64,128,256],\"dropout\":0.1}";
  return m;
}

// ---------------------------------------------------------------------------
// Y-Net: regular + dilated + pyramid-pooling branches fused at 8x8.
// ---------------------------------------------------------------------------

template <typename T>
ModelGraph<T> build_ynet(uint64_t seed) {
  ModelGraph<T> m;
  m.name = "ynet";
  m.seed = seed;
  Rng rng(seed);
  ParamBank<T> bank(m.params, rng);

  struct P {
    ConvBlock<T> rcm0, rcm1, rcm2, rcm3;      // 24 -> 192
    ConvBlock<T> dcm0, dcm1, dcm2, dcm3;      // constant 16, dilation 2, stride 2
    PyramidPoolParams<T> ppm;
    ConvBlock<T> fuse;
    TConvBlock<T> up0, up1, up2, up3;
    ConvBlock<T> dec0, dec1, dec2, dec3;
    Tensor<T> head_w, head_b;
  } p;

  p.rcm0 = conv_block(bank, "rcm0.conv", 1, 24, 3);
  p.rcm1 = conv_block(bank, "rcm1.conv", 24, 48, 3);
  p.rcm2 = conv_block(bank, "rcm2.conv", 48, 96, 3);
  p.rcm3 = conv_block(bank, "rcm3.conv", 96, 192, 3);
  p.dcm0 = conv_block(bank, "dcm0.conv", 1, 16, 3);
  p.dcm1 = conv_block(bank, "dcm1.conv", 16, 16, 3);
  p.dcm2 = conv_block(bank, "dcm2.conv", 16, 16, 3);
  p.dcm3 = conv_block(bank, "dcm3.conv", 16, 16, 3);
  p.ppm.bins = {1, 2, 4};
  for (size_t i = 0; i < p.ppm.bins.size(); ++i) {
    const std::string base = "ppm" + std::to_string(p.ppm.bins[i]);
    p.ppm.conv_w.push_back(bank.conv_w(base + ".w", 16, 16, 1, 1));
    p.ppm.conv_b.push_back(bank.zeros(base + ".b", 16));
  }
  p.fuse = conv_block(bank, "fuse.conv", 256, 256, 3);
  p.up0 = tconv_block(bank, "dec0.up", 256, 128);
  p.dec0 = conv_block(bank, "dec0.conv", 128 + 192, 128, 3);
  p.up1 = tconv_block(bank, "dec1.up", 128, 64);
  p.dec1 = conv_block(bank, "dec1.conv", 64 + 96, 64, 3);
  p.up2 = tconv_block(bank, "dec2.up", 64, 32);
  p.dec2 = conv_block(bank, "dec2.conv", 32 + 48, 32, 3);
  p.up3 = tconv_block(bank, "dec3.up", 32, 16);
  p.dec3 = conv_block(bank, "dec3.conv", 16 + 24, 16, 3);
  p.head_w = bank.conv_w("head.w", 1, 16, 1, 1);
  p.head_b = bank.zeros("head.b", 1);

  m.forward_fn = [p](const Tensor<T>& x, ForwardCtx<T>& ctx) {
    check_input(x);
    // Regular convolution module
    Tensor<T> r0 = relu(p.rcm0(x));                   // [24,128,128]
    Tensor<T> r1 = relu(p.rcm1(max_pool2d(r0)));      // [48,64,64]
    Tensor<T> r2 = relu(p.rcm2(max_pool2d(r1)));      // [96,32,32]
    Tensor<T> r3 = relu(p.rcm3(max_pool2d(r2)));      // [192,16,16]
    Tensor<T> rcm = max_pool2d(r3);                   // [192,8,8]

    // Dilated convolution module: k3, dilation 2, stride 2 each step
    Tensor<T> d = relu(p.dcm0(x, 2, 2, 2));           // [16,64,64]
    d = relu(p.dcm1(d, 2, 2, 2));                     // [16,32,32]
    d = relu(p.dcm2(d, 2, 2, 2));                     // [16,16,16]
    d = relu(p.dcm3(d, 2, 2, 2));                     // [16,8,8]
    if (ctx.probe) ctx.probe->note("dcm_out", d.shape());

    Tensor<T> ppm = pyramid_pool(d, p.ppm);           // [48,8,8]
    Tensor<T> sparse = concat<T>({ppm, d}, 1);        // [64,8,8]

    Tensor<T> fused = relu(p.fuse(concat<T>({rcm, sparse}, 1)));  // [256,8,8]
    if (ctx.probe) ctx.probe->note("fused", fused.shape());
    fused = maybe_dropout(fused, ctx);

    Tensor<T> d0 = relu(p.dec0(concat<T>({p.up0(fused), r3}, 1)));  // [128,16,16]
    Tensor<T> d1 = relu(p.dec1(concat<T>({p.up1(d0), r2}, 1)));     // [64,32,32]
    Tensor<T> d2 = relu(p.dec2(concat<T>({p.up2(d1), r1}, 1)));     // [32,64,64]
    Tensor<T> d3 = relu(p.dec3(concat<T>({p.up3(d2), r0}, 1)));     // [16,128,128]
    return prob_head(conv2d(d3, p.head_w, &p.head_b, 1, 0, 1));
  };

  m.config_text = std::string("{\"arch\":\"ynet\",\"seed\":") + std::to_string(seed) +
                  ",\"rcm_channels\":[24,48,96,192],\"dcm_channels\":16,"
                  "\"ppm_bins\":[1,2,4],\"dropout\":0.1}";
  return m;
}

// ---------------------------------------------------------------------------
// T-Net: ViT-style encoder (8 pre-norm units) with a CNN decoder fed by
// reshaped token-grid taps after units 2, 4, 6 and 8.
// ---------------------------------------------------------------------------

namespace {

template <typename T>
struct EncoderUnit {
  Tensor<T> ln1_g, ln1_b, ln2_g, ln2_b;
  AttentionSpec<T> attn;
  Tensor<T> fc1_w, fc1_b, fc2_w, fc2_b;
};

// Token sequence [N,64,64] -> feature map [N,64,8,8] (token p = row-major
// cell of the 8x8 grid).
template <typename T>
Tensor<T> tokens_to_grid(const Tensor<T>& tokens) {
  const int64_t n = tokens.shape()[0];
  Tensor<T> g = reshape(tokens, {n, 8, 8, 64});
  return permute(g, {0, 3, 1, 2});
}

}  // namespace

template <typename T>
ModelGraph<T> build_tnet(uint64_t seed) {
  constexpr int64_t kDim = 64;
  constexpr int64_t kHeads = 4;
  constexpr int64_t kUnits = 8;
  constexpr int64_t kMlpHidden = 4 * kDim;

  ModelGraph<T> m;
  m.name = "tnet";
  m.seed = seed;
  Rng rng(seed);
  ParamBank<T> bank(m.params, rng);

  struct P {
    Tensor<T> embed_w, embed_b;
    PositionalEncoding<T> pe;
    std::vector<EncoderUnit<T>> units;
    ConvBlock<T> d8;
    TConvBlock<T> up0, up1, up2, up3;
    ConvBlock<T> dec0, dec1, dec2, dec3;
    Tensor<T> head_w, head_b;
  } p;

  p.embed_w = bank.linear_w("embed.w", 256, kDim);
  p.embed_b = bank.zeros("embed.b", kDim);
  p.pe = fourier_positional_encoding<T>(64, kDim);  // fixed, not a parameter

  for (int64_t u = 0; u < kUnits; ++u) {
    const std::string base = "enc" + std::to_string(u);
    EncoderUnit<T> unit;
    unit.ln1_g = bank.ones(base + ".ln1.g", kDim);
    unit.ln1_b = bank.zeros(base + ".ln1.b", kDim);
    unit.attn.embed_dim = kDim;
    unit.attn.num_heads = kHeads;
    unit.attn.wq = bank.linear_w(base + ".attn.wq", kDim, kDim);
    unit.attn.wk = bank.linear_w(base + ".attn.wk", kDim, kDim);
    unit.attn.wv = bank.linear_w(base + ".attn.wv", kDim, kDim);
    unit.attn.wo = bank.linear_w(base + ".attn.wo", kDim, kDim);
    unit.ln2_g = bank.ones(base + ".ln2.g", kDim);
    unit.ln2_b = bank.zeros(base + ".ln2.b", kDim);
    unit.fc1_w = bank.linear_w(base + ".mlp.fc1.w", kDim, kMlpHidden);
    unit.fc1_b = bank.zeros(base + ".mlp.fc1.b", kMlpHidden);
    unit.fc2_w = bank.linear_w(base + ".mlp.fc2.w", kMlpHidden, kDim);
    unit.fc2_b = bank.zeros(base + ".mlp.fc2.b", kDim);
    p.units.push_back(std::move(unit));
  }

  p.d8 = conv_block(bank, "dec8.conv", kDim, kDim, 3);
  p.up0 = tconv_block(bank, "dec0.up", 128, 64);
  p.dec0 = conv_block(bank, "dec0.conv", 64 + 64, 64, 3);
  p.up1 = tconv_block(bank, "dec1.up", 64, 32);
  p.dec1 = conv_block(bank, "dec1.conv", 32 + 64, 32, 3);
  p.up2 = tconv_block(bank, "dec2.up", 32, 16);
  p.dec2 = conv_block(bank, "dec2.conv", 16 + 64, 16, 3);
  p.up3 = tconv_block(bank, "dec3.up", 16, 16);
  p.dec3 = conv_block(bank, "dec3.conv", 16, 16, 3);
  p.head_w = bank.conv_w("head.w", 1, 16, 1, 1);
  p.head_b = bank.zeros("head.b", 1);

  m.forward_fn = [p](const Tensor<T>& x, ForwardCtx<T>& ctx) {
    check_input(x);
    Tensor<T> tok = patch_embed(x, p.embed_w, p.embed_b, p.pe);  // [N,64,64]
    if (ctx.probe) ctx.probe->note("tokens", tok.shape());

    std::vector<Tensor<T>> taps;  // after units 2, 4, 6, 8
    for (size_t u = 0; u < p.units.size(); ++u) {
      const auto& unit = p.units[u];
      Tensor<T> h = multi_head_self_attention(layer_norm(tok, unit.ln1_g, unit.ln1_b), unit.attn);
      tok = add(tok, maybe_dropout(h, ctx));
      Tensor<T> z = layer_norm(tok, unit.ln2_g, unit.ln2_b);
      z = relu(add(matmul(z, unit.fc1_w), unit.fc1_b));
      z = add(matmul(z, unit.fc2_w), unit.fc2_b);
      tok = add(tok, maybe_dropout(z, ctx));
      if ((u + 1) % 2 == 0) {
        taps.push_back(tokens_to_grid(tok));
        if (ctx.probe) ctx.probe->note("tap" + std::to_string(u + 1), taps.back().shape());
      }
    }
    const Tensor<T>& tap2 = taps[0];
    const Tensor<T>& tap4 = taps[1];
    const Tensor<T>& tap6 = taps[2];
    const Tensor<T>& tap8 = taps[3];

    Tensor<T> d = relu(p.d8(tap8));                        // [64,8,8]
    d = concat<T>({d, tap8}, 1);                           // [128,8,8]
    d = relu(p.dec0(concat<T>({p.up0(d), upsample_nearest(tap6, 2)}, 1)));   // [64,16,16]
    d = relu(p.dec1(concat<T>({p.up1(d), upsample_nearest(tap4, 4)}, 1)));   // [32,32,32]
    d = relu(p.dec2(concat<T>({p.up2(d), upsample_nearest(tap2, 8)}, 1)));   // [16,64,64]
    d = relu(p.dec3(p.up3(d)));                            // [16,128,128]
    return prob_head(conv2d(d, p.head_w, &p.head_b, 1, 0, 1));
  };

  m.config_text = std::string("{\"arch\":\"tnet\",\"seed\":") + std::to_string(seed) +
                  ",\"tokens\":64,\"embed_dim\":64,\"heads\":4,\"encoder_units\":8,"
                  "\"mlp_hidden\":256,\"skip_taps\":[2,4,6,8],\"dropout\":0.1}";
  return m;
}

template <typename T>
ModelGraph<T> build_model(const std::string& name, uint64_t seed) {
  if (name == "unet") return build_unet<T>(seed);
  if (name == "ynet") return build_ynet<T>(seed);
  if (name == "tnet") return build_tnet<T>(seed);
  fail("unknown model '" + name + "' (expected unet|ynet|tnet)");
}

// ---------------------------------------------------------------------------
// E-Net
// ---------------------------------------------------------------------------

namespace {

void check_ensemble_weights(const EnsembleSpec& spec, const std::vector<std::string>& models) {
  require(!spec.weights.empty(), "ensemble spec has no weights");
  double total = 0.0;
  for (const auto& [name, w] : spec.weights) {
    require(w >= 0.0, "ensemble weight for '" + name + "' is negative");
    total += w;
  }
  require(std::abs(total - 1.0) <= 1e-9,
          "ensemble weights sum to " + std::to_string(total) + ", expected 1");
  require(spec.weights.size() == models.size(),
          "ensemble weights name " + std::to_string(spec.weights.size()) + " models but " +
              std::to_string(models.size()) + " maps were provided");
  for (const auto& name : models)
    require(spec.weights.count(name) == 1, "no ensemble weight for model '" + name + "'");
}

}  // namespace

template <typename T>
Tensor<T> enet_predict(const std::map<std::string, Tensor<T>>& prob_maps, const EnsembleSpec& spec) {
  require(!prob_maps.empty(), "enet_predict needs at least one probability map");
  std::vector<std::string> names;
  const Shape& shape = prob_maps.begin()->second.shape();
  for (const auto& [name, map] : prob_maps) {
    names.push_back(name);
    require(map.shape() == shape, "probability map shapes disagree: " + shape_str(map.shape()) +
                                      " vs " + shape_str(shape));
  }
  check_ensemble_weights(spec, names);

  const int64_t n = numel(shape);
  std::vector<double> combined(n, 0.0);
  for (const auto& [name, map] : prob_maps) {
    const double w = spec.weights.at(name);
    const auto& v = map.data();
    for (int64_t i = 0; i < n; ++i) combined[i] += w * static_cast<double>(v[i]);
  }
  std::vector<T> out(n);
  for (int64_t i = 0; i < n; ++i) out[i] = combined[i] > spec.threshold ? T(1) : T(0);
  return Tensor<T>::from(shape, std::move(out));
}

template <typename T>
EnsembleSearchResult ensemble_weight_search(
    const std::map<std::string, std::vector<Tensor<T>>>& prob_maps_per_model,
    const std::vector<std::vector<uint8_t>>& truths, double grid_step, double threshold) {
  require(!prob_maps_per_model.empty(), "ensemble search needs at least one model");
  require(!truths.empty(), "ensemble search needs a nonempty validation set");
  require(grid_step > 0.0 && grid_step <= 1.0, "grid step must lie in (0,1]");
  const int64_t steps = static_cast<int64_t>(std::llround(1.0 / grid_step));
  require(steps >= 1 && std::abs(steps * grid_step - 1.0) < 1e-9,
          "grid step must divide 1 evenly, got " + std::to_string(grid_step));

  std::vector<std::string> names;
  for (const auto& [name, maps] : prob_maps_per_model) {
    names.push_back(name);
    require(maps.size() == truths.size(), "model '" + name + "' has " +
                                              std::to_string(maps.size()) + " maps for " +
                                              std::to_string(truths.size()) + " truths");
  }
  std::sort(names.begin(), names.end());
  const size_t k = names.size();

  // Enumerate integer compositions of `steps` into k parts in lexicographic
  // order; with strict improvement the first (smallest) maximizer wins ties.
  std::vector<int64_t> comp(k, 0);
  std::vector<std::vector<int64_t>> grid;
  std::function<void(size_t, int64_t)> enumerate = [&](size_t idx, int64_t left) {
    if (idx + 1 == k) {
      comp[idx] = left;
      grid.push_back(comp);
      return;
    }
    for (int64_t take = 0; take <= left; ++take) {
      comp[idx] = take;
      enumerate(idx + 1, left - take);
    }
  };
  enumerate(0, steps);
  require(!grid.empty(), "empty ensemble weight grid");

  EnsembleSearchResult result;
  result.best_miou = -1.0;
  const int64_t px = numel(prob_maps_per_model.begin()->second.front().shape());
  std::vector<double> combined(px);
  std::vector<uint8_t> pred(px);

  for (const auto& point : grid) {
    std::map<std::string, double> weights;
    for (size_t i = 0; i < k; ++i)
      weights[names[i]] = static_cast<double>(point[i]) / static_cast<double>(steps);

    std::vector<double> ious;
    ious.reserve(truths.size());
    for (size_t s = 0; s < truths.size(); ++s) {
      std::fill(combined.begin(), combined.end(), 0.0);
      for (size_t i = 0; i < k; ++i) {
        const double w = weights[names[i]];
        if (w == 0.0) continue;
        const auto& v = prob_maps_per_model.at(names[i])[s].data();
        require(static_cast<int64_t>(v.size()) == px, "probability map size mismatch in search");
        for (int64_t j = 0; j < px; ++j) combined[j] += w * static_cast<double>(v[j]);
      }
      for (int64_t j = 0; j < px; ++j) pred[j] = combined[j] > threshold ? 1 : 0;
      ious.push_back(iou(confusion(truths[s], pred)));
    }
    const double miou = pairwise_mean(ious);
    result.table.push_back({weights, miou});
    if (miou > result.best_miou) {
      result.best_miou = miou;
      result.best.weights = weights;
      result.best.threshold = threshold;
    }
  }
  return result;
}

#define DSEG_INSTANTIATE(T)                                                    \
  template struct ModelGraph<T>;                                               \
  template struct ForwardCtx<T>;                                               \
  template ModelGraph<T> build_unet<T>(uint64_t);                              \
  template ModelGraph<T> build_ynet<T>(uint64_t);                              \
  template ModelGraph<T> build_tnet<T>(uint64_t);                              \
  template ModelGraph<T> build_model<T>(const std::string&, uint64_t);         \
  template Tensor<T> enet_predict<T>(const std::map<std::string, Tensor<T>>&,  \
                                     const EnsembleSpec&);                     \
  template EnsembleSearchResult ensemble_weight_search<T>(                     \
      const std::map<std::string, std::vector<Tensor<T>>>&,                    \
      const std::vector<std::vector<uint8_t>>&, double, double);

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)

#undef DSEG_INSTANTIATE

}  // namespace dseg
