#include "dseg/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"

namespace dseg {

namespace {

template <typename T>
Tape<T>* tape_of(const Tensor<T>& a, const Tensor<T>* b = nullptr, const Tensor<T>* c = nullptr) {
  if (a.tape()) return a.tape();
  if (b && b->tape()) return b->tape();
  if (c && c->tape()) return c->tape();
  return nullptr;
}

template <typename T>
Tensor<T> make_out(Shape shape, std::vector<T> value, Tape<T>* tape, bool needs_grad) {
  Tensor<T> out;
  out.storage_ = std::make_shared<TensorStorage<T>>();
  out.storage_->shape = std::move(shape);
  out.storage_->value = std::move(value);
  out.tape_ = tape;
  if (tape && needs_grad) {
    out.storage_->requires_grad = true;
    out.storage_->ensure_grad();
  }
  return out;
}

// col is [C*kh*kw, OH*OW]
template <typename T>
void im2col(const T* x, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t dil, int64_t oh, int64_t ow, T* col) {
  const int64_t rows = c_in * kh * kw;
  const int nth = detail::gemm_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
  for (int64_t row = 0; row < rows; ++row) {
    const int64_t kj = row % kw;
    const int64_t ki = (row / kw) % kh;
    const int64_t c = row / (kw * kh);
    const T* xc = x + c * h * w;
    T* crow = col + row * oh * ow;
    for (int64_t oi = 0; oi < oh; ++oi) {
      const int64_t ii = oi * stride - pad + ki * dil;
      if (ii < 0 || ii >= h) {
        std::fill(crow + oi * ow, crow + (oi + 1) * ow, T(0));
        continue;
      }
      for (int64_t oj = 0; oj < ow; ++oj) {
        const int64_t jj = oj * stride - pad + kj * dil;
        crow[oi * ow + oj] = (jj >= 0 && jj < w) ? xc[ii * w + jj] : T(0);
      }
    }
  }
}

// Scatter-add of a col buffer back into an image gradient.
template <typename T>
void col2im_acc(const T* col, int64_t c_in, int64_t h, int64_t w, int64_t kh, int64_t kw,
                int64_t stride, int64_t pad, int64_t dil, int64_t oh, int64_t ow, T* gx) {
  const int nth = detail::gemm_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
  for (int64_t c = 0; c < c_in; ++c) {
    T* gxc = gx + c * h * w;
    for (int64_t ki = 0; ki < kh; ++ki) {
      for (int64_t kj = 0; kj < kw; ++kj) {
        const T* crow = col + ((c * kh + ki) * kw + kj) * oh * ow;
        for (int64_t oi = 0; oi < oh; ++oi) {
          const int64_t ii = oi * stride - pad + ki * dil;
          if (ii < 0 || ii >= h) continue;
          for (int64_t oj = 0; oj < ow; ++oj) {
            const int64_t jj = oj * stride - pad + kj * dil;
            if (jj >= 0 && jj < w) gxc[ii * w + jj] += crow[oi * ow + oj];
          }
        }
      }
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename T>
Conv2dSpec<T> make_conv2d_spec(int64_t in_channels, int64_t out_channels, int64_t kh, int64_t kw,
                               int64_t stride, int64_t padding, int64_t dilation, Rng& rng,
                               bool with_bias) {
  require(in_channels > 0 && out_channels > 0 && kh > 0 && kw > 0 && stride > 0 && dilation > 0 &&
              padding >= 0,
          "invalid conv2d geometry");
  Conv2dSpec<T> spec;
  spec.in_channels = in_channels;
  spec.out_channels = out_channels;
  spec.kh = kh;
  spec.kw = kw;
  spec.stride = stride;
  spec.padding = padding;
  spec.dilation = dilation;
  const T limit = static_cast<T>(1.0 / std::sqrt(static_cast<double>(in_channels * kh * kw)));
  spec.weights = Tensor<T>::uniform({out_channels, in_channels, kh, kw}, limit, rng);
  if (with_bias) spec.bias = Tensor<T>::zeros({out_channels});
  return spec;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int64_t stride,
                 int64_t padding, int64_t dilation) {
  require(x.rank() == 4, "conv2d input must be [N,C,H,W], got " + shape_str(x.shape()));
  require(w.rank() == 4, "conv2d weights must be [out,in,kh,kw], got " + shape_str(w.shape()));
  const int64_t n = x.shape()[0], c_in = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  const int64_t oc = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  require(w.shape()[1] == c_in, "conv2d channel mismatch: input has " + std::to_string(c_in) +
                                    ", weights expect " + std::to_string(w.shape()[1]));
  if (bias) require(bias->size() == oc, "conv2d bias length mismatch");
  const int64_t oh = (h + 2 * padding - dilation * (kh - 1) - 1) / stride + 1;
  const int64_t ow = (wd + 2 * padding - dilation * (kw - 1) - 1) / stride + 1;
  require(oh >= 1 && ow >= 1, "conv2d output would be empty for input " + shape_str(x.shape()));

  const int64_t ckk = c_in * kh * kw;
  std::vector<T> col(ckk * oh * ow);
  std::vector<T> out(n * oc * oh * ow, T(0));
  for (int64_t ni = 0; ni < n; ++ni) {
    im2col(x.data().data() + ni * c_in * h * wd, c_in, h, wd, kh, kw, stride, padding, dilation, oh,
           ow, col.data());
    detail::gemm_acc(w.data().data(), col.data(), out.data() + ni * oc * oh * ow, oc, ckk, oh * ow);
    if (bias) {
      T* on = out.data() + ni * oc * oh * ow;
      for (int64_t o = 0; o < oc; ++o) {
        const T b = bias->data()[o];
        for (int64_t s = 0; s < oh * ow; ++s) on[o * oh * ow + s] += b;
      }
    }
  }

  Tape<T>* tape = tape_of(x, &w, bias);
  const bool needs = x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad());
  Tensor<T> res = make_out<T>({n, oc, oh, ow}, std::move(out), tape, needs);
  if (tape && res.requires_grad()) {
    auto sx = x.storage_;
    auto sw = w.storage_;
    auto sb = bias ? bias->storage_ : nullptr;
    auto so = res.storage_;
    tape->record([sx, sw, sb, so, n, c_in, h, wd, oc, kh, kw, stride, padding, dilation, oh, ow]() {
      const int64_t ckk = c_in * kh * kw;
      const T* g = so->grad.data();
      if (sb && sb->requires_grad) {
        sb->ensure_grad();
        for (int64_t ni = 0; ni < n; ++ni)
          for (int64_t o = 0; o < oc; ++o) {
            T acc = T(0);
            const T* gn = g + (ni * oc + o) * oh * ow;
            for (int64_t s = 0; s < oh * ow; ++s) acc += gn[s];
            sb->grad[o] += acc;
          }
      }
      const bool need_w = sw->requires_grad;
      const bool need_x = sx->requires_grad;
      if (!need_w && !need_x) return;
      if (need_w) sw->ensure_grad();
      if (need_x) sx->ensure_grad();
      std::vector<T> col(ckk * oh * ow);
      std::vector<T> dcol;
      if (need_x) dcol.resize(ckk * oh * ow);
      for (int64_t ni = 0; ni < n; ++ni) {
        const T* gn = g + ni * oc * oh * ow;
        if (need_w) {
          im2col(sx->value.data() + ni * c_in * h * wd, c_in, h, wd, kh, kw, stride, padding,
                 dilation, oh, ow, col.data());
          detail::gemm_bt_acc(gn, col.data(), sw->grad.data(), oc, oh * ow, ckk);
        }
        if (need_x) {
          std::fill(dcol.begin(), dcol.end(), T(0));
          detail::gemm_at_acc(sw->value.data(), gn, dcol.data(), ckk, oc, oh * ow);
          col2im_acc(dcol.data(), c_in, h, wd, kh, kw, stride, padding, dilation, oh, ow,
                     sx->grad.data() + ni * c_in * h * wd);
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dSpec<T>& spec) {
  require(x.rank() == 4 && x.shape()[1] == spec.in_channels,
          "conv2d channel mismatch: input " + shape_str(x.shape()) + " vs spec in_channels " +
              std::to_string(spec.in_channels));
  return conv2d(x, spec.weights, spec.bias.defined() ? &spec.bias : nullptr, spec.stride,
                spec.padding, spec.dilation);
}

// ---------------------------------------------------------------------------
// Pooling and resampling
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int64_t window, int64_t stride) {
  require(x.rank() == 4, "max_pool2d input must be [N,C,H,W]");
  require(window == stride, "max_pool2d supports non-overlapping windows only");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(h % window == 0 && w % window == 0,
          "max_pool2d requires spatial dims divisible by the window, got " + shape_str(x.shape()));
  const int64_t oh = h / window, ow = w / window;
  std::vector<T> out(n * c * oh * ow);
  auto argmax = std::make_shared<std::vector<int64_t>>(n * c * oh * ow);
  const T* xv = x.data().data();
  const int nth = detail::gemm_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xc = xv + nc * h * w;
    T* oc = out.data() + nc * oh * ow;
    int64_t* am = argmax->data() + nc * oh * ow;
    for (int64_t oi = 0; oi < oh; ++oi)
      for (int64_t oj = 0; oj < ow; ++oj) {
        int64_t best = (oi * window) * w + oj * window;
        T bv = xc[best];
        for (int64_t di = 0; di < window; ++di)
          for (int64_t dj = 0; dj < window; ++dj) {
            const int64_t idx = (oi * window + di) * w + (oj * window + dj);
            if (xc[idx] > bv) {  // strict: first occurrence keeps the gradient
              bv = xc[idx];
              best = idx;
            }
          }
        oc[oi * ow + oj] = bv;
        am[oi * ow + oj] = nc * h * w + best;
      }
  }
  Tape<T>* tape = tape_of(x);
  Tensor<T> res = make_out<T>({n, c, oh, ow}, std::move(out), tape, x.requires_grad());
  if (tape && res.requires_grad()) {
    auto sx = x.storage_;
    auto so = res.storage_;
    tape->record([sx, so, argmax]() {
      if (!sx->requires_grad) return;
      sx->ensure_grad();
      const int64_t m = static_cast<int64_t>(so->grad.size());
      for (int64_t i = 0; i < m; ++i) sx->grad[(*argmax)[i]] += so->grad[i];
    });
  }
  return res;
}

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int64_t window) {
  require(x.rank() == 4, "avg_pool2d input must be [N,C,H,W]");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  require(window > 0 && h % window == 0 && w % window == 0,
          "avg_pool2d window must divide spatial dims, got window " + std::to_string(window) +
              " for " + shape_str(x.shape()));
  const int64_t oh = h / window, ow = w / window;
  const T inv = T(1) / static_cast<T>(window * window);
  std::vector<T> out(n * c * oh * ow);
  const T* xv = x.data().data();
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xc = xv + nc * h * w;
    T* oc = out.data() + nc * oh * ow;
    for (int64_t oi = 0; oi < oh; ++oi)
      for (int64_t oj = 0; oj < ow; ++oj) {
        T acc = T(0);
        for (int64_t di = 0; di < window; ++di)
          for (int64_t dj = 0; dj < window; ++dj)
            acc += xc[(oi * window + di) * w + (oj * window + dj)];
        oc[oi * ow + oj] = acc * inv;
      }
  }
  Tape<T>* tape = tape_of(x);
  Tensor<T> res = make_out<T>({n, c, oh, ow}, std::move(out), tape, x.requires_grad());
  if (tape && res.requires_grad()) {
    auto sx = x.storage_;
    auto so = res.storage_;
    tape->record([sx, so, n, c, h, w, oh, ow, window, inv]() {
      if (!sx->requires_grad) return;
      sx->ensure_grad();
      for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* gc = so->grad.data() + nc * oh * ow;
        T* gx = sx->grad.data() + nc * h * w;
        for (int64_t oi = 0; oi < oh; ++oi)
          for (int64_t oj = 0; oj < ow; ++oj) {
            const T g = gc[oi * ow + oj] * inv;
            for (int64_t di = 0; di < window; ++di)
              for (int64_t dj = 0; dj < window; ++dj)
                gx[(oi * window + di) * w + (oj * window + dj)] += g;
          }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int64_t factor) {
  require(x.rank() == 4, "upsample_nearest input must be [N,C,H,W]");
  require(factor >= 1, "upsample factor must be >= 1");
  const int64_t n = x.shape()[0], c = x.shape()[1], h = x.shape()[2], w = x.shape()[3];
  const int64_t oh = h * factor, ow = w * factor;
  std::vector<T> out(n * c * oh * ow);
  const T* xv = x.data().data();
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xc = xv + nc * h * w;
    T* oc = out.data() + nc * oh * ow;
    for (int64_t oi = 0; oi < oh; ++oi) {
      const T* xrow = xc + (oi / factor) * w;
      for (int64_t oj = 0; oj < ow; ++oj) oc[oi * ow + oj] = xrow[oj / factor];
    }
  }
  Tape<T>* tape = tape_of(x);
  Tensor<T> res = make_out<T>({n, c, oh, ow}, std::move(out), tape, x.requires_grad());
  if (tape && res.requires_grad()) {
    auto sx = x.storage_;
    auto so = res.storage_;
    tape->record([sx, so, n, c, h, w, oh, ow, factor]() {
      if (!sx->requires_grad) return;
      sx->ensure_grad();
      for (int64_t nc = 0; nc < n * c; ++nc) {
        const T* gc = so->grad.data() + nc * oh * ow;
        T* gx = sx->grad.data() + nc * h * w;
        for (int64_t oi = 0; oi < oh; ++oi)
          for (int64_t oj = 0; oj < ow; ++oj) gx[(oi / factor) * w + (oj / factor)] += gc[oi * ow + oj];
      }
    });
  }
  return res;
}

// ---------------------------------------------------------------------------
// Transposed convolution (2x2, stride 2)
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias) {
  require(x.rank() == 4, "transposed_conv2d input must be [N,C,H,W]");
  require(w.rank() == 4 && w.shape()[2] == 2 && w.shape()[3] == 2,
          "transposed_conv2d expects a [in, out, 2, 2] kernel, got " + shape_str(w.shape()));
  const int64_t n = x.shape()[0], ci = x.shape()[1], h = x.shape()[2], wd = x.shape()[3];
  require(w.shape()[0] == ci, "transposed_conv2d channel mismatch: input has " +
                                  std::to_string(ci) + ", kernel expects " +
                                  std::to_string(w.shape()[0]));
  const int64_t co = w.shape()[1];
  if (bias) require(bias->size() == co, "transposed_conv2d bias length mismatch");
  const int64_t oh = 2 * h, ow = 2 * wd;

  std::vector<T> out(n * co * oh * ow, T(0));
  const T* xv = x.data().data();
  const T* wv = w.data().data();
  const int nth = detail::gemm_threads();
#pragma omp parallel for schedule(static) num_threads(nth)
  for (int64_t no = 0; no < n * co; ++no) {
    const int64_t ni = no / co, o = no % co;
    T* oc = out.data() + no * oh * ow;
    for (int64_t i = 0; i < ci; ++i) {
      const T* xc = xv + (ni * ci + i) * h * wd;
      const T* wk = wv + (i * co + o) * 4;
      for (int64_t r = 0; r < h; ++r)
        for (int64_t cidx = 0; cidx < wd; ++cidx) {
          const T v = xc[r * wd + cidx];
          T* base = oc + (2 * r) * ow + 2 * cidx;
          base[0] += v * wk[0];
          base[1] += v * wk[1];
          base[ow] += v * wk[2];
          base[ow + 1] += v * wk[3];
        }
    }
    if (bias) {
      const T b = bias->data()[o];
      for (int64_t s = 0; s < oh * ow; ++s) oc[s] += b;
    }
  }

  Tape<T>* tape = tape_of(x, &w, bias);
  const bool needs = x.requires_grad() || w.requires_grad() || (bias && bias->requires_grad());
  Tensor<T> res = make_out<T>({n, co, oh, ow}, std::move(out), tape, needs);
  if (tape && res.requires_grad()) {
    auto sx = x.storage_;
    auto sw = w.storage_;
    auto sb = bias ? bias->storage_ : nullptr;
    auto so = res.storage_;
    tape->record([sx, sw, sb, so, n, ci, co, h, wd, oh, ow]() {
      const T* g = so->grad.data();
      const int nth = detail::gemm_threads();
      if (sb && sb->requires_grad) {
        sb->ensure_grad();
        for (int64_t ni = 0; ni < n; ++ni)
          for (int64_t o = 0; o < co; ++o) {
            T acc = T(0);
            const T* gn = g + (ni * co + o) * oh * ow;
            for (int64_t s = 0; s < oh * ow; ++s) acc += gn[s];
            sb->grad[o] += acc;
          }
      }
      if (sx->requires_grad) {
        sx->ensure_grad();
#pragma omp parallel for schedule(static) num_threads(nth)
        for (int64_t nc = 0; nc < n * ci; ++nc) {
          const int64_t ni = nc / ci, i = nc % ci;
          T* gx = sx->grad.data() + nc * h * wd;
          for (int64_t o = 0; o < co; ++o) {
            const T* gc = g + (ni * co + o) * oh * ow;
            const T* wk = sw->value.data() + (i * co + o) * 4;
            for (int64_t r = 0; r < h; ++r)
              for (int64_t cidx = 0; cidx < wd; ++cidx) {
                const T* base = gc + (2 * r) * ow + 2 * cidx;
                gx[r * wd + cidx] +=
                    base[0] * wk[0] + base[1] * wk[1] + base[ow] * wk[2] + base[ow + 1] * wk[3];
              }
          }
        }
      }
      if (sw->requires_grad) {
        sw->ensure_grad();
#pragma omp parallel for schedule(static) num_threads(nth)
        for (int64_t io = 0; io < ci * co; ++io) {
          const int64_t i = io / co, o = io % co;
          T* gw = sw->grad.data() + io * 4;
          for (int64_t ni = 0; ni < n; ++ni) {
            const T* xc = sx->value.data() + (ni * ci + i) * h * wd;
            const T* gc = g + (ni * co + o) * oh * ow;
            for (int64_t r = 0; r < h; ++r)
              for (int64_t cidx = 0; cidx < wd; ++cidx) {
                const T v = xc[r * wd + cidx];
                const T* base = gc + (2 * r) * ow + 2 * cidx;
                gw[0] += v * base[0];
                gw[1] += v * base[1];
                gw[2] += v * base[ow];
                gw[3] += v * base[ow + 1];
              }
          }
        }
      }
    });
  }
  return res;
}

template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Conv2dSpec<T>& spec) {
  require(spec.stride == 2 && spec.kh == 2 && spec.kw == 2 && spec.padding == 0 &&
              spec.dilation == 1,
          "transposed_conv2d spec must be kernel 2x2, stride 2, no padding/dilation");
  require(x.rank() == 4 && x.shape()[1] == spec.out_channels,
          "transposed_conv2d consumes out_channels-channel input (adjoint orientation), got " +
              shape_str(x.shape()));
  // Weights [out, in, 2, 2] are read with roles swapped.
  Tensor<T> w = spec.weights;
  if (spec.bias.defined())
    require(spec.bias.size() == spec.in_channels,
            "transposed spec bias must have in_channels entries");
  return transposed_conv2d(x, w, spec.bias.defined() ? &spec.bias : nullptr);
}

// ---------------------------------------------------------------------------
// Attention, layer norm, patch embedding
// ---------------------------------------------------------------------------

template <typename T>
AttentionSpec<T> make_attention_spec(int64_t embed_dim, int64_t num_heads, Rng& rng) {
  require(embed_dim > 0 && num_heads > 0, "attention dims must be positive");
  require(embed_dim % num_heads == 0, "embed_dim " + std::to_string(embed_dim) +
                                          " not divisible by num_heads " +
                                          std::to_string(num_heads));
  AttentionSpec<T> spec;
  spec.embed_dim = embed_dim;
  spec.num_heads = num_heads;
  const T limit = static_cast<T>(1.0 / std::sqrt(static_cast<double>(embed_dim)));
  spec.wq = Tensor<T>::uniform({embed_dim, embed_dim}, limit, rng);
  spec.wk = Tensor<T>::uniform({embed_dim, embed_dim}, limit, rng);
  spec.wv = Tensor<T>::uniform({embed_dim, embed_dim}, limit, rng);
  spec.wo = Tensor<T>::uniform({embed_dim, embed_dim}, limit, rng);
  return spec;
}

template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionSpec<T>& spec) {
  require(x.rank() == 3, "attention input must be [N,T,D], got " + shape_str(x.shape()));
  const int64_t n = x.shape()[0], t = x.shape()[1], d = x.shape()[2];
  require(d == spec.embed_dim, "attention embed dim mismatch: input " + std::to_string(d) +
                                   " vs spec " + std::to_string(spec.embed_dim));
  const int64_t heads = spec.num_heads;
  const int64_t hd = spec.head_dim();

  auto split_heads = [&](const Tensor<T>& m) {
    // [N,T,D] -> [N*heads, T, hd]
    Tensor<T> r = reshape(m, {n, t, heads, hd});
    r = permute(r, {0, 2, 1, 3});  // [N, heads, T, hd]
    return reshape(r, {n * heads, t, hd});
  };

  Tensor<T> q = split_heads(matmul(x, spec.wq));
  Tensor<T> k = split_heads(matmul(x, spec.wk));
  Tensor<T> v = split_heads(matmul(x, spec.wv));

  Tensor<T> kt = permute(k, {0, 2, 1});  // [N*heads, hd, T]
  Tensor<T> scores = mul_scalar(matmul(q, kt), static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd))));
  Tensor<T> attn = softmax_lastdim(scores);     // [N*heads, T, T]
  Tensor<T> ctx = matmul(attn, v);              // [N*heads, T, hd]

  Tensor<T> merged = reshape(ctx, {n, heads, t, hd});
  merged = permute(merged, {0, 2, 1, 3});  // [N, T, heads, hd]
  merged = reshape(merged, {n, t, d});
  return matmul(merged, spec.wo);
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift) {
  require(x.rank() >= 1, "layer_norm requires rank >= 1");
  const int64_t d = x.shape().back();
  require(gain.size() == d && shift.size() == d,
          "layer_norm gain/shift must have " + std::to_string(d) + " entries");
  const int64_t rows = x.size() / d;
  constexpr double kEps = 1e-5;

  std::vector<T> out(x.size());
  auto mean_v = std::make_shared<std::vector<T>>(rows);
  auto rstd_v = std::make_shared<std::vector<T>>(rows);
  const T* xv = x.data().data();
  const T* gv = gain.data().data();
  const T* sv = shift.data().data();
  for (int64_t r = 0; r < rows; ++r) {
    const T* xr = xv + r * d;
    double m = 0;
    for (int64_t j = 0; j < d; ++j) m += xr[j];
    m /= d;
    double var = 0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = xr[j] - m;
      var += c * c;
    }
    var /= d;
    const double rstd = 1.0 / std::sqrt(var + kEps);
    (*mean_v)[r] = static_cast<T>(m);
    (*rstd_v)[r] = static_cast<T>(rstd);
    T* orow = out.data() + r * d;
    for (int64_t j = 0; j < d; ++j)
      orow[j] = static_cast<T>((xr[j] - m) * rstd) * gv[j] + sv[j];
  }

  Tape<T>* tape = tape_of(x, &gain, &shift);
  const bool needs = x.requires_grad() || gain.requires_grad() || shift.requires_grad();
  Tensor<T> res = make_out<T>(x.shape(), std::move(out), tape, needs);
  if (tape && res.requires_grad()) {
    auto sx = x.storage_;
    auto sg = gain.storage_;
    auto ss = shift.storage_;
    auto so = res.storage_;
    tape->record([sx, sg, ss, so, mean_v, rstd_v, rows, d]() {
      const T* g = so->grad.data();
      if (ss->requires_grad) {
        ss->ensure_grad();
        for (int64_t r = 0; r < rows; ++r)
          for (int64_t j = 0; j < d; ++j) ss->grad[j] += g[r * d + j];
      }
      if (sg->requires_grad) {
        sg->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const T m = (*mean_v)[r], rs = (*rstd_v)[r];
          for (int64_t j = 0; j < d; ++j)
            sg->grad[j] += g[r * d + j] * (sx->value[r * d + j] - m) * rs;
        }
      }
      if (sx->requires_grad) {
        sx->ensure_grad();
        for (int64_t r = 0; r < rows; ++r) {
          const T m = (*mean_v)[r], rs = (*rstd_v)[r];
          const T* xr = sx->value.data() + r * d;
          const T* gr = g + r * d;
          double sum_gy = 0, sum_gy_xhat = 0;
          for (int64_t j = 0; j < d; ++j) {
            const double gy = static_cast<double>(gr[j]) * sg->value[j];
            const double xhat = (xr[j] - m) * rs;
            sum_gy += gy;
            sum_gy_xhat += gy * xhat;
          }
          const double inv_d = 1.0 / d;
          T* gx = sx->grad.data() + r * d;
          for (int64_t j = 0; j < d; ++j) {
            const double gy = static_cast<double>(gr[j]) * sg->value[j];
            const double xhat = (xr[j] - m) * rs;
            gx[j] += static_cast<T>(rs * (gy - sum_gy * inv_d - xhat * sum_gy_xhat * inv_d));
          }
        }
      }
    });
  }
  return res;
}

template <typename T>
PositionalEncoding<T> fourier_positional_encoding(int64_t num_tokens, int64_t embed_dim) {
  require(num_tokens > 0, "positional encoding needs at least one token");
  require(embed_dim > 0 && embed_dim % 2 == 0,
          "positional encoding requires an even embed_dim, got " + std::to_string(embed_dim));
  std::vector<T> table(num_tokens * embed_dim);
  for (int64_t p = 0; p < num_tokens; ++p)
    for (int64_t i = 0; i < embed_dim / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(embed_dim));
      const double angle = static_cast<double>(p) * freq;
      table[p * embed_dim + 2 * i] = static_cast<T>(std::sin(angle));
      table[p * embed_dim + 2 * i + 1] = static_cast<T>(std::cos(angle));
    }
  PositionalEncoding<T> pe;
  pe.num_tokens = num_tokens;
  pe.embed_dim = embed_dim;
  pe.table = Tensor<T>::from({num_tokens, embed_dim}, std::move(table));
  return pe;
}

template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, const Tensor<T>& proj, const Tensor<T>& bias,
                      const PositionalEncoding<T>& pe) {
  require(x.rank() == 4 && x.shape()[1] == 1 && x.shape()[2] == 128 && x.shape()[3] == 128,
          "patch_embed expects [N,1,128,128], got " + shape_str(x.shape()));
  constexpr int64_t kSub = 16, kGrid = 8;  // 64 sub-patches of 16x16
  const int64_t n = x.shape()[0];
  require(proj.shape() == Shape({kSub * kSub, pe.embed_dim}), "patch_embed projection shape mismatch");
  require(bias.size() == pe.embed_dim, "patch_embed bias length mismatch");
  require(pe.num_tokens == kGrid * kGrid, "patch_embed positional table token count mismatch");

  Tensor<T> grid = reshape(x, {n, kGrid, kSub, kGrid, kSub});
  grid = permute(grid, {0, 1, 3, 2, 4});                    // [N, 8, 8, 16, 16]
  Tensor<T> tokens = reshape(grid, {n, kGrid * kGrid, kSub * kSub});
  Tensor<T> emb = matmul(tokens, proj);                     // [N, 64, D]
  emb = add(emb, bias);                                     // broadcast [D]
  return add(emb, pe.table);                                // broadcast [64, D]
}

// ---------------------------------------------------------------------------
// Pyramid pooling and dropout
// ---------------------------------------------------------------------------

template <typename T>
PyramidPoolParams<T> make_pyramid_pool_params(int64_t channels, std::vector<int64_t> bins, Rng& rng) {
  require(!bins.empty(), "pyramid pooling needs at least one bin");
  PyramidPoolParams<T> p;
  p.bins = std::move(bins);
  const T limit = static_cast<T>(1.0 / std::sqrt(static_cast<double>(channels)));
  for (size_t i = 0; i < p.bins.size(); ++i) {
    p.conv_w.push_back(Tensor<T>::uniform({channels, channels, 1, 1}, limit, rng));
    p.conv_b.push_back(Tensor<T>::zeros({channels}));
  }
  return p;
}

template <typename T>
Tensor<T> pyramid_pool(const Tensor<T>& x, const PyramidPoolParams<T>& params) {
  require(x.rank() == 4, "pyramid_pool input must be [N,C,H,W]");
  const int64_t h = x.shape()[2], w = x.shape()[3];
  require(h == w, "pyramid_pool expects square feature maps, got " + shape_str(x.shape()));
  std::vector<Tensor<T>> branches;
  for (size_t i = 0; i < params.bins.size(); ++i) {
    const int64_t b = params.bins[i];
    require(b > 0 && h % b == 0 && w % b == 0,
            "pyramid bin " + std::to_string(b) + " does not divide " + shape_str(x.shape()));
    Tensor<T> pooled = avg_pool2d(x, h / b);
    Tensor<T> mixed = conv2d(pooled, params.conv_w[i], &params.conv_b[i], 1, 0, 1);
    branches.push_back(upsample_nearest(mixed, h / b));
  }
  return concat(branches, 1);
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  require(rate >= 0.0 && rate < 1.0, "dropout rate must be in [0,1), got " + std::to_string(rate));
  if (!training || rate == 0.0) return x;
  const int64_t n = x.size();
  const T scale = static_cast<T>(1.0 / (1.0 - rate));
  auto keep = std::make_shared<std::vector<uint8_t>>(n);
  std::vector<T> out(n);
  const auto& xv = x.data();
  for (int64_t i = 0; i < n; ++i) {
    const bool k = rng.uniform() >= rate;
    (*keep)[i] = k;
    out[i] = k ? xv[i] * scale : T(0);
  }
  Tape<T>* tape = tape_of(x);
  Tensor<T> res = make_out<T>(x.shape(), std::move(out), tape, x.requires_grad());
  if (tape && res.requires_grad()) {
    auto sx = x.storage_;
    auto so = res.storage_;
    tape->record([sx, so, keep, scale, n]() {
      if (!sx->requires_grad) return;
      sx->ensure_grad();
      for (int64_t i = 0; i < n; ++i)
        if ((*keep)[i]) sx->grad[i] += so->grad[i] * scale;
    });
  }
  return res;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, uint64_t seed) {
  Rng rng(seed);
  return dropout(x, rate, training, rng);
}

// ---------------------------------------------------------------------------
// Explicit instantiations
// ---------------------------------------------------------------------------

#define DSEG_INSTANTIATE(T)                                                                        \
  template struct Conv2dSpec<T>;                                                                   \
  template Conv2dSpec<T> make_conv2d_spec<T>(int64_t, int64_t, int64_t, int64_t, int64_t, int64_t, \
                                             int64_t, Rng&, bool);                                 \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Conv2dSpec<T>&);                            \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*, int64_t,      \
                               int64_t, int64_t);                                                  \
  template Tensor<T> max_pool2d<T>(const Tensor<T>&, int64_t, int64_t);                            \
  template Tensor<T> avg_pool2d<T>(const Tensor<T>&, int64_t);                                     \
  template Tensor<T> upsample_nearest<T>(const Tensor<T>&, int64_t);                               \
  template Tensor<T> transposed_conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*);   \
  template Tensor<T> transposed_conv2d<T>(const Tensor<T>&, const Conv2dSpec<T>&);                 \
  template AttentionSpec<T> make_attention_spec<T>(int64_t, int64_t, Rng&);                        \
  template Tensor<T> multi_head_self_attention<T>(const Tensor<T>&, const AttentionSpec<T>&);      \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template PositionalEncoding<T> fourier_positional_encoding<T>(int64_t, int64_t);                 \
  template Tensor<T> patch_embed<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                    const PositionalEncoding<T>&);                                 \
  template PyramidPoolParams<T> make_pyramid_pool_params<T>(int64_t, std::vector<int64_t>, Rng&);  \
  template Tensor<T> pyramid_pool<T>(const Tensor<T>&, const PyramidPoolParams<T>&);               \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, Rng&);                             \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, uint64_t);

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)

#undef DSEG_INSTANTIATE

}  // namespace dseg
