#pragma once

#include <optional>
#include <vector>

#include "dseg/tensor.hpp"

namespace dseg {

// Convolution parameterization. Weights are [out, in, kh, kw]. For
// transposed use the same layout is kept and the roles invert: the op
// consumes out_channels-channel input and emits in_channels channels (the
// exact adjoint of the matching forward convolution), so a bias attached to
// a transposed spec has length in_channels.
template <typename T>
struct Conv2dSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kh = 0, kw = 0;
  int64_t stride = 1;
  int64_t dilation = 1;
  int64_t padding = 0;
  Tensor<T> weights;  // [out, in, kh, kw]
  Tensor<T> bias;     // [out]; may be left undefined

  // floor((extent + 2*padding - dilation*(k-1) - 1)/stride) + 1
  int64_t out_extent(int64_t extent, int64_t k) const {
    return (extent + 2 * padding - dilation * (k - 1) - 1) / stride + 1;
  }
};

template <typename T>
Conv2dSpec<T> make_conv2d_spec(int64_t in_channels, int64_t out_channels, int64_t kh, int64_t kw,
                               int64_t stride, int64_t padding, int64_t dilation, Rng& rng,
                               bool with_bias = true);

// Cross-correlation semantics (no kernel flip).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Conv2dSpec<T>& spec);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias, int64_t stride,
                 int64_t padding, int64_t dilation);

// Non-overlapping square window max pooling; gradient goes to the first
// maximum in scan order.
template <typename T>
Tensor<T> max_pool2d(const Tensor<T>& x, int64_t window = 2, int64_t stride = 2);

template <typename T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int64_t window);

template <typename T>
Tensor<T> upsample_nearest(const Tensor<T>& x, int64_t factor);

// Exact adjoint of the 2x2/stride-2 convolution with the same kernel:
// doubles both spatial extents. w is [x_channels, out_channels, 2, 2].
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* bias);
template <typename T>
Tensor<T> transposed_conv2d(const Tensor<T>& x, const Conv2dSpec<T>& spec);

template <typename T>
struct AttentionSpec {
  int64_t embed_dim = 0;
  int64_t num_heads = 0;
  Tensor<T> wq, wk, wv, wo;  // each [embed_dim, embed_dim], no biases

  int64_t head_dim() const { return embed_dim / num_heads; }
};

template <typename T>
AttentionSpec<T> make_attention_spec(int64_t embed_dim, int64_t num_heads, Rng& rng);

// Per head h: A_h = softmax(Q_h K_hᵀ / sqrt(d_head)), out = concat_h(A_h V_h) Wo.
template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const AttentionSpec<T>& spec);

// Normalizes over the last axis: (x - mean)/sqrt(var + 1e-5) * gain + shift.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& shift);

template <typename T>
struct PositionalEncoding {
  int64_t num_tokens = 0;
  int64_t embed_dim = 0;
  Tensor<T> table;  // [num_tokens, embed_dim], fixed (non-trainable)
};

// Deterministic sinusoid table: table[p, 2i] = sin(p / 10000^(2i/D)),
// table[p, 2i+1] = cos(p / 10000^(2i/D)).
template <typename T>
PositionalEncoding<T> fourier_positional_encoding(int64_t num_tokens, int64_t embed_dim);

// 128x128 single-channel patch -> 64 tokens of dim 64: 16x16 sub-patches
// flattened (256 values), linearly projected, positional encoding added.
template <typename T>
Tensor<T> patch_embed(const Tensor<T>& x, const Tensor<T>& proj, const Tensor<T>& bias,
                      const PositionalEncoding<T>& pe);

template <typename T>
struct PyramidPoolParams {
  std::vector<int64_t> bins;
  std::vector<Tensor<T>> conv_w;  // one [C, C, 1, 1] per bin
  std::vector<Tensor<T>> conv_b;  // one [C] per bin
};

template <typename T>
PyramidPoolParams<T> make_pyramid_pool_params(int64_t channels, std::vector<int64_t> bins, Rng& rng);

// Per bin: average-pool to bin x bin, 1x1 conv, nearest-upsample back to
// H x W; the per-bin results are concatenated on channels -> [N, C*|bins|, H, W].
template <typename T>
Tensor<T> pyramid_pool(const Tensor<T>& x, const PyramidPoolParams<T>& params);

// Inverted dropout: survivors scaled by 1/(1-rate) during training,
// identity at inference.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, uint64_t seed);

}  // namespace dseg
