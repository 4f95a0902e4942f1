#pragma once

#include <span>

#include "mmnas/tensor.hpp"

namespace mmnas {

struct Conv3dSpec {
  std::size_t stride = 1;
  std::size_t pad = 0;
  std::size_t dilation = 1;
  std::size_t groups = 1;
};

/// 3D cross-correlation, zero padding, no bias.
/// x: [B, Cin, D, H, W], weight: [Cout, Cin/groups, kd, kh, kw].
Tensor conv3d(const Tensor& x, const Tensor& weight, const Conv3dSpec& spec);

/// y[b,o] = sum_i x[b,i] * weight[o,i] + bias[o].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Per-channel normalization over batch and all spatial axes jointly,
/// followed by the affine map gamma * xhat + beta. Uses the statistics of
/// the current pass only.
Tensor normalize3d(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                   double eps = 1e-5);

enum class PoolMode { max, avg };

/// Windowed pooling with zero padding. Max pooling ignores padding (it never
/// wins); average pooling divides by the count of in-bounds window entries.
Tensor pool3d(PoolMode mode, const Tensor& x, std::size_t kernel,
              std::size_t stride, std::size_t pad);

/// [B, C, D, H, W] -> [B, C], mean over the spatial axes.
Tensor global_avg_pool(const Tensor& x);

/// Concatenates along the channel axis; batch and spatial dims must agree.
Tensor concat_channels(std::span<const Tensor> xs);

/// Mean over the batch of -log softmax(logits)[label]. Log-sum-exp
/// stabilized. labels must lie in [0, K).
Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Softmax of a rank-1 tensor, max-subtraction stabilized.
Tensor softmax_vector(const Tensor& logits);

/// sum_i weights[i] * items[i]; items share one shape, weights is rank-1 of
/// matching length. Gradients flow to the weights and to every item.
Tensor weighted_sum(const Tensor& weights, std::span<const Tensor> items);

/// Row-wise softmax probabilities of a [B, K] logits tensor as plain values
/// (no autodiff); used when scoring.
std::vector<double> softmax_rows(const Tensor& logits);

}  // namespace mmnas
