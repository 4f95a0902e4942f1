#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "mmnas/nn.hpp"
#include "mmnas/param_store.hpp"
#include "mmnas/rng.hpp"
#include "mmnas/tensor.hpp"

namespace mmnas {

/// The candidate operation set, in canonical index order. Every member maps
/// [B,C,D,H,W] -> [B,C,D,H,W]: stride 1, padding floor(k/2)*dilation.
enum class OpKind : int {
  conv3 = 0,
  conv5,
  sep_conv3,
  sep_conv5,
  dil_conv3,
  dil_conv5,
  max_pool3,
  avg_pool3,
  skip,
  zero,
};

inline constexpr int kNumOpKinds = 10;

std::span<const OpKind> all_op_kinds();
std::string_view op_kind_name(OpKind kind);
std::optional<OpKind> op_kind_from_name(std::string_view name);

/// Learnable tensor shapes for one candidate op at the given channel count:
/// convolution kernels first, then the normalization affine pair. Pooling,
/// skip and zero have none.
std::vector<Shape> op_param_shapes(OpKind kind, std::size_t channels);

/// Registers the op's parameters under "<prefix>/...". Kernels get fan-in
/// uniform init, gamma 1, beta 0.
void register_op_params(ParamStore& store, Rng& rng, const std::string& prefix,
                        OpKind kind, std::size_t channels);

/// Applies one candidate op. Convolutional kinds run conv -> normalize3d ->
/// relu; pooling is bare; skip returns the input unchanged; zero emits a
/// detached all-zeros tensor.
Tensor apply_op(OpKind kind, const Tensor& x, const ParamStore& store,
                const std::string& prefix);

}  // namespace mmnas
