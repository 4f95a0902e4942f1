#include "mmnas/ops.hpp"

#include <stdexcept>

namespace mmnas {

namespace {

constexpr std::array<OpKind, kNumOpKinds> kAllOps = {
    OpKind::conv3,     OpKind::conv5,     OpKind::sep_conv3, OpKind::sep_conv5,
    OpKind::dil_conv3, OpKind::dil_conv5, OpKind::max_pool3, OpKind::avg_pool3,
    OpKind::skip,      OpKind::zero,
};

constexpr std::array<std::string_view, kNumOpKinds> kOpNames = {
    "conv3",     "conv5",     "sep_conv3", "sep_conv5", "dil_conv3",
    "dil_conv5", "max_pool3", "avg_pool3", "skip",      "zero",
};

struct ConvPlan {
  std::size_t kernel;
  std::size_t dilation;
  bool separable;
};

std::optional<ConvPlan> conv_plan(OpKind kind) {
  switch (kind) {
    case OpKind::conv3:
      return ConvPlan{3, 1, false};
    case OpKind::conv5:
      return ConvPlan{5, 1, false};
    case OpKind::sep_conv3:
      return ConvPlan{3, 1, true};
    case OpKind::sep_conv5:
      return ConvPlan{5, 1, true};
    case OpKind::dil_conv3:
      return ConvPlan{3, 2, false};
    case OpKind::dil_conv5:
      return ConvPlan{5, 2, false};
    default:
      return std::nullopt;
  }
}

}  // namespace

std::span<const OpKind> all_op_kinds() { return kAllOps; }

std::string_view op_kind_name(OpKind kind) {
  return kOpNames[static_cast<std::size_t>(kind)];
}

std::optional<OpKind> op_kind_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kOpNames.size(); ++i) {
    if (kOpNames[i] == name) return kAllOps[i];
  }
  return std::nullopt;
}

std::vector<Shape> op_param_shapes(OpKind kind, std::size_t channels) {
  if (channels < 1) throw std::invalid_argument("op_param_shapes: channels must be >= 1");
  const auto plan = conv_plan(kind);
  if (!plan) return {};
  std::vector<Shape> shapes;
  const std::size_t k = plan->kernel;
  if (plan->separable) {
    shapes.push_back({channels, 1, k, k, k});
    shapes.push_back({channels, channels, 1, 1, 1});
  } else {
    shapes.push_back({channels, channels, k, k, k});
  }
  shapes.push_back({channels});
  shapes.push_back({channels});
  return shapes;
}

void register_op_params(ParamStore& store, Rng& rng, const std::string& prefix, OpKind kind,
                        std::size_t channels) {
  const auto plan = conv_plan(kind);
  if (!plan) return;
  const std::size_t k = plan->kernel;
  if (plan->separable) {
    store.create_fan_in_uniform(prefix + "/depthwise", {channels, 1, k, k, k}, k * k * k, rng);
    store.create_fan_in_uniform(prefix + "/pointwise", {channels, channels, 1, 1, 1}, channels, rng);
  } else {
    store.create_fan_in_uniform(prefix + "/kernel", {channels, channels, k, k, k},
                                channels * k * k * k, rng);
  }
  store.create_full(prefix + "/norm_gamma", {channels}, 1.0);
  store.create_full(prefix + "/norm_beta", {channels}, 0.0);
}

Tensor apply_op(OpKind kind, const Tensor& x, const ParamStore& store, const std::string& prefix) {
  if (x.rank() != 5) {
    throw std::invalid_argument("apply_op: expected [B,C,D,H,W] input, got " + shape_str(x.shape()));
  }
  switch (kind) {
    case OpKind::skip:
      return x;
    case OpKind::zero:
      return Tensor::zeros(x.shape());
    case OpKind::max_pool3:
      return pool3d(PoolMode::max, x, 3, 1, 1);
    case OpKind::avg_pool3:
      return pool3d(PoolMode::avg, x, 3, 1, 1);
    default:
      break;
  }
  const ConvPlan plan = *conv_plan(kind);
  const std::size_t ch = x.dim(1);
  const std::size_t pad = (plan.kernel / 2) * plan.dilation;
  Tensor h;
  if (plan.separable) {
    const Tensor& dw = store.get(prefix + "/depthwise");
    const Tensor& pw = store.get(prefix + "/pointwise");
    if (dw.dim(0) != ch) {
      throw std::invalid_argument("apply_op: parameters for " + std::string(op_kind_name(kind)) +
                                  " expect " + std::to_string(dw.dim(0)) + " channels, input has " +
                                  std::to_string(ch));
    }
    h = conv3d(x, dw, {.stride = 1, .pad = pad, .dilation = plan.dilation, .groups = ch});
    h = conv3d(h, pw, {.stride = 1, .pad = 0, .dilation = 1, .groups = 1});
  } else {
    const Tensor& kernel = store.get(prefix + "/kernel");
    if (kernel.dim(0) != ch || kernel.dim(1) != ch) {
      throw std::invalid_argument("apply_op: parameters for " + std::string(op_kind_name(kind)) +
                                  " expect " + std::to_string(kernel.dim(0)) + " channels, input has " +
                                  std::to_string(ch));
    }
    h = conv3d(x, kernel, {.stride = 1, .pad = pad, .dilation = plan.dilation, .groups = 1});
  }
  h = normalize3d(h, store.get(prefix + "/norm_gamma"), store.get(prefix + "/norm_beta"));
  return relu(h);
}

}  // namespace mmnas
