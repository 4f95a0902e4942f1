#include "mmnas/supernet.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

namespace mmnas {

std::string_view modality_mode_name(ModalityMode mode) {
  switch (mode) {
    case ModalityMode::pet_ct:
      return "pet_ct";
    case ModalityMode::pet_only:
      return "pet_only";
    case ModalityMode::ct_only:
      return "ct_only";
  }
  return "pet_ct";
}

ModalityMode modality_mode_from_name(std::string_view name) {
  if (name == "pet_ct") return ModalityMode::pet_ct;
  if (name == "pet_only") return ModalityMode::pet_only;
  if (name == "ct_only") return ModalityMode::ct_only;
  throw std::invalid_argument("unknown modality mode '" + std::string(name) +
                              "' (expected pet_ct, pet_only or ct_only)");
}

void SupernetConfig::validate() const {
  if (num_nodes < 1) throw std::invalid_argument("config: num_nodes must be >= 1");
  if (num_reduction_cells < 1) throw std::invalid_argument("config: num_reduction_cells must be >= 1");
  if (num_classes < 2) throw std::invalid_argument("config: num_classes must be >= 2");
  if (stem_channels == 0 || stem_channels % static_cast<std::size_t>(num_nodes) != 0) {
    throw std::invalid_argument("config: stem_channels (" + std::to_string(stem_channels) +
                                ") must be a positive multiple of num_nodes (" +
                                std::to_string(num_nodes) + ")");
  }
  const std::size_t factor = std::size_t{1} << num_reduction_cells;
  for (std::size_t d : input_dims) {
    if (d == 0 || d % factor != 0) {
      throw std::invalid_argument("config: input dim " + std::to_string(d) +
                                  " must be divisible by 2^num_reduction_cells = " +
                                  std::to_string(factor));
    }
  }
}

nlohmann::json SupernetConfig::to_json() const {
  return nlohmann::json{{"input_dims", input_dims},
                        {"stem_channels", stem_channels},
                        {"num_nodes", num_nodes},
                        {"num_reduction_cells", num_reduction_cells},
                        {"num_classes", num_classes},
                        {"modality_mode", std::string(modality_mode_name(modality_mode))},
                        {"seed", seed}};
}

SupernetConfig SupernetConfig::from_json(const nlohmann::json& j) {
  SupernetConfig c;
  try {
    c.input_dims = j.at("input_dims").get<std::array<std::size_t, 3>>();
    c.stem_channels = j.at("stem_channels").get<std::size_t>();
    c.num_nodes = j.at("num_nodes").get<int>();
    c.num_reduction_cells = j.at("num_reduction_cells").get<int>();
    if (j.contains("num_classes")) c.num_classes = j.at("num_classes").get<int>();
    if (j.contains("modality_mode")) {
      c.modality_mode = modality_mode_from_name(j.at("modality_mode").get<std::string>());
    }
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  return c;
}

std::vector<CellSlot> cell_schedule(const SupernetConfig& config) {
  config.validate();
  const std::size_t c0 = config.stem_channels;
  const std::size_t m = static_cast<std::size_t>(config.num_nodes);
  std::vector<CellSlot> slots;

  CellSlot normal;
  normal.label = "normal";
  normal.type = CellType::normal;
  normal.c_node = c0 / m;
  normal.out_channels = c0;
  normal.out_dims = config.input_dims;
  normal.in0 = {CellSlot::kStemPet, c0, 1};
  normal.in1 = {CellSlot::kStemCt, c0, 1};
  slots.push_back(normal);

  for (int r = 1; r <= config.num_reduction_cells; ++r) {
    CellSlot slot;
    slot.label = "reduce_" + std::to_string(r);
    slot.type = CellType::reduction;
    slot.c_node = (c0 << r) / m;
    slot.out_channels = c0 << r;
    const std::size_t shift = static_cast<std::size_t>(r);
    slot.out_dims = {config.input_dims[0] >> shift, config.input_dims[1] >> shift,
                     config.input_dims[2] >> shift};
    const CellSlot& prev = slots.back();
    slot.in0 = {static_cast<int>(slots.size()) - 1, prev.out_channels, 2};
    if (r == 1) {
      slot.in1 = {CellSlot::kStemSum, c0, 2};
    } else {
      const CellSlot& prev2 = slots[slots.size() - 2];
      slot.in1 = {static_cast<int>(slots.size()) - 2, prev2.out_channels, 4};
    }
    slots.push_back(slot);
  }
  return slots;
}

std::vector<ShapeTraceEntry> trace_shapes(const SupernetConfig& config, std::size_t batch) {
  const auto slots = cell_schedule(config);
  std::vector<ShapeTraceEntry> trace;
  const auto dims = config.input_dims;
  trace.push_back({"input/pet", {batch, 1, dims[0], dims[1], dims[2]}});
  trace.push_back({"input/ct", {batch, 1, dims[0], dims[1], dims[2]}});
  for (const char* stem : {"stem/pet", "stem/ct", "stem/sum"}) {
    trace.push_back({stem, {batch, config.stem_channels, dims[0], dims[1], dims[2]}});
  }
  for (const CellSlot& slot : slots) {
    trace.push_back({"cell/" + slot.label + "/pre0",
                     {batch, slot.c_node, slot.out_dims[0], slot.out_dims[1], slot.out_dims[2]}});
    trace.push_back({"cell/" + slot.label + "/pre1",
                     {batch, slot.c_node, slot.out_dims[0], slot.out_dims[1], slot.out_dims[2]}});
    trace.push_back({"cell/" + slot.label + "/out",
                     {batch, slot.out_channels, slot.out_dims[0], slot.out_dims[1], slot.out_dims[2]}});
  }
  const CellSlot& last = slots.back();
  trace.push_back({"head/conv1", {batch, last.out_channels, last.out_dims[0], last.out_dims[1],
                                  last.out_dims[2]}});
  trace.push_back({"head/conv2", {batch, last.out_channels, last.out_dims[0], last.out_dims[1],
                                  last.out_dims[2]}});
  trace.push_back({"head/pool", {batch, last.out_channels}});
  trace.push_back({"logits", {batch, static_cast<std::size_t>(config.num_classes)}});
  return trace;
}

namespace netparts {

void register_stem(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in_ch,
                   std::size_t out_ch) {
  store.create_fan_in_uniform(prefix + "/kernel", {out_ch, in_ch, 3, 3, 3}, in_ch * 27, rng);
  store.create_full(prefix + "/norm_gamma", {out_ch}, 1.0);
  store.create_full(prefix + "/norm_beta", {out_ch}, 0.0);
}

Tensor stem_forward(const ParamStore& store, const std::string& prefix, const Tensor& x) {
  Tensor h = conv3d(x, store.get(prefix + "/kernel"), {.stride = 1, .pad = 1});
  return normalize3d(h, store.get(prefix + "/norm_gamma"), store.get(prefix + "/norm_beta"));
}

void register_preprocess(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in_ch,
                         std::size_t out_ch) {
  store.create_fan_in_uniform(prefix + "/kernel", {out_ch, in_ch, 1, 1, 1}, in_ch, rng);
  store.create_full(prefix + "/norm_gamma", {out_ch}, 1.0);
  store.create_full(prefix + "/norm_beta", {out_ch}, 0.0);
}

Tensor preprocess_forward(const ParamStore& store, const std::string& prefix, const Tensor& x,
                          std::size_t stride) {
  Tensor h = conv3d(x, store.get(prefix + "/kernel"), {.stride = stride, .pad = 0});
  return normalize3d(h, store.get(prefix + "/norm_gamma"), store.get(prefix + "/norm_beta"));
}

void register_head(ParamStore& store, Rng& rng, std::size_t channels, std::size_t num_classes) {
  for (const char* name : {"head/conv1", "head/conv2"}) {
    store.create_fan_in_uniform(std::string(name) + "/kernel", {channels, channels, 3, 3, 3},
                                channels * 27, rng);
    store.create_full(std::string(name) + "/norm_gamma", {channels}, 1.0);
    store.create_full(std::string(name) + "/norm_beta", {channels}, 0.0);
  }
  store.create_fan_in_uniform("head/fc/weight", {num_classes, channels}, channels, rng);
  store.create_full("head/fc/bias", {num_classes}, 0.0);
}

Tensor head_forward(const ParamStore& store, const Tensor& x) {
  Tensor h = x;
  for (const char* name : {"head/conv1", "head/conv2"}) {
    h = conv3d(h, store.get(std::string(name) + "/kernel"), {.stride = 1, .pad = 1});
    h = normalize3d(h, store.get(std::string(name) + "/norm_gamma"),
                    store.get(std::string(name) + "/norm_beta"));
    h = relu(h);
  }
  h = global_avg_pool(h);
  return linear(h, store.get("head/fc/weight"), store.get("head/fc/bias"));
}

void check_volume_input(const SupernetConfig& config, const Tensor& pet, const Tensor& ct) {
  const Shape expect{pet.dim(0), 1, config.input_dims[0], config.input_dims[1],
                     config.input_dims[2]};
  for (const Tensor* t : {&pet, &ct}) {
    if (t->rank() != 5 || t->shape() != expect) {
      throw std::invalid_argument("forward: expected volumes of shape " + shape_str(expect) +
                                  ", got " + shape_str(t->shape()));
    }
  }
}

Tensor macro_forward(const SupernetConfig& config, const std::vector<CellSlot>& slots,
                     const ParamStore& store, const Tensor& pet, const Tensor& ct,
                     const CellFn& cell_fn) {
  check_volume_input(config, pet, ct);
  // single-modality modes route that modality everywhere the other is used
  const Tensor& a = config.modality_mode == ModalityMode::ct_only ? ct : pet;
  const Tensor& b = config.modality_mode == ModalityMode::pet_only ? pet : ct;
  Tensor s_pet = stem_forward(store, "stem/pet", a);
  Tensor s_ct = stem_forward(store, "stem/ct", b);
  Tensor s_sum = stem_forward(store, "stem/sum", add(a, b));

  std::vector<Tensor> cell_outs;
  cell_outs.reserve(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const CellSlot& slot = slots[k];
    auto resolve = [&](int source) -> const Tensor& {
      switch (source) {
        case CellSlot::kStemPet:
          return s_pet;
        case CellSlot::kStemCt:
          return s_ct;
        case CellSlot::kStemSum:
          return s_sum;
        default:
          return cell_outs[static_cast<std::size_t>(source)];
      }
    };
    Tensor p0 = preprocess_forward(store, "cell/" + slot.label + "/pre0", resolve(slot.in0.source),
                                   slot.in0.stride);
    Tensor p1 = preprocess_forward(store, "cell/" + slot.label + "/pre1", resolve(slot.in1.source),
                                   slot.in1.stride);
    cell_outs.push_back(cell_fn(k, slot, p0, p1));
  }
  return head_forward(store, cell_outs.back());
}

}  // namespace netparts

Supernet::Supernet(const SupernetConfig& config, std::uint64_t seed)
    : config_(config), slots_(cell_schedule(config)), params_(seed) {
  Rng rng(seed);
  netparts::register_stem(params_, rng, "stem/pet", 1, config_.stem_channels);
  netparts::register_stem(params_, rng, "stem/ct", 1, config_.stem_channels);
  netparts::register_stem(params_, rng, "stem/sum", 1, config_.stem_channels);
  for (const CellSlot& slot : slots_) {
    netparts::register_preprocess(params_, rng, "cell/" + slot.label + "/pre0", slot.in0.channels,
                                  slot.c_node);
    netparts::register_preprocess(params_, rng, "cell/" + slot.label + "/pre1", slot.in1.channels,
                                  slot.c_node);
    register_mixed_cell_params(params_, rng, "cell/" + slot.label, config_.num_nodes, slot.c_node);
  }
  netparts::register_head(params_, rng, slots_.back().out_channels,
                          static_cast<std::size_t>(config_.num_classes));
}

Tensor Supernet::forward(const Tensor& pet, const Tensor& ct, const AlphaTable& alpha) {
  if (alpha.num_nodes() != config_.num_nodes) {
    throw std::invalid_argument("forward: alpha table has " + std::to_string(alpha.num_nodes()) +
                                " nodes, config expects " + std::to_string(config_.num_nodes));
  }
  return netparts::macro_forward(
      config_, slots_, params_, pet, ct,
      [&](std::size_t, const CellSlot& slot, const Tensor& in0, const Tensor& in1) {
        return cell_forward(slot.type, config_.num_nodes, in0, in1, alpha, params_,
                            "cell/" + slot.label);
      });
}

}  // namespace mmnas
