#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mmnas/cell.hpp"
#include "mmnas/param_store.hpp"

namespace mmnas {

enum class ModalityMode { pet_ct, pet_only, ct_only };

std::string_view modality_mode_name(ModalityMode mode);
ModalityMode modality_mode_from_name(std::string_view name);

struct SupernetConfig {
  std::array<std::size_t, 3> input_dims{16, 16, 16};
  std::size_t stem_channels = 8;
  int num_nodes = 4;
  int num_reduction_cells = 3;
  int num_classes = 2;
  ModalityMode modality_mode = ModalityMode::pet_ct;
  std::uint64_t seed = 0;

  /// Throws invalid_argument with an explanation on divisibility violations.
  void validate() const;

  nlohmann::json to_json() const;
  static SupernetConfig from_json(const nlohmann::json& j);
};

/// One cell position in the macro-architecture, with its input sources and
/// the preprocessing strides that bring them to the cell's resolution.
struct CellSlot {
  /// Source encoding for cell inputs.
  enum : int { kStemPet = -1, kStemCt = -2, kStemSum = -3 };

  std::string label;  // "normal", "reduce_1", ...
  CellType type = CellType::normal;
  std::size_t c_node = 0;
  std::size_t out_channels = 0;
  std::array<std::size_t, 3> out_dims{};

  struct Input {
    int source = 0;  // kStem* or index of an earlier cell slot
    std::size_t channels = 0;
    std::size_t stride = 1;
  };
  Input in0, in1;
};

/// The fusion topology: one normal cell over the PET and CT stems, then a
/// chain of reduction cells; the first reduction also consumes the stem of
/// the summed volumes, later ones consume the two previous cells' outputs.
std::vector<CellSlot> cell_schedule(const SupernetConfig& config);

struct ShapeTraceEntry {
  std::string name;
  Shape shape;
};

/// Symbolic shape walk of the whole network; validates the schedule without
/// allocating activations.
std::vector<ShapeTraceEntry> trace_shapes(const SupernetConfig& config, std::size_t batch);

/// Shared building blocks for the searchable and the derived network.
namespace netparts {

void register_stem(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in_ch,
                   std::size_t out_ch);
Tensor stem_forward(const ParamStore& store, const std::string& prefix, const Tensor& x);

void register_preprocess(ParamStore& store, Rng& rng, const std::string& prefix, std::size_t in_ch,
                         std::size_t out_ch);
Tensor preprocess_forward(const ParamStore& store, const std::string& prefix, const Tensor& x,
                          std::size_t stride);

void register_head(ParamStore& store, Rng& rng, std::size_t channels, std::size_t num_classes);
Tensor head_forward(const ParamStore& store, const Tensor& x);

/// Walks stems -> cells -> head; the callback computes each cell's output
/// from its preprocessed inputs.
using CellFn = std::function<Tensor(std::size_t slot_index, const CellSlot& slot,
                                    const Tensor& in0, const Tensor& in1)>;
Tensor macro_forward(const SupernetConfig& config, const std::vector<CellSlot>& slots,
                     const ParamStore& store, const Tensor& pet, const Tensor& ct,
                     const CellFn& cell_fn);

void check_volume_input(const SupernetConfig& config, const Tensor& pet, const Tensor& ct);

}  // namespace netparts

/// The over-parameterized searchable network: every candidate op on every
/// edge, mixed by the softmax of the architecture logits.
class Supernet {
 public:
  Supernet(const SupernetConfig& config, std::uint64_t seed);

  const SupernetConfig& config() const { return config_; }
  const std::vector<CellSlot>& slots() const { return slots_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  std::size_t parameter_count() const { return params_.total_parameters(); }

  /// pet, ct: [B, 1, D, H, W] matching the config.
  Tensor forward(const Tensor& pet, const Tensor& ct, const AlphaTable& alpha);

 private:
  SupernetConfig config_;
  std::vector<CellSlot> slots_;
  ParamStore params_;
};

}  // namespace mmnas
