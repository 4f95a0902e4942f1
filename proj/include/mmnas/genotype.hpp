#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "mmnas/cell.hpp"
#include "mmnas/dataset.hpp"
#include "mmnas/supernet.hpp"

namespace mmnas {

/// One retained incoming connection of an intermediate node: source vertex
/// (0/1 inputs, 2+t nodes) and the operation on it. Never the zero op.
struct GenotypeEdge {
  int from = 0;
  OpKind op = OpKind::skip;
};

inline bool operator==(const GenotypeEdge& a, const GenotypeEdge& b) {
  return a.from == b.from && a.op == b.op;
}

/// Discretized architecture: exactly two incoming edges per node, per cell
/// type, plus provenance metadata.
struct Genotype {
  int num_nodes = 0;
  std::vector<std::array<GenotypeEdge, 2>> normal;
  std::vector<std::array<GenotypeEdge, 2>> reduce;
  std::string alpha_hash;
  std::uint64_t seed = 0;

  void validate() const;
};

inline bool operator==(const Genotype& a, const Genotype& b) {
  return a.num_nodes == b.num_nodes && a.normal == b.normal && a.reduce == b.reduce;
}

/// Discretization rule: per edge, score = max softmax weight over non-zero
/// ops; per node keep the 2 highest-scoring incoming edges (ties by lower
/// source, then lower op index); the kept edge's op is the argmax over
/// non-zero ops.
Genotype derive_genotype(const AlphaTable& alpha, std::uint64_t seed = 0);

std::string genotype_to_json(const Genotype& genotype);
Genotype genotype_from_json(const std::string& text);
void save_genotype(const Genotype& genotype, const std::filesystem::path& path);
Genotype load_genotype(const std::filesystem::path& path);

/// One DOT digraph for the requested cell type, nodes labeled
/// input0/input1/n0../out, op edges labeled with the OpKind.
std::string genotype_to_dot(const Genotype& genotype, CellType type);

/// Fixed network with the supernet's macro wiring but only the genotype's
/// two ops per node. Freshly initialized.
class DerivedNet {
 public:
  DerivedNet(const Genotype& genotype, const SupernetConfig& config, std::uint64_t seed);

  const SupernetConfig& config() const { return config_; }
  const Genotype& genotype() const { return genotype_; }

  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.total_parameters(); }

  Tensor forward(const Tensor& pet, const Tensor& ct);

 private:
  Genotype genotype_;
  SupernetConfig config_;
  std::vector<CellSlot> slots_;
  ParamStore params_;
};

struct RetrainConfig {
  int epochs = 200;
  double lr = 0.001;
  int batch_size = 1;
};

struct RetrainEpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  bool best = false;
};

struct RetrainResult {
  int best_epoch = 0;
  double best_loss = 0.0;
  std::vector<RetrainEpochRow> log;
};

/// Cross-entropy training over shuffled singleton batches with Adam;
/// restores the best-epoch checkpoint (by training loss) into the net.
/// With a zero epoch budget the initial weights are returned unchanged.
RetrainResult train_derived(DerivedNet& net, std::span<const PairedStudy> studies,
                            const RetrainConfig& config, std::uint64_t seed);

void write_retrain_log_csv(std::span<const RetrainEpochRow> rows,
                           const std::filesystem::path& path);

/// Softmax probability of the positive class for each study.
std::vector<double> score_studies(DerivedNet& net, std::span<const PairedStudy> studies);

}  // namespace mmnas
