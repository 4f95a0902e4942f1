#pragma once

#include <string>
#include <vector>

#include "mmnas/ops.hpp"
#include "mmnas/param_store.hpp"
#include "mmnas/tensor.hpp"

namespace mmnas {

enum class CellType { normal, reduction };

std::string_view cell_type_name(CellType type);

/// Cells are DAGs over vertices 0..M+1: vertex 0 and 1 are the two inputs,
/// vertex 2+t is intermediate node t. An edge (src, dst) exists for every
/// src < dst with dst >= 2.
struct CellEdge {
  int src = 0;
  int dst = 0;
};

inline bool operator==(const CellEdge& a, const CellEdge& b) {
  return a.src == b.src && a.dst == b.dst;
}

/// All edges of a cell with num_nodes intermediate nodes, ordered by
/// (dst, src). Count is sum over nodes j of (j + 2).
std::vector<CellEdge> cell_edges(int num_nodes);

std::string edge_key(const CellEdge& edge);

/// Architecture logits: one length-10 vector per edge per cell type, shared
/// by all cells of that type. Zero-initialized (uniform mixture).
class AlphaTable {
 public:
  explicit AlphaTable(int num_nodes);

  int num_nodes() const { return num_nodes_; }

  Tensor& logits(CellType type, const CellEdge& edge);
  const Tensor& logits(CellType type, const CellEdge& edge) const;

  /// Softmax of an edge's logits as plain values (max-subtraction
  /// stabilized); sums to 1.
  std::vector<double> mixed_weights(CellType type, const CellEdge& edge) const;

  ParamStore& store() { return store_; }
  const ParamStore& store() const { return store_; }

  AlphaTable clone() const;
  std::string content_hash() const { return store_.content_hash(); }

  void save(const std::filesystem::path& path) const { store_.save(path); }
  static AlphaTable load(const std::filesystem::path& path);

 private:
  int num_nodes_;
  ParamStore store_;
};

/// Softmax-weighted sum of all candidate ops on one edge (gradients flow to
/// the input, every op parameter and the logits).
Tensor mixed_op_forward(const Tensor& x, const Tensor& edge_logits,
                        const ParamStore& params, const std::string& edge_prefix);

/// Node value: sum over all predecessors of the mixed op on that edge.
/// predecessors[v] is the tensor at vertex v; it must cover 0..node_vertex-1.
Tensor node_forward(int node_vertex, std::span<const Tensor> predecessors,
                    CellType type, const AlphaTable& alpha,
                    const ParamStore& params, const std::string& cell_prefix);

/// Full mixed cell on preprocessed inputs: runs every node, concatenates
/// the node outputs along channels ([B, M*C_node, D, H, W]).
Tensor cell_forward(CellType type, int num_nodes, const Tensor& in0,
                    const Tensor& in1, const AlphaTable& alpha,
                    const ParamStore& params, const std::string& cell_prefix);

/// Registers parameters for every candidate op on every edge of one cell
/// under "<cell_prefix>/edge_<i>_<j>/<op>/...".
void register_mixed_cell_params(ParamStore& store, Rng& rng,
                                const std::string& cell_prefix, int num_nodes,
                                std::size_t channels);

}  // namespace mmnas
