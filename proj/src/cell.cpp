#include "mmnas/cell.hpp"

#include <cmath>
#include <stdexcept>

namespace mmnas {

std::string_view cell_type_name(CellType type) {
  return type == CellType::normal ? "normal" : "reduce";
}

std::vector<CellEdge> cell_edges(int num_nodes) {
  if (num_nodes < 1) throw std::invalid_argument("cell_edges: need at least one node");
  std::vector<CellEdge> edges;
  for (int j = 2; j < num_nodes + 2; ++j) {
    for (int i = 0; i < j; ++i) edges.push_back({i, j});
  }
  return edges;
}

std::string edge_key(const CellEdge& edge) {
  return "edge_" + std::to_string(edge.src) + "_" + std::to_string(edge.dst);
}

AlphaTable::AlphaTable(int num_nodes) : num_nodes_(num_nodes) {
  for (CellType type : {CellType::normal, CellType::reduction}) {
    for (const CellEdge& e : cell_edges(num_nodes_)) {
      store_.create(std::string("alpha/") + std::string(cell_type_name(type)) + "/" + edge_key(e),
                    {static_cast<std::size_t>(kNumOpKinds)});
    }
  }
}

Tensor& AlphaTable::logits(CellType type, const CellEdge& edge) {
  return store_.get(std::string("alpha/") + std::string(cell_type_name(type)) + "/" + edge_key(edge));
}

const Tensor& AlphaTable::logits(CellType type, const CellEdge& edge) const {
  return store_.get(std::string("alpha/") + std::string(cell_type_name(type)) + "/" + edge_key(edge));
}

std::vector<double> AlphaTable::mixed_weights(CellType type, const CellEdge& edge) const {
  const Tensor& t = logits(type, edge);
  auto v = t.values();
  std::vector<double> w(v.size());
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    w[i] = std::exp(v[i] - mx);
    sum += w[i];
  }
  for (double& x : w) x /= sum;
  return w;
}

AlphaTable AlphaTable::clone() const {
  AlphaTable out(num_nodes_);
  out.store_.load_values_from(store_);
  return out;
}

AlphaTable AlphaTable::load(const std::filesystem::path& path) {
  ParamStore loaded = ParamStore::load(path);
  // infer M from the edge count per cell type: count = M(M+3)/2
  const std::size_t per_type = loaded.names_with_prefix("alpha/normal/").size();
  int num_nodes = 0;
  while (static_cast<std::size_t>(num_nodes * (num_nodes + 3) / 2) < per_type) ++num_nodes;
  if (per_type == 0 || static_cast<std::size_t>(num_nodes * (num_nodes + 3) / 2) != per_type) {
    throw std::invalid_argument("alpha table: unrecognized edge layout in file");
  }
  AlphaTable out(num_nodes);
  out.store_.load_values_from(loaded);
  return out;
}

Tensor mixed_op_forward(const Tensor& x, const Tensor& edge_logits, const ParamStore& params,
                        const std::string& edge_prefix) {
  if (edge_logits.rank() != 1 || edge_logits.dim(0) != static_cast<std::size_t>(kNumOpKinds)) {
    throw std::invalid_argument("mixed_op_forward: logits must have length " +
                                std::to_string(kNumOpKinds));
  }
  Tensor weights = softmax_vector(edge_logits);
  std::vector<Tensor> outs;
  outs.reserve(kNumOpKinds);
  for (OpKind kind : all_op_kinds()) {
    outs.push_back(apply_op(kind, x, params, edge_prefix + "/" + std::string(op_kind_name(kind))));
  }
  return weighted_sum(weights, outs);
}

Tensor node_forward(int node_vertex, std::span<const Tensor> predecessors, CellType type,
                    const AlphaTable& alpha, const ParamStore& params,
                    const std::string& cell_prefix) {
  if (node_vertex < 2) throw std::invalid_argument("node_forward: vertex must be >= 2");
  if (predecessors.size() < static_cast<std::size_t>(node_vertex)) {
    throw std::invalid_argument("node_forward: missing predecessor for vertex " +
                                std::to_string(node_vertex) + " (have " +
                                std::to_string(predecessors.size()) + ")");
  }
  std::vector<Tensor> terms;
  terms.reserve(node_vertex);
  for (int i = 0; i < node_vertex; ++i) {
    const CellEdge e{i, node_vertex};
    terms.push_back(mixed_op_forward(predecessors[i], alpha.logits(type, e), params,
                                     cell_prefix + "/" + edge_key(e)));
  }
  return sum_tensors(terms);
}

Tensor cell_forward(CellType type, int num_nodes, const Tensor& in0, const Tensor& in1,
                    const AlphaTable& alpha, const ParamStore& params,
                    const std::string& cell_prefix) {
  if (in0.shape() != in1.shape()) {
    throw std::invalid_argument("cell_forward: input shape mismatch " + shape_str(in0.shape()) +
                                " vs " + shape_str(in1.shape()));
  }
  if (num_nodes != alpha.num_nodes()) {
    throw std::invalid_argument("cell_forward: cell has " + std::to_string(num_nodes) +
                                " nodes but alpha table has " + std::to_string(alpha.num_nodes()));
  }
  std::vector<Tensor> vertices;
  vertices.reserve(num_nodes + 2);
  vertices.push_back(in0);
  vertices.push_back(in1);
  for (int j = 2; j < num_nodes + 2; ++j) {
    vertices.push_back(node_forward(j, vertices, type, alpha, params, cell_prefix));
  }
  return concat_channels(std::span<const Tensor>(vertices.data() + 2, num_nodes));
}

void register_mixed_cell_params(ParamStore& store, Rng& rng, const std::string& cell_prefix,
                                int num_nodes, std::size_t channels) {
  for (const CellEdge& e : cell_edges(num_nodes)) {
    for (OpKind kind : all_op_kinds()) {
      register_op_params(store, rng, cell_prefix + "/" + edge_key(e) + "/" +
                                         std::string(op_kind_name(kind)),
                         kind, channels);
    }
  }
}

}  // namespace mmnas
