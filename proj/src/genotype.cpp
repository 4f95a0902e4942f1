#include "mmnas/genotype.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mmnas/nn.hpp"
#include "mmnas/optim.hpp"

namespace mmnas {

void Genotype::validate() const {
  if (num_nodes < 1) throw std::invalid_argument("genotype: num_nodes must be >= 1");
  for (const auto* cells : {&normal, &reduce}) {
    const char* name = cells == &normal ? "normal" : "reduce";
    if (cells->size() != static_cast<std::size_t>(num_nodes)) {
      throw std::invalid_argument("genotype: " + std::string(name) + " cell has " +
                                  std::to_string(cells->size()) + " nodes, expected " +
                                  std::to_string(num_nodes));
    }
    for (std::size_t j = 0; j < cells->size(); ++j) {
      const int vertex = static_cast<int>(j) + 2;
      for (const GenotypeEdge& e : (*cells)[j]) {
        if (e.from < 0 || e.from >= vertex) {
          throw std::invalid_argument("genotype: " + std::string(name) + " node n" +
                                      std::to_string(j) + " has source " + std::to_string(e.from) +
                                      " outside [0, " + std::to_string(vertex) + ")");
        }
        if (e.op == OpKind::zero) {
          throw std::invalid_argument("genotype: " + std::string(name) + " node n" +
                                      std::to_string(j) + " uses the zero op");
        }
      }
    }
  }
}

Genotype derive_genotype(const AlphaTable& alpha, std::uint64_t seed) {
  Genotype g;
  g.num_nodes = alpha.num_nodes();
  g.alpha_hash = alpha.content_hash();
  g.seed = seed;
  for (CellType type : {CellType::normal, CellType::reduction}) {
    auto& cells = type == CellType::normal ? g.normal : g.reduce;
    for (int j = 0; j < g.num_nodes; ++j) {
      const int vertex = j + 2;
      struct Candidate {
        double score;
        int src;
        int op_index;
      };
      std::vector<Candidate> candidates;
      for (int src = 0; src < vertex; ++src) {
        const auto w = alpha.mixed_weights(type, {src, vertex});
        double best = -1.0;
        int best_op = 0;
        for (int o = 0; o < kNumOpKinds; ++o) {
          if (all_op_kinds()[static_cast<std::size_t>(o)] == OpKind::zero) continue;
          if (w[static_cast<std::size_t>(o)] > best) {
            best = w[static_cast<std::size_t>(o)];
            best_op = o;
          }
        }
        candidates.push_back({best, src, best_op});
      }
      std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.src != b.src) return a.src < b.src;
        return a.op_index < b.op_index;
      });
      std::array<GenotypeEdge, 2> chosen{
          GenotypeEdge{candidates[0].src,
                       all_op_kinds()[static_cast<std::size_t>(candidates[0].op_index)]},
          GenotypeEdge{candidates[1].src,
                       all_op_kinds()[static_cast<std::size_t>(candidates[1].op_index)]}};
      if (chosen[0].from > chosen[1].from) std::swap(chosen[0], chosen[1]);
      cells.push_back(chosen);
    }
  }
  g.validate();
  return g;
}

namespace {

nlohmann::json cells_to_json(const std::vector<std::array<GenotypeEdge, 2>>& cells) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& node : cells) {
    nlohmann::json pair = nlohmann::json::array();
    for (const GenotypeEdge& e : node) {
      pair.push_back({{"from", e.from}, {"op", std::string(op_kind_name(e.op))}});
    }
    arr.push_back(pair);
  }
  return arr;
}

std::vector<std::array<GenotypeEdge, 2>> cells_from_json(const nlohmann::json& arr,
                                                         const std::string& cell_name) {
  if (!arr.is_array()) throw std::invalid_argument("genotype: '" + cell_name + "' must be an array");
  std::vector<std::array<GenotypeEdge, 2>> cells;
  for (std::size_t j = 0; j < arr.size(); ++j) {
    const auto& node = arr[j];
    if (!node.is_array() || node.size() != 2) {
      throw std::invalid_argument("genotype: " + cell_name + " node n" + std::to_string(j) +
                                  " must have exactly 2 edges, got " + std::to_string(node.size()));
    }
    std::array<GenotypeEdge, 2> pair;
    for (std::size_t e = 0; e < 2; ++e) {
      pair[e].from = node[e].at("from").get<int>();
      const std::string op_name = node[e].at("op").get<std::string>();
      const auto kind = op_kind_from_name(op_name);
      if (!kind) {
        throw std::invalid_argument("genotype: " + cell_name + " node n" + std::to_string(j) +
                                    " names unknown op '" + op_name + "'");
      }
      pair[e].op = *kind;
    }
    cells.push_back(pair);
  }
  return cells;
}

}  // namespace

std::string genotype_to_json(const Genotype& genotype) {
  nlohmann::json j{{"normal", cells_to_json(genotype.normal)},
                   {"reduce", cells_to_json(genotype.reduce)},
                   {"meta",
                    {{"nodes", genotype.num_nodes},
                     {"alpha_hash", genotype.alpha_hash},
                     {"seed", genotype.seed}}}};
  return j.dump(2);
}

Genotype genotype_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("genotype: ") + e.what());
  }
  Genotype g;
  try {
    g.num_nodes = j.at("meta").at("nodes").get<int>();
    g.alpha_hash = j.at("meta").value("alpha_hash", std::string());
    g.seed = j.at("meta").value("seed", std::uint64_t{0});
    g.normal = cells_from_json(j.at("normal"), "normal");
    g.reduce = cells_from_json(j.at("reduce"), "reduce");
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("genotype: ") + e.what());
  }
  g.validate();
  return g;
}

void save_genotype(const Genotype& genotype, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("genotype: cannot open '" + path.string() + "' for writing");
  f << genotype_to_json(genotype) << '\n';
}

Genotype load_genotype(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("genotype: cannot open '" + path.string() + "'");
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return genotype_from_json(text);
}

std::string genotype_to_dot(const Genotype& genotype, CellType type) {
  const auto& cells = type == CellType::normal ? genotype.normal : genotype.reduce;
  std::string dot = "digraph " + std::string(cell_type_name(type)) + "_cell {\n";
  dot += "  rankdir=LR;\n";
  dot += "  input0 [shape=box];\n  input1 [shape=box];\n  out [shape=box];\n";
  auto vertex_name = [](int v) {
    if (v == 0) return std::string("input0");
    if (v == 1) return std::string("input1");
    return "n" + std::to_string(v - 2);
  };
  for (std::size_t j = 0; j < cells.size(); ++j) {
    dot += "  n" + std::to_string(j) + " [shape=ellipse];\n";
  }
  for (std::size_t j = 0; j < cells.size(); ++j) {
    for (const GenotypeEdge& e : cells[j]) {
      dot += "  " + vertex_name(e.from) + " -> n" + std::to_string(j) + " [label=\"" +
             std::string(op_kind_name(e.op)) + "\"];\n";
    }
  }
  for (std::size_t j = 0; j < cells.size(); ++j) {
    dot += "  n" + std::to_string(j) + " -> out [label=\"concat\"];\n";
  }
  dot += "}\n";
  return dot;
}

DerivedNet::DerivedNet(const Genotype& genotype, const SupernetConfig& config, std::uint64_t seed)
    : genotype_(genotype), config_(config), slots_(cell_schedule(config)), params_(seed) {
  genotype_.validate();
  if (genotype_.num_nodes != config_.num_nodes) {
    throw std::invalid_argument("derived net: genotype has " + std::to_string(genotype_.num_nodes) +
                                " nodes but config expects " + std::to_string(config_.num_nodes));
  }
  Rng rng(seed);
  netparts::register_stem(params_, rng, "stem/pet", 1, config_.stem_channels);
  netparts::register_stem(params_, rng, "stem/ct", 1, config_.stem_channels);
  netparts::register_stem(params_, rng, "stem/sum", 1, config_.stem_channels);
  for (const CellSlot& slot : slots_) {
    netparts::register_preprocess(params_, rng, "cell/" + slot.label + "/pre0", slot.in0.channels,
                                  slot.c_node);
    netparts::register_preprocess(params_, rng, "cell/" + slot.label + "/pre1", slot.in1.channels,
                                  slot.c_node);
    const auto& cells = slot.type == CellType::normal ? genotype_.normal : genotype_.reduce;
    for (std::size_t j = 0; j < cells.size(); ++j) {
      const int vertex = static_cast<int>(j) + 2;
      for (const GenotypeEdge& e : cells[j]) {
        const std::string prefix = "cell/" + slot.label + "/" + edge_key({e.from, vertex}) + "/" +
                                   std::string(op_kind_name(e.op));
        if (!params_.names_with_prefix(prefix + "/").empty()) continue;  // duplicate edge
        register_op_params(params_, rng, prefix, e.op, slot.c_node);
      }
    }
  }
  netparts::register_head(params_, rng, slots_.back().out_channels,
                          static_cast<std::size_t>(config_.num_classes));
}

Tensor DerivedNet::forward(const Tensor& pet, const Tensor& ct) {
  return netparts::macro_forward(
      config_, slots_, params_, pet, ct,
      [&](std::size_t, const CellSlot& slot, const Tensor& in0, const Tensor& in1) {
        const auto& cells = slot.type == CellType::normal ? genotype_.normal : genotype_.reduce;
        std::vector<Tensor> vertices{in0, in1};
        for (std::size_t j = 0; j < cells.size(); ++j) {
          const int vertex = static_cast<int>(j) + 2;
          std::vector<Tensor> terms;
          for (const GenotypeEdge& e : cells[j]) {
            const std::string prefix = "cell/" + slot.label + "/" + edge_key({e.from, vertex}) +
                                       "/" + std::string(op_kind_name(e.op));
            terms.push_back(apply_op(e.op, vertices[static_cast<std::size_t>(e.from)], params_,
                                     prefix));
          }
          vertices.push_back(sum_tensors(terms));
        }
        return concat_channels(std::span<const Tensor>(vertices.data() + 2, cells.size()));
      });
}

namespace {

struct StudyBatchTensors {
  Tensor pet;
  Tensor ct;
  std::vector<int> labels;
};

StudyBatchTensors make_batch(std::span<const PairedStudy> studies, std::span<const std::size_t> idx) {
  if (idx.empty()) throw std::invalid_argument("batch: empty study batch");
  const auto& first = studies[idx[0]];
  const auto dims = first.pet.dims;
  const std::size_t vox = first.pet.numel();
  StudyBatchTensors batch;
  std::vector<double> pets, cts;
  pets.reserve(idx.size() * vox);
  cts.reserve(idx.size() * vox);
  for (std::size_t i : idx) {
    const PairedStudy& s = studies[i];
    if (s.pet.dims != dims) throw std::invalid_argument("batch: mixed volume dims in batch");
    pets.insert(pets.end(), s.pet.voxels.begin(), s.pet.voxels.end());
    cts.insert(cts.end(), s.ct.voxels.begin(), s.ct.voxels.end());
    batch.labels.push_back(s.label);
  }
  batch.pet = Tensor::from_values({idx.size(), 1, dims[0], dims[1], dims[2]}, std::move(pets));
  batch.ct = Tensor::from_values({idx.size(), 1, dims[0], dims[1], dims[2]}, std::move(cts));
  return batch;
}

}  // namespace

RetrainResult train_derived(DerivedNet& net, std::span<const PairedStudy> studies,
                            const RetrainConfig& config, std::uint64_t seed) {
  bool has[2] = {false, false};
  for (const PairedStudy& s : studies) has[s.label] = true;
  if (!has[0] || !has[1]) {
    throw std::invalid_argument("train_derived: both classes must be present in the training set");
  }
  if (config.epochs < 0 || config.batch_size < 1) {
    throw std::invalid_argument("train_derived: invalid budget");
  }
  AdamOptimizer adam(config.lr);
  const auto names = net.params().names();
  Rng order_rng(mix_seed(seed, 0x7261696e));
  RetrainResult result;
  result.best_loss = std::numeric_limits<double>::infinity();
  ParamStore best = net.params().clone();
  std::vector<std::size_t> idx(studies.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const std::size_t bs = static_cast<std::size_t>(config.batch_size);
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    order_rng.shuffle(idx);
    double loss_sum = 0.0;
    std::size_t case_count = 0;
    for (std::size_t off = 0; off < idx.size(); off += bs) {
      const std::size_t len = std::min(bs, idx.size() - off);
      auto batch = make_batch(studies, std::span<const std::size_t>(idx.data() + off, len));
      net.params().zero_all_grads();
      double loss_value;
      {
        Tape tape;
        Tensor logits = net.forward(batch.pet, batch.ct);
        Tensor loss = softmax_cross_entropy(logits, batch.labels);
        loss_value = loss.value();
        tape.backward(loss);
      }
      adam.step(net.params(), names);
      loss_sum += loss_value * static_cast<double>(len);
      case_count += len;
    }
    const double mean = loss_sum / static_cast<double>(case_count);
    const bool is_best = mean < result.best_loss;
    if (is_best) {
      result.best_loss = mean;
      result.best_epoch = epoch;
      best = net.params().clone();
    }
    result.log.push_back({epoch, mean, is_best});
  }
  net.params().load_values_from(best);
  return result;
}

void write_retrain_log_csv(std::span<const RetrainEpochRow> rows,
                           const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("retrain log: cannot open '" + path.string() + "' for writing");
  f << "epoch,train_loss,best_flag\n";
  char buf[40];
  for (const RetrainEpochRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.train_loss);
    f << r.epoch << ',' << buf << ',' << (r.best ? 1 : 0) << '\n';
  }
}

std::vector<double> score_studies(DerivedNet& net, std::span<const PairedStudy> studies) {
  std::vector<double> scores;
  scores.reserve(studies.size());
  for (std::size_t i = 0; i < studies.size(); ++i) {
    auto batch = make_batch(studies, std::span<const std::size_t>(&i, 1));
    Tensor logits = net.forward(batch.pet, batch.ct);
    const auto probs = softmax_rows(logits);
    scores.push_back(probs[1]);
  }
  return scores;
}

}  // namespace mmnas
