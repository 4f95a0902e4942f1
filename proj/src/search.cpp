#include "mmnas/search.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "mmnas/nn.hpp"

namespace mmnas {

BilevelStepResult bilevel_step(const std::function<Tensor()>& train_loss_fn,
                               const std::function<Tensor()>& val_loss_fn, ParamStore& theta,
                               SgdOptimizer& theta_opt, ParamStore& alpha,
                               AdamOptimizer& alpha_opt) {
  BilevelStepResult result;
  theta.zero_all_grads();
  alpha.zero_all_grads();
  {
    Tape tape;
    Tensor loss = train_loss_fn();
    result.train_loss = loss.value();
    tape.backward(loss);
  }
  theta_opt.step_all(theta);
  theta.zero_all_grads();
  alpha.zero_all_grads();
  {
    Tape tape;
    Tensor loss = val_loss_fn();
    result.val_loss = loss.value();
    tape.backward(loss);
  }
  alpha_opt.step_all(alpha);
  theta.zero_all_grads();
  alpha.zero_all_grads();
  return result;
}

StudyBatch make_study_batch(std::span<const PairedStudy> studies,
                            std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("search: empty batch");
  const auto dims = studies[indices[0]].pet.dims;
  const std::size_t vox = studies[indices[0]].pet.numel();
  std::vector<double> pets, cts;
  pets.reserve(indices.size() * vox);
  cts.reserve(indices.size() * vox);
  StudyBatch batch;
  for (std::size_t i : indices) {
    const PairedStudy& s = studies[i];
    if (s.pet.dims != dims) throw std::invalid_argument("search: mixed volume dims in batch");
    pets.insert(pets.end(), s.pet.voxels.begin(), s.pet.voxels.end());
    cts.insert(cts.end(), s.ct.voxels.begin(), s.ct.voxels.end());
    batch.labels.push_back(s.label);
  }
  batch.pet = Tensor::from_values({indices.size(), 1, dims[0], dims[1], dims[2]}, std::move(pets));
  batch.ct = Tensor::from_values({indices.size(), 1, dims[0], dims[1], dims[2]}, std::move(cts));
  return batch;
}

BilevelStepResult search_step(Supernet& net, AlphaTable& alpha, const StudyBatch& train_batch,
                              const StudyBatch& val_batch, SgdOptimizer& theta_opt,
                              AdamOptimizer& alpha_opt) {
  if (train_batch.labels.empty() || val_batch.labels.empty()) {
    throw std::invalid_argument("search_step: empty batch");
  }
  auto loss_fn = [&](const StudyBatch& b) {
    return [&net, &alpha, &b] {
      Tensor logits = net.forward(b.pet, b.ct, alpha);
      return softmax_cross_entropy(logits, b.labels);
    };
  };
  return bilevel_step(loss_fn(train_batch), loss_fn(val_batch), net.params(), theta_opt,
                      alpha.store(), alpha_opt);
}

SearchResult run_search(std::span<const PairedStudy> studies, const SupernetConfig& config,
                        const SearchConfig& search, std::uint64_t seed) {
  if (search.max_epochs < 1) throw std::invalid_argument("run_search: max_epochs must be >= 1");
  if (search.batch_size < 1) throw std::invalid_argument("run_search: batch_size must be >= 1");
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < studies.size(); ++i) {
    const int label = studies[i].label;
    if (label != 0 && label != 1) {
      throw std::invalid_argument("run_search: study '" + studies[i].id + "' has label " +
                                  std::to_string(label));
    }
    by_class[label].push_back(i);
  }
  if (by_class[0].empty() || by_class[1].empty()) {
    throw std::invalid_argument("run_search: both classes must be present in the search data");
  }
  if (studies.size() < 4) {
    throw std::invalid_argument("run_search: need at least 4 studies, got " +
                                std::to_string(studies.size()));
  }

  // stratified 50/50 split into weight-training and architecture-validation
  Rng rng(mix_seed(seed, 0x73706c69));
  std::vector<std::size_t> train_idx, val_idx;
  for (int c = 0; c < 2; ++c) {
    Rng stream = rng.fork(static_cast<std::uint64_t>(c));
    stream.shuffle(by_class[c]);
    for (std::size_t i = 0; i < by_class[c].size(); ++i) {
      (i % 2 == 0 ? train_idx : val_idx).push_back(by_class[c][i]);
    }
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());

  Supernet net(config, mix_seed(seed, 0x696e6974));
  AlphaTable alpha(config.num_nodes);
  SgdOptimizer sgd(search.theta_lr);
  AdamOptimizer adam(search.alpha_lr);

  SearchResult result{alpha.clone(), 0, std::numeric_limits<double>::infinity(), {}};
  Rng order_rng(mix_seed(seed, 0x6f726465));
  const std::size_t bs = static_cast<std::size_t>(search.batch_size);
  const std::size_t train_batches = (train_idx.size() + bs - 1) / bs;
  const std::size_t val_batches = (val_idx.size() + bs - 1) / bs;
  const std::size_t steps = std::max(train_batches, val_batches);

  for (int epoch = 1; epoch <= search.max_epochs; ++epoch) {
    order_rng.shuffle(train_idx);
    order_rng.shuffle(val_idx);
    double train_sum = 0.0, val_sum = 0.0;
    for (std::size_t s = 0; s < steps; ++s) {
      // the shorter side cycles
      const std::size_t t_off = (s % train_batches) * bs;
      const std::size_t v_off = (s % val_batches) * bs;
      const std::size_t t_len = std::min(bs, train_idx.size() - t_off);
      const std::size_t v_len = std::min(bs, val_idx.size() - v_off);
      auto train_batch =
          make_study_batch(studies, std::span<const std::size_t>(train_idx.data() + t_off, t_len));
      auto val_batch =
          make_study_batch(studies, std::span<const std::size_t>(val_idx.data() + v_off, v_len));
      auto step = search_step(net, alpha, train_batch, val_batch, sgd, adam);
      train_sum += step.train_loss;
      val_sum += step.val_loss;
    }
    const double train_mean = train_sum / static_cast<double>(steps);
    const double val_mean = val_sum / static_cast<double>(steps);
    bool is_best = false;
    if (epoch % std::max(1, search.snapshot_every) == 0 || epoch == search.max_epochs) {
      if (val_mean < result.best_val_loss) {
        is_best = true;
        result.best_val_loss = val_mean;
        result.best_epoch = epoch;
        result.alpha = alpha.clone();
      }
    }
    result.log.push_back({epoch, train_mean, val_mean, is_best});
  }
  return result;
}

void write_search_log_csv(std::span<const SearchEpochRow> rows, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("search log: cannot open '" + path.string() + "' for writing");
  f << "epoch,train_loss,val_loss,best_flag\n";
  char a[40], b[40];
  for (const SearchEpochRow& r : rows) {
    std::snprintf(a, sizeof(a), "%.17g", r.train_loss);
    std::snprintf(b, sizeof(b), "%.17g", r.val_loss);
    f << r.epoch << ',' << a << ',' << b << ',' << (r.best ? 1 : 0) << '\n';
  }
}

}  // namespace mmnas
