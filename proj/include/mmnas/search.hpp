#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>

#include "mmnas/dataset.hpp"
#include "mmnas/optim.hpp"
#include "mmnas/supernet.hpp"

namespace mmnas {

struct SearchConfig {
  int max_epochs = 200;
  int snapshot_every = 1;
  int batch_size = 1;
  double theta_lr = 1e-4;  // SGD on the network weights
  double alpha_lr = 5e-4;  // Adam on the architecture logits
};

struct SearchEpochRow {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  bool best = false;
};

struct SearchResult {
  AlphaTable alpha;      // snapshot with the minimum logged validation loss
  int best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<SearchEpochRow> log;
};

struct BilevelStepResult {
  double train_loss = 0.0;
  double val_loss = 0.0;
};

/// One alternating first-order update: a weight step on the training loss
/// with the architecture frozen, then an architecture step on the
/// validation loss with the weights frozen. All gradients are cleared on
/// the way out.
BilevelStepResult bilevel_step(const std::function<Tensor()>& train_loss_fn,
                               const std::function<Tensor()>& val_loss_fn,
                               ParamStore& theta, SgdOptimizer& theta_opt,
                               ParamStore& alpha, AdamOptimizer& alpha_opt);

struct StudyBatch {
  Tensor pet;
  Tensor ct;
  std::vector<int> labels;
};

StudyBatch make_study_batch(std::span<const PairedStudy> studies,
                            std::span<const std::size_t> indices);

/// One search step on explicit batches.
BilevelStepResult search_step(Supernet& net, AlphaTable& alpha, const StudyBatch& train_batch,
                              const StudyBatch& val_batch, SgdOptimizer& theta_opt,
                              AdamOptimizer& alpha_opt);

/// Full architecture search: stratified 50/50 split into weight-training
/// and architecture-validation halves, epochs of alternating updates over
/// shuffled batches, returning the architecture snapshot with the lowest
/// logged validation loss.
SearchResult run_search(std::span<const PairedStudy> studies, const SupernetConfig& config,
                        const SearchConfig& search, std::uint64_t seed);

void write_search_log_csv(std::span<const SearchEpochRow> rows,
                          const std::filesystem::path& path);

}  // namespace mmnas
