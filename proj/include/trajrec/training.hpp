#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "trajrec/dataset.hpp"
#include "trajrec/model.hpp"

namespace trajrec {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam over a parameter store, with global-norm gradient clipping.
class Adam {
 public:
  explicit Adam(ad::ParamStore& store, AdamConfig cfg = {});
  // Applies one update from `grads` (aligned with the store by index).
  // A positive clip_norm rescales the whole gradient when its global
  // L2 norm exceeds it. Returns the pre-clip norm.
  double step(const std::vector<ad::Mat>& grads, double clip_norm);

 private:
  ad::ParamStore* store_;
  AdamConfig cfg_;
  std::vector<ad::Mat> m_, v_;
  std::size_t t_ = 0;
};

struct TrainConfig {
  std::size_t epochs = 30;  // epochs to run in this call
  std::size_t batch_size = 64;
  AdamConfig adam;
  double clip_norm = 5.0;
  std::uint64_t seed = 0;
  std::string log_path;         // CSV epoch log; empty disables
  std::string checkpoint_path;  // best-validation weights; empty disables
  // Resuming: epochs are numbered start_epoch+1 .. start_epoch+epochs
  // and the log is appended without rewriting the header.
  std::size_t start_epoch = 0;
  bool append_log = false;
};

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_recall = 0.0;
  double val_accuracy = 0.0;
  double val_mae = 0.0;  // network-distance MAE in meters
};

struct ValStats {
  double recall = 0.0;
  double accuracy = 0.0;
  double mae_m = 0.0;
};

// Per-epoch observer; return true to stop training early (e.g. when an
// overfit target is reached). Runs after the epoch is logged.
using StopProbe = std::function<bool(const Model&, const EpochStats&)>;

// Mean fully-teacher-forced loss over the pairs, no parameter updates.
double evaluate_loss(const Model& model,
                     const std::vector<TrajectoryPair>& pairs);

// Greedy-recovery metrics of the model on the pairs.
ValStats validate_split(const Model& model,
                        const std::vector<TrajectoryPair>& pairs);

// Minibatch training with per-step teacher-forcing coin flips. Batch
// gradients are the mean over batch elements, accumulated into
// per-thread buffers and reduced in thread order, so runs are bitwise
// reproducible for a fixed thread count. Throws DivergenceError when
// any trajectory loss goes non-finite. Returns the per-epoch history.
std::vector<EpochStats> fit(Model& model, const DatasetSplit& splits,
                            const TrainConfig& cfg,
                            const StopProbe& stop = {});

}  // namespace trajrec
