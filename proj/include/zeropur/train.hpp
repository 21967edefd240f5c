#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "zeropur/augment.hpp"
#include "zeropur/classifier.hpp"
#include "zeropur/dataset.hpp"

namespace zp {

struct TrainRecipe {
  Augmentation preset = Augmentation::base;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  double weight_decay = 5.0e-4;
  double lr = 0.1;
  /// Linear warm-up length; the rest of training follows a cosine decay to 0.
  std::size_t warmup_epochs = 1;
  /// Global gradient-norm clip applied before momentum; 0 disables.
  double grad_clip = 5.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Learning rate for optimizer step `step` of `total_steps`.
double scheduled_lr(const TrainRecipe& recipe, std::size_t step, std::size_t steps_per_epoch);

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double train_accuracy = 0.0;  ///< on the augmented batches seen during the epoch
  double eval_accuracy = -1.0;  ///< on the held-out set, -1 when none was given
  double lr = 0.0;              ///< rate at the last step of the epoch
};

struct TrainResult {
  Classifier model;
  std::vector<EpochStats> history;
  double final_accuracy = 0.0;  ///< clean accuracy on the held-out set, or the training set without one
};

using EpochCallback = std::function<void(const EpochStats&)>;

/// SGD with momentum and L2 weight decay on mean
/// cross-entropy. Deterministic given recipe.seed. Throws NumericError naming
/// the epoch and step if the loss diverges.
TrainResult train(const Classifier& init, const LabeledDataset& data, const TrainRecipe& recipe,
                  const LabeledDataset* held_out = nullptr, const EpochCallback& on_epoch = {});

}  // namespace zp
