#pragma once

#include "dseg/augment.hpp"
#include "dseg/losses.hpp"
#include "dseg/models.hpp"
#include "dseg/optim.hpp"
#include "dseg/patches.hpp"

namespace dseg {

struct TrainConfig {
  std::string model = "tnet";
  LossKind loss = LossKind::bce;
  int64_t epochs = 0;  // 0 -> the model's paper preset (unet 450, ynet 130, tnet 300)
  int64_t batch_size = 8;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::adam;
  uint64_t seed = 0;
  LossParams loss_params;
  bool augment_enabled = true;
  AugmentConfig augment;

  void check() const;
  int64_t effective_epochs() const;
};

// Paper epoch presets per architecture.
int64_t preset_epochs(const std::string& model);

struct EpochStats {
  int64_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double train_dice = 0.0;
  double val_dice = 0.0;
  double wall_seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochStats> rows;

  const EpochStats& best_val_row() const;
};

// Columns: epoch, train_loss, val_loss, train_dice, val_dice, wall_seconds.
std::string history_tsv(const TrainHistory& h);

// Assembles [B,1,128,128] image/mask tensors from dataset samples.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const PatchDataset& ds, const std::vector<size_t>& ids);

// Per-sample DSC of thresholded predictions against the batch masks.
template <typename T>
std::vector<ConfusionCounts> batch_confusions(const Tensor<T>& probs, const Tensor<T>& masks,
                                              double threshold = 0.5);

// Mini-batch training on the dataset's train split, validation on its val
// split. The model is updated in place and ends at the parameters of the
// best-validation-dice epoch (not the last one). Deterministic in
// (cfg.seed, data, thread count-independent kernels).
template <typename T>
TrainHistory train(ModelGraph<T>& model, const PatchDataset& data, const TrainConfig& cfg);

}  // namespace dseg
