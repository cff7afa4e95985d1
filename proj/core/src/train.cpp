#include "dseg/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>

namespace dseg {

int64_t preset_epochs(const std::string& model) {
  if (model == "unet") return 450;
  if (model == "ynet") return 130;
  if (model == "tnet") return 300;
  fail("no epoch preset for model '" + model + "'");
}

void TrainConfig::check() const {
  require(epochs >= 0, "epochs must be nonnegative");
  require(batch_size >= 1, "batch size must be >= 1");
  require(learning_rate >= 0.0, "learning rate must be nonnegative");
  if (augment_enabled) augment.check();
}

int64_t TrainConfig::effective_epochs() const {
  return epochs > 0 ? epochs : preset_epochs(model);
}

const EpochStats& TrainHistory::best_val_row() const {
  require(!rows.empty(), "empty training history");
  size_t best = 0;
  for (size_t i = 1; i < rows.size(); ++i)
    if (rows[i].val_dice > rows[best].val_dice) best = i;
  return rows[best];
}

std::string history_tsv(const TrainHistory& h) {
  std::string out = "epoch\ttrain_loss\tval_loss\ttrain_dice\tval_dice\twall_seconds\n";
  char buf[200];
  for (const auto& r : h.rows) {
    std::snprintf(buf, sizeof(buf), "%lld\t%.6f\t%.6f\t%.6f\t%.6f\t%.3f\n",
                  static_cast<long long>(r.epoch), r.train_loss, r.val_loss, r.train_dice,
                  r.val_dice, r.wall_seconds);
    out += buf;
  }
  return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> make_batch(const PatchDataset& ds, const std::vector<size_t>& ids) {
  require(!ids.empty(), "empty batch");
  const int64_t b = static_cast<int64_t>(ids.size());
  constexpr int64_t kPix = kPatch * kPatch;
  std::vector<T> img(b * kPix), msk(b * kPix);
  for (int64_t i = 0; i < b; ++i) {
    const auto& s = ds.samples[ids[i]];
    for (int64_t j = 0; j < kPix; ++j) {
      img[i * kPix + j] = static_cast<T>(s.image[j]);
      msk[i * kPix + j] = static_cast<T>(s.mask[j]);
    }
  }
  return {Tensor<T>::from({b, 1, kPatch, kPatch}, std::move(img)),
          Tensor<T>::from({b, 1, kPatch, kPatch}, std::move(msk))};
}

template <typename T>
std::vector<ConfusionCounts> batch_confusions(const Tensor<T>& probs, const Tensor<T>& masks,
                                              double threshold) {
  require(probs.shape() == masks.shape(), "prediction/mask shape mismatch");
  const int64_t b = probs.shape()[0];
  const int64_t pix = probs.size() / b;
  std::vector<ConfusionCounts> out(b);
  for (int64_t i = 0; i < b; ++i) {
    ConfusionCounts c;
    for (int64_t j = 0; j < pix; ++j) {
      const bool p = static_cast<double>(probs.data()[i * pix + j]) > threshold;
      const bool t = masks.data()[i * pix + j] > T(0.5);
      if (t && p) ++c.tp;
      else if (!t && p) ++c.fp;
      else if (t && !p) ++c.fn;
      else ++c.tn;
    }
    out[i] = c;
  }
  return out;
}

namespace {

template <typename T>
struct EvalStats {
  double loss = 0.0;
  double dice = 0.0;
};

template <typename T>
EvalStats<T> evaluate_split(const ModelGraph<T>& model, const PatchDataset& ds,
                            const std::vector<size_t>& ids, const TrainConfig& cfg,
                            int64_t batch_size) {
  EvalStats<T> stats;
  std::vector<double> dices;
  double loss_sum = 0.0;
  int64_t count = 0;
  for (size_t start = 0; start < ids.size(); start += batch_size) {
    std::vector<size_t> batch_ids(ids.begin() + start,
                                  ids.begin() + std::min(ids.size(), start + batch_size));
    auto [x, y] = make_batch<T>(ds, batch_ids);
    Tensor<T> probs = model.predict(x);
    loss_sum += static_cast<double>(compute_loss(cfg.loss, y, probs, cfg.loss_params).item()) *
                static_cast<double>(batch_ids.size());
    count += static_cast<int64_t>(batch_ids.size());
    for (const auto& c : batch_confusions(probs, y)) dices.push_back(dsc(c));
  }
  stats.loss = loss_sum / static_cast<double>(count);
  stats.dice = pairwise_mean(dices);
  return stats;
}

}  // namespace

template <typename T>
TrainHistory train(ModelGraph<T>& model, const PatchDataset& data, const TrainConfig& cfg) {
  cfg.check();
  const auto train_ids = data.indices_for(SplitTag::train);
  const auto val_ids = data.indices_for(SplitTag::val);
  require(!train_ids.empty(), "training split is empty");
  require(!val_ids.empty(), "validation split is empty");

  Optimizer<T> opt(cfg.optimizer, cfg.learning_rate);
  opt.zero_grads(model.params);

  const int64_t epochs = cfg.effective_epochs();
  TrainHistory history;
  std::vector<std::vector<T>> best_params;
  double best_val_dice = -1.0;

  AugmentConfig aug_cfg = cfg.augment;
  aug_cfg.seed = cfg.seed;

  for (int64_t epoch = 1; epoch <= epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<size_t> order = train_ids;
    Rng shuffle_rng(mix_seed(cfg.seed, 0x5FA, static_cast<uint64_t>(epoch)));
    for (size_t i = order.size() - 1; i > 0; --i) {
      const size_t j = static_cast<size_t>(shuffle_rng.uniform_int(0, static_cast<int64_t>(i)));
      std::swap(order[i], order[j]);
    }

    double train_loss_sum = 0.0;
    int64_t train_count = 0;
    std::vector<double> train_dices;
    int64_t batch_index = 0;

    for (size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      std::vector<size_t> batch_ids(order.begin() + start,
                                    order.begin() + std::min(order.size(), start + cfg.batch_size));

      PatchDataset batch_view;
      batch_view.samples.reserve(batch_ids.size());
      std::vector<size_t> local_ids(batch_ids.size());
      for (size_t i = 0; i < batch_ids.size(); ++i) {
        const auto& s = data.samples[batch_ids[i]];
        batch_view.samples.push_back(
            cfg.augment_enabled
                ? augment(s, aug_cfg, static_cast<uint64_t>(batch_ids[i]), static_cast<uint64_t>(epoch))
                : s);
        local_ids[i] = i;
      }
      auto [x, y] = make_batch<T>(batch_view, local_ids);

      Tape<T> tape;
      Rng dropout_rng(mix_seed(cfg.seed, static_cast<uint64_t>(epoch), 0xd0 + batch_index));
      ForwardCtx<T> ctx;
      ctx.tape = &tape;
      ctx.training = true;
      ctx.rng = &dropout_rng;
      Tensor<T> probs = model.forward(x.attached(tape), ctx);
      Tensor<T> loss = compute_loss(cfg.loss, y, probs, cfg.loss_params);
      const double loss_value = static_cast<double>(loss.item());
      if (std::isnan(loss_value))
        fail("NaN loss at epoch " + std::to_string(epoch) + ", batch " +
             std::to_string(batch_index));
      tape.backward(loss);
      opt.step(model.params);
      opt.zero_grads(model.params);

      train_loss_sum += loss_value * static_cast<double>(batch_ids.size());
      train_count += static_cast<int64_t>(batch_ids.size());
      for (const auto& c : batch_confusions(probs, y)) train_dices.push_back(dsc(c));
    }

    const EvalStats<T> val = evaluate_split(model, data, val_ids, cfg, cfg.batch_size);

    EpochStats row;
    row.epoch = epoch;
    row.train_loss = train_loss_sum / static_cast<double>(train_count);
    row.val_loss = val.loss;
    row.train_dice = pairwise_mean(train_dices);
    row.val_dice = val.dice;
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    require(std::isfinite(row.train_loss) && std::isfinite(row.val_loss) &&
                std::isfinite(row.train_dice) && std::isfinite(row.val_dice),
            "non-finite statistic at epoch " + std::to_string(epoch));
    history.rows.push_back(row);

    if (row.val_dice > best_val_dice) {
      best_val_dice = row.val_dice;
      best_params.clear();
      for (const auto& [_, p] : model.params) best_params.push_back(p.data());
    }
  }

  // Hand back the best-validation parameters, not the last epoch's.
  require(best_params.size() == model.params.size(), "missing best-epoch parameter snapshot");
  for (size_t i = 0; i < model.params.size(); ++i) model.params[i].second.data() = best_params[i];
  return history;
}

#define DSEG_INSTANTIATE(T)                                                                     \
  template std::pair<Tensor<T>, Tensor<T>> make_batch<T>(const PatchDataset&,                   \
                                                         const std::vector<size_t>&);           \
  template std::vector<ConfusionCounts> batch_confusions<T>(const Tensor<T>&, const Tensor<T>&, \
                                                            double);                            \
  template TrainHistory train<T>(ModelGraph<T>&, const PatchDataset&, const TrainConfig&);

DSEG_INSTANTIATE(float)
DSEG_INSTANTIATE(double)

#undef DSEG_INSTANTIATE

}  // namespace dseg
