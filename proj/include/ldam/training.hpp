#pragma once

#include "ldam/metrics.hpp"
#include "ldam/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldam {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  int epochs = 50;
  std::size_t batch_size = 32;
  double lr = 1e-3;
  std::uint64_t seed = 7;
  bool shuffle = true;
  int checkpoint_every = 0;  // 0 disables periodic checkpoints
  std::optional<int> early_stop_patience;

  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;   // sample-weighted mean of batch losses
  double term1 = 0.0;
  double term2 = 0.0;
  std::optional<double> val_micro_auc;
  double seconds = 0.0;
};

struct TrainLog {
  std::vector<EpochRecord> records;

  /// `epoch,loss,term1,term2,val_micro_auc,seconds`; a missing AUC is an empty field.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Everything needed to continue training bit-for-bit.
struct TrainState {
  ModelParams params;
  AdamState adam;
  int epochs_completed = 0;
  TrainLog log;
};

/// Fresh parameters drawn from `train.seed` and an optimizer at `train.lr`.
TrainState initial_state(const ModelConfig& model, const TrainConfig& train);

/// Per-epoch minibatch loop. Epoch e shuffles with an RNG seeded from (seed, e), so a
/// resumed run sees the same batches as an uninterrupted one.
class Trainer {
 public:
  Trainer(ModelConfig model, TrainConfig train, NameEmbeddings names, TrainState state);

  EpochRecord run_epoch(const std::vector<EncodedSample>& train_set,
                        const std::vector<EncodedSample>* val_set = nullptr);

  const TrainState& state() const { return state_; }
  TrainState& state() { return state_; }
  const ModelConfig& model_config() const { return model_; }
  const TrainConfig& train_config() const { return train_; }

  /// Batch visiting order for a given (1-based) epoch.
  std::vector<std::size_t> epoch_order(std::size_t n, int epoch) const;

 private:
  ModelConfig model_;
  TrainConfig train_;
  NameEmbeddings names_;
  TrainState state_;
  std::vector<Tensor*> tensors_;
};

using EpochCallback = std::function<void(const Trainer&, const EpochRecord&)>;

/// Runs epochs until `train.epochs` have been completed in total (resumed states count
/// their finished epochs), or until early stopping fires. With early stopping the
/// parameters of the best validation epoch are returned.
TrainState train(const std::vector<EncodedSample>& train_set, const std::vector<EncodedSample>* val_set,
                 const NameEmbeddings& names, const ModelConfig& model, const TrainConfig& train,
                 std::optional<TrainState> resume = std::nullopt, const EpochCallback& on_epoch = {});

MetricsReport evaluate(const std::vector<EncodedSample>& samples, const NameEmbeddings& names,
                       const ModelParams& params, const ModelConfig& config, double threshold = 0.5);

/// Stacks the label vectors of `samples` into {samples, N_Y}.
Eigen::MatrixXd label_matrix(const std::vector<EncodedSample>& samples);

}  // namespace ldam
