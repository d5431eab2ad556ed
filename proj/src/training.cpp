#include "ldam/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

namespace ldam {

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (!(std::isfinite(lr) && lr > 0.0)) throw std::invalid_argument("train config: lr must be positive");
  if (checkpoint_every < 0) throw std::invalid_argument("train config: checkpoint_every must be >= 0");
  if (early_stop_patience && *early_stop_patience < 1) {
    throw std::invalid_argument("train config: early_stop_patience must be >= 1");
  }
}

std::string TrainLog::to_csv() const {
  std::string out = "epoch,loss,term1,term2,val_micro_auc,seconds\n";
  char buf[256];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,", r.epoch, r.loss, r.term1, r.term2);
    out += buf;
    if (r.val_micro_auc) {
      std::snprintf(buf, sizeof buf, "%.17g", *r.val_micro_auc);
      out += buf;
    }
    std::snprintf(buf, sizeof buf, ",%.6f\n", r.seconds);
    out += buf;
  }
  return out;
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw TrainingError("cannot write training log " + path.string());
  out << to_csv();
}

TrainState initial_state(const ModelConfig& model, const TrainConfig& train) {
  train.validate();
  TrainState s;
  s.params = ModelParams::init(model, train.seed);
  s.adam.lr = train.lr;
  return s;
}

Trainer::Trainer(ModelConfig model, TrainConfig train, NameEmbeddings names, TrainState state)
    : model_(std::move(model)), train_(std::move(train)), names_(std::move(names)), state_(std::move(state)) {
  model_.validate();
  train_.validate();
  state_.params.check_shapes(model_);
  if (names_.labels.rows() != model_.embed_dim || names_.labels.cols() != model_.num_labels ||
      names_.indicators.rows() != model_.embed_dim || names_.indicators.cols() != model_.num_indicators) {
    throw numerics::DimensionError("trainer: name embeddings do not match the model config");
  }
  state_.adam.lr = train_.lr;
  tensors_ = state_.params.tensors();
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t n, int epoch) const {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (train_.shuffle) {
    std::seed_seq seq{static_cast<std::uint32_t>(train_.seed), static_cast<std::uint32_t>(train_.seed >> 32),
                      static_cast<std::uint32_t>(epoch)};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  return order;
}

EpochRecord Trainer::run_epoch(const std::vector<EncodedSample>& train_set,
                               const std::vector<EncodedSample>* val_set) {
  if (train_set.empty()) throw TrainingError("training set is empty");
  const auto start = std::chrono::steady_clock::now();
  const int epoch = state_.epochs_completed + 1;
  const auto order = epoch_order(train_set.size(), epoch);
  const Tensor label_embeddings({names_.labels.rows(), names_.labels.cols()}, names_.labels);

  double loss_sum = 0.0, term1_sum = 0.0, term2_sum = 0.0;
  std::size_t batch_index = 0;
  for (std::size_t begin = 0; begin < order.size(); begin += train_.batch_size, ++batch_index) {
    const std::size_t end = std::min(order.size(), begin + train_.batch_size);
    std::vector<const EncodedSample*> batch;
    Matrix targets(model_.num_labels, static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      batch.push_back(&train_set[order[i]]);
      targets.col(static_cast<Eigen::Index>(i - begin)) = train_set[order[i]].labels;
    }

    for (auto* t : tensors_) t->zero_grad();
    const auto out = forward_batch(batch, names_, state_.params, model_);
    const auto loss = ldam_loss(out.y_hat, targets, label_embeddings, state_.params, model_.lambda_label);
    for (const auto& [name, term] : {std::pair{"term1", loss.term1}, std::pair{"term2", loss.term2}}) {
      if (!std::isfinite(term.item())) {
        throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                            std::to_string(batch_index) + ": " + name + " = " + std::to_string(term.item()));
      }
    }
    numerics::backward(loss.total);
    numerics::adam_update<double>(state_.adam, tensors_);

    const double weight = static_cast<double>(end - begin);
    loss_sum += weight * loss.total.item();
    term1_sum += weight * loss.term1.item();
    term2_sum += weight * loss.term2.item();
  }

  EpochRecord r;
  r.epoch = epoch;
  const double n = static_cast<double>(train_set.size());
  r.loss = loss_sum / n;
  r.term1 = term1_sum / n;
  r.term2 = term2_sum / n;
  if (val_set && !val_set->empty()) {
    try {
      r.val_micro_auc = roc_auc(predict(*val_set, names_, state_.params, model_), label_matrix(*val_set),
                                Averaging::micro);
    } catch (const MetricsError&) {
      // Validation set with a single class: AUC is undefined, leave the field empty.
    }
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  state_.epochs_completed = epoch;
  state_.log.records.push_back(r);
  return r;
}

TrainState train(const std::vector<EncodedSample>& train_set, const std::vector<EncodedSample>* val_set,
                 const NameEmbeddings& names, const ModelConfig& model, const TrainConfig& train,
                 std::optional<TrainState> resume, const EpochCallback& on_epoch) {
  train.validate();
  if (train_set.empty()) throw TrainingError("training set is empty");
  Trainer trainer(model, train, names, resume ? std::move(*resume) : initial_state(model, train));

  const bool early_stop = train.early_stop_patience && val_set && !val_set->empty();
  std::optional<ModelParams> best;
  double best_auc = -1.0;
  int since_best = 0;
  while (trainer.state().epochs_completed < train.epochs) {
    const auto record = trainer.run_epoch(train_set, val_set);
    if (on_epoch) on_epoch(trainer, record);
    if (!early_stop) continue;
    if (record.val_micro_auc && *record.val_micro_auc > best_auc) {
      best_auc = *record.val_micro_auc;
      best = trainer.state().params.clone();
      since_best = 0;
    } else if (++since_best >= *train.early_stop_patience) {
      break;
    }
  }
  TrainState out = std::move(trainer.state());
  if (best) out.params = std::move(*best);
  return out;
}

Eigen::MatrixXd label_matrix(const std::vector<EncodedSample>& samples) {
  if (samples.empty()) return {};
  Eigen::MatrixXd y(static_cast<Eigen::Index>(samples.size()), samples.front().labels.rows());
  for (std::size_t i = 0; i < samples.size(); ++i) y.row(static_cast<Eigen::Index>(i)) = samples[i].labels.transpose();
  return y;
}

MetricsReport evaluate(const std::vector<EncodedSample>& samples, const NameEmbeddings& names,
                       const ModelParams& params, const ModelConfig& config, double threshold) {
  if (samples.empty()) throw MetricsError("cannot evaluate an empty dataset");
  for (auto& [name, t] : const_cast<ModelParams&>(params).named()) {
    if (!t->check_finite()) throw TrainingError("parameter " + name + " holds non-finite values");
  }
  return compute_metrics(predict(samples, names, params, config), label_matrix(samples), threshold);
}

}  // namespace ldam
