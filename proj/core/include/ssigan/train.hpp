#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "ssigan/dataio.hpp"
#include "ssigan/model.hpp"

namespace ssigan {

struct TrainConfig {
  std::int64_t iterations = 500;
  std::int64_t batch_size = 128;
  double learning_rate = 0.0009;
  double label_smooth_real = 0.9;
  std::uint64_t seed = 0;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::int64_t log_every = 10;
  double unsupervised_weight = 1.0;

  void validate() const;
};

// Standard Adam with bias correction; moments keyed by parameter order.
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<ad::Tensor> params, double lr, double beta1 = 0.5,
                double beta2 = 0.999, double eps = 1e-8);

  void step();
  void zero_grad();
  std::int64_t step_count() const { return step_count_; }

 private:
  std::vector<ad::Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_count_ = 0;
};

// Mean categorical cross-entropy over the batch, one-hot targets.
ad::Tensor supervised_loss(ad::Tape* tape, const ad::Tensor& class_logits,
                           const std::vector<int>& labels);

// Mean binary cross-entropy over all real+fake terms; real target is the
// smoothed value, fake target 0. Probabilities are clamped to
// [1e-7, 1 - 1e-7] before the logs.
ad::Tensor unsupervised_discriminator_loss(ad::Tape* tape,
                                           const ad::Tensor& real_probs,
                                           const ad::Tensor& fake_probs,
                                           double smooth);

// Non-saturating generator loss: mean of -log(fake_prob).
ad::Tensor generator_loss(ad::Tape* tape, const ad::Tensor& fake_probs);

struct TrainLogRow {
  std::int64_t step;
  double d_sup_loss;
  double d_unsup_loss;
  double g_loss;
  double val_accuracy;
};

struct TrainLog {
  std::vector<TrainLogRow> rows;
  void save_csv(const std::string& path) const;
};

struct TrainResult {
  std::unique_ptr<Generator> generator;
  std::unique_ptr<Discriminator> discriminator;
  TrainLog log;
  std::int64_t d_supervised_updates = 0;
  std::int64_t d_unsupervised_updates = 0;
  std::int64_t g_updates = 0;
};

// Copies the given windows into a [N, 100, 60] tensor.
ad::Tensor make_batch(const SpikeWindowSet& data,
                      const std::vector<std::int64_t>& indices);

// Fraction of correctly predicted windows among the given indices.
double accuracy_on(Discriminator& d, const SpikeWindowSet& data,
                   const std::vector<std::int64_t>& indices);

// Semi-supervised adversarial training: per iteration one supervised D
// update on labeled data, one real/fake D update on unlabeled + generated
// data, one G update on fresh fakes.
TrainResult train(const SpikeWindowSet& data, const DatasetSplits& splits,
                  const ModelConfig& model_config,
                  const TrainConfig& train_config);

}  // namespace ssigan
