#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ssigan/eval.hpp"

namespace ssigan {

// Discrete/continuous ranges the search draws from.
struct SearchSpace {
  std::vector<int> noise_dims{64, 100, 128};
  std::vector<int> head_sizes{64, 128, 256};
  std::vector<int> num_heads{2, 4, 8};
  std::vector<int> ff_dims{32, 64, 128};
  std::vector<int> num_blocks{1, 2, 3, 4};
  double dropout_min = 0.1, dropout_max = 0.5;
  double lr_min = 1e-5, lr_max = 1e-3;  // sampled log-uniform
  std::vector<std::int64_t> batch_sizes{64, 128};

  void validate() const;
  bool contains(const struct TrialConfig& config) const;
};

// The subset of knobs the search varies; everything else stays at the
// library defaults.
struct TrialConfig {
  int noise_dim = 128;
  int head_size = 64;
  int num_heads = 4;
  int ff_dim = 128;
  int num_blocks = 2;
  double dropout_rate = 0.29;
  double learning_rate = 0.0009;
  std::int64_t batch_size = 128;

  ModelConfig to_model_config(const ModelConfig& base) const;
  std::string serialize() const;  // key=value lines
  static TrialConfig parse(const std::string& text);
};

enum class TrialStatus { kCompleted, kPruned, kFailed };

const char* trial_status_name(TrialStatus status);

struct TrialResult {
  int index = -1;
  TrialConfig config;
  double val_accuracy = 0.0;
  double seconds = 0.0;
  std::int64_t parameter_count = 0;
  TrialStatus status = TrialStatus::kFailed;
  std::string error;
};

// Uniform draw from the space; once >= 4 trials have completed, with
// probability 0.4 instead copies a top-quartile config and re-samples a
// single field (cheap exploitation, keeps an exploration floor).
TrialConfig sample_config(const SearchSpace& space,
                          const std::vector<TrialResult>& history, Rng& rng);

struct SearchReport {
  std::vector<TrialResult> trials;
  int best_index = -1;  // into trials

  const TrialResult& best() const;
  void save_csv(const std::string& path) const;
};

// Seeded random search: every trial trains on the same split with a reduced
// iteration budget and is scored by validation accuracy. Ties break toward
// the smaller model, then the earlier trial.
SearchReport run_search(const SpikeWindowSet& data, const SplitSpec& split_spec,
                        const SearchSpace& space, int trials,
                        std::int64_t budget_iterations, std::uint64_t seed);

}  // namespace ssigan
