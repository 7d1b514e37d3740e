#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssigan/train.hpp"

namespace ssigan {

// rows = true class, columns = predicted class
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, 3>, 3> counts{};

  void add(int truth, int predicted) { ++counts[truth][predicted]; }
  std::int64_t total() const;
};

struct MetricsReport {
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  std::array<double, 3> precision{}, recall{}, f1{};
  // classes that had zero support (or zero predictions) and contributed 0
  std::array<bool, 3> degenerate{};
};

MetricsReport compute_metrics(const ConfusionMatrix& cm);

ConfusionMatrix evaluate(Discriminator& d, const SpikeWindowSet& data,
                         const std::vector<std::int64_t>& indices);

struct MonteCarloReport {
  std::vector<MetricsReport> runs;
  MetricsReport mean;
  MetricsReport stddev;  // sample std, n-1 denominator

  void save_csv(const std::string& path) const;
  std::string format_table() const;  // metric columns, mean +- std rows
};

// Five-run (by default) Monte Carlo cross-validation: every run re-splits,
// re-initializes and re-trains with a seed derived from base_seed.
MonteCarloReport monte_carlo_cv(const SpikeWindowSet& data,
                                const SplitSpec& split_spec,
                                const ModelConfig& model_config,
                                const TrainConfig& train_config, int runs,
                                std::uint64_t base_seed);

}  // namespace ssigan
