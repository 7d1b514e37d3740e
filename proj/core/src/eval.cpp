#include "ssigan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssigan {

std::int64_t ConfusionMatrix::total() const {
  std::int64_t n = 0;
  for (const auto& row : counts)
    for (auto v : row) n += v;
  return n;
}

MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  const std::int64_t n = cm.total();
  if (n == 0)
    throw std::invalid_argument("compute_metrics: empty confusion matrix");
  MetricsReport r;
  std::int64_t trace = 0;
  for (int c = 0; c < 3; ++c) trace += cm.counts[c][c];
  r.accuracy = static_cast<double>(trace) / n;
  for (int c = 0; c < 3; ++c) {
    std::int64_t tp = cm.counts[c][c], fp = 0, fn = 0;
    for (int o = 0; o < 3; ++o) {
      if (o == c) continue;
      fp += cm.counts[o][c];
      fn += cm.counts[c][o];
    }
    const std::int64_t pred = tp + fp, support = tp + fn;
    if (pred == 0 || support == 0) r.degenerate[c] = true;
    r.precision[c] = pred == 0 ? 0.0 : static_cast<double>(tp) / pred;
    r.recall[c] = support == 0 ? 0.0 : static_cast<double>(tp) / support;
    r.f1[c] = (r.precision[c] + r.recall[c]) == 0.0
                  ? 0.0
                  : 2.0 * r.precision[c] * r.recall[c] /
                        (r.precision[c] + r.recall[c]);
    r.macro_precision += r.precision[c] / 3.0;
    r.macro_recall += r.recall[c] / 3.0;
    r.macro_f1 += r.f1[c] / 3.0;
  }
  return r;
}

ConfusionMatrix evaluate(Discriminator& d, const SpikeWindowSet& data,
                         const std::vector<std::int64_t>& indices) {
  if (indices.empty()) throw std::invalid_argument("evaluate: empty index set");
  ConfusionMatrix cm;
  constexpr std::size_t kBatch = 128;
  for (std::size_t start = 0; start < indices.size(); start += kBatch) {
    const std::size_t end = std::min(indices.size(), start + kBatch);
    std::vector<std::int64_t> chunk(indices.begin() + start,
                                    indices.begin() + end);
    ad::Tensor x = make_batch(data, chunk);
    std::vector<int> pred = d.predict(x);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int truth = data.labels.empty() ? -1 : data.labels[chunk[i]];
      if (truth < 0)
        throw std::invalid_argument("evaluate: unlabeled window " +
                                    std::to_string(chunk[i]));
      cm.add(truth, pred[i]);
    }
  }
  return cm;
}

namespace {

std::vector<double> flatten(const MetricsReport& r) {
  std::vector<double> v{r.accuracy, r.macro_precision, r.macro_recall,
                        r.macro_f1};
  for (int c = 0; c < 3; ++c) {
    v.push_back(r.precision[c]);
    v.push_back(r.recall[c]);
    v.push_back(r.f1[c]);
  }
  return v;
}

MetricsReport unflatten(const std::vector<double>& v) {
  MetricsReport r;
  r.accuracy = v[0];
  r.macro_precision = v[1];
  r.macro_recall = v[2];
  r.macro_f1 = v[3];
  for (int c = 0; c < 3; ++c) {
    r.precision[c] = v[4 + c * 3];
    r.recall[c] = v[5 + c * 3];
    r.f1[c] = v[6 + c * 3];
  }
  return r;
}

}  // namespace

void MonteCarloReport::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(10);
  os << "run,accuracy,macro_precision,macro_recall,macro_f1\n";
  for (std::size_t i = 0; i < runs.size(); ++i)
    os << i << ',' << runs[i].accuracy << ',' << runs[i].macro_precision << ','
       << runs[i].macro_recall << ',' << runs[i].macro_f1 << '\n';
  os << "mean," << mean.accuracy << ',' << mean.macro_precision << ','
     << mean.macro_recall << ',' << mean.macro_f1 << '\n';
  os << "std," << stddev.accuracy << ',' << stddev.macro_precision << ','
     << stddev.macro_recall << ',' << stddev.macro_f1 << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

std::string MonteCarloReport::format_table() const {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed;
  os << "Metric      Accuracy    Precision   Recall      F1-Score\n";
  auto pct = [](double v) { return 100.0 * v; };
  for (std::size_t i = 0; i < runs.size(); ++i) {
    os << "run " << i << "       " << pct(runs[i].accuracy) << "       "
       << pct(runs[i].macro_precision) << "       " << pct(runs[i].macro_recall)
       << "       " << pct(runs[i].macro_f1) << "\n";
  }
  os << "mean +- std " << pct(mean.accuracy) << " +- " << pct(stddev.accuracy)
     << "  " << pct(mean.macro_precision) << " +- "
     << pct(stddev.macro_precision) << "  " << pct(mean.macro_recall)
     << " +- " << pct(stddev.macro_recall) << "  " << pct(mean.macro_f1)
     << " +- " << pct(stddev.macro_f1) << "\n";
  return os.str();
}

MonteCarloReport monte_carlo_cv(const SpikeWindowSet& data,
                                const SplitSpec& split_spec,
                                const ModelConfig& model_config,
                                const TrainConfig& train_config, int runs,
                                std::uint64_t base_seed) {
  if (runs < 2) throw std::invalid_argument("monte_carlo_cv: runs < 2");
  MonteCarloReport report;
  for (int r = 0; r < runs; ++r) {
    const std::uint64_t run_seed = Rng::derive(base_seed, r);
    SplitSpec spec = split_spec;
    spec.seed = run_seed;
    TrainConfig tc = train_config;
    tc.seed = run_seed;
    try {
      DatasetSplits splits = split_dataset(data.count, spec);
      TrainResult result = train(data, splits, model_config, tc);
      report.runs.push_back(
          compute_metrics(evaluate(*result.discriminator, data, splits.test)));
    } catch (const std::exception& e) {
      throw std::runtime_error("monte carlo run " + std::to_string(r) +
                               " failed: " + e.what());
    }
  }
  const std::size_t k = flatten(report.runs[0]).size();
  std::vector<double> mean(k, 0.0), sq(k, 0.0);
  for (const MetricsReport& r : report.runs) {
    const std::vector<double> v = flatten(r);
    for (std::size_t i = 0; i < k; ++i) mean[i] += v[i];
  }
  for (std::size_t i = 0; i < k; ++i) mean[i] /= runs;
  for (const MetricsReport& r : report.runs) {
    const std::vector<double> v = flatten(r);
    for (std::size_t i = 0; i < k; ++i)
      sq[i] += (v[i] - mean[i]) * (v[i] - mean[i]);
  }
  std::vector<double> sd(k);
  for (std::size_t i = 0; i < k; ++i) sd[i] = std::sqrt(sq[i] / (runs - 1));
  report.mean = unflatten(mean);
  report.stddev = unflatten(sd);
  return report;
}

}  // namespace ssigan
