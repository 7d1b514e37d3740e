#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "ssigan/eval.hpp"
#include "ssigan/rng.hpp"

using namespace ssigan;

namespace {

ConfusionMatrix from_rows(const std::int64_t rows[3][3]) {
  ConfusionMatrix cm;
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p) cm.counts[t][p] = rows[t][p];
  return cm;
}

}  // namespace

TEST_CASE("a diagonal confusion matrix scores perfectly") {
  const std::int64_t rows[3][3] = {{4, 0, 0}, {0, 7, 0}, {0, 0, 2}};
  MetricsReport m = compute_metrics(from_rows(rows));
  CHECK(m.accuracy == 1.0);
  CHECK(m.macro_precision == 1.0);
  CHECK(m.macro_recall == 1.0);
  CHECK(m.macro_f1 == 1.0);
  for (int c = 0; c < 3; ++c) {
    CHECK(m.precision[c] == 1.0);
    CHECK(m.recall[c] == 1.0);
    CHECK(m.f1[c] == 1.0);
    CHECK_FALSE(m.degenerate[c]);
  }
}

TEST_CASE("metrics match the hand-computed oracle") {
  const std::int64_t rows[3][3] = {{2, 1, 0}, {0, 3, 0}, {1, 0, 3}};
  MetricsReport m = compute_metrics(from_rows(rows));
  CHECK(m.accuracy == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.precision[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.precision[1] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.precision[2] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.recall[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(m.recall[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(m.recall[2] == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(m.f1[1] == doctest::Approx(6.0 / 7.0).epsilon(1e-12));
  CHECK(m.macro_precision == doctest::Approx(0.8056).epsilon(1e-4));
  CHECK(m.macro_recall == doctest::Approx(0.8056).epsilon(1e-4));
  CHECK(m.macro_f1 == doctest::Approx(0.7937).epsilon(1e-4));
}

TEST_CASE("uniform random predictions sit at chance level") {
  Rng rng(71);
  ConfusionMatrix cm;
  for (int i = 0; i < 30000; ++i)
    cm.add(static_cast<int>(rng.uniform_index(3)),
           static_cast<int>(rng.uniform_index(3)));
  MetricsReport m = compute_metrics(cm);
  CHECK(m.accuracy == doctest::Approx(1.0 / 3.0).epsilon(0.05));
}

TEST_CASE("an empty matrix cannot be scored") {
  ConfusionMatrix cm;
  CHECK(cm.total() == 0);
  CHECK_THROWS_AS(compute_metrics(cm), std::invalid_argument);
}

TEST_CASE("zero-support classes contribute zero and are flagged") {
  const std::int64_t rows[3][3] = {{5, 0, 0}, {0, 0, 0}, {0, 0, 5}};
  MetricsReport m = compute_metrics(from_rows(rows));
  CHECK(m.accuracy == 1.0);
  CHECK(m.degenerate[1]);
  CHECK(m.recall[1] == 0.0);
  CHECK(m.precision[1] == 0.0);
  CHECK(m.f1[1] == 0.0);
  CHECK(m.macro_recall == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK_FALSE(m.degenerate[0]);
  CHECK_FALSE(m.degenerate[2]);
}

TEST_CASE("macro metrics are invariant under class relabeling") {
  Rng rng(72);
  ConfusionMatrix cm;
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p)
      cm.counts[t][p] = static_cast<std::int64_t>(rng.uniform_index(20)) + 1;
  MetricsReport base = compute_metrics(cm);
  const int perms[5][3] = {
      {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const int* perm : perms) {
    ConfusionMatrix permuted;
    for (int t = 0; t < 3; ++t)
      for (int p = 0; p < 3; ++p)
        permuted.counts[perm[t]][perm[p]] = cm.counts[t][p];
    MetricsReport m = compute_metrics(permuted);
    CHECK(m.accuracy == doctest::Approx(base.accuracy).epsilon(1e-12));
    CHECK(m.macro_precision ==
          doctest::Approx(base.macro_precision).epsilon(1e-12));
    CHECK(m.macro_recall == doctest::Approx(base.macro_recall).epsilon(1e-12));
    CHECK(m.macro_f1 == doctest::Approx(base.macro_f1).epsilon(1e-12));
  }
}

TEST_CASE("balanced evaluations equate accuracy and macro recall") {
  Rng rng(73);
  for (int trial = 0; trial < 20; ++trial) {
    ConfusionMatrix cm;
    const std::int64_t row_total = 50;
    for (int t = 0; t < 3; ++t) {
      std::int64_t a = rng.uniform_index(row_total + 1);
      std::int64_t b = rng.uniform_index(row_total + 1 - a);
      cm.counts[t][0] = a;
      cm.counts[t][1] = b;
      cm.counts[t][2] = row_total - a - b;
    }
    MetricsReport m = compute_metrics(cm);
    CHECK(m.accuracy == doctest::Approx(m.macro_recall).epsilon(1e-12));
  }
}

TEST_CASE("evaluate builds the matrix from discriminator predictions") {
  ModelConfig mc;
  mc.noise_dim = 16;
  mc.head_size = 4;
  mc.num_heads = 2;
  mc.ff_dim = 8;
  mc.num_blocks = 1;
  mc.embed_dim = 8;
  mc.dropout_rate = 0.0;
  Discriminator d(mc, 81);
  SpikeWindowSet data = make_synthetic_dataset(12, 4);
  std::vector<std::int64_t> indices;
  for (std::int64_t i = 0; i < data.count; ++i) indices.push_back(i);
  ConfusionMatrix cm = evaluate(d, data, indices);
  CHECK(cm.total() == data.count);
  // cross-check against direct prediction
  ConfusionMatrix expected;
  ad::Tensor batch = make_batch(data, indices);
  std::vector<int> pred = d.predict(batch);
  for (std::size_t i = 0; i < indices.size(); ++i)
    expected.add(data.labels[indices[i]], pred[i]);
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p)
      CHECK(cm.counts[t][p] == expected.counts[t][p]);
  // unlabeled windows cannot be evaluated
  SpikeWindowSet unlabeled = data;
  unlabeled.labels.assign(unlabeled.count, -1);
  CHECK_THROWS_AS(evaluate(d, unlabeled, indices), std::invalid_argument);
}

TEST_CASE("monte carlo cross-validation is reproducible per base seed") {
  SpikeWindowSet data = make_synthetic_dataset(120, 14);
  SplitSpec split_spec;
  ModelConfig mc;
  mc.noise_dim = 16;
  mc.head_size = 4;
  mc.num_heads = 2;
  mc.ff_dim = 8;
  mc.num_blocks = 1;
  mc.embed_dim = 8;
  mc.dropout_rate = 0.2;
  TrainConfig tc;
  tc.iterations = 2;
  tc.batch_size = 4;
  tc.log_every = 2;
  MonteCarloReport a = monte_carlo_cv(data, split_spec, mc, tc, 2, 7);
  MonteCarloReport b = monte_carlo_cv(data, split_spec, mc, tc, 2, 7);
  REQUIRE(a.runs.size() == 2);
  REQUIRE(b.runs.size() == 2);
  for (int r = 0; r < 2; ++r) {
    CHECK(a.runs[r].accuracy == b.runs[r].accuracy);
    CHECK(a.runs[r].macro_f1 == b.runs[r].macro_f1);
  }
  CHECK(a.mean.accuracy == b.mean.accuracy);
  CHECK(a.stddev.accuracy == b.stddev.accuracy);

  // aggregate sanity: std >= 0, mean inside the run envelope
  CHECK(a.stddev.accuracy >= 0.0);
  const double lo = std::min(a.runs[0].accuracy, a.runs[1].accuracy);
  const double hi = std::max(a.runs[0].accuracy, a.runs[1].accuracy);
  CHECK(a.mean.accuracy >= lo - 1e-12);
  CHECK(a.mean.accuracy <= hi + 1e-12);
  // sample std of two values
  CHECK(a.stddev.accuracy ==
        doctest::Approx(std::abs(a.runs[0].accuracy - a.runs[1].accuracy) /
                        std::sqrt(2.0))
            .epsilon(1e-12));

  CHECK_THROWS_AS(monte_carlo_cv(data, split_spec, mc, tc, 1, 7),
                  std::invalid_argument);

  const std::string path =
      (std::filesystem::temp_directory_path() / "ssigan_test_mc.csv").string();
  a.save_csv(path);
  CHECK(std::filesystem::file_size(path) > 0);
  std::remove(path.c_str());
  CHECK(a.format_table().find("+-") != std::string::npos);
}
