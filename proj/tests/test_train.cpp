#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "ssigan/dataio.hpp"
#include "ssigan/train.hpp"

using namespace ssigan;
using testing::random_tensor;

TEST_CASE("train config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.iterations = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.batch_size = 1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.learning_rate = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.label_smooth_real = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.label_smooth_real = 1.01;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("supervised loss analytic values") {
  // logits heavily favoring the true class
  ad::Tensor confident({2, 3});
  const double conf_vals[] = {20.0, 0.0, 0.0, 0.0, 0.0, 20.0};
  for (int i = 0; i < 6; ++i) confident.data()[i] = conf_vals[i];
  CHECK(supervised_loss(nullptr, confident, {0, 2}).item() < 0.01);

  // uniform logits -> ln 3 regardless of labels
  ad::Tensor uniform({3, 3});
  for (int i = 0; i < 9; ++i) uniform.data()[i] = 0.7;
  CHECK(supervised_loss(nullptr, uniform, {0, 1, 2}).item() ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  CHECK_THROWS_AS(supervised_loss(nullptr, uniform, {0, 1, 3}),
                  std::invalid_argument);
  CHECK_THROWS_AS(supervised_loss(nullptr, uniform, {0, -1, 2}),
                  std::invalid_argument);
}

TEST_CASE("supervised loss matches a scalar-by-scalar evaluation") {
  Rng rng(61);
  const int n = 7;
  ad::Tensor logits = random_tensor({n, 3}, rng, 2.0, false);
  std::vector<int> labels;
  for (int i = 0; i < n; ++i)
    labels.push_back(static_cast<int>(rng.uniform_index(3)));
  double expected = 0.0;
  for (int i = 0; i < n; ++i) {
    double maxv = -1e300;
    for (int c = 0; c < 3; ++c)
      maxv = std::max(maxv, logits.data()[i * 3 + c]);
    double z = 0.0;
    for (int c = 0; c < 3; ++c)
      z += std::exp(logits.data()[i * 3 + c] - maxv);
    expected -= logits.data()[i * 3 + labels[i]] - maxv - std::log(z);
  }
  expected /= n;
  CHECK(supervised_loss(nullptr, logits, labels).item() ==
        doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("unsupervised discriminator loss analytic values") {
  auto probs = [](std::initializer_list<double> vals) {
    ad::Tensor t({static_cast<std::int64_t>(vals.size())});
    std::int64_t i = 0;
    for (double v : vals) t.data()[i++] = v;
    return t;
  };
  // p = 0.5 makes every term ln 2 whatever the target is
  double loss =
      unsupervised_discriminator_loss(nullptr, probs({0.5, 0.5}),
                                      probs({0.5, 0.5}), 0.9)
          .item();
  CHECK(loss == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // real probabilities exactly at the smoothed target sit at the BCE
  // minimum -(0.9 ln 0.9 + 0.1 ln 0.1); near-zero fake probabilities
  // contribute nearly nothing
  const double real_term = -(0.9 * std::log(0.9) + 0.1 * std::log(0.1));
  CHECK(real_term == doctest::Approx(0.3251).epsilon(1e-4));
  loss = unsupervised_discriminator_loss(nullptr, probs({0.9, 0.9, 0.9}),
                                         probs({1e-9, 1e-9, 1e-9}), 0.9)
             .item();
  CHECK(loss == doctest::Approx(real_term / 2.0).epsilon(1e-5));
}

TEST_CASE("unsupervised loss pushes real up and fake down") {
  ad::Tape tape;
  ad::Tensor real({2}, true);
  ad::Tensor fake({2}, true);
  for (int i = 0; i < 2; ++i) {
    real.data()[i] = 0.4;
    fake.data()[i] = 0.6;
  }
  ad::Tensor loss =
      unsupervised_discriminator_loss(&tape, real, fake, 0.9);
  tape.backward(loss);
  for (int i = 0; i < 2; ++i) {
    CHECK(real.node->grad[i] < 0.0);  // increasing real prob lowers the loss
    CHECK(fake.node->grad[i] > 0.0);  // increasing fake prob raises it
  }
}

TEST_CASE("generator loss analytic values and gradient direction") {
  ad::Tensor half({3});
  for (int i = 0; i < 3; ++i) half.data()[i] = 0.5;
  CHECK(generator_loss(nullptr, half).item() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  ad::Tensor good({2});
  good.data()[0] = 1.0 - 1e-9;
  good.data()[1] = 1.0 - 1e-9;
  CHECK(generator_loss(nullptr, good).item() < 1e-5);

  ad::Tape tape;
  ad::Tensor p({2}, true);
  p.data()[0] = 0.3;
  p.data()[1] = 0.7;
  ad::Tensor loss = generator_loss(&tape, p);
  tape.backward(loss);
  for (int i = 0; i < 2; ++i) CHECK(p.node->grad[i] < 0.0);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  Rng rng(62);
  ad::Tensor w = random_tensor({4, 3}, rng);
  std::vector<double> before(w.data(), w.data() + w.size());
  AdamOptimizer opt({w}, 0.01);
  w.node->ensure_grad();
  opt.step();
  for (std::int64_t i = 0; i < w.size(); ++i)
    CHECK(w.data()[i] == before[i]);
  CHECK(opt.step_count() == 1);
}

TEST_CASE("the first adam step moves by the learning rate against the sign") {
  Rng rng(63);
  ad::Tensor w = random_tensor({10}, rng);
  std::vector<double> before(w.data(), w.data() + w.size());
  const double lr = 0.01;
  AdamOptimizer opt({w}, lr, 0.5, 0.999, 1e-8);
  w.node->ensure_grad();
  for (std::int64_t i = 0; i < w.size(); ++i)
    w.node->grad[i] = (i % 2 == 0) ? 0.5 + 0.1 * i : -(0.5 + 0.1 * i);
  opt.step();
  // bias-corrected m-hat = g and v-hat = g^2, so the update is
  // -lr * g / (|g| + eps) = -lr * sign(g) up to eps
  for (std::int64_t i = 0; i < w.size(); ++i) {
    const double g = (i % 2 == 0) ? 0.5 + 0.1 * i : -(0.5 + 0.1 * i);
    CHECK(w.data()[i] ==
          doctest::Approx(before[i] - lr * (g > 0 ? 1.0 : -1.0))
              .epsilon(1e-6));
  }
}

TEST_CASE("adam minimizes a quadratic bowl") {
  Rng rng(64);
  ad::Tensor w = random_tensor({8}, rng, 2.0);
  double f0 = 0.0;
  for (std::int64_t i = 0; i < w.size(); ++i) f0 += w.data()[i] * w.data()[i];
  AdamOptimizer opt({w}, 0.05);
  for (int iter = 0; iter < 200; ++iter) {
    w.node->ensure_grad();
    for (std::int64_t i = 0; i < w.size(); ++i)
      w.node->grad[i] = 2.0 * w.data()[i];
    opt.step();
    opt.zero_grad();
  }
  double f = 0.0;
  for (std::int64_t i = 0; i < w.size(); ++i) f += w.data()[i] * w.data()[i];
  CHECK(f < 0.01 * f0);
  CHECK(opt.step_count() == 200);
}

TEST_CASE("batches copy the selected windows") {
  SpikeWindowSet set = make_synthetic_dataset(6, 2);
  ad::Tensor batch = make_batch(set, {4, 1});
  REQUIRE(batch.shape() == ad::Shape({2, 100, 60}));
  for (std::int64_t j = 0; j < 100 * 60; ++j) {
    CHECK(batch.data()[j] == set.window(4)[j]);
    CHECK(batch.data()[100 * 60 + j] == set.window(1)[j]);
  }
}

namespace {

ModelConfig tiny_model() {
  ModelConfig c;
  c.noise_dim = 16;
  c.head_size = 4;
  c.num_heads = 2;
  c.ff_dim = 8;
  c.num_blocks = 1;
  c.embed_dim = 8;
  c.dropout_rate = 0.2;
  return c;
}

}  // namespace

TEST_CASE("short training runs are reproducible and counted") {
  SpikeWindowSet data = make_synthetic_dataset(120, 9);
  SplitSpec split_spec;
  split_spec.seed = 1;
  DatasetSplits splits = split_dataset(data.count, split_spec);
  TrainConfig tc;
  tc.iterations = 3;
  tc.batch_size = 4;
  tc.learning_rate = 1e-3;
  tc.log_every = 1;
  tc.seed = 5;
  TrainResult a = train(data, splits, tiny_model(), tc);
  TrainResult b = train(data, splits, tiny_model(), tc);

  CHECK(a.d_supervised_updates == 3);
  CHECK(a.d_unsupervised_updates == 3);
  CHECK(a.g_updates == 3);
  REQUIRE(a.log.rows.size() == b.log.rows.size());
  REQUIRE(!a.log.rows.empty());
  std::int64_t prev_step = -1;
  for (std::size_t i = 0; i < a.log.rows.size(); ++i) {
    const TrainLogRow& ra = a.log.rows[i];
    const TrainLogRow& rb = b.log.rows[i];
    CHECK(ra.step == rb.step);
    CHECK(ra.d_sup_loss == rb.d_sup_loss);
    CHECK(ra.d_unsup_loss == rb.d_unsup_loss);
    CHECK(ra.g_loss == rb.g_loss);
    CHECK(ra.val_accuracy == rb.val_accuracy);
    CHECK(std::isfinite(ra.d_sup_loss));
    CHECK(std::isfinite(ra.d_unsup_loss));
    CHECK(std::isfinite(ra.g_loss));
    CHECK(ra.step > prev_step);
    prev_step = ra.step;
  }
  // trained weights are reproducible too
  Rng z_rng(17), dr(18);
  ad::Tensor z = random_tensor({2, 16}, z_rng, 1.0, false);
  ad::Tensor ga = a.generator->forward(nullptr, z, ad::Mode::kInference, dr);
  ad::Tensor gb = b.generator->forward(nullptr, z, ad::Mode::kInference, dr);
  for (std::int64_t i = 0; i < ga.size(); ++i)
    CHECK(ga.data()[i] == gb.data()[i]);

  // a different training seed changes the trajectory
  tc.seed = 6;
  TrainResult c = train(data, splits, tiny_model(), tc);
  CHECK(c.log.rows.back().g_loss != a.log.rows.back().g_loss);
}

TEST_CASE("training rejects empty splits") {
  SpikeWindowSet data = make_synthetic_dataset(30, 3);
  SplitSpec split_spec;
  DatasetSplits splits;  // everything empty
  TrainConfig tc;
  tc.iterations = 1;
  tc.batch_size = 2;
  CHECK_THROWS_AS(train(data, splits, tiny_model(), tc),
                  std::invalid_argument);
}
