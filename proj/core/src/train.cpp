#include "ssigan/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#ifdef __GLIBC__
#include <malloc.h>
#endif

namespace ssigan {

using ad::Mode;
using ad::Tape;
using ad::Tensor;

void TrainConfig::validate() const {
  if (iterations < 1) throw std::invalid_argument("train config: iterations < 1");
  if (batch_size < 2)
    throw std::invalid_argument("train config: batch_size < 2 (batch norm)");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("train config: non-positive learning rate");
  if (label_smooth_real <= 0.0 || label_smooth_real > 1.0)
    throw std::invalid_argument("train config: label_smooth_real outside (0,1]");
  if (log_every < 1) throw std::invalid_argument("train config: log_every < 1");
}

AdamOptimizer::AdamOptimizer(std::vector<Tensor> params, double lr,
                             double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void AdamOptimizer::step() {
  ++step_count_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (p.node->grad.empty()) continue;  // no gradient ever reached this one
    if (p.node->grad.size() != p.node->values.size())
      throw std::invalid_argument("adam: gradient shape mismatch");
    double* m = m_[i].data();
    double* v = v_[i].data();
    const double* g = p.grad();
    double* w = p.data();
    for (std::int64_t j = 0; j < p.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

void AdamOptimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

// --------------------------------------------------------------------------

Tensor supervised_loss(Tape* tape, const Tensor& class_logits,
                       const std::vector<int>& labels) {
  const std::int64_t b = class_logits.dim(0);
  if (class_logits.ndim() != 2 || class_logits.dim(1) != 3 ||
      b != static_cast<std::int64_t>(labels.size()))
    throw std::invalid_argument("supervised_loss: logits " +
                                ad::shape_to_string(class_logits.shape()) +
                                " vs " + std::to_string(labels.size()) +
                                " labels");
  Tensor targets({b, 3});
  for (std::int64_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || labels[i] > 2)
      throw std::invalid_argument("supervised_loss: label " +
                                  std::to_string(labels[i]) +
                                  " outside {0,1,2}");
    targets.data()[i * 3 + labels[i]] = 1.0;
  }
  return ad::softmax_cross_entropy(tape, class_logits, targets);
}

namespace {

constexpr double kProbFloor = 1e-7;

void check_probs(const Tensor& p, const char* what) {
  for (std::int64_t i = 0; i < p.size(); ++i) {
    const double v = p.data()[i];
    if (!(v > 0.0) || !(v < 1.0))
      throw std::domain_error(std::string(what) + ": probability " +
                              std::to_string(v) + " outside (0,1)");
  }
}

// -sum(target*log p + (1-target)*log(1-p)) over all elements, not yet
// normalized.
Tensor bce_sum(Tape* tape, const Tensor& probs, double target) {
  Tensor p = ad::clamp(tape, probs, kProbFloor, 1.0 - kProbFloor);
  Tensor one_minus = ad::add_scalar(tape, ad::scale(tape, p, -1.0), 1.0);
  Tensor loss = ad::scale(tape, ad::log_op(tape, one_minus), -(1.0 - target));
  if (target > 0.0)
    loss = ad::add(tape, loss, ad::scale(tape, ad::log_op(tape, p), -target));
  return ad::reduce_sum(tape, loss);
}

}  // namespace

Tensor unsupervised_discriminator_loss(Tape* tape, const Tensor& real_probs,
                                       const Tensor& fake_probs,
                                       double smooth) {
  check_probs(real_probs, "unsupervised loss (real)");
  check_probs(fake_probs, "unsupervised loss (fake)");
  Tensor total = ad::add(tape, bce_sum(tape, real_probs, smooth),
                         bce_sum(tape, fake_probs, 0.0));
  return ad::scale(tape, total,
                   1.0 / (real_probs.size() + fake_probs.size()));
}

Tensor generator_loss(Tape* tape, const Tensor& fake_probs) {
  check_probs(fake_probs, "generator loss");
  Tensor p = ad::clamp(tape, fake_probs, kProbFloor, 1.0 - kProbFloor);
  return ad::scale(tape, ad::reduce_mean(tape, ad::log_op(tape, p)), -1.0);
}

// --------------------------------------------------------------------------

void TrainLog::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << "step,d_sup_loss,d_unsup_loss,g_loss,val_accuracy\n";
  os.precision(10);
  for (const TrainLogRow& r : rows)
    os << r.step << ',' << r.d_sup_loss << ',' << r.d_unsup_loss << ','
       << r.g_loss << ',' << r.val_accuracy << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor make_batch(const SpikeWindowSet& data,
                  const std::vector<std::int64_t>& indices) {
  const std::int64_t wl = data.window_len, ch = data.channels;
  Tensor out({static_cast<std::int64_t>(indices.size()), wl, ch});
  for (std::size_t i = 0; i < indices.size(); ++i)
    std::memcpy(out.data() + i * wl * ch, data.window(indices[i]),
                sizeof(double) * wl * ch);
  return out;
}

double accuracy_on(Discriminator& d, const SpikeWindowSet& data,
                   const std::vector<std::int64_t>& indices) {
  if (indices.empty())
    throw std::invalid_argument("accuracy_on: empty index set");
  constexpr std::int64_t kEvalBatch = 128;
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < indices.size(); start += kEvalBatch) {
    const std::size_t end = std::min(indices.size(), start + kEvalBatch);
    std::vector<std::int64_t> chunk(indices.begin() + start,
                                    indices.begin() + end);
    Tensor x = make_batch(data, chunk);
    std::vector<int> pred = d.predict(x);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const int truth = data.labels.empty() ? -1 : data.labels[chunk[i]];
      if (truth < 0)
        throw std::invalid_argument("accuracy_on: unlabeled window " +
                                    std::to_string(chunk[i]));
      if (pred[i] == truth) ++correct;
    }
  }
  return static_cast<double>(correct) / indices.size();
}

TrainResult train(const SpikeWindowSet& data, const DatasetSplits& splits,
                  const ModelConfig& model_config,
                  const TrainConfig& train_config) {
#ifdef __GLIBC__
  // the tape allocates and frees many multi-MB buffers per iteration; keep
  // them on the heap instead of round-tripping through mmap/munmap
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  model_config.validate();
  train_config.validate();
  if (splits.labeled_train.empty() || splits.unlabeled_train.empty() ||
      splits.validation.empty())
    throw std::invalid_argument("train: empty split partition");
  if (data.labels.empty())
    throw std::invalid_argument("train: dataset has no labels at all");

  const std::uint64_t seed = train_config.seed;
  TrainResult result;
  result.generator =
      std::make_unique<Generator>(model_config, Rng::derive(seed, 100));
  result.discriminator =
      std::make_unique<Discriminator>(model_config, Rng::derive(seed, 101));
  Generator& gen = *result.generator;
  Discriminator& dis = *result.discriminator;

  Rng dropout_rng(Rng::derive(seed, 102));
  Rng z_rng(Rng::derive(seed, 103));
  Rng batch_rng(Rng::derive(seed, 104));

  AdamOptimizer opt_d(dis.parameters(), train_config.learning_rate,
                      train_config.adam_beta1, train_config.adam_beta2,
                      train_config.adam_eps);
  AdamOptimizer opt_g(gen.parameters(), train_config.learning_rate,
                      train_config.adam_beta1, train_config.adam_beta2,
                      train_config.adam_eps);

  const std::int64_t bs = train_config.batch_size;
  auto sample_indices = [&](const std::vector<std::int64_t>& pool) {
    std::vector<std::int64_t> out(bs);
    for (std::int64_t i = 0; i < bs; ++i)
      out[i] = pool[batch_rng.uniform_index(pool.size())];
    return out;
  };
  auto sample_noise = [&]() {
    Tensor z({bs, model_config.noise_dim});
    for (std::int64_t i = 0; i < z.size(); ++i) z.data()[i] = z_rng.normal();
    return z;
  };
  auto check_finite = [](double v, const char* what, std::int64_t step) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("divergence: ") + what +
                               " non-finite at step " + std::to_string(step));
  };

  for (std::int64_t step = 1; step <= train_config.iterations; ++step) {
    // (a) supervised discriminator update on the labeled slice
    double d_sup;
    {
      Tape tape;
      std::vector<std::int64_t> idx = sample_indices(splits.labeled_train);
      Tensor x = make_batch(data, idx);
      std::vector<int> labels(idx.size());
      for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[idx[i]];
      Tensor logits = dis.forward(&tape, x, Mode::kTraining, dropout_rng);
      Tensor loss = supervised_loss(&tape, logits, labels);
      d_sup = loss.item();
      check_finite(d_sup, "supervised loss", step);
      tape.backward(loss);
      opt_d.step();
      opt_d.zero_grad();
      ++result.d_supervised_updates;
    }

    // (b) real/fake discriminator update on unlabeled + generated data
    double d_unsup;
    {
      Tensor z = sample_noise();
      Tensor fake = gen.forward(nullptr, z, Mode::kTraining, dropout_rng);

      Tape tape;
      Tensor x_real = make_batch(data, sample_indices(splits.unlabeled_train));
      Tensor real_logits = dis.forward(&tape, x_real, Mode::kTraining,
                                       dropout_rng);
      Tensor fake_logits = dis.forward(&tape, fake, Mode::kTraining,
                                       dropout_rng);
      Tensor loss = unsupervised_discriminator_loss(
          &tape, realfake_probability(&tape, real_logits),
          realfake_probability(&tape, fake_logits),
          train_config.label_smooth_real);
      if (train_config.unsupervised_weight != 1.0)
        loss = ad::scale(&tape, loss, train_config.unsupervised_weight);
      d_unsup = loss.item();
      check_finite(d_unsup, "unsupervised loss", step);
      tape.backward(loss);
      opt_d.step();
      opt_d.zero_grad();
      ++result.d_unsupervised_updates;
    }

    // (c) generator update on fresh fakes; discriminator is not stepped
    double g_loss_v;
    {
      Tape tape;
      Tensor z = sample_noise();
      Tensor fake = gen.forward(&tape, z, Mode::kTraining, dropout_rng);
      Tensor fake_logits = dis.forward(&tape, fake, Mode::kTraining,
                                       dropout_rng);
      Tensor loss =
          generator_loss(&tape, realfake_probability(&tape, fake_logits));
      g_loss_v = loss.item();
      check_finite(g_loss_v, "generator loss", step);
      tape.backward(loss);
      opt_g.step();
      opt_g.zero_grad();
      opt_d.zero_grad();  // discard adjoints that flowed through D
      ++result.g_updates;
    }

    if (step % train_config.log_every == 0 ||
        step == train_config.iterations) {
      const double val_acc = accuracy_on(dis, data, splits.validation);
      result.log.rows.push_back({step, d_sup, d_unsup, g_loss_v, val_acc});
    }
  }
  return result;
}

}  // namespace ssigan
