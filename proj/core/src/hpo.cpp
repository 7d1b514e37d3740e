#include "ssigan/hpo.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssigan {

namespace {

void require_nonempty(const std::vector<int>& v, const char* name) {
  if (v.empty())
    throw std::invalid_argument(std::string("search space: empty ") + name);
}

bool holds(const std::vector<int>& v, int x) {
  return std::find(v.begin(), v.end(), x) != v.end();
}

}  // namespace

void SearchSpace::validate() const {
  require_nonempty(noise_dims, "noise_dims");
  require_nonempty(head_sizes, "head_sizes");
  require_nonempty(num_heads, "num_heads");
  require_nonempty(ff_dims, "ff_dims");
  require_nonempty(num_blocks, "num_blocks");
  if (batch_sizes.empty())
    throw std::invalid_argument("search space: empty batch_sizes");
  if (!(dropout_min > 0.0) || !(dropout_max >= dropout_min))
    throw std::invalid_argument("search space: bad dropout range");
  if (!(lr_min > 0.0) || !(lr_max >= lr_min))
    throw std::invalid_argument("search space: bad learning rate range");
}

bool SearchSpace::contains(const TrialConfig& c) const {
  return holds(noise_dims, c.noise_dim) && holds(head_sizes, c.head_size) &&
         holds(num_heads, c.num_heads) && holds(ff_dims, c.ff_dim) &&
         holds(num_blocks, c.num_blocks) &&
         c.dropout_rate >= dropout_min && c.dropout_rate <= dropout_max &&
         c.learning_rate >= lr_min && c.learning_rate <= lr_max &&
         std::find(batch_sizes.begin(), batch_sizes.end(), c.batch_size) !=
             batch_sizes.end();
}

ModelConfig TrialConfig::to_model_config(const ModelConfig& base) const {
  ModelConfig m = base;
  m.noise_dim = noise_dim;
  m.head_size = head_size;
  m.num_heads = num_heads;
  m.ff_dim = ff_dim;
  m.num_blocks = num_blocks;
  m.dropout_rate = dropout_rate;
  return m;
}

std::string TrialConfig::serialize() const {
  std::ostringstream os;
  os.precision(17);
  os << "noise_dim=" << noise_dim << '\n'
     << "head_size=" << head_size << '\n'
     << "num_heads=" << num_heads << '\n'
     << "ff_dim=" << ff_dim << '\n'
     << "num_blocks=" << num_blocks << '\n'
     << "dropout_rate=" << dropout_rate << '\n'
     << "learning_rate=" << learning_rate << '\n'
     << "batch_size=" << batch_size << '\n';
  return os.str();
}

TrialConfig TrialConfig::parse(const std::string& text) {
  TrialConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("trial config: bad line '" + line + "'");
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    try {
      if (key == "noise_dim") c.noise_dim = std::stoi(val);
      else if (key == "head_size") c.head_size = std::stoi(val);
      else if (key == "num_heads") c.num_heads = std::stoi(val);
      else if (key == "ff_dim") c.ff_dim = std::stoi(val);
      else if (key == "num_blocks") c.num_blocks = std::stoi(val);
      else if (key == "dropout_rate") c.dropout_rate = std::stod(val);
      else if (key == "learning_rate") c.learning_rate = std::stod(val);
      else if (key == "batch_size") c.batch_size = std::stoll(val);
      else throw std::invalid_argument("trial config: unknown key '" + key + "'");
    } catch (const std::invalid_argument&) {
      throw;
    } catch (const std::exception&) {
      throw std::invalid_argument("trial config: bad value for " + key);
    }
  }
  return c;
}

const char* trial_status_name(TrialStatus status) {
  switch (status) {
    case TrialStatus::kCompleted: return "completed";
    case TrialStatus::kPruned: return "pruned";
    case TrialStatus::kFailed: return "failed";
  }
  throw std::logic_error("bad trial status");
}

namespace {

int pick(const std::vector<int>& v, Rng& rng) {
  return v[rng.uniform_index(v.size())];
}

TrialConfig uniform_draw(const SearchSpace& s, Rng& rng) {
  TrialConfig c;
  c.noise_dim = pick(s.noise_dims, rng);
  c.head_size = pick(s.head_sizes, rng);
  c.num_heads = pick(s.num_heads, rng);
  c.ff_dim = pick(s.ff_dims, rng);
  c.num_blocks = pick(s.num_blocks, rng);
  c.dropout_rate = s.dropout_min + (s.dropout_max - s.dropout_min) * rng.uniform();
  c.learning_rate =
      std::exp(std::log(s.lr_min) +
               (std::log(s.lr_max) - std::log(s.lr_min)) * rng.uniform());
  c.batch_size = s.batch_sizes[rng.uniform_index(s.batch_sizes.size())];
  return c;
}

}  // namespace

TrialConfig sample_config(const SearchSpace& space,
                          const std::vector<TrialResult>& history, Rng& rng) {
  space.validate();
  std::vector<const TrialResult*> done;
  for (const TrialResult& t : history)
    if (t.status == TrialStatus::kCompleted) done.push_back(&t);

  constexpr std::size_t kMinHistory = 4;
  constexpr double kExploitProb = 0.4;
  if (done.size() < kMinHistory || rng.uniform() >= kExploitProb)
    return uniform_draw(space, rng);

  // exploit: copy a random top-quartile config and resample one field
  std::sort(done.begin(), done.end(),
            [](const TrialResult* a, const TrialResult* b) {
              return a->val_accuracy > b->val_accuracy;
            });
  const std::size_t quartile = std::max<std::size_t>(1, done.size() / 4);
  TrialConfig c = done[rng.uniform_index(quartile)]->config;
  const TrialConfig fresh = uniform_draw(space, rng);
  switch (rng.uniform_index(8)) {
    case 0: c.noise_dim = fresh.noise_dim; break;
    case 1: c.head_size = fresh.head_size; break;
    case 2: c.num_heads = fresh.num_heads; break;
    case 3: c.ff_dim = fresh.ff_dim; break;
    case 4: c.num_blocks = fresh.num_blocks; break;
    case 5: c.dropout_rate = fresh.dropout_rate; break;
    case 6: c.learning_rate = fresh.learning_rate; break;
    case 7: c.batch_size = fresh.batch_size; break;
  }
  return c;
}

const TrialResult& SearchReport::best() const {
  if (best_index < 0 || best_index >= static_cast<int>(trials.size()))
    throw std::logic_error("search report has no best trial");
  return trials[best_index];
}

void SearchReport::save_csv(const std::string& path) const {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os.precision(10);
  os << "trial,noise_dim,head_size,num_heads,ff_dim,num_blocks,dropout_rate,"
        "learning_rate,batch_size,val_accuracy,status,seconds\n";
  for (const TrialResult& t : trials) {
    const TrialConfig& c = t.config;
    os << t.index << ',' << c.noise_dim << ',' << c.head_size << ','
       << c.num_heads << ',' << c.ff_dim << ',' << c.num_blocks << ','
       << c.dropout_rate << ',' << c.learning_rate << ',' << c.batch_size
       << ',' << t.val_accuracy << ',' << trial_status_name(t.status) << ','
       << t.seconds << '\n';
  }
  if (!os) throw std::runtime_error("write failed: " + path);
}

SearchReport run_search(const SpikeWindowSet& data, const SplitSpec& split_spec,
                        const SearchSpace& space, int trials,
                        std::int64_t budget_iterations, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("run_search: trials < 1");
  if (budget_iterations < 1)
    throw std::invalid_argument("run_search: budget_iterations < 1");
  space.validate();

  // one split shared by every trial so scores are comparable
  const DatasetSplits splits = split_dataset(data.count, split_spec);
  const ModelConfig base;  // defaults for the knobs the search does not touch

  SearchReport report;
  Rng sampler(Rng::derive(seed, 0));
  for (int t = 0; t < trials; ++t) {
    TrialResult result;
    result.index = t;
    result.config = sample_config(space, report.trials, sampler);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const ModelConfig model_config =
          result.config.to_model_config(base);
      model_config.validate();
      TrainConfig tc;
      tc.iterations = budget_iterations;
      tc.batch_size = result.config.batch_size;
      tc.learning_rate = result.config.learning_rate;
      tc.seed = Rng::derive(seed, 1000 + t);
      tc.log_every = budget_iterations;  // quiet trials
      TrainResult trained = train(data, splits, model_config, tc);
      result.parameter_count = trained.discriminator->parameter_count() +
                               trained.generator->parameter_count();
      result.val_accuracy =
          accuracy_on(*trained.discriminator, data, splits.validation);
      if (!std::isfinite(result.val_accuracy) || result.val_accuracy < 0.0 ||
          result.val_accuracy > 1.0)
        throw std::runtime_error("non-finite validation accuracy");
      result.status = TrialStatus::kCompleted;
    } catch (const std::exception& e) {
      result.status = TrialStatus::kFailed;
      result.error = e.what();
      result.val_accuracy = 0.0;
    }
    result.seconds = std::chrono::duration<double>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
    report.trials.push_back(std::move(result));
  }

  for (const TrialResult& t : report.trials) {
    if (t.status != TrialStatus::kCompleted) continue;
    if (report.best_index < 0) {
      report.best_index = t.index;
      continue;
    }
    const TrialResult& b = report.trials[report.best_index];
    if (t.val_accuracy > b.val_accuracy ||
        (t.val_accuracy == b.val_accuracy &&
         t.parameter_count < b.parameter_count))
      report.best_index = t.index;
  }
  if (report.best_index < 0) {
    std::string diag = "all trials failed:";
    for (const TrialResult& t : report.trials)
      diag += "\n  trial " + std::to_string(t.index) + ": " + t.error;
    throw std::runtime_error(diag);
  }
  return report;
}

}  // namespace ssigan
