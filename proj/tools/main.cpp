// Command-line front end: one subcommand per pipeline stage.

#include <cstdint>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssigan/dataio.hpp"
#include "ssigan/eval.hpp"
#include "ssigan/hpo.hpp"
#include "ssigan/manifest.hpp"
#include "ssigan/model.hpp"
#include "ssigan/signal.hpp"
#include "ssigan/train.hpp"

namespace {

using namespace ssigan;

std::string manifest_path_for(const std::string& out, const std::string& flag) {
  return flag.empty() ? out + ".manifest" : flag;
}

void add_model_flags(CLI::App* cmd, ModelConfig& mc, std::string& generator,
                     std::string& discriminator) {
  cmd->add_option("--noise-dim", mc.noise_dim, "generator input noise size");
  cmd->add_option("--head-size", mc.head_size, "attention key width per head");
  cmd->add_option("--num-heads", mc.num_heads, "attention heads");
  cmd->add_option("--ff-dim", mc.ff_dim, "feed-forward hidden size");
  cmd->add_option("--num-blocks", mc.num_blocks,
                  "discriminator transformer blocks");
  cmd->add_option("--dropout", mc.dropout_rate, "dropout rate");
  cmd->add_option("--embed-dim", mc.embed_dim, "token embedding width");
  cmd->add_option("--window-size", mc.window_size, "attention window length");
  cmd->add_option("--shift-size", mc.shift_size, "cyclic shift between blocks");
  cmd->add_option("--generator", generator,
                  "generator variant: transformer | conv_only");
  cmd->add_option("--discriminator", discriminator,
                  "discriminator variant: shifted_window | plain_transformer");
}

void apply_variants(ModelConfig& mc, const std::string& generator,
                    const std::string& discriminator) {
  if (generator == "transformer")
    mc.generator_variant = GeneratorVariant::kTransformer;
  else if (generator == "conv_only")
    mc.generator_variant = GeneratorVariant::kConvOnly;
  else
    throw std::invalid_argument("unknown generator variant '" + generator +
                                "'");
  if (discriminator == "shifted_window")
    mc.discriminator_variant = DiscriminatorVariant::kShiftedWindow;
  else if (discriminator == "plain_transformer")
    mc.discriminator_variant = DiscriminatorVariant::kPlainTransformer;
  else
    throw std::invalid_argument("unknown discriminator variant '" +
                                discriminator + "'");
}

void record_model(RunManifest& m, const ModelConfig& mc) {
  std::istringstream is(mc.serialize());
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos)
      m.set("model." + line.substr(0, eq), line.substr(eq + 1));
  }
}

void record_split(RunManifest& m, const SplitSpec& s) {
  m.set("split.test_fraction", s.test_fraction);
  m.set("split.labeled_fraction", s.labeled_fraction);
  m.set("split.validation_fraction", s.validation_fraction);
  m.set("split.seed", s.seed);
}

void add_split_flags(CLI::App* cmd, SplitSpec& spec) {
  cmd->add_option("--test-frac", spec.test_fraction, "test fraction");
  cmd->add_option("--labeled-frac", spec.labeled_fraction,
                  "labeled fraction of the non-test pool");
  cmd->add_option("--val-frac", spec.validation_fraction,
                  "validation fraction of the labeled pool");
}

void add_train_flags(CLI::App* cmd, TrainConfig& tc) {
  cmd->add_option("--iterations", tc.iterations, "training iterations");
  cmd->add_option("--batch", tc.batch_size, "batch size");
  cmd->add_option("--lr", tc.learning_rate, "Adam learning rate");
  cmd->add_option("--label-smooth", tc.label_smooth_real,
                  "smoothed real target for the real/fake head");
  cmd->add_option("--log-every", tc.log_every, "log cadence in iterations");
}

int run(int argc, char** argv) {
  CLI::App app{"semi-supervised spike classification pipeline"};
  app.require_subcommand(1);
  argv = app.ensure_utf8(argv);

  // ---- synth ----------------------------------------------------------
  auto* synth = app.add_subcommand(
      "synth", "generate a synthetic recording or a windowed dataset");
  synth->set_config("--config");
  std::string synth_out, synth_class = "control", synth_manifest;
  double synth_rate = -1.0, synth_amplitude = -1.0, synth_duration = 10.0;
  std::uint64_t synth_seed = 0;
  std::int64_t synth_windows = 0;
  synth->add_option("output", synth_out, "output path")->required();
  synth->add_option("--class", synth_class,
                    "class profile: control | dengue | zika");
  synth->add_option("--rate", synth_rate, "spike rate override, Hz");
  synth->add_option("--amplitude", synth_amplitude,
                    "spike amplitude override, uV");
  synth->add_option("--duration", synth_duration, "recording length, s");
  synth->add_option("--windows", synth_windows,
                    "emit a preprocessed labeled window set of this size "
                    "instead of a raw recording");
  synth->add_option("--seed", synth_seed, "random seed");
  synth->add_option("--manifest", synth_manifest, "manifest path");
  synth->callback([&] {
    RunManifest m;
    m.command = "synth";
    m.set("seed", synth_seed);
    if (synth_windows > 0) {
      SpikeWindowSet set = make_synthetic_dataset(synth_windows, synth_seed);
      save_window_set(set, synth_out);
      m.set("windows", synth_windows);
    } else {
      const int label = class_from_name(synth_class);
      SyntheticClassProfile profile = default_class_profiles()[label];
      if (synth_rate > 0) profile.spike_rate_hz = synth_rate;
      if (synth_amplitude > 0) profile.amplitude_mean_uv = synth_amplitude;
      RawRecording rec = generate_synthetic_recording(
          profile, synth_duration, synth_seed);
      save_recording(rec, synth_out, label);
      m.set("class", std::string(class_name(label)));
      m.set("rate_hz", profile.spike_rate_hz);
      m.set("amplitude_uv", profile.amplitude_mean_uv);
      m.set("duration_s", synth_duration);
    }
    m.stamp_now();
    m.add_output(synth_out);
    m.save(manifest_path_for(synth_out, synth_manifest));
  });

  // ---- preprocess -----------------------------------------------------
  auto* pre = app.add_subcommand(
      "preprocess", "filter, threshold, segment and normalize a recording");
  pre->set_config("--config");
  std::string pre_in, pre_out, pre_manifest, pre_auto;
  FilterSpec filter_spec;
  double pre_threshold = -1.0;
  std::int64_t pre_window_len = 100;
  bool pre_no_normalize = false;
  pre->add_option("input", pre_in, "raw recording path")->required();
  pre->add_option("output", pre_out, "window-set path")->required();
  pre->add_option("--cutoff-hz", filter_spec.cutoff_hz, "high-pass cutoff");
  pre->add_option("--filter-order", filter_spec.order, "Butterworth order");
  pre->add_option("--threshold-uv", pre_threshold, "spike threshold, uV");
  pre->add_option("--auto-threshold", pre_auto,
                  "comma-separated noise stds to derive the threshold from");
  pre->add_option("--window-len", pre_window_len, "samples per window");
  pre->add_flag("--no-normalize", pre_no_normalize,
                "keep windows in microvolts");
  pre->add_option("--manifest", pre_manifest, "manifest path");
  pre->callback([&] {
    int label = -1;
    RawRecording rec = load_recording(pre_in, &label);
    filter_spec.sampling_rate_hz = rec.sampling_rate_hz;
    double threshold = pre_threshold;
    if (!pre_auto.empty()) {
      std::vector<double> stds;
      std::stringstream ss(pre_auto);
      std::string tok;
      while (std::getline(ss, tok, ',')) stds.push_back(std::stod(tok));
      threshold = compute_threshold(stds);
    }
    if (threshold < 0)
      throw std::invalid_argument(
          "preprocess needs --threshold-uv or --auto-threshold");
    const FilterCoefficients coeffs = design_highpass_butterworth(filter_spec);
    RawRecording filtered = apply_filter(coeffs, rec);
    RawRecording spikes = extract_spikes(filtered, threshold);
    SpikeWindowSet set = segment_windows(spikes, pre_window_len);
    set.threshold_uv = threshold;
    if (label >= 0) set.labels.assign(set.count, label);
    if (!pre_no_normalize) set = normalize_windows(set);
    save_window_set(set, pre_out);

    RunManifest m;
    m.command = "preprocess";
    m.set("cutoff_hz", filter_spec.cutoff_hz);
    m.set("filter_order", static_cast<std::int64_t>(filter_spec.order));
    m.set("threshold_uv", threshold);
    m.set("window_len", pre_window_len);
    m.set("normalize", std::string(pre_no_normalize ? "0" : "1"));
    m.stamp_now();
    m.add_input(pre_in);
    m.add_output(pre_out);
    m.save(manifest_path_for(pre_out, pre_manifest));
  });

  // ---- split ----------------------------------------------------------
  auto* split = app.add_subcommand(
      "split", "partition a window set into test/labeled/validation/unlabeled");
  split->set_config("--config");
  std::string split_in, split_out, split_manifest;
  SplitSpec split_spec;
  split->add_option("input", split_in, "window-set path")->required();
  split->add_option("output", split_out, "splits file path")->required();
  add_split_flags(split, split_spec);
  split->add_option("--seed", split_spec.seed, "random seed");
  split->add_option("--manifest", split_manifest, "manifest path");
  split->callback([&] {
    SpikeWindowSet set = load_window_set(split_in);
    DatasetSplits splits = split_dataset(set.count, split_spec);
    save_splits(splits, split_out);
    RunManifest m;
    m.command = "split";
    record_split(m, split_spec);
    m.stamp_now();
    m.add_input(split_in);
    m.add_output(split_out);
    m.save(manifest_path_for(split_out, split_manifest));
  });

  // ---- train ----------------------------------------------------------
  auto* tr = app.add_subcommand("train", "semi-supervised adversarial training");
  tr->set_config("--config");
  std::string tr_in, tr_splits, tr_ckpt = "model.ckpt", tr_log = "train_log.csv";
  std::string tr_manifest, tr_generator = "transformer",
              tr_discriminator = "shifted_window";
  ModelConfig tr_model;
  TrainConfig tr_cfg;
  SplitSpec tr_split_spec;
  tr->add_option("input", tr_in, "window-set path")->required();
  tr->add_option("--splits", tr_splits,
                 "splits file; omitted = split here with --seed");
  add_split_flags(tr, tr_split_spec);
  add_model_flags(tr, tr_model, tr_generator, tr_discriminator);
  add_train_flags(tr, tr_cfg);
  tr->add_option("--seed", tr_cfg.seed, "random seed");
  tr->add_option("--out", tr_ckpt, "checkpoint path");
  tr->add_option("--log", tr_log, "training log CSV path");
  tr->add_option("--manifest", tr_manifest, "manifest path");
  tr->callback([&] {
    apply_variants(tr_model, tr_generator, tr_discriminator);
    tr_model.validate();
    tr_cfg.validate();
    SpikeWindowSet set = load_window_set(tr_in);
    DatasetSplits splits;
    if (tr_splits.empty()) {
      tr_split_spec.seed = tr_cfg.seed;
      splits = split_dataset(set.count, tr_split_spec);
    } else {
      splits = load_splits(tr_splits);
    }
    TrainResult result = train(set, splits, tr_model, tr_cfg);
    std::vector<StateEntry> entries = result.generator->state_entries();
    for (StateEntry& e : result.discriminator->state_entries())
      entries.push_back(std::move(e));
    save_state(entries, tr_ckpt);
    result.log.save_csv(tr_log);
    tr_model.save(tr_ckpt + ".cfg");
    const double test_acc =
        accuracy_on(*result.discriminator, set, splits.test);
    std::cout << "test_accuracy=" << test_acc << "\n";

    RunManifest m;
    m.command = "train";
    record_model(m, tr_model);
    record_split(m, tr_split_spec);
    m.set("iterations", tr_cfg.iterations);
    m.set("batch_size", tr_cfg.batch_size);
    m.set("learning_rate", tr_cfg.learning_rate);
    m.set("seed", tr_cfg.seed);
    m.stamp_now();
    m.add_input(tr_in);
    if (!tr_splits.empty()) m.add_input(tr_splits);
    m.add_output(tr_ckpt);
    m.add_output(tr_ckpt + ".cfg");
    m.add_output(tr_log);
    m.save(manifest_path_for(tr_ckpt, tr_manifest));
  });

  // ---- eval -----------------------------------------------------------
  auto* ev = app.add_subcommand("eval", "score a checkpoint on labeled windows");
  ev->set_config("--config");
  std::string ev_in, ev_ckpt, ev_splits, ev_manifest, ev_report;
  ev->add_option("input", ev_in, "window-set path")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint path")->required();
  ev->add_option("--splits", ev_splits,
                 "splits file; omitted = evaluate every labeled window");
  ev->add_option("--report", ev_report, "metrics CSV path");
  ev->add_option("--manifest", ev_manifest, "manifest path");
  ev->callback([&] {
    SpikeWindowSet set = load_window_set(ev_in);
    ModelConfig mc = ModelConfig::load(ev_ckpt + ".cfg");
    Discriminator d(mc, 0);
    Generator g(mc, 0);
    std::vector<StateEntry> entries = g.state_entries();
    for (StateEntry& e : d.state_entries()) entries.push_back(std::move(e));
    load_state(entries, ev_ckpt);

    std::vector<std::int64_t> indices;
    if (ev_splits.empty()) {
      for (std::int64_t i = 0; i < set.count; ++i)
        if (!set.labels.empty() && set.labels[i] >= 0) indices.push_back(i);
    } else {
      indices = load_splits(ev_splits).test;
    }
    const ConfusionMatrix cm = evaluate(d, set, indices);
    const MetricsReport r = compute_metrics(cm);
    std::cout << "confusion matrix (rows = truth):\n";
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) std::cout << cm.counts[i][j] << '\t';
      std::cout << '\n';
    }
    std::cout << "accuracy=" << r.accuracy
              << " macro_precision=" << r.macro_precision
              << " macro_recall=" << r.macro_recall
              << " macro_f1=" << r.macro_f1 << "\n";
    if (!ev_report.empty()) {
      std::ofstream os(ev_report);
      if (!os) throw std::runtime_error("cannot open for writing: " + ev_report);
      os.precision(10);
      os << "metric,value\naccuracy," << r.accuracy << "\nmacro_precision,"
         << r.macro_precision << "\nmacro_recall," << r.macro_recall
         << "\nmacro_f1," << r.macro_f1 << "\n";
    }
    RunManifest m;
    m.command = "eval";
    m.set("windows_scored", static_cast<std::int64_t>(indices.size()));
    m.stamp_now();
    m.add_input(ev_in);
    m.add_input(ev_ckpt);
    if (!ev_splits.empty()) m.add_input(ev_splits);
    if (!ev_report.empty()) m.add_output(ev_report);
    m.save(manifest_path_for(ev_ckpt + ".eval", ev_manifest));
  });

  // ---- crossval -------------------------------------------------------
  auto* cv = app.add_subcommand(
      "crossval", "Monte Carlo cross-validation with re-randomized splits");
  cv->set_config("--config");
  std::string cv_in, cv_out = "crossval.csv", cv_manifest;
  std::string cv_generator = "transformer", cv_discriminator = "shifted_window";
  int cv_runs = 5;
  std::uint64_t cv_seed = 0;
  ModelConfig cv_model;
  TrainConfig cv_cfg;
  SplitSpec cv_split_spec;
  cv->add_option("input", cv_in, "window-set path")->required();
  cv->add_option("--runs", cv_runs, "number of independent runs");
  cv->add_option("--seed", cv_seed, "base seed");
  add_split_flags(cv, cv_split_spec);
  add_model_flags(cv, cv_model, cv_generator, cv_discriminator);
  add_train_flags(cv, cv_cfg);
  cv->add_option("--out", cv_out, "report CSV path");
  cv->add_option("--manifest", cv_manifest, "manifest path");
  cv->callback([&] {
    apply_variants(cv_model, cv_generator, cv_discriminator);
    cv_model.validate();
    cv_cfg.validate();
    SpikeWindowSet set = load_window_set(cv_in);
    MonteCarloReport report =
        monte_carlo_cv(set, cv_split_spec, cv_model, cv_cfg, cv_runs, cv_seed);
    report.save_csv(cv_out);
    std::cout << report.format_table();
    RunManifest m;
    m.command = "crossval";
    record_model(m, cv_model);
    record_split(m, cv_split_spec);
    m.set("runs", static_cast<std::int64_t>(cv_runs));
    m.set("seed", cv_seed);
    m.set("iterations", cv_cfg.iterations);
    m.set("batch_size", cv_cfg.batch_size);
    m.set("learning_rate", cv_cfg.learning_rate);
    m.stamp_now();
    m.add_input(cv_in);
    m.add_output(cv_out);
    m.save(manifest_path_for(cv_out, cv_manifest));
  });

  // ---- hpo ------------------------------------------------------------
  auto* hp = app.add_subcommand("hpo", "hyperparameter search at reduced budget");
  hp->set_config("--config");
  std::string hp_in, hp_out = "trials.csv", hp_manifest;
  int hp_trials = 20;
  std::int64_t hp_budget = 100;
  std::uint64_t hp_seed = 0;
  SplitSpec hp_split_spec;
  hp->add_option("input", hp_in, "window-set path")->required();
  hp->add_option("--trials", hp_trials, "number of trials");
  hp->add_option("--budget", hp_budget, "iterations per trial");
  hp->add_option("--seed", hp_seed, "search seed");
  add_split_flags(hp, hp_split_spec);
  hp->add_option("--out", hp_out, "trial table CSV path");
  hp->add_option("--manifest", hp_manifest, "manifest path");
  hp->callback([&] {
    SpikeWindowSet set = load_window_set(hp_in);
    hp_split_spec.seed = hp_seed;
    SearchReport report = run_search(set, hp_split_spec, SearchSpace{},
                                     hp_trials, hp_budget, hp_seed);
    report.save_csv(hp_out);
    const TrialResult& best = report.best();
    std::cout << "best trial " << best.index
              << " val_accuracy=" << best.val_accuracy << "\n"
              << best.config.serialize();
    RunManifest m;
    m.command = "hpo";
    m.set("trials", static_cast<std::int64_t>(hp_trials));
    m.set("budget", hp_budget);
    m.set("seed", hp_seed);
    m.set("best_trial", static_cast<std::int64_t>(best.index));
    m.set("best_val_accuracy", best.val_accuracy);
    m.stamp_now();
    m.add_input(hp_in);
    m.add_output(hp_out);
    m.save(manifest_path_for(hp_out, hp_manifest));
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.get_exit_code() == 0 ? 1 : e.get_exit_code();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
