// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <survfuse/checkpoint.hpp>
#include <survfuse/config.hpp>
#include <survfuse/dataset.hpp>
#include <survfuse/gradcheck.hpp>
#include <survfuse/harness.hpp>
#include <survfuse/kmplot.hpp>
#include <survfuse/synth.hpp>

namespace {

namespace fs = std::filesystem;
using namespace survfuse;

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t folds = 0;
  double pool_ratio = 0.0;
  CLI::Option* config_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* folds_opt = nullptr;
  CLI::Option* ratio_opt = nullptr;

  void attach(CLI::App* command) {
    config_opt = command->add_option("--config", config_path,
                                     "JSON run configuration file");
    out_opt = command->add_option("--out", out_dir, "output directory");
    seed_opt = command->add_option(
        "--seed", seed, "override the run (and synthesis) seed");
    folds_opt =
        command->add_option("--folds", folds, "override the fold count");
    ratio_opt = command->add_option("--pool-ratio", pool_ratio,
                                    "override the pooling retention ratio");
  }

  RunConfig resolve() const {
    RunConfig config =
        config_path.empty() ? RunConfig{} : load_config(config_path);
    if (seed_opt->count() > 0) {
      config.seed = seed;
      config.synth.seed = seed;
    }
    if (folds_opt->count() > 0) config.folds = folds;
    if (ratio_opt->count() > 0) config.pool_ratio = pool_ratio;
    if (out_opt->count() > 0) config.out_dir = out_dir;
    validate_config(config);
    return config;
  }
};

void print_warnings(const std::vector<std::string>& warnings) {
  for (const std::string& warning : warnings) {
    std::cerr << "warning: " << warning << "\n";
  }
}

int run_synth(const CommonFlags& flags) {
  RunConfig config = flags.resolve();
  if (config.out_dir.empty()) {
    std::cerr << "synth: pass --out or set out_dir in the config\n";
    return 2;
  }
  const SynthCohort cohort = synth_cohort(config.synth);
  fs::create_directories(config.out_dir);
  save_dataset(config.out_dir, cohort);
  config.dataset_dir = config.out_dir;
  save_config(config, (fs::path(config.out_dir) / "config.json").string());
  std::size_t events = 0;
  for (const SurvivalRecord& record : cohort.records) events += record.event;
  std::cout << "wrote " << cohort.records.size() << " patients (" << events
            << " events) to " << config.out_dir << "\n";
  return 0;
}

int run_train(const CommonFlags& flags, const std::string& dataset_arg) {
  RunConfig config = flags.resolve();
  if (!dataset_arg.empty()) config.dataset_dir = dataset_arg;
  if (config.dataset_dir.empty()) {
    std::cerr << "train: pass a dataset directory or set dataset_dir in the "
                 "config\n";
    return 2;
  }
  if (config.out_dir.empty()) {
    std::cerr << "train: pass --out or set out_dir in the config\n";
    return 2;
  }

  const Dataset dataset = load_dataset(config.dataset_dir);
  const PreparedDataset prepared = prepare_dataset(dataset, config);
  print_warnings(prepared.warnings);

  std::vector<FoldTraining> trained;
  const CvReport report = run_cv(config, prepared, &trained);

  const fs::path out(config.out_dir);
  fs::create_directories(out);
  save_report((out / "report.txt").string(), report);
  save_predictions((out / "predictions.tsv").string(), report.predictions);
  for (std::size_t f = 0; f < trained.size(); ++f) {
    save_checkpoint((out / ("fold_" + std::to_string(f) + ".ckpt")).string(),
                    trained[f].model, trained[f].best_epoch,
                    trained[f].best_val_loss, prepared.gene_symbols);
  }
  std::vector<std::string> km_warnings;
  emit_km_plot((out / "km.txt").string(), (out / "km.svg").string(),
               report.predictions, &km_warnings);
  print_warnings(km_warnings);

  char styled[64];
  std::snprintf(styled, sizeof(styled), "%.3f$\\pm$(%.3f)",
                report.c_index_mean, report.c_index_std);
  std::cout << "c-index " << styled << " over " << report.folds.size()
            << " folds, pooled log-rank p = "
            << format_p_value(report.pooled_logrank_p) << "\n";
  std::cout << "report written to " << (out / "report.txt").string() << "\n";
  return 0;
}

int run_eval(const CommonFlags& flags, const std::string& checkpoint_path,
             const std::string& dataset_arg) {
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  RunConfig config = checkpoint.config;
  if (!dataset_arg.empty()) config.dataset_dir = dataset_arg;
  if (flags.out_opt->count() > 0) config.out_dir = flags.out_dir;
  if (config.dataset_dir.empty()) {
    std::cerr << "eval: pass a dataset directory (the checkpoint records "
                 "none)\n";
    return 2;
  }
  if (config.out_dir.empty()) {
    std::cerr << "eval: pass --out or set out_dir in the config\n";
    return 2;
  }

  const Dataset dataset = load_dataset(config.dataset_dir);
  if (dataset.gene_symbols != checkpoint.gene_symbols) {
    std::cerr << "eval: dataset gene symbols differ from the checkpoint's\n";
    return 2;
  }
  const PreparedDataset prepared = prepare_dataset(dataset, config);
  print_warnings(prepared.warnings);

  SurvivalModel model = model_from_checkpoint(checkpoint);
  NoGradGuard guard(model.tape());
  std::vector<std::size_t> indices(prepared.patients.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  const std::vector<double> risks =
      detail::cohort_risks(model, prepared, indices);
  const std::vector<SurvivalRecord> records =
      detail::gather_records(prepared, indices);

  const ConcordanceResult concordance = c_index(
      risks, records,
      config.half_credit_ties ? TieRule::half : TieRule::strict);
  std::vector<std::string> warnings;
  const LogRankResult logrank = stratified_log_rank(risks, records, &warnings);
  print_warnings(warnings);

  std::vector<PredictionRow> predictions;
  for (std::size_t i = 0; i < risks.size(); ++i) {
    predictions.push_back({records[i].patient_id, 0, risks[i],
                           records[i].time, records[i].event});
  }

  const fs::path out(config.out_dir);
  fs::create_directories(out);
  {
    std::ofstream report(out / "report.txt");
    report << "survfuse-eval v1\n";
    for (const std::string& warning : warnings) {
      report << "warning " << warning << "\n";
    }
    report << "patients " << prepared.patients.size() << "\n";
    report << "c_index " << detail::format_double(concordance.c_index)
           << "\n";
    report << "pair_count " << concordance.comparable_pairs << "\n";
    report << "logrank_p " << detail::format_double(logrank.p_value) << "\n";
  }
  save_predictions((out / "predictions.tsv").string(), predictions);
  std::vector<std::string> km_warnings;
  emit_km_plot((out / "km.txt").string(), (out / "km.svg").string(),
               predictions, &km_warnings);
  print_warnings(km_warnings);

  char line[128];
  std::snprintf(line, sizeof(line), "c-index %.3f over %zu pairs",
                concordance.c_index, concordance.comparable_pairs);
  std::cout << line << ", log-rank p = " << format_p_value(logrank.p_value)
            << "\n";
  return 0;
}

int run_km(const CommonFlags& flags, const std::string& predictions_path) {
  const std::vector<PredictionRow> predictions =
      load_predictions(predictions_path);
  fs::path out = flags.out_opt->count() > 0
                     ? fs::path(flags.out_dir)
                     : fs::path(predictions_path).parent_path();
  if (out.empty()) out = ".";
  fs::create_directories(out);
  std::vector<std::string> warnings;
  emit_km_plot((out / "km.txt").string(), (out / "km.svg").string(),
               predictions, &warnings);
  print_warnings(warnings);
  std::cout << "wrote " << (out / "km.txt").string() << " and "
            << (out / "km.svg").string() << "\n";
  return 0;
}

int run_gradcheck(std::uint64_t seed, std::size_t samples) {
  struct Case {
    std::size_t clusters, model_dim, depth, heads;
  };
  const std::vector<Case> cases = {
      {2, 8, 1, 2}, {4, 8, 2, 4}, {2, 16, 2, 1}, {8, 16, 1, 4}};
  bool all_passed = true;
  for (const Case& c : cases) {
    GradCheckConfig check;
    check.clusters = c.clusters;
    check.model_dim = c.model_dim;
    check.feature_dim = c.model_dim;
    check.depth = c.depth;
    check.heads = c.heads;
    check.samples = samples;
    check.seed = seed;
    const GradCheckReport report = gradcheck_model(check);
    const bool passed = report.passed();
    all_passed = all_passed && passed;
    char line[192];
    std::snprintf(line, sizeof(line),
                  "gradcheck C=%zu d_model=%zu depth=%zu heads=%zu: "
                  "%zu/%zu coordinates within %.0e (max rel err %.2e) %s",
                  c.clusters, c.model_dim, c.depth, c.heads,
                  report.within_tolerance, report.checked, check.tolerance,
                  report.max_relative_error, passed ? "PASS" : "FAIL");
    std::cout << line << "\n";
  }
  return all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"survfuse: two-stream multimodal survival fusion pipeline"};
  app.require_subcommand(1);

  CLI::App* synth = app.add_subcommand(
      "synth", "generate a synthetic cohort dataset directory");
  CommonFlags synth_flags;
  synth_flags.attach(synth);

  CLI::App* train = app.add_subcommand(
      "train", "cross-validated training with reports and checkpoints");
  CommonFlags train_flags;
  train_flags.attach(train);
  std::string train_dataset;
  train->add_option("dataset", train_dataset,
                    "dataset directory (overrides config dataset_dir)");

  CLI::App* eval = app.add_subcommand(
      "eval", "score a dataset with a saved checkpoint");
  CommonFlags eval_flags;
  eval_flags.attach(eval);
  std::string eval_checkpoint, eval_dataset;
  eval->add_option("checkpoint", eval_checkpoint, "checkpoint file")
      ->required();
  eval->add_option("dataset", eval_dataset,
                   "dataset directory (overrides the checkpoint's)");

  CLI::App* km = app.add_subcommand(
      "km", "survival curves and step plot from saved predictions");
  CommonFlags km_flags;
  km_flags.attach(km);
  std::string km_predictions;
  km->add_option("predictions", km_predictions, "predictions table")
      ->required();

  CLI::App* gradcheck = app.add_subcommand(
      "gradcheck", "audit analytic gradients against finite differences");
  std::uint64_t gradcheck_seed = 1;
  std::size_t gradcheck_samples = 300;
  gradcheck->add_option("--seed", gradcheck_seed, "audit seed");
  gradcheck->add_option("--samples", gradcheck_samples,
                        "coordinates sampled per configuration");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(synth_flags);
    if (train->parsed()) return run_train(train_flags, train_dataset);
    if (eval->parsed()) {
      return run_eval(eval_flags, eval_checkpoint, eval_dataset);
    }
    if (km->parsed()) return run_km(km_flags, km_predictions);
    if (gradcheck->parsed()) {
      return run_gradcheck(gradcheck_seed, gradcheck_samples);
    }
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 1;
  }
  return 0;
}
