// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "checkpoint.hpp"
#include "config.hpp"
#include "dataset.hpp"
#include "kmeans.hpp"
#include "kmplot.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace survfuse {

// Dataset plus the non-differentiable preprocessing the model depends on:
// each patient's patch-to-phenotype assignment, clustered once per patient
// from a seed derived from the patient id alone.
struct PreparedDataset {
  std::vector<Patient> patients;
  std::vector<std::vector<std::size_t>> assignments;
  std::vector<std::string> gene_symbols;
  std::vector<std::string> warnings;
};

inline PreparedDataset prepare_dataset(const Dataset& dataset,
                                       const RunConfig& config) {
  PreparedDataset prepared;
  prepared.gene_symbols = dataset.gene_symbols;
  prepared.warnings = dataset.warnings;
  require(dataset.gene_symbols.size() >= config.clusters,
          "prepare_dataset: " + std::to_string(dataset.gene_symbols.size()) +
              " genes cannot fill " + std::to_string(config.clusters) +
              " modules");
  for (const Patient& patient : dataset.patients) {
    require(patient.expression.size() == dataset.gene_symbols.size(),
            "prepare_dataset: expression width mismatch for '" + patient.id +
                "'");
    if (patient.patches.rows() < config.clusters) {
      prepared.warnings.push_back("excluded '" + patient.id + "': " +
                                  std::to_string(patient.patches.rows()) +
                                  " patches cannot fill " +
                                  std::to_string(config.clusters) +
                                  " phenotypes");
      continue;
    }
    require(patient.patches.cols() == config.patch_dim,
            "prepare_dataset: patient '" + patient.id + "' has patch width " +
                std::to_string(patient.patches.cols()) + ", config expects " +
                std::to_string(config.patch_dim));
    std::vector<std::vector<double>> points(patient.patches.rows());
    for (std::size_t i = 0; i < patient.patches.rows(); ++i) {
      points[i].assign(
          patient.patches.data().begin() + i * patient.patches.cols(),
          patient.patches.data().begin() + (i + 1) * patient.patches.cols());
    }
    const std::uint64_t seed =
        Rng::mix(config.seed, Rng::hash_string(patient.id));
    prepared.patients.push_back(patient);
    prepared.assignments.push_back(
        kmeans(points, config.clusters, seed).assignment);
  }
  require(!prepared.patients.empty(), "prepare_dataset: no usable patients");
  return prepared;
}

inline PreparedDataset prepare_cohort(const SynthCohort& cohort,
                                      const RunConfig& config) {
  Dataset dataset;
  dataset.gene_symbols = cohort.gene_symbols;
  for (std::size_t i = 0; i < cohort.patch_sets.size(); ++i) {
    Patient patient;
    patient.id = cohort.patch_sets[i].patient_id;
    patient.patches = cohort.patch_sets[i].patches;
    patient.expression.assign(
        cohort.expression.data().begin() + i * cohort.expression.cols(),
        cohort.expression.data().begin() + (i + 1) * cohort.expression.cols());
    patient.record = cohort.records[i];
    dataset.patients.push_back(std::move(patient));
  }
  return prepare_dataset(dataset, config);
}

// Fold and validation roles are functions of the patient id alone, so adding
// or removing one patient never reshuffles anyone else's role.
struct FoldSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
};

inline std::vector<FoldSplit> make_folds(const PreparedDataset& prepared,
                                         const RunConfig& config) {
  validate_config(config);
  std::vector<FoldSplit> folds(config.folds);
  for (std::size_t i = 0; i < prepared.patients.size(); ++i) {
    const std::uint64_t id_hash =
        Rng::hash_string(prepared.patients[i].id);
    const std::size_t fold =
        Rng::mix(config.seed, id_hash) % config.folds;
    const double val_draw =
        static_cast<double>(Rng::mix(config.seed ^ 0x76616c5fULL, id_hash) >>
                            11) *
        0x1.0p-53;
    const bool validation = val_draw < config.validation_fraction;
    for (std::size_t f = 0; f < config.folds; ++f) {
      if (f == fold) {
        folds[f].test.push_back(i);
      } else if (validation) {
        folds[f].validation.push_back(i);
      } else {
        folds[f].train.push_back(i);
      }
    }
  }
  for (std::size_t f = 0; f < config.folds; ++f) {
    require(!folds[f].train.empty(), "make_folds: fold " + std::to_string(f) +
                                         " has an empty training set");
    require(!folds[f].validation.empty(),
            "make_folds: fold " + std::to_string(f) +
                " has an empty validation set");
    require(!folds[f].test.empty(), "make_folds: fold " + std::to_string(f) +
                                        " has an empty test set");
  }
  return folds;
}

namespace detail {

inline std::vector<SurvivalRecord> gather_records(
    const PreparedDataset& prepared, const std::vector<std::size_t>& indices) {
  std::vector<SurvivalRecord> records;
  records.reserve(indices.size());
  for (const std::size_t i : indices) {
    records.push_back(prepared.patients[i].record);
  }
  return records;
}

inline Tensor expression_matrix(const PreparedDataset& prepared,
                                const std::vector<std::size_t>& indices) {
  const std::size_t genes = prepared.gene_symbols.size();
  Tensor expr{Shape{indices.size(), genes}};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const auto& row = prepared.patients[indices[r]].expression;
    std::copy(row.begin(), row.end(), expr.data().begin() + r * genes);
  }
  return expr;
}

inline std::vector<double> cohort_risks(const SurvivalModel& model,
                                        const PreparedDataset& prepared,
                                        const std::vector<std::size_t>& indices) {
  std::vector<double> risks;
  risks.reserve(indices.size());
  for (const std::size_t i : indices) {
    PatchFeatureSet set;
    set.patient_id = prepared.patients[i].id;
    set.patches = prepared.patients[i].patches;
    risks.push_back(model
                        .forward(set, prepared.assignments[i],
                                 prepared.patients[i].expression)
                        .risk.value());
  }
  return risks;
}

}  // namespace detail

struct FoldTraining {
  SurvivalModel model;
  std::size_t epochs_trained = 0;
  std::size_t best_epoch = 0;
  double best_val_loss = 0.0;
  std::vector<double> train_loss_history;
  std::vector<double> val_loss_history;
};

// One full fold: cluster gene modules on the fold's non-test expression,
// train with a full-cohort loss per epoch (each patient is forwarded one at a
// time; the partial-likelihood risk sets span the whole training fold), track
// the best validation loss, stop after `patience` epochs without improvement,
// and restore the best parameters.
inline FoldTraining train_fold(const RunConfig& config,
                               const PreparedDataset& prepared,
                               const FoldSplit& split, std::uint64_t fold_seed) {
  const std::vector<SurvivalRecord> train_records =
      detail::gather_records(prepared, split.train);
  const std::vector<SurvivalRecord> val_records =
      detail::gather_records(prepared, split.validation);
  bool any_event = false;
  for (const SurvivalRecord& r : train_records) any_event |= r.event;
  if (!any_event) {
    throw std::runtime_error(
        "train_fold: every training patient is censored; the partial "
        "likelihood has no event terms to fit");
  }

  std::vector<std::size_t> fit_indices = split.train;
  fit_indices.insert(fit_indices.end(), split.validation.begin(),
                     split.validation.end());
  std::sort(fit_indices.begin(), fit_indices.end());
  const GeneModuleMembership membership =
      cluster_genes(detail::expression_matrix(prepared, fit_indices),
                    config.clusters, Rng::mix(fold_seed, 0x67656e6573ULL));

  FoldTraining result{SurvivalModel(config, membership, fold_seed)};
  SurvivalModel& model = result.model;
  GradientTape& tape = model.tape();

  AdamConfig adam;
  adam.learning_rate = config.learning_rate;
  adam.weight_decay = config.weight_decay;
  adam.beta1 = config.beta1;
  adam.beta2 = config.beta2;
  adam.epsilon = config.adam_epsilon;
  adam.decoupled_decay = config.decoupled_decay;
  AdamState optimizer(adam);

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_params;
  std::size_t epochs_without_improvement = 0;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    tape.zero_grad();
    std::vector<Tensor> risk_rows;
    risk_rows.reserve(split.train.size());
    for (const std::size_t i : split.train) {
      PatchFeatureSet set;
      set.patient_id = prepared.patients[i].id;
      set.patches = prepared.patients[i].patches;
      risk_rows.push_back(model
                              .forward(set, prepared.assignments[i],
                                       prepared.patients[i].expression)
                              .risk);
    }
    Tensor loss = cox_loss(concat_rows(risk_rows), train_records);
    tape.backward(loss);
    adam_step(optimizer, std::span<Tensor>(tape.parameters()));
    tape.clear_nodes();
    result.epochs_trained = epoch;
    result.train_loss_history.push_back(loss.value());

    double val_loss;
    {
      NoGradGuard guard(tape);
      val_loss = cox_loss_value(
          detail::cohort_risks(model, prepared, split.validation),
          val_records);
    }
    result.val_loss_history.push_back(val_loss);
    if (val_loss < best_val) {
      best_val = val_loss;
      result.best_epoch = epoch;
      best_params.clear();
      for (const auto& [name, tensor] : model.named_parameters()) {
        best_params.push_back(tensor.data());
      }
      epochs_without_improvement = 0;
    } else {
      ++epochs_without_improvement;
      if (epochs_without_improvement >= config.patience) break;
    }
  }

  result.best_val_loss = best_val;
  require(!best_params.empty(),
          "train_fold: validation loss never became comparable (non-finite "
          "from the first epoch)");
  const auto& named = model.named_parameters();
  for (std::size_t p = 0; p < named.size(); ++p) {
    model.set_parameter(named[p].first, best_params[p]);
  }
  return result;
}

struct PredictionRow {
  std::string patient_id;
  std::size_t fold = 0;
  double risk = 0.0;
  double time = 0.0;
  bool event = false;
};

struct FoldReport {
  std::size_t fold_id = 0;
  double c_index = 0.0;
  std::size_t pair_count = 0;
  double logrank_p = 1.0;
  std::size_t epochs_trained = 0;
  double best_val_loss = 0.0;
};

struct CvReport {
  std::vector<FoldReport> folds;
  double c_index_mean = 0.0;
  double c_index_std = 0.0;
  double pooled_logrank_p = 1.0;
  std::vector<PredictionRow> predictions;
  std::vector<std::string> warnings;
};

// Median stratification plus the two-group log-rank test; collapses to p = 1
// with a warning when every risk ties into one group.
inline LogRankResult stratified_log_rank(
    const std::vector<double>& risks,
    const std::vector<SurvivalRecord>& records,
    std::vector<std::string>* warnings) {
  const std::vector<int> groups = stratify_by_median(risks);
  std::vector<SurvivalRecord> low, high;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (groups[i] == 0 ? low : high).push_back(records[i]);
  }
  if (low.empty() || high.empty()) {
    if (warnings != nullptr) {
      warnings->push_back(
          "log-rank skipped: median stratification left one group empty");
    }
    LogRankResult degenerate;
    degenerate.statistic = 0.0;
    degenerate.p_value = 1.0;
    degenerate.degenerate = true;
    return degenerate;
  }
  return log_rank(low, high);
}

inline std::size_t thread_cap(std::size_t jobs) {
  std::size_t cap = std::max(1u, std::thread::hardware_concurrency());
  if (const char* env = std::getenv("SURVFUSE_THREADS")) {
    const long parsed = std::strtol(env, nullptr, 10);
    if (parsed >= 1) cap = static_cast<std::size_t>(parsed);
  }
  return std::min(cap, std::max<std::size_t>(jobs, 1));
}

// Full cross-validation. Folds are independent jobs (their own tape, model,
// and optimizer) and run on up to SURVFUSE_THREADS threads; every fold's
// output lands in its own slot so scheduling cannot reorder results.
inline CvReport run_cv(const RunConfig& config, const PreparedDataset& prepared,
                       std::vector<FoldTraining>* trained_out = nullptr) {
  const std::vector<FoldSplit> folds = make_folds(prepared, config);
  CvReport report;
  report.warnings = prepared.warnings;
  report.folds.resize(folds.size());

  std::vector<std::optional<FoldTraining>> trained(folds.size());
  std::vector<std::exception_ptr> errors(folds.size());
  std::size_t next_fold = 0;
  const std::size_t workers = thread_cap(folds.size());
  std::mutex queue_mutex;
  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) {
    threads.emplace_back([&]() {
      while (true) {
        std::size_t f;
        {
          std::lock_guard<std::mutex> lock(queue_mutex);
          if (next_fold >= folds.size()) return;
          f = next_fold++;
        }
        try {
          trained[f] = train_fold(config, prepared, folds[f],
                                  Rng::mix(config.seed, f + 1));
        } catch (...) {
          errors[f] = std::current_exception();
        }
      }
    });
  }
  for (std::thread& thread : threads) thread.join();
  for (const std::exception_ptr& error : errors) {
    if (error) std::rethrow_exception(error);
  }

  for (std::size_t f = 0; f < folds.size(); ++f) {
    FoldTraining& fold = *trained[f];
    NoGradGuard guard(fold.model.tape());
    const std::vector<double> risks =
        detail::cohort_risks(fold.model, prepared, folds[f].test);
    const std::vector<SurvivalRecord> records =
        detail::gather_records(prepared, folds[f].test);

    FoldReport& entry = report.folds[f];
    entry.fold_id = f;
    entry.epochs_trained = fold.epochs_trained;
    entry.best_val_loss = fold.best_val_loss;
    const ConcordanceResult concordance = c_index(
        risks, records,
        config.half_credit_ties ? TieRule::half : TieRule::strict);
    entry.c_index = concordance.c_index;
    entry.pair_count = concordance.comparable_pairs;
    entry.logrank_p =
        stratified_log_rank(risks, records, &report.warnings).p_value;

    for (std::size_t r = 0; r < risks.size(); ++r) {
      PredictionRow row;
      row.patient_id = records[r].patient_id;
      row.fold = f;
      row.risk = risks[r];
      row.time = records[r].time;
      row.event = records[r].event;
      report.predictions.push_back(row);
    }
  }

  double mean = 0.0;
  for (const FoldReport& fold : report.folds) mean += fold.c_index;
  mean /= static_cast<double>(report.folds.size());
  double variance = 0.0;
  for (const FoldReport& fold : report.folds) {
    variance += (fold.c_index - mean) * (fold.c_index - mean);
  }
  variance /= static_cast<double>(report.folds.size() - 1);
  report.c_index_mean = mean;
  report.c_index_std = std::sqrt(variance);

  std::vector<double> pooled_risks;
  std::vector<SurvivalRecord> pooled_records;
  for (const PredictionRow& row : report.predictions) {
    pooled_risks.push_back(row.risk);
    SurvivalRecord record;
    record.patient_id = row.patient_id;
    record.time = row.time;
    record.event = row.event;
    pooled_records.push_back(record);
  }
  report.pooled_logrank_p =
      stratified_log_rank(pooled_risks, pooled_records, &report.warnings)
          .p_value;

  if (trained_out != nullptr) {
    for (std::optional<FoldTraining>& fold : trained) {
      trained_out->push_back(std::move(*fold));
    }
  }
  return report;
}

// Report document: stable key-value lines, one block per fold, aggregate mean
// and std both as raw values and in the `mean$\pm$(std)` presentation used
// for cross-validated concordance.
inline std::string format_report(const CvReport& report) {
  std::string out = "survfuse-report v1\n";
  for (const std::string& warning : report.warnings) {
    std::string sanitized = warning;
    std::replace(sanitized.begin(), sanitized.end(), '\n', ' ');
    out += "warning " + sanitized + "\n";
  }
  for (const FoldReport& fold : report.folds) {
    out += "fold_id " + std::to_string(fold.fold_id) + "\n";
    out += "c_index " + detail::format_double(fold.c_index) + "\n";
    out += "pair_count " + std::to_string(fold.pair_count) + "\n";
    out += "logrank_p " + detail::format_double(fold.logrank_p) + "\n";
    out += "epochs_trained " + std::to_string(fold.epochs_trained) + "\n";
    out += "best_val_loss " + detail::format_double(fold.best_val_loss) + "\n";
  }
  out += "aggregate_c_index_mean " + detail::format_double(report.c_index_mean) +
         "\n";
  out += "aggregate_c_index_std " + detail::format_double(report.c_index_std) +
         "\n";
  char styled[64];
  std::snprintf(styled, sizeof(styled), "%.3f$\\pm$(%.3f)",
                report.c_index_mean, report.c_index_std);
  out += std::string("aggregate_c_index ") + styled + "\n";
  out += "pooled_logrank_p " + detail::format_double(report.pooled_logrank_p) +
         "\n";
  return out;
}

inline void save_report(const std::string& path, const CvReport& report) {
  std::ofstream out(path);
  require(out.good(), "report: cannot write '" + path + "'");
  out << format_report(report);
}

inline void save_predictions(const std::string& path,
                             const std::vector<PredictionRow>& predictions) {
  std::ofstream out(path);
  require(out.good(), "predictions: cannot write '" + path + "'");
  out << "patient_id fold risk time event\n";
  for (const PredictionRow& row : predictions) {
    out << row.patient_id << " " << row.fold << " "
        << detail::format_double(row.risk) << " "
        << detail::format_double(row.time) << " " << (row.event ? 1 : 0)
        << "\n";
  }
}

inline std::vector<PredictionRow> load_predictions(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "predictions: cannot open '" + path + "'");
  std::string line;
  require(std::getline(in, line) &&
              line == "patient_id fold risk time event",
          "predictions: '" + path + "' has an unrecognized header");
  std::vector<PredictionRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    PredictionRow row;
    int event = 0;
    require(static_cast<bool>(fields >> row.patient_id >> row.fold >>
                              row.risk >> row.time >> event),
            "predictions: malformed row '" + line + "'");
    row.event = event == 1;
    rows.push_back(row);
  }
  require(!rows.empty(), "predictions: '" + path + "' holds no rows");
  return rows;
}

// Stratifies pooled predictions, fits per-group survival curves, and writes
// the curve table plus the step plot. Single-group inputs produce curves but
// no test annotation.
inline void emit_km_plot(const std::string& curve_path,
                         const std::string& svg_path,
                         const std::vector<PredictionRow>& predictions,
                         std::vector<std::string>* warnings = nullptr) {
  require(!predictions.empty(), "emit_km_plot: no predictions");
  std::vector<double> risks;
  std::vector<SurvivalRecord> records;
  for (const PredictionRow& row : predictions) {
    risks.push_back(row.risk);
    SurvivalRecord record;
    record.patient_id = row.patient_id;
    record.time = row.time;
    record.event = row.event;
    records.push_back(record);
  }
  const std::vector<int> groups = stratify_by_median(risks);
  std::vector<SurvivalRecord> low, high;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (groups[i] == 0 ? low : high).push_back(records[i]);
  }

  std::vector<KmGroup> curves;
  curves.push_back({"low", kaplan_meier(low)});
  if (!high.empty()) curves.push_back({"high", kaplan_meier(high)});
  save_km_curves(curve_path, curves);
  if (high.empty()) {
    if (warnings != nullptr) {
      warnings->push_back(
          "km plot: all risks tie at the median; single-group curve without "
          "a log-rank annotation");
    }
    save_km_svg(svg_path, curves, nullptr);
  } else {
    const LogRankResult test = log_rank(low, high);
    save_km_svg(svg_path, curves, &test);
  }
}

}  // namespace survfuse
