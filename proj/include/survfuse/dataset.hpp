// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "encoders.hpp"
#include "survival.hpp"
#include "synth.hpp"
#include "tensor.hpp"

namespace survfuse {

// One fully matched patient: patch features, expression row aligned with the
// dataset's gene symbols, and the survival record.
struct Patient {
  std::string id;
  Tensor patches;  // m x d
  std::vector<double> expression;
  SurvivalRecord record;
};

struct Dataset {
  std::vector<Patient> patients;
  std::vector<std::string> gene_symbols;
  // One entry per excluded or suspicious manifest line.
  std::vector<std::string> warnings;
};

namespace detail {

inline std::string format_double(double v) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", v);
  return buffer;
}

}  // namespace detail

// Patch-feature file: header `d m`, then m rows of d reals.
inline Tensor load_patch_file(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "patch file: cannot open '" + path + "'");
  std::size_t d = 0, m = 0;
  require(static_cast<bool>(in >> d >> m),
          "patch file: '" + path + "' is missing the `d m` header");
  require(d >= 1 && m >= 1,
          "patch file: '" + path + "' declares an empty patch matrix");
  Tensor patches{Shape{m, d}};
  for (std::size_t i = 0; i < m * d; ++i) {
    require(static_cast<bool>(in >> patches.data()[i]),
            "patch file: '" + path + "' ended after " + std::to_string(i) +
                " of " + std::to_string(m * d) + " values");
  }
  require(patches.finite(), "patch file: '" + path + "' holds non-finite values");
  return patches;
}

inline void save_patch_file(const std::string& path, const Tensor& patches) {
  std::ofstream out(path);
  require(out.good(), "patch file: cannot write '" + path + "'");
  out << patches.cols() << " " << patches.rows() << "\n";
  for (std::size_t i = 0; i < patches.rows(); ++i) {
    for (std::size_t j = 0; j < patches.cols(); ++j) {
      out << (j ? " " : "") << detail::format_double(patches.at(i, j));
    }
    out << "\n";
  }
}

// Expression table: header `patient_id <symbols...>`, one row per patient.
struct ExpressionTable {
  std::vector<std::string> gene_symbols;
  std::map<std::string, std::vector<double>> rows;
};

inline ExpressionTable load_expression(const std::string& path) {
  std::ifstream in(path);
  require(in.good(), "expression table: cannot open '" + path + "'");
  ExpressionTable table;
  std::string line;
  require(static_cast<bool>(std::getline(in, line)),
          "expression table: '" + path + "' is empty");
  {
    std::istringstream header(line);
    std::string token;
    require(static_cast<bool>(header >> token),
            "expression table: '" + path + "' has a blank header");
    while (header >> token) table.gene_symbols.push_back(token);
    require(!table.gene_symbols.empty(),
            "expression table: '" + path + "' names no genes");
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string id;
    row >> id;
    std::vector<double> values(table.gene_symbols.size());
    for (std::size_t g = 0; g < values.size(); ++g) {
      require(static_cast<bool>(row >> values[g]),
              "expression table: row '" + id + "' has fewer than " +
                  std::to_string(values.size()) + " values");
      require(std::isfinite(values[g]),
              "expression table: row '" + id + "' holds a non-finite value");
    }
    double extra;
    require(!(row >> extra),
            "expression table: row '" + id + "' has more than " +
                std::to_string(values.size()) + " values");
    require(table.rows.emplace(id, std::move(values)).second,
            "expression table: duplicate row for '" + id + "'");
  }
  return table;
}

// Manifest: `<patient id> <patch file path> <time> <event>` per line, `#`
// starts a comment. Patients missing either modality are excluded with a
// warning rather than failing the whole load.
inline Dataset load_dataset(const std::string& directory) {
  namespace fs = std::filesystem;
  const fs::path root(directory);
  std::ifstream manifest(root / "manifest");
  require(manifest.good(),
          "dataset: cannot open manifest in '" + directory + "'");
  ExpressionTable table = load_expression((root / "expression.tsv").string());

  Dataset dataset;
  dataset.gene_symbols = table.gene_symbols;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(manifest, line)) {
    ++line_number;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::istringstream fields(line);
    Patient patient;
    std::string patch_path;
    double time = 0.0;
    int event = 0;
    if (!(fields >> patient.id)) continue;
    require(static_cast<bool>(fields >> patch_path >> time >> event),
            "dataset: manifest line " + std::to_string(line_number) +
                " is incomplete");
    require(event == 0 || event == 1,
            "dataset: manifest line " + std::to_string(line_number) +
                " has event flag " + std::to_string(event));
    require(std::isfinite(time) && time >= 0.0,
            "dataset: manifest line " + std::to_string(line_number) +
                " has an invalid time");

    const fs::path patches = root / patch_path;
    if (!fs::exists(patches)) {
      dataset.warnings.push_back("excluded '" + patient.id +
                                 "': missing patch file " + patch_path);
      continue;
    }
    const auto row = table.rows.find(patient.id);
    if (row == table.rows.end()) {
      dataset.warnings.push_back("excluded '" + patient.id +
                                 "': no expression row");
      continue;
    }
    patient.patches = load_patch_file(patches.string());
    patient.expression = row->second;
    patient.record.patient_id = patient.id;
    patient.record.time = time;
    patient.record.event = event == 1;
    dataset.patients.push_back(std::move(patient));
  }
  require(!dataset.patients.empty(),
          "dataset: no usable patients in '" + directory + "'");
  return dataset;
}

inline void save_dataset(const std::string& directory,
                         const SynthCohort& cohort) {
  namespace fs = std::filesystem;
  const fs::path root(directory);
  fs::create_directories(root / "patches");

  std::ofstream manifest(root / "manifest");
  require(manifest.good(), "dataset: cannot write manifest in '" + directory +
                               "'");
  manifest << "# patient_id patch_file time event\n";
  for (std::size_t i = 0; i < cohort.patch_sets.size(); ++i) {
    const std::string& id = cohort.patch_sets[i].patient_id;
    const std::string rel = "patches/" + id + ".txt";
    save_patch_file((root / rel).string(), cohort.patch_sets[i].patches);
    manifest << id << " " << rel << " "
             << detail::format_double(cohort.records[i].time) << " "
             << (cohort.records[i].event ? 1 : 0) << "\n";
  }

  std::ofstream expression(root / "expression.tsv");
  require(expression.good(),
          "dataset: cannot write expression table in '" + directory + "'");
  expression << "patient_id";
  for (const std::string& symbol : cohort.gene_symbols) {
    expression << "\t" << symbol;
  }
  expression << "\n";
  for (std::size_t i = 0; i < cohort.patch_sets.size(); ++i) {
    expression << cohort.patch_sets[i].patient_id;
    for (std::size_t g = 0; g < cohort.expression.cols(); ++g) {
      expression << "\t" << detail::format_double(cohort.expression.at(i, g));
    }
    expression << "\n";
  }

  std::ofstream truth(root / "truth.tsv");
  truth << "patient_id\tgroup\tlatent_risk\n";
  for (std::size_t i = 0; i < cohort.patch_sets.size(); ++i) {
    truth << cohort.patch_sets[i].patient_id << "\t" << cohort.group[i] << "\t"
          << detail::format_double(cohort.latent_risk[i]) << "\n";
  }
}

}  // namespace survfuse
