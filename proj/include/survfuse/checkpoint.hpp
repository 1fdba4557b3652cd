// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "config.hpp"
#include "dataset.hpp"
#include "model.hpp"

namespace survfuse {

// Self-describing model snapshot: a textual header (run config, gene symbols,
// module membership, tensor names and shapes) followed by every tensor's
// values as little-endian 64-bit floats in header order.
struct Checkpoint {
  std::size_t epoch = 0;
  double best_val_loss = 0.0;
  RunConfig config;
  std::vector<std::string> gene_symbols;
  GeneModuleMembership membership;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

namespace detail {

inline void write_le_doubles(std::ostream& out,
                             const std::vector<double>& values) {
  for (const double v : values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char bytes[8];
    for (int b = 0; b < 8; ++b) {
      bytes[b] = static_cast<char>((bits >> (8 * b)) & 0xff);
    }
    out.write(bytes, 8);
  }
}

inline void read_le_doubles(std::istream& in, std::vector<double>& values) {
  for (double& v : values) {
    char bytes[8];
    in.read(bytes, 8);
    require(in.gcount() == 8, "checkpoint: binary payload truncated");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) {
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[b]))
              << (8 * b);
    }
    v = std::bit_cast<double>(bits);
  }
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const SurvivalModel& model,
                            std::size_t epoch, double best_val_loss,
                            const std::vector<std::string>& gene_symbols) {
  std::ofstream out(path, std::ios::binary);
  require(out.good(), "checkpoint: cannot write '" + path + "'");
  out << "survfuse-checkpoint v1\n";
  out << "epoch " << epoch << "\n";
  out << "best_val_loss " << detail::format_double(best_val_loss) << "\n";
  // Host paths would make otherwise-identical runs produce different bytes.
  RunConfig snapshot = model.config();
  snapshot.dataset_dir.clear();
  snapshot.out_dir.clear();
  out << "config " << config_to_line(snapshot) << "\n";
  out << "genes " << gene_symbols.size();
  for (const std::string& symbol : gene_symbols) out << " " << symbol;
  out << "\n";
  const GeneModuleMembership& membership = model.membership();
  for (std::size_t m = 0; m < membership.module_count(); ++m) {
    out << "module " << m;
    for (const std::size_t g : membership.modules[m]) out << " " << g;
    out << "\n";
  }
  std::size_t total = 0;
  for (const auto& [name, tensor] : model.named_parameters()) {
    out << "tensor " << name << " " << tensor.rows() << " " << tensor.cols()
        << "\n";
    total += tensor.size();
  }
  out << "data " << total << "\n";
  for (const auto& [name, tensor] : model.named_parameters()) {
    detail::write_le_doubles(out, tensor.data());
  }
  require(out.good(), "checkpoint: write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), "checkpoint: cannot open '" + path + "'");
  Checkpoint checkpoint;
  std::string line;
  require(std::getline(in, line) && line == "survfuse-checkpoint v1",
          "checkpoint: '" + path + "' has an unrecognized header");

  std::size_t declared_total = 0;
  bool saw_config = false;
  while (std::getline(in, line)) {
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "epoch") {
      require(static_cast<bool>(fields >> checkpoint.epoch),
              "checkpoint: malformed epoch line");
    } else if (key == "best_val_loss") {
      require(static_cast<bool>(fields >> checkpoint.best_val_loss),
              "checkpoint: malformed best_val_loss line");
    } else if (key == "config") {
      std::string rest;
      std::getline(fields, rest);
      checkpoint.config = parse_config(rest);
      saw_config = true;
    } else if (key == "genes") {
      std::size_t count = 0;
      require(static_cast<bool>(fields >> count),
              "checkpoint: malformed genes line");
      checkpoint.gene_symbols.resize(count);
      for (std::string& symbol : checkpoint.gene_symbols) {
        require(static_cast<bool>(fields >> symbol),
                "checkpoint: genes line names too few symbols");
      }
    } else if (key == "module") {
      std::size_t index = 0;
      require(static_cast<bool>(fields >> index) &&
                  index == checkpoint.membership.modules.size(),
              "checkpoint: module lines out of order");
      std::vector<std::size_t> genes;
      std::size_t g = 0;
      while (fields >> g) genes.push_back(g);
      require(!genes.empty(), "checkpoint: module " + std::to_string(index) +
                                  " is empty");
      checkpoint.membership.modules.push_back(std::move(genes));
    } else if (key == "tensor") {
      std::string name;
      std::size_t rows = 0, cols = 0;
      require(static_cast<bool>(fields >> name >> rows >> cols),
              "checkpoint: malformed tensor line");
      checkpoint.tensors.emplace_back(name, Tensor{Shape{rows, cols}});
    } else if (key == "data") {
      require(static_cast<bool>(fields >> declared_total),
              "checkpoint: malformed data line");
      break;
    } else {
      throw std::invalid_argument("checkpoint: unknown header key '" + key +
                                  "'");
    }
  }
  require(saw_config, "checkpoint: missing config line");
  require(!checkpoint.tensors.empty(), "checkpoint: no tensors declared");

  std::size_t total = 0;
  for (auto& [name, tensor] : checkpoint.tensors) total += tensor.size();
  require(total == declared_total,
          "checkpoint: declared " + std::to_string(declared_total) +
              " values, tensors hold " + std::to_string(total));
  for (auto& [name, tensor] : checkpoint.tensors) {
    detail::read_le_doubles(in, tensor.data());
  }
  return checkpoint;
}

// Rebuilds a trainable model from a checkpoint; the freshly initialized
// parameters are overwritten with the stored values name by name.
inline SurvivalModel model_from_checkpoint(const Checkpoint& checkpoint) {
  SurvivalModel model(checkpoint.config, checkpoint.membership,
                      checkpoint.config.seed);
  require(checkpoint.tensors.size() == model.named_parameters().size(),
          "checkpoint: stores " + std::to_string(checkpoint.tensors.size()) +
              " tensors, model defines " +
              std::to_string(model.named_parameters().size()));
  for (const auto& [name, tensor] : checkpoint.tensors) {
    model.set_parameter(name, tensor.data());
  }
  return model;
}

}  // namespace survfuse
