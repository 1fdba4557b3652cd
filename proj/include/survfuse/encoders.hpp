// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "kmeans.hpp"
#include "layers.hpp"
#include "tensor.hpp"

namespace survfuse {

// Per-patient bag of pre-extracted patch feature vectors, one row per patch.
struct PatchFeatureSet {
  std::string patient_id;
  Tensor patches;  // m x d, m >= 1
};

inline void validate_patch_set(const PatchFeatureSet& set) {
  require(set.patches.defined() && set.patches.shape().size() == 2,
          "PatchFeatureSet: patches must form a matrix");
  require(set.patches.rows() >= 1, "PatchFeatureSet: need at least one patch");
  require(set.patches.finite(), "PatchFeatureSet: patch features not finite");
}

// Patient-level image representation: one encoded vector per phenotype
// cluster plus the number of patches that fed each vector.
struct FeatureBag {
  Tensor phenotypes;  // C x d_k
  std::vector<std::size_t> patch_counts;
};

// Shared per-patch encoder: a 1x1 convolution over the patch axis is exactly
// one affine map applied to every patch vector.
struct FcnParams {
  Tensor w;  // d x d_k
  Tensor b;  // 1 x d_k
};

// Encodes each phenotype cluster by mapping every member patch through the
// shared affine + ReLU and averaging the results. The per-column sorted
// accumulation inside mean_rows makes each phenotype vector bit-for-bit
// independent of patch order.
inline FeatureBag encode_phenotypes(const PatchFeatureSet& set,
                                    const std::vector<std::size_t>& assignment,
                                    std::size_t cluster_count,
                                    const FcnParams& fcn) {
  validate_patch_set(set);
  require(cluster_count >= 1, "encode_phenotypes: need at least one cluster");
  require(assignment.size() == set.patches.rows(),
          "encode_phenotypes: assignment covers " +
              std::to_string(assignment.size()) + " patches, set has " +
              std::to_string(set.patches.rows()));
  require(fcn.w.rows() == set.patches.cols(),
          "encode_phenotypes: encoder input width " +
              std::to_string(fcn.w.rows()) + " does not match patch dim " +
              std::to_string(set.patches.cols()));

  std::vector<std::vector<std::size_t>> members(cluster_count);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    require(assignment[i] < cluster_count,
            "encode_phenotypes: assignment index " +
                std::to_string(assignment[i]) + " out of range");
    members[assignment[i]].push_back(i);
  }
  for (std::size_t c = 0; c < cluster_count; ++c) {
    require(!members[c].empty(), "encode_phenotypes: phenotype " +
                                     std::to_string(c) + " has no patches");
  }

  Tensor encoded = relu(affine(set.patches, fcn.w, fcn.b));
  FeatureBag bag;
  std::vector<Tensor> rows;
  rows.reserve(cluster_count);
  for (std::size_t c = 0; c < cluster_count; ++c) {
    rows.push_back(mean_rows(gather_rows(encoded, members[c])));
    bag.patch_counts.push_back(members[c].size());
  }
  bag.phenotypes = concat_rows(rows);
  return bag;
}

// Partition of gene indices into co-expression modules, each sorted by
// ascending gene index.
struct GeneModuleMembership {
  std::vector<std::vector<std::size_t>> modules;
  std::vector<std::string> warnings;

  std::size_t module_count() const { return modules.size(); }

  std::size_t gene_count() const {
    std::size_t n = 0;
    for (const auto& m : modules) n += m.size();
    return n;
  }
};

// Groups genes by k-means over their z-scored across-patient expression
// profiles. A zero-variance gene cannot be z-scored; its centered (all-zero)
// profile is used instead and the gene is flagged.
inline GeneModuleMembership cluster_genes(const Tensor& expression,
                                          std::size_t module_count,
                                          std::uint64_t seed) {
  require(expression.defined() && expression.shape().size() == 2,
          "cluster_genes: expression must be a patients x genes matrix");
  const std::size_t patients = expression.rows();
  const std::size_t genes = expression.cols();
  require(patients >= 2, "cluster_genes: need at least 2 patients, got " +
                             std::to_string(patients));
  require(genes >= module_count,
          "cluster_genes: " + std::to_string(genes) + " genes cannot fill " +
              std::to_string(module_count) + " modules");
  require(expression.finite(), "cluster_genes: expression not finite");

  GeneModuleMembership membership;
  std::vector<std::vector<double>> profiles(
      genes, std::vector<double>(patients, 0.0));
  for (std::size_t g = 0; g < genes; ++g) {
    double mean = 0.0;
    for (std::size_t p = 0; p < patients; ++p) mean += expression.at(p, g);
    mean /= static_cast<double>(patients);
    double var = 0.0;
    for (std::size_t p = 0; p < patients; ++p) {
      const double centered = expression.at(p, g) - mean;
      profiles[g][p] = centered;
      var += centered * centered;
    }
    var /= static_cast<double>(patients);
    if (var > 0.0) {
      const double inv = 1.0 / std::sqrt(var);
      for (double& v : profiles[g]) v *= inv;
    } else {
      membership.warnings.push_back(
          "gene " + std::to_string(g) +
          " has zero variance; clustered on its centered raw profile");
    }
  }

  const KmeansResult clusters = kmeans(profiles, module_count, seed);
  membership.modules.assign(module_count, {});
  for (std::size_t g = 0; g < genes; ++g) {
    membership.modules[clusters.assignment[g]].push_back(g);
  }
  return membership;
}

inline void validate_membership(const GeneModuleMembership& membership,
                                std::size_t gene_count) {
  require(!membership.modules.empty(),
          "GeneModuleMembership: no modules defined");
  std::vector<bool> seen(gene_count, false);
  for (const auto& module : membership.modules) {
    require(!module.empty(), "GeneModuleMembership: empty module");
    for (std::size_t i = 0; i < module.size(); ++i) {
      require(module[i] < gene_count,
              "GeneModuleMembership: gene index " + std::to_string(module[i]) +
                  " out of range for " + std::to_string(gene_count) +
                  " genes");
      require(!seen[module[i]], "GeneModuleMembership: gene " +
                                    std::to_string(module[i]) +
                                    " appears in two modules");
      require(i == 0 || module[i - 1] < module[i],
              "GeneModuleMembership: module indices must ascend");
      seen[module[i]] = true;
    }
  }
  for (std::size_t g = 0; g < gene_count; ++g) {
    require(seen[g], "GeneModuleMembership: gene " + std::to_string(g) +
                         " belongs to no module");
  }
}

// Patient-level gene representation: one embedded vector per module.
struct GeneModuleSet {
  Tensor modules;  // C x d_k
};

// Embeds one patient's expression row module by module: gather the member
// genes in ascending index order and run the module's own MLP. Each MLP's
// input width is pinned to its module's member count.
inline GeneModuleSet encode_gene_modules(
    const std::vector<double>& expression_row,
    const GeneModuleMembership& membership,
    const std::vector<MlpParams>& module_mlps) {
  validate_membership(membership, expression_row.size());
  require(module_mlps.size() == membership.module_count(),
          "encode_gene_modules: " + std::to_string(module_mlps.size()) +
              " MLPs for " + std::to_string(membership.module_count()) +
              " modules");
  std::vector<Tensor> rows;
  rows.reserve(membership.module_count());
  for (std::size_t m = 0; m < membership.module_count(); ++m) {
    const auto& members = membership.modules[m];
    std::vector<double> values(members.size());
    for (std::size_t i = 0; i < members.size(); ++i) {
      values[i] = expression_row[members[i]];
    }
    rows.push_back(mlp_forward(module_mlps[m], Tensor::row(values)));
  }
  GeneModuleSet set;
  set.modules = concat_rows(rows);
  return set;
}

}  // namespace survfuse
