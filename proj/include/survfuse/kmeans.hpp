// Copyright (c) 2026 survfuse contributors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "rng.hpp"

namespace survfuse {

struct KmeansResult {
  std::vector<std::size_t> assignment;
  std::vector<std::vector<double>> centroids;
  double inertia = 0.0;
  // One entry per centroid update, non-increasing.
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
};

namespace detail {

inline double sq_dist(const std::vector<double>& a,
                      const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return acc;
}

}  // namespace detail

// Lloyd iterations from a kmeans++ seeding. Deterministic for a given
// (points, cluster_count, seed) triple. Empty clusters are repaired by moving
// the point farthest from its assigned centroid out of a cluster that can
// spare one; the repaired cluster centers exactly on that point at the next
// update, so the recorded inertia sequence stays non-increasing.
inline KmeansResult kmeans(const std::vector<std::vector<double>>& points,
                           std::size_t cluster_count, std::uint64_t seed,
                           std::size_t max_iterations = 100) {
  const std::size_t n = points.size();
  if (n == 0) throw std::invalid_argument("kmeans: no points");
  if (cluster_count == 0) {
    throw std::invalid_argument("kmeans: cluster_count must be positive");
  }
  if (cluster_count > n) {
    throw std::invalid_argument(
        "kmeans: cluster_count " + std::to_string(cluster_count) +
        " exceeds point count " + std::to_string(n));
  }
  if (max_iterations == 0) {
    throw std::invalid_argument("kmeans: max_iterations must be positive");
  }
  const std::size_t dim = points.front().size();
  if (dim == 0) throw std::invalid_argument("kmeans: points have no features");
  for (const auto& p : points) {
    if (p.size() != dim) {
      throw std::invalid_argument(
          "kmeans: points have inconsistent dimensions");
    }
  }

  Rng rng(seed);
  KmeansResult result;
  result.centroids.reserve(cluster_count);

  // kmeans++ seeding: first centroid uniform, the rest sampled with
  // probability proportional to squared distance from the chosen set. When
  // every remaining point coincides with a centroid, take the lowest-index
  // point not yet chosen as a centroid.
  std::vector<bool> is_centroid(n, false);
  {
    const std::size_t first = rng.index(n);
    result.centroids.push_back(points[first]);
    is_centroid[first] = true;
  }
  std::vector<double> best_d2(n, std::numeric_limits<double>::infinity());
  while (result.centroids.size() < cluster_count) {
    const auto& latest = result.centroids.back();
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      best_d2[i] = std::min(best_d2[i], detail::sq_dist(points[i], latest));
      total += best_d2[i];
    }
    std::size_t chosen = n;
    if (total > 0.0) {
      const double r = rng.uniform() * total;
      double cum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        cum += best_d2[i];
        if (cum > r) {
          chosen = i;
          break;
        }
      }
      if (chosen == n) chosen = n - 1;
    } else {
      for (std::size_t i = 0; i < n; ++i) {
        if (!is_centroid[i]) {
          chosen = i;
          break;
        }
      }
      if (chosen == n) chosen = 0;
    }
    result.centroids.push_back(points[chosen]);
    is_centroid[chosen] = true;
  }

  std::vector<std::size_t> assignment(n, 0);
  std::vector<std::size_t> previous;
  for (std::size_t iter = 0; iter < max_iterations; ++iter) {
    // Assign each point to the nearest centroid, ties to the lowest index.
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double best_dist = detail::sq_dist(points[i], result.centroids[0]);
      for (std::size_t c = 1; c < cluster_count; ++c) {
        const double d = detail::sq_dist(points[i], result.centroids[c]);
        if (d < best_dist) {
          best_dist = d;
          best = c;
        }
      }
      assignment[i] = best;
    }

    // Repair empty clusters in ascending index order.
    std::vector<std::size_t> counts(cluster_count, 0);
    for (const std::size_t a : assignment) ++counts[a];
    for (std::size_t e = 0; e < cluster_count; ++e) {
      if (counts[e] != 0) continue;
      std::size_t donor_point = n;
      double farthest = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assignment[i]] < 2) continue;
        const double d =
            detail::sq_dist(points[i], result.centroids[assignment[i]]);
        if (d > farthest) {
          farthest = d;
          donor_point = i;
        }
      }
      if (donor_point == n) {
        throw std::logic_error("kmeans: no donor for empty cluster");
      }
      --counts[assignment[donor_point]];
      assignment[donor_point] = e;
      ++counts[e];
    }

    if (assignment == previous) break;
    previous = assignment;

    // Update centroids and record inertia.
    for (std::size_t c = 0; c < cluster_count; ++c) {
      result.centroids[c].assign(dim, 0.0);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t d = 0; d < dim; ++d) {
        result.centroids[assignment[i]][d] += points[i][d];
      }
    }
    for (std::size_t c = 0; c < cluster_count; ++c) {
      for (std::size_t d = 0; d < dim; ++d) {
        result.centroids[c][d] /= static_cast<double>(counts[c]);
      }
    }
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      inertia += detail::sq_dist(points[i], result.centroids[assignment[i]]);
    }
    result.inertia_history.push_back(inertia);
  }

  result.assignment = assignment;
  result.iterations = result.inertia_history.size();
  result.inertia =
      result.inertia_history.empty() ? 0.0 : result.inertia_history.back();
  return result;
}

}  // namespace survfuse
