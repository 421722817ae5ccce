#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "kpgnn/tensor.hpp"

namespace kpgnn::cluster {

/// Cluster id per row; -1 marks DBSCAN noise.
struct Partition {
  std::vector<int> assignment;

  std::size_t size() const { return assignment.size(); }
  /// Distinct non-noise cluster ids.
  std::size_t cluster_count() const;
  bool operator==(const Partition&) const = default;
};

struct KMeansResult {
  Partition partition;
  tensor::Matrix centroids;
  std::size_t iterations = 0;
  /// Within-cluster sum of squares after each assignment step.
  std::vector<double> objective;
};

/// k-means++ seeding: indices of the initial centroids.
std::vector<std::size_t> kmeans_plus_plus(const tensor::Matrix& points, std::size_t k,
                                          std::uint64_t seed);

KMeansResult kmeans(const tensor::Matrix& points, std::size_t k, std::uint64_t seed,
                    std::size_t max_iter = 300);

struct DbscanOptions {
  double eps = 0.5;
  std::size_t min_pts = 5;
  /// Cluster L2-normalized rows.
  bool normalize = true;
};

Partition dbscan(const tensor::Matrix& points, const DbscanOptions& options = {});

/// Replaces every -1 with a fresh singleton id.
Partition resolve_noise(const Partition& p);

double nmi(const Partition& pred, const Partition& truth);
double ami(const Partition& pred, const Partition& truth);
double ari(const Partition& pred, const Partition& truth);

struct Scores {
  double nmi = 0.0;
  double ami = 0.0;
  double ari = 0.0;
};

Scores score(const Partition& pred, const Partition& truth);

}  // namespace kpgnn::cluster
