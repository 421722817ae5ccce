#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "kpgnn/tensor.hpp"

namespace kpgnn::losses {

/// Batch-local row indices with label(anchor) == label(positive) != label(negative).
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
  bool operator==(const Triplet&) const = default;
};

struct LossReport {
  double triplet = 0.0;
  double pair = 0.0;
  double total = 0.0;
  std::size_t hard_triplets = 0;
};

using Labels = std::span<const std::optional<int>>;

/// Squared euclidean distances between all rows.
tensor::Matrix pairwise_sq_distances(const tensor::Matrix& h);

/// Online batch-hard mining: per labeled anchor, the farthest positive and
/// nearest negative (ties to the smaller index), kept only when the negative
/// is strictly closer than the positive.
std::vector<Triplet> mine_batch_hard(const tensor::Matrix& h, Labels labels);

/// sum over triplets of max{D(a,p) - D(a,n) + margin, 0}, D squared euclidean.
tensor::Var triplet_loss(tensor::Var h, std::span<const Triplet> triplets, double margin);

/// Column means of the batch embeddings (1 x d').
tensor::Var summary_vector(tensor::Var h);

/// Binary cross-entropy of the bilinear discriminator sigmoid(h W_b s^T):
/// clean rows scored as positives, corrupted rows as negatives. Logits are
/// clamped to +-30.
tensor::Var pair_loss(tensor::Var h, tensor::Var corrupted, tensor::Var summary,
                      tensor::Var discriminator);

struct CombinedLoss {
  tensor::Var total;
  LossReport report;
};

CombinedLoss combined_loss(tensor::Var h, tensor::Var corrupted, Labels labels, double margin,
                           tensor::Var discriminator);

/// Value-only evaluation of combined_loss.
LossReport evaluate(const tensor::Matrix& h, const tensor::Matrix& corrupted, Labels labels,
                    double margin, const tensor::Matrix& discriminator);

}  // namespace kpgnn::losses
