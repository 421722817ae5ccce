#include "kpgnn/losses.hpp"

#include <cmath>

namespace kpgnn::losses {

using tensor::Matrix;
using tensor::Var;

namespace {
constexpr double kLogitClamp = 30.0;
}

Matrix pairwise_sq_distances(const Matrix& h) {
  const std::size_t n = h.rows();
  Matrix d(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < h.cols(); ++k) {
        const double diff = h(i, k) - h(j, k);
        s += diff * diff;
      }
      d(i, j) = d(j, i) = s;
    }
  return d;
}

std::vector<Triplet> mine_batch_hard(const Matrix& h, Labels labels) {
  if (labels.size() != h.rows()) throw ShapeError("mine_batch_hard: one label slot per row required");
  const Matrix d = pairwise_sq_distances(h);
  std::vector<Triplet> out;
  const std::size_t n = h.rows();
  for (std::size_t a = 0; a < n; ++a) {
    if (!labels[a]) continue;
    std::optional<std::size_t> pos, neg;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == a || !labels[j]) continue;
      if (*labels[j] == *labels[a]) {
        if (!pos || d(a, j) > d(a, *pos)) pos = j;
      } else {
        if (!neg || d(a, j) < d(a, *neg)) neg = j;
      }
    }
    if (pos && neg && d(a, *neg) < d(a, *pos)) out.push_back({a, *pos, *neg});
  }
  return out;
}

Var triplet_loss(Var h, std::span<const Triplet> triplets, double margin) {
  tensor::Tape& tape = *h.tape();
  if (triplets.empty()) return tape.constant(Matrix(1, 1, 0.0));
  std::vector<std::size_t> a, p, n;
  for (const auto& t : triplets) {
    if (t.anchor >= h.rows() || t.positive >= h.rows() || t.negative >= h.rows()) {
      throw ShapeError("triplet index out of range");
    }
    a.push_back(t.anchor);
    p.push_back(t.positive);
    n.push_back(t.negative);
  }
  Var ha = tensor::gather_rows(h, a);
  Var dp = tensor::sq_dist_rows(ha, tensor::gather_rows(h, p));
  Var dn = tensor::sq_dist_rows(ha, tensor::gather_rows(h, n));
  return tensor::sum(tensor::relu(tensor::add_scalar(tensor::sub(dp, dn), margin)));
}

Var summary_vector(Var h) {
  if (h.rows() == 0) throw ShapeError("summary_vector: empty batch");
  return tensor::mean_rows(h);
}

Var pair_loss(Var h, Var corrupted, Var summary, Var discriminator) {
  if (!h.value().same_shape(corrupted.value())) {
    throw ShapeError("pair_loss: clean and corrupted embeddings differ in shape");
  }
  if (summary.rows() != 1 || summary.cols() != h.cols()) {
    throw ShapeError("pair_loss: summary must be 1 x " + std::to_string(h.cols()));
  }
  if (discriminator.rows() != h.cols() || discriminator.cols() != h.cols()) {
    throw ShapeError("pair_loss: discriminator must be square in the embedding width");
  }
  if (h.rows() == 0) throw ShapeError("pair_loss: empty batch");
  Var ws = tensor::matmul(discriminator, tensor::transpose(summary));
  Var pos = tensor::clamp(tensor::matmul(h, ws), -kLogitClamp, kLogitClamp);
  Var neg = tensor::clamp(tensor::matmul(corrupted, ws), -kLogitClamp, kLogitClamp);
  Var log_pos = tensor::log(tensor::sigmoid(pos));
  Var log_neg = tensor::log(tensor::sigmoid(tensor::scale(neg, -1.0)));
  const double inv_n = 1.0 / static_cast<double>(h.rows());
  return tensor::scale(tensor::add(tensor::sum(log_pos), tensor::sum(log_neg)), -inv_n);
}

CombinedLoss combined_loss(Var h, Var corrupted, Labels labels, double margin, Var discriminator) {
  const auto triplets = mine_batch_hard(h.value(), labels);
  Var lt = triplet_loss(h, triplets, margin);
  Var lp = pair_loss(h, corrupted, summary_vector(h), discriminator);
  Var total = tensor::add(lt, lp);
  LossReport r;
  r.triplet = lt.value()(0, 0);
  r.pair = lp.value()(0, 0);
  r.total = total.value()(0, 0);
  r.hard_triplets = triplets.size();
  return {total, r};
}

LossReport evaluate(const Matrix& h, const Matrix& corrupted, Labels labels, double margin,
                    const Matrix& discriminator) {
  tensor::Tape tape;
  return combined_loss(tape.constant(h), tape.constant(corrupted), labels, margin,
                       tape.constant(discriminator))
      .report;
}

}  // namespace kpgnn::losses
