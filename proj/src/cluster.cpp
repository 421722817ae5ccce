#include "kpgnn/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <map>
#include <set>

#include "kpgnn/random.hpp"

namespace kpgnn::cluster {

using tensor::Matrix;

std::size_t Partition::cluster_count() const {
  std::set<int> ids;
  for (int a : assignment)
    if (a >= 0) ids.insert(a);
  return ids.size();
}

namespace {

double sq_dist(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// Nearest centroid, ties to the smaller index.
std::size_t nearest(std::span<const double> p, const Matrix& centroids, double* dist = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < centroids.rows(); ++c) {
    const double d = sq_dist(p, centroids.row(c));
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  if (dist) *dist = best_d;
  return best;
}

}  // namespace

std::vector<std::size_t> kmeans_plus_plus(const Matrix& points, std::size_t k, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::size_t> chosen{rng.uniform_index(points.rows())};
  std::vector<double> best(points.rows(), std::numeric_limits<double>::infinity());
  while (chosen.size() < k) {
    std::vector<double> cumulative(points.rows());
    double total = 0.0;
    for (std::size_t i = 0; i < points.rows(); ++i) {
      best[i] = std::min(best[i], sq_dist(points.row(i), points.row(chosen.back())));
      total += best[i];
      cumulative[i] = total;
    }
    chosen.push_back(total > 0.0 ? rng.categorical(cumulative) : rng.uniform_index(points.rows()));
  }
  return chosen;
}

KMeansResult kmeans(const Matrix& points, std::size_t k, std::uint64_t seed, std::size_t max_iter) {
  const std::size_t n = points.rows(), d = points.cols();
  if (k == 0) throw ConfigError("kmeans: k must be >= 1");
  if (k > n) {
    throw ConfigError("kmeans: k=" + std::to_string(k) + " exceeds " + std::to_string(n) + " rows");
  }
  KMeansResult r;
  r.centroids = Matrix(k, d);
  const auto init = kmeans_plus_plus(points, k, seed);
  for (std::size_t c = 0; c < k; ++c)
    std::copy_n(points.row(init[c]).data(), d, r.centroids.row(c).data());

  auto& assign = r.partition.assignment;
  assign.assign(n, 0);
  auto assign_all = [&] {
    bool changed = false;
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double dist = 0.0;
      const int c = static_cast<int>(nearest(points.row(i), r.centroids, &dist));
      changed = changed || c != assign[i];
      assign[i] = c;
      obj += dist;
    }
    r.objective.push_back(obj);
    return changed;
  };
  assign_all();

  while (r.iterations < max_iter) {
    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      auto row = sums.row(assign[i]);
      for (std::size_t j = 0; j < d; ++j) row[j] += points(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) r.centroids(c, j) = sums(c, j) / counts[c];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      std::size_t far = 0;
      double far_d = -1.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[assign[i]] <= 1) continue;
        const double dd = sq_dist(points.row(i), r.centroids.row(assign[i]));
        if (dd > far_d) {
          far_d = dd;
          far = i;
        }
      }
      std::copy_n(points.row(far).data(), d, r.centroids.row(c).data());
      --counts[assign[far]];
      assign[far] = static_cast<int>(c);
      counts[c] = 1;
    }
    ++r.iterations;
    if (!assign_all()) break;
  }
  return r;
}

Partition dbscan(const Matrix& points, const DbscanOptions& options) {
  if (options.eps <= 0.0) throw ConfigError("dbscan: eps must be positive");
  if (options.min_pts == 0) throw ConfigError("dbscan: min_pts must be >= 1");
  Matrix x = points;
  if (options.normalize) {
    for (std::size_t i = 0; i < x.rows(); ++i) {
      auto row = x.row(i);
      double norm = 0.0;
      for (double v : row) norm += v * v;
      norm = std::sqrt(norm);
      if (norm > 0.0)
        for (double& v : row) v /= norm;
    }
  }
  const std::size_t n = x.rows();
  const double eps2 = options.eps * options.eps;
  auto region = [&](std::size_t p) {
    std::vector<std::size_t> out;
    for (std::size_t q = 0; q < n; ++q)
      if (sq_dist(x.row(p), x.row(q)) <= eps2) out.push_back(q);
    return out;
  };
  constexpr int kUnvisited = -2;
  Partition part;
  auto& label = part.assignment;
  label.assign(n, kUnvisited);
  int cluster = 0;
  for (std::size_t p = 0; p < n; ++p) {
    if (label[p] != kUnvisited) continue;
    const auto seeds = region(p);
    if (seeds.size() < options.min_pts) {
      label[p] = -1;
      continue;
    }
    label[p] = cluster;
    std::deque<std::size_t> queue(seeds.begin(), seeds.end());
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      if (label[q] == -1) label[q] = cluster;
      if (label[q] != kUnvisited) continue;
      label[q] = cluster;
      const auto next = region(q);
      if (next.size() >= options.min_pts) queue.insert(queue.end(), next.begin(), next.end());
    }
    ++cluster;
  }
  return part;
}

Partition resolve_noise(const Partition& p) {
  int next = 0;
  for (int a : p.assignment) next = std::max(next, a + 1);
  Partition out = p;
  for (int& a : out.assignment)
    if (a < 0) a = next++;
  return out;
}

namespace {

struct Contingency {
  std::vector<std::size_t> row_sums;
  std::vector<std::size_t> col_sums;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> cells;
  std::size_t n = 0;
};

Contingency contingency(const Partition& pred, const Partition& truth) {
  if (pred.size() != truth.size()) {
    throw ConfigError("partitions cover different node sets (" + std::to_string(pred.size()) +
                      " vs " + std::to_string(truth.size()) + ")");
  }
  const Partition u = resolve_noise(pred), v = resolve_noise(truth);
  std::map<int, std::size_t> ru, rv;
  for (int a : u.assignment) ru.emplace(a, ru.size());
  for (int b : v.assignment) rv.emplace(b, rv.size());
  Contingency c;
  c.n = u.size();
  c.row_sums.assign(ru.size(), 0);
  c.col_sums.assign(rv.size(), 0);
  for (std::size_t i = 0; i < c.n; ++i) {
    const std::size_t a = ru[u.assignment[i]], b = rv[v.assignment[i]];
    ++c.row_sums[a];
    ++c.col_sums[b];
    ++c.cells[{a, b}];
  }
  return c;
}

double entropy(const std::vector<std::size_t>& sums, std::size_t n) {
  double h = 0.0;
  for (std::size_t s : sums) {
    if (s == 0) continue;
    const double p = static_cast<double>(s) / static_cast<double>(n);
    h -= p * std::log(p);
  }
  return h;
}

double mutual_information(const Contingency& c) {
  const double n = static_cast<double>(c.n);
  double mi = 0.0;
  for (const auto& [ij, nij] : c.cells) {
    const double v = static_cast<double>(nij);
    mi += v / n *
          std::log(n * v / (static_cast<double>(c.row_sums[ij.first]) *
                            static_cast<double>(c.col_sums[ij.second])));
  }
  return mi;
}

double expected_mutual_information(const Contingency& c) {
  const std::size_t n = c.n;
  const double nd = static_cast<double>(n);
  const double lg_n = std::lgamma(nd + 1.0);
  double emi = 0.0;
  for (std::size_t a : c.row_sums) {
    for (std::size_t b : c.col_sums) {
      const std::size_t lo = std::max<std::size_t>(1, a + b > n ? a + b - n : 0);
      const std::size_t hi = std::min(a, b);
      const double ad = static_cast<double>(a), bd = static_cast<double>(b);
      const double fixed = std::lgamma(ad + 1) + std::lgamma(bd + 1) + std::lgamma(nd - ad + 1) +
                           std::lgamma(nd - bd + 1) - lg_n;
      for (std::size_t k = lo; k <= hi; ++k) {
        const double kd = static_cast<double>(k);
        const double log_p = fixed - std::lgamma(kd + 1) - std::lgamma(ad - kd + 1) -
                             std::lgamma(bd - kd + 1) - std::lgamma(nd - ad - bd + kd + 1);
        emi += kd / nd * std::log(nd * kd / (ad * bd)) * std::exp(log_p);
      }
    }
  }
  return emi;
}

bool same_partition(const Contingency& c) {
  return c.row_sums.size() == c.cells.size() && c.col_sums.size() == c.cells.size();
}

double choose2(std::size_t x) { return static_cast<double>(x) * static_cast<double>(x - (x > 0)) / 2.0; }

}  // namespace

double nmi(const Partition& pred, const Partition& truth) {
  const Contingency c = contingency(pred, truth);
  if (c.n == 0) return 1.0;
  const double hu = entropy(c.row_sums, c.n), hv = entropy(c.col_sums, c.n);
  if (hu == 0.0 && hv == 0.0) return 1.0;
  if (hu == 0.0 || hv == 0.0) return 0.0;
  return mutual_information(c) / std::sqrt(hu * hv);
}

double ami(const Partition& pred, const Partition& truth) {
  const Contingency c = contingency(pred, truth);
  if (c.n == 0 || (c.row_sums.size() == 1 && c.col_sums.size() == 1)) return 1.0;
  const double hu = entropy(c.row_sums, c.n), hv = entropy(c.col_sums, c.n);
  const double mi = mutual_information(c);
  const double emi = expected_mutual_information(c);
  const double denom = 0.5 * (hu + hv) - emi;
  if (std::abs(denom) <= 1e-12 * std::max(1.0, 0.5 * (hu + hv))) {
    return same_partition(c) ? 1.0 : 0.0;
  }
  return (mi - emi) / denom;
}

double ari(const Partition& pred, const Partition& truth) {
  const Contingency c = contingency(pred, truth);
  if (c.n < 2) return 1.0;
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [ij, nij] : c.cells) index += choose2(nij);
  for (std::size_t a : c.row_sums) sum_a += choose2(a);
  for (std::size_t b : c.col_sums) sum_b += choose2(b);
  const double expected = sum_a * sum_b / choose2(c.n);
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index - expected == 0.0) return same_partition(c) ? 1.0 : 0.0;
  return (index - expected) / (max_index - expected);
}

Scores score(const Partition& pred, const Partition& truth) {
  return {nmi(pred, truth), ami(pred, truth), ari(pred, truth)};
}

}  // namespace kpgnn::cluster
