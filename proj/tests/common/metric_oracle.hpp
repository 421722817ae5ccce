#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <numeric>
#include <vector>

namespace oracle {

using Labels = std::vector<int>;

// Noise ids (< 0) become fresh singletons.
inline Labels singletons(Labels v) {
  int next = 0;
  for (int a : v) next = std::max(next, a + 1);
  for (int& a : v)
    if (a < 0) a = next++;
  return v;
}

inline std::map<int, double> marginal(const Labels& v) {
  std::map<int, double> m;
  for (int a : v) m[a] += 1.0;
  return m;
}

inline double entropy_of(const Labels& v) {
  double h = 0;
  for (const auto& [k, c] : marginal(v)) h -= c / v.size() * std::log(c / v.size());
  return h;
}

// I(U;V) = sum_{u,v} p(u,v) log(p(u,v) / (p(u) p(v))), joint counted pointwise.
inline double mutual_info_of(const Labels& u, const Labels& v) {
  const double n = static_cast<double>(u.size());
  std::map<std::pair<int, int>, double> joint;
  for (std::size_t i = 0; i < u.size(); ++i) joint[{u[i], v[i]}] += 1.0;
  auto pu = marginal(u), pv = marginal(v);
  double mi = 0;
  for (const auto& [k, c] : joint) mi += c / n * std::log((c / n) / ((pu[k.first] / n) * (pv[k.second] / n)));
  return mi;
}

inline bool same_partition(const Labels& u, const Labels& v) {
  for (std::size_t i = 0; i < u.size(); ++i)
    for (std::size_t j = i + 1; j < u.size(); ++j)
      if ((u[i] == u[j]) != (v[i] == v[j])) return false;
  return true;
}

inline double nmi_oracle(Labels u, Labels v) {
  u = singletons(u);
  v = singletons(v);
  if (u.empty()) return 1.0;
  const double hu = entropy_of(u), hv = entropy_of(v);
  if (marginal(u).size() == 1 && marginal(v).size() == 1) return 1.0;
  if (marginal(u).size() == 1 || marginal(v).size() == 1) return 0.0;
  return mutual_info_of(u, v) / std::sqrt(hu * hv);
}

inline double binomial(std::uint64_t n, std::uint64_t k) {
  if (k > n) return 0.0;
  std::uint64_t r = 1;
  for (std::uint64_t i = 1; i <= k; ++i) r = r * (n - k + i) / i;  // exact at every step
  return static_cast<double>(r);
}

// E[I] under the permutation model, summed over the hypergeometric support
// of every cell with exact integer binomials.
inline double emi_hypergeometric(const Labels& u, const Labels& v) {
  const std::uint64_t n = u.size();
  double emi = 0;
  for (const auto& [ka, a] : marginal(u))
    for (const auto& [kb, b] : marginal(v)) {
      const auto A = static_cast<std::uint64_t>(a), B = static_cast<std::uint64_t>(b);
      for (std::uint64_t k = std::max<std::int64_t>(1, std::int64_t(A + B) - std::int64_t(n)); k <= std::min(A, B); ++k) {
        const double p = binomial(B, k) * binomial(n - B, A - k) / binomial(n, A);
        emi += p * double(k) / double(n) * std::log(double(n) * double(k) / (a * b));
      }
    }
  return emi;
}

// E[I] as the average over every permutation of v; small n only.
inline double emi_permutations(const Labels& u, const Labels& v) {
  std::vector<std::size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), 0);
  double total = 0;
  std::size_t count = 0;
  do {
    Labels w(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) w[i] = v[idx[i]];
    total += mutual_info_of(u, w);
    ++count;
  } while (std::next_permutation(idx.begin(), idx.end()));
  return total / static_cast<double>(count);
}

inline double ami_oracle(Labels u, Labels v) {
  u = singletons(u);
  v = singletons(v);
  if (u.empty() || (marginal(u).size() == 1 && marginal(v).size() == 1)) return 1.0;
  const double hu = entropy_of(u), hv = entropy_of(v);
  const double emi = emi_hypergeometric(u, v);
  const double denom = 0.5 * (hu + hv) - emi;
  if (std::abs(denom) <= 1e-12 * std::max(1.0, 0.5 * (hu + hv))) return same_partition(u, v) ? 1.0 : 0.0;
  return (mutual_info_of(u, v) - emi) / denom;
}

// Pair counting over all C(n,2) pairs.
inline double ari_oracle(Labels u, Labels v) {
  u = singletons(u);
  v = singletons(v);
  const std::size_t n = u.size();
  if (n < 2) return 1.0;
  double both = 0, in_u = 0, in_v = 0, pairs = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const bool su = u[i] == u[j], sv = v[i] == v[j];
      both += su && sv;
      in_u += su;
      in_v += sv;
      pairs += 1;
    }
  const double expected = in_u * in_v / pairs;
  const double max_index = 0.5 * (in_u + in_v);
  if (max_index == expected) return same_partition(u, v) ? 1.0 : 0.0;
  return (both - expected) / (max_index - expected);
}

// Every set partition of n elements as a restricted growth string.
inline void for_each_set_partition(std::size_t n, const std::function<void(const Labels&)>& f) {
  Labels a(n, 0);
  std::function<void(std::size_t, int)> rec = [&](std::size_t i, int used) {
    if (i == n) {
      f(a);
      return;
    }
    for (int c = 0; c <= used; ++c) {
      a[i] = c;
      rec(i + 1, std::max(used, c + 1));
    }
  };
  if (n == 0) {
    f(a);
    return;
  }
  rec(0, 0);
}

// One representative per integer partition of n: contiguous blocks with
// non-increasing sizes. Up to relabeling of elements, every set partition
// is one of these.
inline void for_each_block_shape(std::size_t n, const std::function<void(const Labels&)>& f) {
  std::vector<std::size_t> sizes;
  std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t left, std::size_t cap) {
    if (left == 0) {
      Labels a;
      for (std::size_t b = 0; b < sizes.size(); ++b) a.insert(a.end(), sizes[b], static_cast<int>(b));
      f(a);
      return;
    }
    for (std::size_t s = std::min(left, cap); s >= 1; --s) {
      sizes.push_back(s);
      rec(left - s, s);
      sizes.pop_back();
    }
  };
  rec(n, n);
}

}  // namespace oracle
