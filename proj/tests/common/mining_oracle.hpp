#pragma once

#include <optional>
#include <span>
#include <vector>

#include "kpgnn/losses.hpp"

namespace oracle {

// Per anchor, every (p, n) candidate pair is scanned; the pair with the
// largest D(a,p), then the smallest D(a,n), then smallest indices wins. The
// hard filter is applied afterwards.
inline std::vector<kpgnn::losses::Triplet> brute_force_mining(const kpgnn::tensor::Matrix& h,
                                                              std::span<const std::optional<int>> labels) {
  auto dist = [&](std::size_t i, std::size_t j) {
    double s = 0;
    for (std::size_t c = 0; c < h.cols(); ++c) s += (h(i, c) - h(j, c)) * (h(i, c) - h(j, c));
    return s;
  };
  std::vector<kpgnn::losses::Triplet> out;
  for (std::size_t a = 0; a < h.rows(); ++a) {
    if (!labels[a]) continue;
    std::optional<kpgnn::losses::Triplet> best;
    for (std::size_t p = 0; p < h.rows(); ++p) {
      if (p == a || !labels[p] || *labels[p] != *labels[a]) continue;
      for (std::size_t n = 0; n < h.rows(); ++n) {
        if (!labels[n] || *labels[n] == *labels[a]) continue;
        if (!best) {
          best = kpgnn::losses::Triplet{a, p, n};
          continue;
        }
        const double bp = dist(a, best->positive), bn = dist(a, best->negative);
        const double cp = dist(a, p), cn = dist(a, n);
        if (cp > bp || (cp == bp && cn < bn)) best = kpgnn::losses::Triplet{a, p, n};
      }
    }
    if (best && dist(a, best->negative) < dist(a, best->positive)) out.push_back(*best);
  }
  return out;
}

}  // namespace oracle
