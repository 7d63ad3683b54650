#pragma once

// Definitional O(n^3) average-linkage oracle: cluster distance is the
// mean of raw pairwise cosine distances between members, recomputed from
// scratch at every step, global scan with the (min id, max id) tie rule.

#include <limits>
#include <vector>

#include "ehfkt/sfes.hpp"

namespace ehfkt::testing {

inline Dendrogram naive_agglomerate(const std::vector<Matrix>& points) {
  const int n = static_cast<int>(points.size());
  std::vector<std::vector<double>> pair_dist(n, std::vector<double>(n, 0.0));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      pair_dist[i][j] = pair_dist[j][i] = cosine_distance(points[i], points[j]);
    }
  }

  struct Cluster {
    int id;
    std::vector<int> members;
  };
  std::vector<Cluster> active;
  for (int i = 0; i < n; ++i) active.push_back({i, {i}});

  Dendrogram out;
  out.n_leaves = n;
  for (int step = 0; step < n - 1; ++step) {
    int best_a = -1, best_b = -1;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        double sum = 0.0;
        for (int i : active[a].members) {
          for (int j : active[b].members) sum += pair_dist[i][j];
        }
        const double d = sum / (static_cast<double>(active[a].members.size()) *
                                static_cast<double>(active[b].members.size()));
        const int lo = std::min(active[a].id, active[b].id);
        const int hi = std::max(active[a].id, active[b].id);
        bool better = d < best;
        if (d == best && best_a >= 0) {
          const int blo = std::min(active[best_a].id, active[best_b].id);
          const int bhi = std::max(active[best_a].id, active[best_b].id);
          better = lo < blo || (lo == blo && hi < bhi);
        }
        if (better) {
          best = d;
          best_a = static_cast<int>(a);
          best_b = static_cast<int>(b);
        }
      }
    }
    Cluster merged;
    merged.id = n + step;
    merged.members = active[best_a].members;
    merged.members.insert(merged.members.end(), active[best_b].members.begin(),
                          active[best_b].members.end());
    out.merges.push_back({std::min(active[best_a].id, active[best_b].id),
                          std::max(active[best_a].id, active[best_b].id), best,
                          static_cast<int>(merged.members.size())});
    // Erase the higher index first.
    active.erase(active.begin() + std::max(best_a, best_b));
    active.erase(active.begin() + std::min(best_a, best_b));
    active.push_back(std::move(merged));
  }
  return out;
}

}  // namespace ehfkt::testing
