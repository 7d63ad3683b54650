#pragma once

#include <string>
#include <vector>

#include "ehfkt/dataio.hpp"
#include "ehfkt/matrix.hpp"

namespace ehfkt {

/// One agglomerative merge; the new node's id is n_leaves + merge index.
struct Merge {
  int left = 0;
  int right = 0;
  double height = 0.0;
  int size = 0;  // leaves under the new node
};

/// Full merge history of an agglomerative clustering over n leaves.
/// Average linkage is monotone, so heights are non-decreasing.
struct Dendrogram {
  int n_leaves = 0;
  std::vector<Merge> merges;  // exactly n_leaves - 1
};

/// 1 - cos(u, v), in [0, 2]. Throws DataError on a zero vector.
double cosine_distance(const Matrix& u, const Matrix& v);

/// Per-exercise vector for clustering: mean over token embeddings.
Matrix pool_mean(const Matrix& tokens);

/// Average-linkage agglomerative clustering under cosine distance.
/// Deterministic: among equal-distance pairs the one with the smallest
/// (min id, max id) merges first; new ids increase with merge order.
Dendrogram agglomerate(const std::vector<Matrix>& points);

/// Cluster index per leaf, undoing the last lambda-1 merges. Exactly
/// lambda clusters come back; indices are ordered by each cluster's
/// smallest leaf id.
std::vector<int> cut(const Dendrogram& dendrogram, int lambda);

/// Exercise id -> cluster index in [0, lambda).
struct ClusterAssignment {
  int lambda = 0;
  std::map<std::string, int> by_id;

  int cluster_of(const std::string& id) const;
};

ClusterAssignment assign_clusters(const Dendrogram& dendrogram,
                                  const std::vector<std::string>& leaf_ids, int lambda);

/// One-hot row vector of length lambda for the exercise's cluster.
Matrix one_hot(const ClusterAssignment& assignment, const std::string& exercise_id);

void save_assignment(const ClusterAssignment& assignment, const std::string& path);
ClusterAssignment load_assignment(const std::string& path);

/// Lossless text merge list (reconstructible) with the leaf id table.
void save_dendrogram(const Dendrogram& dendrogram, const std::vector<std::string>& leaf_ids,
                     const std::string& path);
std::pair<Dendrogram, std::vector<std::string>> load_dendrogram(const std::string& path);

/// Cosmetic dendrogram sketch.
void dendrogram_svg(const Dendrogram& dendrogram, const std::string& path);

}  // namespace ehfkt
