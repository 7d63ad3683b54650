#include "ehfkt/sfes.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>

#include "ehfkt/errors.hpp"
#include "nlohmann/json.hpp"

namespace ehfkt {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

double parse_height(const std::string& tok, const std::string& path) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    throw DataError("dendrogram " + path + ": bad height '" + tok + "'");
  }
  return v;
}

double norm(const Matrix& v) {
  double acc = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) acc += v[i] * v[i];
  return std::sqrt(acc);
}

// Pair ordering for the deterministic tie rule: (min id, max id).
bool pair_less(int a1, int b1, int a2, int b2) {
  const int lo1 = std::min(a1, b1), hi1 = std::max(a1, b1);
  const int lo2 = std::min(a2, b2), hi2 = std::max(a2, b2);
  if (lo1 != lo2) return lo1 < lo2;
  return hi1 < hi2;
}

}  // namespace

double cosine_distance(const Matrix& u, const Matrix& v) {
  if (!u.same_shape(v)) {
    throw DimensionError("cosine_distance: shapes " + u.shape_str() + " vs " + v.shape_str());
  }
  const double nu = norm(u), nv = norm(v);
  if (nu == 0.0 || nv == 0.0) {
    throw DataError("cosine_distance: zero vector has no direction");
  }
  double dot = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) dot += u[i] * v[i];
  return 1.0 - dot / (nu * nv);
}

Matrix pool_mean(const Matrix& tokens) {
  Matrix out(1, tokens.cols());
  for (int r = 0; r < tokens.rows(); ++r) {
    for (int c = 0; c < tokens.cols(); ++c) out(0, c) += tokens(r, c);
  }
  for (int c = 0; c < tokens.cols(); ++c) out(0, c) /= tokens.rows();
  return out;
}

Dendrogram agglomerate(const std::vector<Matrix>& points) {
  const int n = static_cast<int>(points.size());
  if (n < 2) throw DataError("agglomerate: need at least 2 points, got " + std::to_string(n));

  // Slot s holds an active cluster; merged clusters reuse a slot so the
  // distance matrix stays n x n.
  std::vector<int> id(n), size(n, 1);
  std::iota(id.begin(), id.end(), 0);
  std::vector<bool> alive(n, true);

  std::vector<double> dist(static_cast<std::size_t>(n) * n,
                           std::numeric_limits<double>::infinity());
  const auto d_at = [&](int a, int b) -> double& {
    return dist[static_cast<std::size_t>(a) * n + b];
  };

  {
    std::vector<Matrix> unit(points.begin(), points.end());
    for (int i = 0; i < n; ++i) {
      const double nm = norm(unit[i]);
      if (nm == 0.0) {
        throw DataError("agglomerate: point " + std::to_string(i) + " is a zero vector");
      }
      for (std::size_t k = 0; k < unit[i].size(); ++k) unit[i][k] /= nm;
    }
    for (int i = 0; i < n; ++i) {
      for (int j = i + 1; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t k = 0; k < unit[i].size(); ++k) dot += unit[i][k] * unit[j][k];
        d_at(i, j) = d_at(j, i) = 1.0 - dot;
      }
    }
  }

  // Per-slot nearest neighbour (distance + slot). Ties resolve to the
  // smallest partner id; merged clusters only ever move distances up
  // (average linkage is reducible), so caches stay valid until their
  // target dies.
  std::vector<int> nn_slot(n, -1);
  std::vector<double> nn_dist(n, std::numeric_limits<double>::infinity());
  const auto recompute_nn = [&](int s) {
    nn_slot[s] = -1;
    nn_dist[s] = std::numeric_limits<double>::infinity();
    for (int m = 0; m < n; ++m) {
      if (m == s || !alive[m]) continue;
      const double d = d_at(s, m);
      if (d < nn_dist[s] ||
          (d == nn_dist[s] && nn_slot[s] >= 0 &&
           pair_less(id[s], id[m], id[s], id[nn_slot[s]]))) {
        nn_dist[s] = d;
        nn_slot[s] = m;
      }
    }
  };
  for (int s = 0; s < n; ++s) recompute_nn(s);

  Dendrogram out;
  out.n_leaves = n;
  out.merges.reserve(n - 1);

  for (int step = 0; step < n - 1; ++step) {
    int best = -1;
    for (int s = 0; s < n; ++s) {
      if (!alive[s] || nn_slot[s] < 0) continue;
      if (best < 0 || nn_dist[s] < nn_dist[best] ||
          (nn_dist[s] == nn_dist[best] && pair_less(id[s], id[nn_slot[s]], id[best],
                                                    id[nn_slot[best]]))) {
        best = s;
      }
    }
    const int sa = best, sb = nn_slot[best];
    const double h = nn_dist[best];
    const int left = std::min(id[sa], id[sb]);
    const int right = std::max(id[sa], id[sb]);
    out.merges.push_back({left, right, h, size[sa] + size[sb]});

    // Merge into slot sa via the average-linkage update; slot sb dies.
    const double wa = size[sa], wb = size[sb];
    for (int m = 0; m < n; ++m) {
      if (!alive[m] || m == sa || m == sb) continue;
      const double d = (wa * d_at(sa, m) + wb * d_at(sb, m)) / (wa + wb);
      d_at(sa, m) = d_at(m, sa) = d;
    }
    alive[sb] = false;
    id[sa] = n + step;
    size[sa] += size[sb];
    recompute_nn(sa);
    for (int m = 0; m < n; ++m) {
      if (!alive[m] || m == sa) continue;
      if (nn_slot[m] == sa || nn_slot[m] == sb) recompute_nn(m);
    }
  }
  return out;
}

std::vector<int> cut(const Dendrogram& dendrogram, int lambda) {
  const int n = dendrogram.n_leaves;
  if (static_cast<int>(dendrogram.merges.size()) != n - 1) {
    throw DataError("cut: dendrogram has " + std::to_string(dendrogram.merges.size()) +
                    " merges for " + std::to_string(n) + " leaves");
  }
  if (lambda < 1 || lambda > n) {
    throw DataError("cut: lambda=" + std::to_string(lambda) + " outside 1.." + std::to_string(n));
  }

  // Apply the first n - lambda merges; the rest stay undone.
  std::vector<int> parent(static_cast<std::size_t>(2 * n - 1));
  std::iota(parent.begin(), parent.end(), 0);
  const std::function<int(int)> find = [&](int x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (int t = 0; t < n - lambda; ++t) {
    const Merge& m = dendrogram.merges[static_cast<std::size_t>(t)];
    parent[find(m.left)] = n + t;
    parent[find(m.right)] = n + t;
  }

  // Cluster indices ordered by each cluster's smallest leaf id.
  std::vector<int> out(static_cast<std::size_t>(n), -1);
  std::map<int, int> root_to_cluster;
  int next = 0;
  for (int leaf = 0; leaf < n; ++leaf) {
    const int root = find(leaf);
    auto [it, inserted] = root_to_cluster.emplace(root, next);
    if (inserted) ++next;
    out[static_cast<std::size_t>(leaf)] = it->second;
  }
  if (next != lambda) {
    throw DataError("cut: produced " + std::to_string(next) + " clusters, expected " +
                    std::to_string(lambda));
  }
  return out;
}

int ClusterAssignment::cluster_of(const std::string& id) const {
  const auto it = by_id.find(id);
  if (it == by_id.end()) throw DataError("no cluster assigned to exercise '" + id + "'");
  return it->second;
}

ClusterAssignment assign_clusters(const Dendrogram& dendrogram,
                                  const std::vector<std::string>& leaf_ids, int lambda) {
  if (static_cast<int>(leaf_ids.size()) != dendrogram.n_leaves) {
    throw DataError("assign_clusters: " + std::to_string(leaf_ids.size()) + " ids for " +
                    std::to_string(dendrogram.n_leaves) + " leaves");
  }
  const std::vector<int> clusters = cut(dendrogram, lambda);
  ClusterAssignment out;
  out.lambda = lambda;
  for (std::size_t i = 0; i < leaf_ids.size(); ++i) {
    out.by_id[leaf_ids[i]] = clusters[i];
  }
  if (out.by_id.size() != leaf_ids.size()) {
    throw DataError("assign_clusters: duplicate exercise ids among leaves");
  }
  return out;
}

Matrix one_hot(const ClusterAssignment& assignment, const std::string& exercise_id) {
  Matrix v(1, assignment.lambda);
  v(0, assignment.cluster_of(exercise_id)) = 1.0;
  return v;
}

void save_assignment(const ClusterAssignment& assignment, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write assignment: " + path);
  out << nlohmann::json{{"lambda", assignment.lambda},
                        {"count", assignment.by_id.size()}}.dump()
      << "\n";
  for (const auto& [id, cluster] : assignment.by_id) {
    out << nlohmann::json{{"exercise_id", id}, {"cluster", cluster}}.dump() << "\n";
  }
}

ClusterAssignment load_assignment(const std::string& path) {
  ClusterAssignment out;
  std::size_t expected = 0;
  bool have_meta = false;
  for_each_jsonl(path, [&](const nlohmann::json& j, int lineno) {
    const std::string where = path + ":" + std::to_string(lineno);
    if (!have_meta) {
      reject_unknown_keys(j, {"lambda", "count"}, where);
      out.lambda = j.at("lambda").get<int>();
      expected = j.at("count").get<std::size_t>();
      if (out.lambda < 1) throw DataError(where + ": lambda must be >= 1");
      have_meta = true;
      return;
    }
    reject_unknown_keys(j, {"exercise_id", "cluster"}, where);
    const std::string id = j.at("exercise_id").get<std::string>();
    const int cluster = j.at("cluster").get<int>();
    if (cluster < 0 || cluster >= out.lambda) {
      throw DataError(where + ": cluster " + std::to_string(cluster) + " outside 0.." +
                      std::to_string(out.lambda - 1));
    }
    if (!out.by_id.emplace(id, cluster).second) {
      throw DataError(where + ": duplicate exercise id '" + id + "'");
    }
  });
  if (!have_meta) throw DataError("assignment " + path + ": missing meta line");
  if (out.by_id.size() != expected) {
    throw DataError("assignment " + path + ": " + std::to_string(out.by_id.size()) +
                    " rows, meta says " + std::to_string(expected));
  }
  std::vector<bool> seen(static_cast<std::size_t>(out.lambda), false);
  for (const auto& [id, cluster] : out.by_id) seen[static_cast<std::size_t>(cluster)] = true;
  if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
    throw DataError("assignment " + path + ": some cluster in 0.." +
                    std::to_string(out.lambda - 1) + " is empty");
  }
  return out;
}

void save_dendrogram(const Dendrogram& dendrogram, const std::vector<std::string>& leaf_ids,
                     const std::string& path) {
  if (static_cast<int>(leaf_ids.size()) != dendrogram.n_leaves) {
    throw DataError("save_dendrogram: " + std::to_string(leaf_ids.size()) + " ids for " +
                    std::to_string(dendrogram.n_leaves) + " leaves");
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dendrogram: " + path);
  out << dendrogram.n_leaves << "\n";
  for (const std::string& id : leaf_ids) out << id << "\n";
  for (const Merge& m : dendrogram.merges) {
    out << m.left << " " << m.right << " " << fmt_double(m.height) << "\n";
  }
}

std::pair<Dendrogram, std::vector<std::string>> load_dendrogram(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read dendrogram: " + path);
  int n = 0;
  if (!(in >> n) || n < 2) throw DataError("dendrogram " + path + ": bad leaf count");
  std::vector<std::string> leaf_ids(static_cast<std::size_t>(n));
  for (auto& id : leaf_ids) {
    if (!(in >> id)) throw DataError("dendrogram " + path + ": truncated leaf table");
  }
  Dendrogram d;
  d.n_leaves = n;
  std::vector<int> sizes(static_cast<std::size_t>(2 * n - 1), 1);
  for (int t = 0; t < n - 1; ++t) {
    Merge m;
    std::string htok;
    if (!(in >> m.left >> m.right >> htok)) {
      throw DataError("dendrogram " + path + ": truncated merge list at merge " +
                      std::to_string(t));
    }
    m.height = parse_height(htok, path);
    if (m.left < 0 || m.right < 0 || m.left >= n + t || m.right >= n + t || m.left == m.right) {
      throw DataError("dendrogram " + path + ": invalid merge (" + std::to_string(m.left) + "," +
                      std::to_string(m.right) + ") at step " + std::to_string(t));
    }
    m.size = sizes[static_cast<std::size_t>(m.left)] + sizes[static_cast<std::size_t>(m.right)];
    sizes[static_cast<std::size_t>(n + t)] = m.size;
    d.merges.push_back(m);
  }
  return {std::move(d), std::move(leaf_ids)};
}

void dendrogram_svg(const Dendrogram& dendrogram, const std::string& path) {
  const int n = dendrogram.n_leaves;
  const int total = 2 * n - 1;
  // Leaf order: left-to-right traversal from the root keeps joins uncrossed.
  std::vector<std::pair<int, int>> children(static_cast<std::size_t>(total), {-1, -1});
  for (int t = 0; t < n - 1; ++t) {
    children[static_cast<std::size_t>(n + t)] = {dendrogram.merges[static_cast<std::size_t>(t)].left,
                                                 dendrogram.merges[static_cast<std::size_t>(t)].right};
  }
  std::vector<double> x(static_cast<std::size_t>(total), 0.0);
  std::vector<bool> is_child(static_cast<std::size_t>(total), false);
  for (const Merge& m : dendrogram.merges) {
    is_child[static_cast<std::size_t>(m.left)] = true;
    is_child[static_cast<std::size_t>(m.right)] = true;
  }
  int next_leaf_x = 0;
  const std::function<void(int)> place = [&](int node) {
    const auto [l, r] = children[static_cast<std::size_t>(node)];
    if (l < 0) {
      x[static_cast<std::size_t>(node)] = next_leaf_x++;
      return;
    }
    place(l);
    place(r);
    x[static_cast<std::size_t>(node)] =
        0.5 * (x[static_cast<std::size_t>(l)] + x[static_cast<std::size_t>(r)]);
  };
  for (int node = total - 1; node >= 0; --node) {
    if (!is_child[static_cast<std::size_t>(node)]) place(node);
  }

  double hmax = 0.0;
  for (const Merge& m : dendrogram.merges) hmax = std::max(hmax, m.height);
  if (hmax == 0.0) hmax = 1.0;
  const double w = std::max(320, 12 * n), h = 400, margin = 24;
  const auto px = [&](double xx) { return margin + xx / std::max(1, n - 1) * (w - 2 * margin); };
  const auto py = [&](double hh) { return h - margin - hh / hmax * (h - 2 * margin); };

  std::ofstream out(path);
  if (!out) throw DataError("cannot write svg: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
      << "\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::vector<double> top(static_cast<std::size_t>(total), 0.0);  // height of each node
  for (int t = 0; t < n - 1; ++t) {
    top[static_cast<std::size_t>(n + t)] = dendrogram.merges[static_cast<std::size_t>(t)].height;
  }
  for (int t = 0; t < n - 1; ++t) {
    const Merge& m = dendrogram.merges[static_cast<std::size_t>(t)];
    const double xl = px(x[static_cast<std::size_t>(m.left)]);
    const double xr = px(x[static_cast<std::size_t>(m.right)]);
    const double yl = py(top[static_cast<std::size_t>(m.left)]);
    const double yr = py(top[static_cast<std::size_t>(m.right)]);
    const double ym = py(m.height);
    out << "<polyline fill=\"none\" stroke=\"#444\" points=\"" << xl << "," << yl << " " << xl
        << "," << ym << " " << xr << "," << ym << " " << xr << "," << yr << "\"/>\n";
  }
  out << "</svg>\n";
}

}  // namespace ehfkt
