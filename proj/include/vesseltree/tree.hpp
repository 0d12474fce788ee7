#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vesseltree/points.hpp"
#include "vesseltree/vec3.hpp"
#include "vesseltree/volume.hpp"

namespace vtree {

struct WeightedGraph {
  int num_nodes = 0;
  struct Edge {
    int i = 0, j = 0;  // i < j
    double weight = 0.0;
  };
  std::vector<Edge> edges;

  void validate() const {
    for (const Edge& e : edges) {
      if (e.i < 0 || e.j < 0 || e.i >= num_nodes || e.j >= num_nodes || e.i >= e.j)
        throw std::runtime_error("weighted graph edge endpoints invalid");
      if (!(e.weight >= 0.0) || !std::isfinite(e.weight))
        throw std::runtime_error("weighted graph weight must be finite and >= 0");
    }
  }
};

/// Average arc length between two points for the two circles through p and q
/// tangential to either tangent: w = d/2 * (theta_p/sin theta_p +
/// theta_q/sin theta_q), theta the angle between tangent line and chord
/// folded to [0, pi/2] (orientation-insensitive). theta -> 0 gives the chord.
inline double arc_length_weight(const TangentPoint& p, const TangentPoint& q) {
  Vec3 chord = q.position - p.position;
  double d = norm(chord);
  if (d == 0.0) throw std::runtime_error("arc_length_weight: coincident positions");
  auto factor = [&](const Vec3& tangent) {
    double c = std::fabs(dot(tangent, chord)) / d;  // cos(theta), folded
    c = std::clamp(c, 0.0, 1.0);
    double theta = std::acos(c);
    if (theta < 1e-6) return 1.0 + theta * theta / 6.0;  // series for theta/sin(theta)
    return theta / std::sin(theta);
  };
  return 0.5 * d * (factor(p.tangent) + factor(q.tangent));
}

/// Symmetric union of k-nearest neighborhoods with arc-length weights.
/// k >= point count (or complete = true) yields the complete graph.
inline WeightedGraph build_knn_graph(const std::vector<TangentPoint>& points, int k,
                                     bool complete = false) {
  if (points.empty()) throw std::runtime_error("build_knn_graph: empty point set");
  WeightedGraph g;
  g.num_nodes = (int)points.size();
  std::vector<std::pair<int, int>> pairs;
  int n = (int)points.size();
  if (complete || k >= n - 1) {
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j) pairs.push_back({i, j});
  } else {
    if (k < 1) throw std::runtime_error("build_knn_graph: k must be >= 1");
    std::vector<std::pair<double, int>> dists(n);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) dists[j] = {norm2(points[i].position - points[j].position), j};
      dists[i].first = std::numeric_limits<double>::infinity();
      std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
      for (int t = 0; t < k; ++t)
        pairs.push_back({std::min(i, dists[t].second), std::max(i, dists[t].second)});
    }
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
  }
  for (auto [i, j] : pairs)
    g.edges.push_back({i, j, arc_length_weight(points[i], points[j])});
  g.validate();
  return g;
}

namespace detail {

struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[b] = a;
    return true;
  }
};

}  // namespace detail

/// Indices of the MST (forest) edges, Kruskal with (weight, i, j) tie order.
inline std::vector<int> minimum_spanning_edges(const WeightedGraph& graph) {
  graph.validate();
  std::vector<int> order(graph.edges.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    const auto& ea = graph.edges[a];
    const auto& eb = graph.edges[b];
    return std::tie(ea.weight, ea.i, ea.j) < std::tie(eb.weight, eb.i, eb.j);
  });
  detail::UnionFind uf(graph.num_nodes);
  std::vector<int> keep;
  for (int idx : order)
    if (uf.unite(graph.edges[idx].i, graph.edges[idx].j)) keep.push_back(idx);
  std::sort(keep.begin(), keep.end());
  return keep;
}

/// Minimum spanning tree (forest on a disconnected graph) rooted per
/// component at the lowest node index, or at root_hint for its component.
/// Node positions come from the refined line points; node radius from the
/// detected scale.
inline CenterlineTree minimum_spanning_tree(const WeightedGraph& graph,
                                            const std::vector<TangentPoint>& points,
                                            int root_hint = -1) {
  if (graph.num_nodes != (int)points.size())
    throw std::runtime_error("minimum_spanning_tree: graph/point size mismatch");
  std::vector<int> mst = minimum_spanning_edges(graph);
  std::vector<std::vector<int>> adj(graph.num_nodes);
  for (int idx : mst) {
    adj[graph.edges[idx].i].push_back(graph.edges[idx].j);
    adj[graph.edges[idx].j].push_back(graph.edges[idx].i);
  }
  CenterlineTree tree;
  tree.nodes.resize(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    tree.nodes[i].pos = points[i].line_point;
    tree.nodes[i].radius = std::max(points[i].scale, 1e-9);
    tree.nodes[i].parent = -2;  // unvisited marker
  }
  std::vector<int> stack;
  int first_root = -1;
  auto flood = [&](int seed) {
    tree.nodes[seed].parent = -1;
    if (first_root == -1) first_root = seed;
    stack.push_back(seed);
    while (!stack.empty()) {
      int at = stack.back();
      stack.pop_back();
      for (int nb : adj[at]) {
        if (tree.nodes[nb].parent != -2) continue;
        tree.nodes[nb].parent = at;
        stack.push_back(nb);
      }
    }
  };
  if (root_hint >= 0 && root_hint < graph.num_nodes) flood(root_hint);
  for (int start = 0; start < graph.num_nodes; ++start)
    if (tree.nodes[start].parent == -2) flood(start);
  // a forest has several parent=-1 nodes; CenterlineTree::validate demands a
  // single root, so only validate connectivity-independent invariants here
  tree.root = first_root < 0 ? 0 : first_root;
  int roots = 0;
  for (const auto& n : tree.nodes) roots += (n.parent == -1);
  if (roots == 1) tree.validate();
  return tree;
}

inline double total_weight(const WeightedGraph& graph, const std::vector<int>& edge_ids) {
  double s = 0;
  for (int idx : edge_ids) s += graph.edges[idx].weight;
  return s;
}

}  // namespace vtree
