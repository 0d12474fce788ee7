#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "vesseltree/points.hpp"
#include "vesseltree/vec3.hpp"

namespace vtree {

enum class NeighborhoodMode { grid26, knn };

/// Pairwise structure over the detected point set: curvature pairs (the
/// system N) and divergence pairs (the system D). Pairs are unordered,
/// deduplicated, stored with first < second.
struct NeighborGraph {
  std::vector<TangentPoint> points;
  std::vector<std::pair<int, int>> curvature_pairs;
  std::vector<std::pair<int, int>> divergence_pairs;
  double facet_area = 1.0;  // |f_pq|, constant

  void validate() const {
    for (const auto* pairs : {&curvature_pairs, &divergence_pairs}) {
      for (auto [a, b] : *pairs) {
        if (a < 0 || b < 0 || a >= (int)points.size() || b >= (int)points.size())
          throw std::runtime_error("neighbor graph pair index out of range");
        if (a == b) throw std::runtime_error("neighbor graph contains a self pair");
        if (a >= b) throw std::runtime_error("neighbor graph pairs must be ordered (a < b)");
      }
    }
  }
};

namespace detail {

inline void sort_dedup(std::vector<std::pair<int, int>>& pairs) {
  std::sort(pairs.begin(), pairs.end());
  pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
}

}  // namespace detail

/// grid26 connects points whose voxel coordinates (position / spacing,
/// rounded) differ by at most 1 per axis; knn connects each point to its k
/// nearest Euclidean neighbors, symmetrized by union. Divergence pairs
/// default to the curvature pairs.
inline NeighborGraph build_neighborhood(const std::vector<TangentPoint>& points,
                                        NeighborhoodMode mode, double spacing = 1.0, int k = 6) {
  if (points.empty()) throw std::runtime_error("build_neighborhood: empty point set");
  NeighborGraph g;
  g.points = points;

  if (mode == NeighborhoodMode::grid26) {
    if (!(spacing > 0)) throw std::runtime_error("build_neighborhood: spacing must be > 0");
    std::unordered_map<Vec3i, std::vector<int>, Vec3iHash> cells;
    std::vector<Vec3i> voxel(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      const Vec3& p = points[i].position;
      voxel[i] = {std::llround(p.x / spacing), std::llround(p.y / spacing),
                  std::llround(p.z / spacing)};
      cells[voxel[i]].push_back((int)i);
    }
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            Vec3i nb{voxel[i].x + dx, voxel[i].y + dy, voxel[i].z + dz};
            auto it = cells.find(nb);
            if (it == cells.end()) continue;
            for (int j : it->second)
              if ((int)i < j) g.curvature_pairs.push_back({(int)i, j});
          }
    }
  } else {
    if (k < 1) throw std::runtime_error("build_neighborhood: knn k must be >= 1");
    if (k >= (int)points.size())
      throw std::runtime_error("build_neighborhood: knn k must be < point count");
    std::vector<std::pair<double, int>> dists(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      for (std::size_t j = 0; j < points.size(); ++j)
        dists[j] = {norm2(points[i].position - points[j].position), (int)j};
      dists[i].first = std::numeric_limits<double>::infinity();
      std::partial_sort(dists.begin(), dists.begin() + k, dists.end());
      for (int t = 0; t < k; ++t) {
        int j = dists[t].second;
        g.curvature_pairs.push_back({std::min((int)i, j), std::max((int)i, j)});
      }
    }
  }
  detail::sort_dedup(g.curvature_pairs);
  g.divergence_pairs = g.curvature_pairs;
  g.validate();
  return g;
}

/// max(0, -a)
inline double negative_part(double a) { return a < 0.0 ? -a : 0.0; }

/// max(0, a)
inline double positive_part(double a) { return a > 0.0 ? a : 0.0; }

/// Facet flux of the oriented unit tangent field between neighbors p and q:
/// the integral of divergence concentrated at the Voronoi facet,
///   (<l̄_q, pq> - <l̄_p, pq>) / |pq| * |f_pq|,  pq = q.position - p.position.
/// Symmetric in (p, q): swapping flips both pq and the subtraction order.
inline double pair_divergence(const TangentPoint& p, const TangentPoint& q, double facet_area) {
  Vec3 pq = q.position - p.position;
  double len = norm(pq);
  if (len == 0.0) throw std::runtime_error("pair_divergence: coincident positions");
  Vec3 lp = p.oriented_tangent();
  Vec3 lq = q.oriented_tangent();
  return (dot(lq, pq) - dot(lp, pq)) / len * facet_area;
}

/// Debug dump: one line per divergence pair, `i j pair_divergence`.
inline std::string dump_divergence_edges(const NeighborGraph& g) {
  std::string out;
  for (auto [i, j] : g.divergence_pairs) {
    out += std::to_string(i) + " " + std::to_string(j) + " " +
           fmt_double(pair_divergence(g.points[i], g.points[j], g.facet_area)) + "\n";
  }
  return out;
}

}  // namespace vtree
