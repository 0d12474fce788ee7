#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "vesseltree/util.hpp"
#include "vesseltree/vec3.hpp"

namespace vtree {

/// Dense 3D scalar grid. Voxel (i,j,k) is centered at (i,j,k)*spacing in mm;
/// linear index is x-fastest: (k*ny + j)*nx + i.
struct VoxelVolume {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 1.0;  // mm per voxel edge
  std::vector<float> data;

  std::size_t size() const { return (std::size_t)nx * ny * nz; }
  std::size_t index(int i, int j, int k) const {
    return ((std::size_t)k * ny + j) * nx + i;
  }
  float at(int i, int j, int k) const { return data[index(i, j, k)]; }
  float& at(int i, int j, int k) { return data[index(i, j, k)]; }
  bool inside(int i, int j, int k) const {
    return i >= 0 && i < nx && j >= 0 && j < ny && k >= 0 && k < nz;
  }
  Vec3 voxel_center(int i, int j, int k) const {
    return {i * spacing, j * spacing, k * spacing};
  }

  void validate() const {
    if (nx < 1 || ny < 1 || nz < 1) throw std::runtime_error("volume dims must be >= 1");
    if (!(spacing > 0.0)) throw std::runtime_error("volume spacing must be > 0");
    if (data.size() != size()) throw std::runtime_error("volume data length != nx*ny*nz");
  }

  static VoxelVolume zeros(int nx, int ny, int nz, double spacing) {
    VoxelVolume v;
    v.nx = nx; v.ny = ny; v.nz = nz;
    v.spacing = spacing;
    v.data.assign(v.size(), 0.0f);
    v.validate();
    return v;
  }
};

/// Centerline tree: node positions in mm, per-node radius, parent links.
/// Root is the unique node with parent == -1.
struct CenterlineTree {
  struct Node {
    Vec3 pos;
    double radius = 0.0;
    int parent = -1;
  };
  std::vector<Node> nodes;
  int root = 0;

  void validate() const {
    if (nodes.empty()) throw std::runtime_error("tree has no nodes");
    int root_count = 0;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      const Node& n = nodes[i];
      if (n.parent == -1) ++root_count;
      else if (n.parent < 0 || n.parent >= (int)nodes.size())
        throw std::runtime_error("tree node " + std::to_string(i) + " has invalid parent");
      if (!(n.radius > 0.0))
        throw std::runtime_error("tree node " + std::to_string(i) + " has nonpositive radius");
    }
    if (root_count != 1)
      throw std::runtime_error("tree must have exactly one root, found " +
                               std::to_string(root_count));
    if (nodes[root].parent != -1) throw std::runtime_error("tree root index does not match parent links");
    // acyclicity: walk each node to the root, bounded by node count
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      int cur = (int)i;
      std::size_t steps = 0;
      while (nodes[cur].parent != -1) {
        cur = nodes[cur].parent;
        if (++steps > nodes.size()) throw std::runtime_error("tree parent links contain a cycle");
      }
    }
  }

  std::vector<int> degrees() const {
    std::vector<int> deg(nodes.size(), 0);
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      if (nodes[i].parent >= 0) {
        ++deg[i];
        ++deg[nodes[i].parent];
      }
    }
    return deg;
  }

  std::vector<std::vector<int>> children() const {
    std::vector<std::vector<int>> ch(nodes.size());
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (nodes[i].parent >= 0) ch[nodes[i].parent].push_back((int)i);
    return ch;
  }

  double total_length() const {
    double len = 0.0;
    for (const Node& n : nodes)
      if (n.parent >= 0) len += norm(n.pos - nodes[n.parent].pos);
    return len;
  }
};

struct SynthesisParams {
  int depth = 3;                      // bifurcation generations
  double branch_len_min = 0.4;        // mm
  double branch_len_max = 0.7;        // mm
  double angle_min_deg = 20.0;
  double angle_max_deg = 50.0;
  double radius_decay = 0.75;
  double root_radius = 0.14;          // mm
  double intensity_peak = 512.0;
  std::uint64_t seed = 1;
  Vec3 extent{4.6, 4.6, 4.6};         // mm, target volume bounds
  double margin = 0.35;               // mm kept clear of every face

  void validate() const {
    if (depth < 1) throw std::runtime_error("synthesis depth must be >= 1");
    if (!(radius_decay > 0.0 && radius_decay < 1.0))
      throw std::runtime_error("radius decay must be in (0,1)");
    if (!(angle_min_deg > 0.0 && angle_min_deg <= angle_max_deg && angle_max_deg < 90.0))
      throw std::runtime_error("bifurcation angle range must lie within (0, 90) degrees");
    if (!(branch_len_min > 0.0 && branch_len_min <= branch_len_max))
      throw std::runtime_error("branch length range invalid");
    if (!(root_radius > 0.0)) throw std::runtime_error("root radius must be > 0");
    if (!(extent.x > 0 && extent.y > 0 && extent.z > 0))
      throw std::runtime_error("volume extent must be positive");
  }
};

namespace detail {

inline void check_in_bounds(const Vec3& p, double radius, const SynthesisParams& params,
                            int node_index) {
  double m = params.margin + radius;
  if (p.x < m || p.y < m || p.z < m || p.x > params.extent.x - m || p.y > params.extent.y - m ||
      p.z > params.extent.z - m) {
    throw std::runtime_error("synthesized branch ending at node " + std::to_string(node_index) +
                             " leaves the volume bounds (position " + std::to_string(p.x) + ", " +
                             std::to_string(p.y) + ", " + std::to_string(p.z) + ")");
  }
}

}  // namespace detail

/// Recursive binary bifurcating generator. Deterministic per seed: RNG draws
/// happen in preorder. Sibling branches lie in a randomly rotated plane
/// through the parent direction, at independently drawn angles.
inline CenterlineTree synthesize_tree(const SynthesisParams& params) {
  params.validate();
  Rng rng(params.seed);
  CenterlineTree tree;

  Vec3 start{params.extent.x / 2.0, params.extent.y / 2.0, params.margin + params.root_radius};
  tree.nodes.push_back({start, params.root_radius, -1});
  tree.root = 0;

  // small random tilt off +z for the trunk
  double tilt = rng.uniform(0.0, 8.0) * 0.017453292519943295;
  double tphi = rng.uniform(0.0, 6.283185307179586);
  Vec3 trunk_dir = normalized(Vec3{std::sin(tilt) * std::cos(tphi),
                                   std::sin(tilt) * std::sin(tphi), std::cos(tilt)});

  std::function<void(int, Vec3, int, double)> grow = [&](int from, Vec3 dir, int generation,
                                                         double radius) {
    double len = rng.uniform(params.branch_len_min, params.branch_len_max);
    Vec3 end = tree.nodes[from].pos + dir * len;
    int idx = (int)tree.nodes.size();
    detail::check_in_bounds(end, radius, params, idx);
    tree.nodes.push_back({end, radius, from});
    if (generation >= params.depth) return;  // leaf

    Vec3 e1, e2;
    orthonormal_frame(dir, e1, e2);
    double phi = rng.uniform(0.0, 6.283185307179586);
    Vec3 u = e1 * std::cos(phi) + e2 * std::sin(phi);
    double a1 = rng.uniform(params.angle_min_deg, params.angle_max_deg) * 0.017453292519943295;
    double a2 = rng.uniform(params.angle_min_deg, params.angle_max_deg) * 0.017453292519943295;
    Vec3 d1 = normalized(dir * std::cos(a1) + u * std::sin(a1));
    Vec3 d2 = normalized(dir * std::cos(a2) - u * std::sin(a2));
    grow(idx, d1, generation + 1, radius * params.radius_decay);
    grow(idx, d2, generation + 1, radius * params.radius_decay);
  };

  grow(0, trunk_dir, 0, params.root_radius);
  tree.validate();
  return tree;
}

/// Gaussian tube profile rasterization: each voxel takes the max over all
/// segments of peak * exp(-d^2 / (2 r^2)), d the perpendicular distance to
/// the segment and r the radius linearly interpolated along it. Clamped to
/// [0, 512].
inline VoxelVolume rasterize(const CenterlineTree& tree, int nx, int ny, int nz, double spacing,
                             double intensity_peak) {
  tree.validate();
  VoxelVolume vol = VoxelVolume::zeros(nx, ny, nz, spacing);
  Vec3 hi{(nx - 1) * spacing, (ny - 1) * spacing, (nz - 1) * spacing};
  for (const auto& n : tree.nodes) {
    if (n.pos.x < 0 || n.pos.y < 0 || n.pos.z < 0 || n.pos.x > hi.x || n.pos.y > hi.y ||
        n.pos.z > hi.z)
      throw std::runtime_error("tree does not fit inside the volume bounds");
  }

  struct Seg { Vec3 a, b; double ra, rb; };
  std::vector<Seg> segs;
  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const auto& n = tree.nodes[i];
    if (n.parent < 0) continue;
    const auto& p = tree.nodes[n.parent];
    segs.push_back({p.pos, n.pos, p.radius, n.radius});
  }

  const double cutoff_factor = 6.0;
  parallel_for(vol.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t li = b; li < e; ++li) {
      int i = (int)(li % nx);
      int j = (int)((li / nx) % ny);
      int k = (int)(li / ((std::size_t)nx * ny));
      Vec3 pos = vol.voxel_center(i, j, k);
      double best = 0.0;
      for (const Seg& s : segs) {
        Vec3 ab = s.b - s.a;
        double len2 = norm2(ab);
        double t = len2 > 0.0 ? std::clamp(dot(pos - s.a, ab) / len2, 0.0, 1.0) : 0.0;
        Vec3 closest = s.a + ab * t;
        double r = s.ra + (s.rb - s.ra) * t;
        double d2 = norm2(pos - closest);
        double cut = cutoff_factor * r;
        if (d2 > cut * cut) continue;
        double v = intensity_peak * std::exp(-d2 / (2.0 * r * r));
        if (v > best) best = v;
      }
      vol.data[li] = (float)std::clamp(best, 0.0, 512.0);
    }
  });
  return vol;
}

/// Adds i.i.d. zero-mean Gaussian noise. The per-voxel samples come from a
/// stateless hash of (seed, voxel index), so the result is identical under
/// any parallel schedule.
inline VoxelVolume add_gaussian_noise(const VoxelVolume& vol, double sigma, std::uint64_t seed) {
  if (sigma < 0.0) throw std::runtime_error("noise sigma must be >= 0");
  VoxelVolume out = vol;
  if (sigma == 0.0) return out;
  parallel_for(out.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i)
      out.data[i] = (float)(vol.data[i] + sigma * hashed_normal(seed, 0, i));
  });
  return out;
}

}  // namespace vtree
