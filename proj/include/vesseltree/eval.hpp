#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "vesseltree/vec3.hpp"
#include "vesseltree/volume.hpp"

namespace vtree {

struct MatchParams {
  double resample_step = 0.0023;  // mm
  double match_threshold_c = 0.7;                       // voxels
  double bifurcation_threshold_c = 1.7320508075688772;  // sqrt(3) voxels
  double voxel_size = 0.046;                            // mm

  void validate() const {
    if (!(resample_step > 0 && match_threshold_c > 0 && bifurcation_threshold_c > 0 &&
          voxel_size > 0))
      throw std::runtime_error("match params must all be > 0");
  }
};

/// Exact nearest-neighbor index (median-split kd-tree).
class KdTree {
 public:
  explicit KdTree(std::vector<Vec3> pts) : pts_(std::move(pts)) {
    idx_.resize(pts_.size());
    std::iota(idx_.begin(), idx_.end(), 0);
    if (!idx_.empty()) build(0, (int)idx_.size(), 0);
  }

  bool empty() const { return pts_.empty(); }
  std::size_t size() const { return pts_.size(); }

  /// Returns (index, squared distance) of the nearest point.
  std::pair<int, double> nearest(const Vec3& q) const {
    if (pts_.empty()) return {-1, std::numeric_limits<double>::infinity()};
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    search(0, (int)idx_.size(), 0, q, best, best_d2);
    return {best, best_d2};
  }

 private:
  std::vector<Vec3> pts_;
  std::vector<int> idx_;

  void build(int lo, int hi, int depth) {
    if (hi - lo <= 1) return;
    int mid = (lo + hi) / 2;
    int axis = depth % 3;
    std::nth_element(idx_.begin() + lo, idx_.begin() + mid, idx_.begin() + hi,
                     [&](int a, int b) {
                       if (pts_[a][axis] != pts_[b][axis]) return pts_[a][axis] < pts_[b][axis];
                       return a < b;
                     });
    build(lo, mid, depth + 1);
    build(mid + 1, hi, depth + 1);
  }

  void search(int lo, int hi, int depth, const Vec3& q, int& best, double& best_d2) const {
    if (lo >= hi) return;
    int mid = (lo + hi) / 2;
    int at = idx_[mid];
    double d2 = norm2(q - pts_[at]);
    if (d2 < best_d2 || (d2 == best_d2 && at < best)) {
      best_d2 = d2;
      best = at;
    }
    int axis = depth % 3;
    double delta = q[axis] - pts_[at][axis];
    int near_lo = delta < 0 ? lo : mid + 1;
    int near_hi = delta < 0 ? mid : hi;
    int far_lo = delta < 0 ? mid + 1 : lo;
    int far_hi = delta < 0 ? hi : mid;
    search(near_lo, near_hi, depth + 1, q, best, best_d2);
    if (delta * delta <= best_d2) search(far_lo, far_hi, depth + 1, q, best, best_d2);
  }
};

struct ResampledTree {
  std::vector<Vec3> points;
  std::vector<double> radius;
  std::vector<char> is_bifurcation;

  struct Bifurcation {
    int node = -1;
    Vec3 pos;
    double radius = 0.0;
    std::vector<Vec3> directions;  // unit, pointing away from the node
  };
  std::vector<Bifurcation> bifurcations;
};

/// Arc-length uniform resampling along each edge (endpoints always included),
/// radius linearly interpolated, degree-3 nodes tagged with their incident
/// directions.
inline ResampledTree resample_tree(const CenterlineTree& tree, double step) {
  if (!(step > 0)) throw std::runtime_error("resample step must be > 0");
  tree.validate();
  ResampledTree out;
  auto deg = tree.degrees();
  auto kids = tree.children();

  for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
    if (deg[v] != 3) continue;
    ResampledTree::Bifurcation b;
    b.node = (int)v;
    b.pos = tree.nodes[v].pos;
    b.radius = tree.nodes[v].radius;
    if (tree.nodes[v].parent >= 0)
      b.directions.push_back(normalized(tree.nodes[tree.nodes[v].parent].pos - tree.nodes[v].pos));
    for (int c : kids[v]) b.directions.push_back(normalized(tree.nodes[c].pos - tree.nodes[v].pos));
    out.bifurcations.push_back(std::move(b));
  }

  for (std::size_t v = 0; v < tree.nodes.size(); ++v) {
    const auto& child = tree.nodes[v];
    if (child.parent < 0) continue;
    const auto& parent = tree.nodes[child.parent];
    Vec3 ab = child.pos - parent.pos;
    double len = norm(ab);
    int m = len > 0 ? (int)std::floor(len / step + 1e-9) : 0;
    for (int i = 0; i <= m; ++i) {
      double t = std::min(i * step / (len > 0 ? len : 1.0), 1.0);
      out.points.push_back(parent.pos + ab * t);
      out.radius.push_back(parent.radius + (child.radius - parent.radius) * t);
      out.is_bifurcation.push_back((i == 0 && deg[child.parent] == 3) ? 1 : 0);
    }
    if (m * step < len - 1e-9 * std::max(1.0, len)) {
      out.points.push_back(child.pos);
      out.radius.push_back(child.radius);
      out.is_bifurcation.push_back(deg[v] == 3 ? 1 : 0);
    } else if (!out.is_bifurcation.empty() && deg[v] == 3) {
      out.is_bifurcation.back() = 1;  // the last step landed on the endpoint
    }
  }
  return out;
}

struct MatchResult {
  double recall = 0.0;
  double fallout = 0.0;
  bool empty_reconstruction = false;
};

/// max(r, c)-voxel matching. A ground-truth point matches when the nearest
/// reconstructed point lies within max(r_gt, c) voxels; a reconstructed point
/// matches when its nearest ground-truth point lies within the same rule
/// applied with that ground-truth point's radius. Fall-out counts are over
/// the reconstruction.
inline MatchResult match_and_score(const ResampledTree& gt, const std::vector<Vec3>& recon,
                                   const MatchParams& params) {
  params.validate();
  if (gt.points.empty()) throw std::runtime_error("match_and_score: empty ground truth");
  MatchResult res;
  if (recon.empty()) {
    res.empty_reconstruction = true;
    return res;  // recall 0, fallout 0 by convention
  }
  KdTree rt_index(recon);
  std::size_t gt_matched = 0;
  for (std::size_t i = 0; i < gt.points.size(); ++i) {
    double thresh =
        std::max(gt.radius[i], params.match_threshold_c * params.voxel_size);
    auto [idx, d2] = rt_index.nearest(gt.points[i]);
    (void)idx;
    if (d2 <= thresh * thresh) ++gt_matched;
  }
  res.recall = (double)gt_matched / (double)gt.points.size();

  KdTree gt_index(gt.points);
  std::size_t rt_matched = 0;
  for (const Vec3& p : recon) {
    auto [idx, d2] = gt_index.nearest(p);
    double thresh =
        std::max(gt.radius[idx], params.match_threshold_c * params.voxel_size);
    if (d2 <= thresh * thresh) ++rt_matched;
  }
  res.fallout = 1.0 - (double)rt_matched / (double)recon.size();
  return res;
}

struct RocPoint {
  double threshold = 0.0;
  double recall = 0.0;
  double fallout = 0.0;
};

/// One RocPoint per threshold; the reconstruction downstream of the threshold
/// is recomputed per level via the supplied callable (empty output allowed).
inline std::vector<RocPoint> roc_curve(
    const std::function<std::vector<Vec3>(double)>& reconstruct_at, const ResampledTree& gt,
    const std::vector<double>& thresholds, const MatchParams& params) {
  for (std::size_t i = 1; i < thresholds.size(); ++i)
    if (!(thresholds[i] > thresholds[i - 1]))
      throw std::runtime_error("roc thresholds must be strictly increasing");
  std::vector<RocPoint> out;
  for (double t : thresholds) {
    MatchResult m = match_and_score(gt, reconstruct_at(t), params);
    out.push_back({t, m.recall, m.fallout});
  }
  return out;
}

struct BifurcationScores {
  double bif_recall = 0.0;
  double bif_fallout = 0.0;
  std::vector<double> angle_errors_deg;  // one entry per matched GT bifurcation
  int unmatched_gt = 0;

  double mean_angle_error() const {
    if (angle_errors_deg.empty()) return std::numeric_limits<double>::quiet_NaN();
    double s = 0;
    for (double a : angle_errors_deg) s += a;
    return s / (double)angle_errors_deg.size();
  }
};

namespace detail {

inline double angle_deg(const Vec3& a, const Vec3& b) {
  double c = std::clamp(dot(a, b), -1.0, 1.0);
  return std::acos(c) * 57.29577951308232;
}

/// Minimum-total-angle assignment of the ground truth directions to the
/// reconstructed directions; injective when enough candidates exist,
/// otherwise reuse is allowed. Exhaustive over the <= 3x3 cases.
inline double best_assignment_mean_deg(const std::vector<Vec3>& gt_dirs,
                                       const std::vector<Vec3>& rt_dirs) {
  std::size_t n = gt_dirs.size();
  if (rt_dirs.empty() || n == 0) return std::numeric_limits<double>::quiet_NaN();
  if (rt_dirs.size() < n) {
    double total = 0;
    for (const Vec3& g : gt_dirs) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& r : rt_dirs) best = std::min(best, angle_deg(g, r));
      total += best;
    }
    return total / (double)n;
  }
  std::vector<int> pick(rt_dirs.size());
  std::iota(pick.begin(), pick.end(), 0);
  double best_total = std::numeric_limits<double>::infinity();
  std::sort(pick.begin(), pick.end());
  do {
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) total += angle_deg(gt_dirs[i], rt_dirs[pick[i]]);
    best_total = std::min(best_total, total);
  } while (std::next_permutation(pick.begin(), pick.end()));
  return best_total / (double)n;
}

}  // namespace detail

/// Bifurcation-only scoring at the larger threshold c = sqrt(3) voxels:
/// degree-3 nodes of both trees are matched under the max(r, c) rule, and per
/// matched ground-truth bifurcation the mean angle between its three incident
/// directions and the best-matching reconstructed incident directions is
/// recorded in degrees. Unmatched bifurcations are excluded from the angle
/// statistics and counted separately.
inline BifurcationScores bifurcation_scores(const ResampledTree& gt, const ResampledTree& recon,
                                            const MatchParams& params) {
  params.validate();
  BifurcationScores out;
  if (gt.bifurcations.empty()) return out;

  std::vector<Vec3> rt_pos;
  for (const auto& b : recon.bifurcations) rt_pos.push_back(b.pos);
  KdTree rt_index(rt_pos);

  for (const auto& gb : gt.bifurcations) {
    double thresh =
        std::max(gb.radius, params.bifurcation_threshold_c * params.voxel_size);
    auto [idx, d2] = rt_index.nearest(gb.pos);
    if (idx < 0 || d2 > thresh * thresh) {
      ++out.unmatched_gt;
      continue;
    }
    out.angle_errors_deg.push_back(
        detail::best_assignment_mean_deg(gb.directions, recon.bifurcations[idx].directions));
  }
  out.bif_recall =
      (double)(gt.bifurcations.size() - out.unmatched_gt) / (double)gt.bifurcations.size();

  if (!recon.bifurcations.empty()) {
    std::vector<Vec3> gt_pos;
    for (const auto& b : gt.bifurcations) gt_pos.push_back(b.pos);
    KdTree gt_index(gt_pos);
    std::size_t rt_matched = 0;
    for (const auto& rb : recon.bifurcations) {
      auto [idx, d2] = gt_index.nearest(rb.pos);
      double thresh = std::max(gt.bifurcations[idx].radius,
                               params.bifurcation_threshold_c * params.voxel_size);
      if (d2 <= thresh * thresh) ++rt_matched;
    }
    out.bif_fallout = 1.0 - (double)rt_matched / (double)recon.bifurcations.size();
  }
  return out;
}

}  // namespace vtree
