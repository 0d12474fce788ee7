#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <vector>

#include "vesseltree/energy.hpp"
#include "vesseltree/field.hpp"
#include "vesseltree/util.hpp"
#include "vesseltree/vec3.hpp"

namespace vtree {

/// Continuous-block state: per-point line parameters plus the damping and
/// counters of the trust-region loop.
struct TrustRegionState {
  std::vector<Vec3> line_points;
  std::vector<Vec3> tangents;
  double damping = 1e-3;
  double damping_cap = 1e10;
  double rel_tol = 1e-7;
  int iterations = 0;
  int accepted = 0;
  int rejected = 0;
  bool stagnated = false;
  bool converged = false;

  static TrustRegionState from_points(const std::vector<TangentPoint>& pts) {
    TrustRegionState s;
    s.line_points.reserve(pts.size());
    s.tangents.reserve(pts.size());
    for (const auto& p : pts) {
      s.line_points.push_back(p.line_point);
      s.tangents.push_back(p.tangent);
    }
    return s;
  }

  void apply_to(std::vector<TangentPoint>& pts) const {
    for (std::size_t i = 0; i < pts.size(); ++i) {
      pts[i].line_point = line_points[i];
      pts[i].tangent = tangents[i];
    }
  }
};

/// Smoothed fixed-sign objective (the continuous block of the joint energy):
/// data + gamma * (active curvatures + saturated constants) + lambda *
/// softplus-smoothed divergence hinge. The saturation gate is frozen at
/// construction; signs are frozen throughout.
///
/// Parametrization: per point, 4 local coordinates (a, b) moving the line
/// point in the plane orthogonal to the tangent and (u, v) rotating the
/// tangent in that plane. Line points are maintained as orthogonal
/// projections of the raw positions, so a tangent rotation also slides the
/// tangency point along the line: d(tangency)/du = <pos - c, e1> * l.
class TangentObjective {
 public:
  TangentObjective(const NeighborGraph& graph, const EnergyParams& params)
      : graph_(graph), params_(params) {
    params_.validate();
    active_.assign(graph.curvature_pairs.size(), 1);
    if (params_.oriented) {
      for (std::size_t e = 0; e < graph.curvature_pairs.size(); ++e) {
        auto [i, j] = graph.curvature_pairs[e];
        active_[e] =
            dot(graph.points[i].oriented_tangent(), graph.points[j].oriented_tangent()) >=
            params_.tau;
      }
    }
  }

  const std::vector<char>& active() const { return active_; }
  const EnergyParams& params() const { return params_; }

  int num_params(std::size_t n_points) const { return (int)(4 * n_points); }

  /// Deterministic orthonormal frames for the current tangents.
  std::vector<std::array<Vec3, 2>> make_frames(const std::vector<TangentPoint>& pts) const {
    std::vector<std::array<Vec3, 2>> frames(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i)
      orthonormal_frame(pts[i].tangent, frames[i][0], frames[i][1]);
    return frames;
  }

  /// Applies a 4n step, renormalizes tangents, re-projects line points onto
  /// the new lines (closest point to the raw position).
  std::vector<TangentPoint> apply_step(const std::vector<TangentPoint>& pts,
                                       const std::vector<std::array<Vec3, 2>>& frames,
                                       const std::vector<double>& delta) const {
    std::vector<TangentPoint> out = pts;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const Vec3& e1 = frames[i][0];
      const Vec3& e2 = frames[i][1];
      Vec3 c = pts[i].line_point + e1 * delta[4 * i] + e2 * delta[4 * i + 1];
      Vec3 l = normalized(pts[i].tangent + e1 * delta[4 * i + 2] + e2 * delta[4 * i + 3]);
      out[i].tangent = l;
      out[i].line_point = c + l * dot(pts[i].position - c, l);
    }
    return out;
  }

  double value(const std::vector<TangentPoint>& pts) const {
    KahanSum total;
    for (const auto& p : pts) total.add(data_term(p));
    if (params_.gamma > 0.0) {
      KahanSum curv;
      for (std::size_t e = 0; e < graph_.curvature_pairs.size(); ++e) {
        auto [i, j] = graph_.curvature_pairs[e];
        curv.add(active_[e] ? curvature_of_kind(pts[i], pts[j], params_.curvature_kind) : 1.0);
      }
      total.add(params_.gamma * curv.value());
    }
    if (params_.lambda > 0.0) {
      KahanSum divg;
      for (auto [i, j] : graph_.divergence_pairs)
        divg.add(params_.hinge_smooth(pair_divergence(pts[i], pts[j], graph_.facet_area)));
      total.add(params_.lambda * divg.value());
    }
    return total.value();
  }

  /// True (unsmoothed, re-gated) joint energy at this state.
  double true_energy(const std::vector<TangentPoint>& pts) const {
    NeighborGraph g;
    g.points = pts;
    g.curvature_pairs = graph_.curvature_pairs;
    g.divergence_pairs = graph_.divergence_pairs;
    g.facet_area = graph_.facet_area;
    return total_energy(g, params_).total;
  }

  /// Analytic gradient of value() with respect to the 4n local coordinates
  /// at the current state (frames fixed, parameters at the origin).
  std::vector<double> gradient(const std::vector<TangentPoint>& pts,
                               const std::vector<std::array<Vec3, 2>>& frames) const {
    std::vector<double> g(4 * pts.size(), 0.0);
    auto add_point_grad = [&](std::size_t i, const Vec3& d_tangency, const Vec3& d_direction) {
      // chain rule through the local parametrization
      const Vec3& e1 = frames[i][0];
      const Vec3& e2 = frames[i][1];
      Vec3 w = pts[i].position - pts[i].line_point;  // orthogonal to tangent at a
                                                     // projected state
      g[4 * i + 0] += dot(d_tangency, e1);
      g[4 * i + 1] += dot(d_tangency, e2);
      g[4 * i + 2] += dot(d_direction, e1) + dot(d_tangency, pts[i].tangent) * dot(w, e1);
      g[4 * i + 3] += dot(d_direction, e2) + dot(d_tangency, pts[i].tangent) * dot(w, e2);
    };

    // data terms: d/dc ||(I-ll^T)(pos-c)||^2 = -2 v, d/dl = -2 <w,l> w (zero
    // contribution through the tangency slide since the term is line-invariant)
    for (std::size_t i = 0; i < pts.size(); ++i) {
      Vec3 w = pts[i].position - pts[i].line_point;
      Vec3 v = reject(w, pts[i].tangent);
      Vec3 dl = w * (-2.0 * dot(w, pts[i].tangent));
      const Vec3& e1 = frames[i][0];
      const Vec3& e2 = frames[i][1];
      g[4 * i + 0] += dot(v * -2.0, e1);
      g[4 * i + 1] += dot(v * -2.0, e2);
      g[4 * i + 2] += dot(dl, e1);
      g[4 * i + 3] += dot(dl, e2);
    }

    if (params_.gamma > 0.0) {
      for (std::size_t e = 0; e < graph_.curvature_pairs.size(); ++e) {
        if (!active_[e]) continue;
        auto [pi, qi] = graph_.curvature_pairs[e];
        const TangentPoint& p = pts[pi];
        const TangentPoint& q = pts[qi];
        Vec3 w1 = p.line_point - q.line_point;  // cp - cq
        double D2 = norm2(w1);
        double D = std::sqrt(D2);
        Vec3 v1 = reject(w1, q.tangent);   // d(p, L_q) direction
        Vec3 v2 = reject(w1 * -1.0, p.tangent);
        double d1 = norm(v1), d2 = norm(v2);

        Vec3 dc_p, dc_q, dl_p, dl_q;  // gradients wrt tangency points and directions
        if (params_.curvature_kind == CurvatureKind::quadratic) {
          // T = (gamma/2) (d1^2 + d2^2) / D^2
          double c = params_.gamma * 0.5;
          double sum = d1 * d1 + d2 * d2;
          // d(d1^2): 2 v1 wrt cp, -2 v1 wrt cq, -2 <w1,lq> w1 wrt lq
          // d(d2^2): -2 v2 wrt cp, 2 v2 wrt cq, 2 <w1,lp> w1 wrt lp (w2 = -w1)
          Vec3 dd_cp = (v1 * 2.0 - v2 * 2.0) / D2 - w1 * (2.0 * sum / (D2 * D2));
          Vec3 dd_cq = (v1 * -2.0 + v2 * 2.0) / D2 + w1 * (2.0 * sum / (D2 * D2));
          dc_p = dd_cp * c;
          dc_q = dd_cq * c;
          dl_q = w1 * (-2.0 * dot(w1, q.tangent) / D2) * c;
          dl_p = w1 * (-2.0 * dot(w1, p.tangent) / D2) * c;  // via w2 = -w1
        } else {
          // T = (gamma/2) (d1 + d2) / D
          double c = params_.gamma * 0.5;
          Vec3 gd1_cp = d1 > 1e-300 ? v1 / d1 : Vec3{};
          Vec3 gd2_cp = d2 > 1e-300 ? v2 * (-1.0 / d2) : Vec3{};
          Vec3 num_cp = gd1_cp + gd2_cp;
          double sum = d1 + d2;
          dc_p = (num_cp / D - w1 * (sum / (D2 * D))) * c;
          dc_q = (num_cp * -1.0 / D + w1 * (sum / (D2 * D))) * c;
          dl_q = d1 > 1e-300 ? v1 * (-dot(w1, q.tangent) / (d1 * D)) * c : Vec3{};
          dl_p = d2 > 1e-300 ? v2 * (dot(w1, p.tangent) / (d2 * D)) * c : Vec3{};
          // note dv1/dlq . e = -<w1,e> lq - <w1,lq> e; <v1, lq> = 0 so only the
          // second term survives in <v1, dv1>; same for v2 with w2 = -w1
        }
        add_point_grad(pi, dc_p, dl_p);
        add_point_grad(qi, dc_q, dl_q);
      }
    }

    if (params_.lambda > 0.0) {
      for (auto [pi, qi] : graph_.divergence_pairs) {
        const TangentPoint& p = pts[pi];
        const TangentPoint& q = pts[qi];
        Vec3 u = q.position - p.position;
        double len = norm(u);
        double flux = pair_divergence(p, q, graph_.facet_area);
        double s_grad = params_.lambda * params_.hinge_smooth_grad(flux);
        double k = graph_.facet_area / len;
        // d flux / d l_q = k * sign_q * u ; d/d l_p = -k * sign_p * u
        add_point_grad(qi, Vec3{}, u * (s_grad * k * q.sign));
        add_point_grad(pi, Vec3{}, u * (-s_grad * k * p.sign));
      }
    }
    return g;
  }

 private:
  const NeighborGraph& graph_;
  EnergyParams params_;
  std::vector<char> active_;
};

namespace detail {

/// 4x4 symmetric solve via Cholesky with jitter fallback.
inline std::array<double, 4> solve4(const std::array<double, 16>& m,
                                    const std::array<double, 4>& b) {
  double a[4][5];
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) a[i][j] = m[i * 4 + j];
    a[i][4] = b[i];
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    if (std::fabs(a[piv][col]) < 1e-300) {
      a[col][col] += 1e-12;
      piv = col;
    }
    if (piv != col)
      for (int j = 0; j < 5; ++j) std::swap(a[piv][j], a[col][j]);
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      double f = a[r][col] / a[col][col];
      for (int j = col; j < 5; ++j) a[r][j] -= f * a[col][j];
    }
  }
  std::array<double, 4> x;
  for (int i = 0; i < 4; ++i) x[i] = a[i][4] / a[i][i];
  return x;
}

}  // namespace detail

struct TangentSolveOptions {
  int max_iters = 1500;
  double rel_tol = 1e-7;
  double damping_init = 1e-3;
  double damping_cap = 1e10;
  int cg_max_iters = 60;
  double cg_tol = 1e-6;
};

/// Levenberg-Marquardt over the smoothed objective. Gauss-Newton normal
/// equations are assembled from residual blocks (data, curvature, divergence;
/// absolute curvature via IRLS residuals whose gradient matches the true term
/// at the linearization point) and solved by block-Jacobi preconditioned CG.
/// Steps are accepted only if the smoothed objective strictly decreases;
/// damping x10 on rejection, /10 on acceptance. The returned state is the
/// visited state with the lowest true (unsmoothed) joint energy, so the true
/// energy never increases across the call.
class TangentSolver {
 public:
  TangentSolver(const NeighborGraph& graph, const EnergyParams& params,
                const TangentSolveOptions& opt = {})
      : graph_(graph), obj_(graph, params), opt_(opt) {}

  TrustRegionState solve(TrustRegionState state) {
    std::vector<TangentPoint> pts = graph_.points;
    if (state.line_points.size() != pts.size()) state = TrustRegionState::from_points(pts);
    state.apply_to(pts);
    // the raw entry state is the first snapshot candidate, so the returned
    // true energy can never exceed the entry value
    std::vector<TangentPoint> best_true_pts = pts;
    double best_true = obj_.true_energy(pts);
    const double entry_true = best_true;
    // enter at a projected state
    for (auto& p : pts)
      p.line_point = p.line_point + p.tangent * dot(p.position - p.line_point, p.tangent);

    double mu = state.damping > 0 ? state.damping : opt_.damping_init;
    double f_cur = obj_.value(pts);
    {
      double t = obj_.true_energy(pts);
      if (t < best_true) {
        best_true = t;
        best_true_pts = pts;
      }
    }

    const std::size_t n = pts.size();
    interacting_pairs();

    for (int iter = 0; iter < opt_.max_iters; ++iter) {
      state.iterations = iter + 1;
      double f_before = f_cur;
      assemble(pts);
      double gnorm = 0;
      for (double v : grad_) gnorm += v * v;
      if (std::sqrt(gnorm) < 1e-10 * (1.0 + std::fabs(f_cur))) {
        state.converged = true;
        break;
      }

      bool accepted_step = false;
      while (true) {
        std::vector<double> delta = solve_normal_eq(mu, n);
        auto frames = obj_.make_frames(pts);
        std::vector<TangentPoint> cand = obj_.apply_step(pts, frames, delta);
        double f_new = obj_.value(cand);
        if (f_new < f_cur) {
          pts = std::move(cand);
          f_cur = f_new;
          mu = std::max(mu / 10.0, 1e-12);
          ++state.accepted;
          accepted_step = true;
          double t = obj_.true_energy(pts);
          if (t < best_true) {
            best_true = t;
            best_true_pts = pts;
          }
          break;
        }
        ++state.rejected;
        mu *= 10.0;
        if (mu > opt_.damping_cap) {
          state.stagnated = true;
          break;
        }
      }
      if (state.stagnated) break;
      if (!accepted_step) break;
      if (f_before - f_cur < opt_.rel_tol * std::max(1.0, std::fabs(f_before))) {
        state.converged = true;
        break;
      }
    }

    state.damping = mu;
    // prefer the fully converged state as long as it keeps the true energy
    // monotone; fall back to the best true-energy snapshot (entry included)
    const std::vector<TangentPoint>* ret = &best_true_pts;
    if (obj_.true_energy(pts) <= entry_true) ret = &pts;
    state.line_points.resize(n);
    state.tangents.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      state.line_points[i] = (*ret)[i].line_point;
      state.tangents[i] = (*ret)[i].tangent;
    }
    return state;
  }

  const TangentObjective& objective() const { return obj_; }

 private:
  const NeighborGraph& graph_;
  TangentObjective obj_;
  TangentSolveOptions opt_;

  // normal equations
  std::vector<double> diag_;     // n x 16 (4x4 blocks)
  std::vector<double> off_;      // m x 16
  std::vector<double> grad_;     // 4n, = J^T r
  std::vector<double> jtj_diag_; // 4n
  std::vector<std::pair<int, int>> pairs_;  // interacting point pairs, a < b
  std::vector<int> curv_pair_idx_, div_pair_idx_;

  void interacting_pairs() {
    pairs_.clear();
    std::vector<std::pair<int, int>> all;
    for (std::size_t e = 0; e < graph_.curvature_pairs.size(); ++e)
      if (obj_.active()[e] && obj_.params().gamma > 0) all.push_back(graph_.curvature_pairs[e]);
    if (obj_.params().lambda > 0)
      for (auto pr : graph_.divergence_pairs) all.push_back(pr);
    std::sort(all.begin(), all.end());
    all.erase(std::unique(all.begin(), all.end()), all.end());
    pairs_ = std::move(all);

    auto index_of = [&](std::pair<int, int> pr) {
      return (int)(std::lower_bound(pairs_.begin(), pairs_.end(), pr) - pairs_.begin());
    };
    curv_pair_idx_.assign(graph_.curvature_pairs.size(), -1);
    for (std::size_t e = 0; e < graph_.curvature_pairs.size(); ++e)
      if (obj_.active()[e] && obj_.params().gamma > 0)
        curv_pair_idx_[e] = index_of(graph_.curvature_pairs[e]);
    div_pair_idx_.assign(graph_.divergence_pairs.size(), -1);
    if (obj_.params().lambda > 0)
      for (std::size_t e = 0; e < graph_.divergence_pairs.size(); ++e)
        div_pair_idx_[e] = index_of(graph_.divergence_pairs[e]);
  }

  /// One residual block: value r (dim components) and Jacobian columns for up
  /// to two touched points (4 params each).
  struct Block {
    int dim = 0;
    int pi = -1, qi = -1;
    double r[3] = {0, 0, 0};
    double jp[3][4] = {};  // d r / d params(pi)
    double jq[3][4] = {};  // d r / d params(qi)
  };

  void accumulate(const Block& blk, int pair_idx) {
    auto add_outer = [&](const double (*ja)[4], const double (*jb)[4], double* dst) {
      for (int a = 0; a < 4; ++a)
        for (int b = 0; b < 4; ++b) {
          double s = 0;
          for (int d = 0; d < blk.dim; ++d) s += ja[d][a] * jb[d][b];
          dst[a * 4 + b] += s;
        }
    };
    if (blk.pi >= 0) {
      add_outer(blk.jp, blk.jp, &diag_[(std::size_t)blk.pi * 16]);
      for (int a = 0; a < 4; ++a) {
        double s = 0;
        for (int d = 0; d < blk.dim; ++d) s += blk.jp[d][a] * blk.r[d];
        grad_[4 * blk.pi + a] += s;
      }
    }
    if (blk.qi >= 0) {
      add_outer(blk.jq, blk.jq, &diag_[(std::size_t)blk.qi * 16]);
      for (int a = 0; a < 4; ++a) {
        double s = 0;
        for (int d = 0; d < blk.dim; ++d) s += blk.jq[d][a] * blk.r[d];
        grad_[4 * blk.qi + a] += s;
      }
    }
    if (blk.pi >= 0 && blk.qi >= 0 && pair_idx >= 0) {
      bool p_first = blk.pi < blk.qi;
      const auto& ja = p_first ? blk.jp : blk.jq;
      const auto& jb = p_first ? blk.jq : blk.jp;
      add_outer(ja, jb, &off_[(std::size_t)pair_idx * 16]);
    }
  }

  /// Fills jp/jq columns given per-point response to tangency-point motion
  /// (A applied to the velocity) and direction motion (B applied).
  template <typename FA, typename FB>
  static void fill_columns(double (*dst)[4], int dim, const TangentPoint& pt,
                           const std::array<Vec3, 2>& frame, FA&& d_tangency,
                           FB&& d_direction) {
    Vec3 w = pt.position - pt.line_point;
    const Vec3& e1 = frame[0];
    const Vec3& e2 = frame[1];
    // parameter velocities: a -> tangency e1; b -> tangency e2;
    // u -> direction e1 + tangency <w,e1> l ; v -> direction e2 + ...
    Vec3 tan_vel[4] = {e1, e2, pt.tangent * dot(w, e1), pt.tangent * dot(w, e2)};
    Vec3 dir_vel[4] = {{}, {}, e1, e2};
    for (int col = 0; col < 4; ++col) {
      Vec3 resp = d_tangency(tan_vel[col]) + d_direction(dir_vel[col]);
      for (int d = 0; d < dim; ++d) dst[d][col] = resp[d];
    }
  }

  void assemble(const std::vector<TangentPoint>& pts) {
    const std::size_t n = pts.size();
    diag_.assign(n * 16, 0.0);
    off_.assign(pairs_.size() * 16, 0.0);
    grad_.assign(4 * n, 0.0);
    auto frames = obj_.make_frames(pts);
    const EnergyParams& P = obj_.params();

    Block blk;
    // data blocks
    for (std::size_t i = 0; i < n; ++i) {
      const TangentPoint& p = pts[i];
      Vec3 w = p.position - p.line_point;
      Vec3 v = reject(w, p.tangent);
      blk.dim = 3;
      blk.pi = (int)i;
      blk.qi = -1;
      blk.r[0] = v.x; blk.r[1] = v.y; blk.r[2] = v.z;
      Vec3 l = p.tangent;
      fill_columns(blk.jp, 3, p, frames[i],
                   [&](const Vec3& t) { return reject(t, l) * -1.0; },
                   [&](const Vec3& e) { return l * -dot(w, e) + e * -dot(w, l); });
      accumulate(blk, -1);
    }

    // curvature blocks
    if (P.gamma > 0) {
      for (std::size_t e = 0; e < graph_.curvature_pairs.size(); ++e) {
        if (!obj_.active()[e]) continue;
        auto [pi, qi] = graph_.curvature_pairs[e];
        const TangentPoint& p = pts[pi];
        const TangentPoint& q = pts[qi];
        Vec3 w1 = p.line_point - q.line_point;
        double D2 = norm2(w1);
        double D = std::sqrt(D2);
        if (D < 1e-300) continue;
        Vec3 lq = q.tangent, lp = p.tangent;
        Vec3 v1 = reject(w1, lq);
        Vec3 v2 = reject(w1 * -1.0, lp);

        if (P.curvature_kind == CurvatureKind::quadratic) {
          double s = std::sqrt(P.gamma * 0.5);
          // r1 = s * v1 / D (point-line distance p to L_q)
          blk.dim = 3;
          blk.pi = pi;
          blk.qi = qi;
          Vec3 r1 = v1 * (s / D);
          blk.r[0] = r1.x; blk.r[1] = r1.y; blk.r[2] = r1.z;
          fill_columns(blk.jp, 3, p, frames[pi],
                       [&](const Vec3& t) {
                         return (reject(t, lq) - v1 * (dot(w1, t) / D2)) * (s / D);
                       },
                       [&](const Vec3&) { return Vec3{}; });
          fill_columns(blk.jq, 3, q, frames[qi],
                       [&](const Vec3& t) {
                         return (reject(t, lq) - v1 * (dot(w1, t) / D2)) * (-s / D);
                       },
                       [&](const Vec3& ev) {
                         return (lq * dot(w1, ev) + ev * dot(w1, lq)) * (-s / D);
                       });
          accumulate(blk, curv_pair_idx_[e]);
          // r2 = s * v2 / D (q to L_p); w2 = -w1
          Vec3 r2 = v2 * (s / D);
          blk.r[0] = r2.x; blk.r[1] = r2.y; blk.r[2] = r2.z;
          fill_columns(blk.jq, 3, q, frames[qi],
                       [&](const Vec3& t) {
                         return (reject(t, lp) + v2 * (dot(w1, t) / D2)) * (s / D);
                       },
                       [&](const Vec3&) { return Vec3{}; });
          fill_columns(blk.jp, 3, p, frames[pi],
                       [&](const Vec3& t) {
                         return (reject(t, lp) + v2 * (dot(w1, t) / D2)) * (-s / D);
                       },
                       [&](const Vec3& ev) {
                         return (lp * dot(w1 * -1.0, ev) + ev * dot(w1 * -1.0, lp)) * (-s / D);
                       });
          accumulate(blk, curv_pair_idx_[e]);
        } else {
          // absolute curvature via IRLS: gamma/2 * (d1 + d2) / D modeled as
          //   |r_a|^2 + |r_b|^2 with matched value and gradient at the
          //   linearization point
          double d1 = norm(v1), d2 = norm(v2);
          double dcap = 1e-9 * (D + 1e-30);
          double d1h = std::max(d1, dcap), d2h = std::max(d2, dcap);
          double sqD = std::sqrt(D);
          {
            // r_a1 = sqrt(gamma/(4 d1h)) * v1 / sqrt(D)
            double ca = std::sqrt(P.gamma / (4.0 * d1h));
            blk.dim = 3;
            blk.pi = pi;
            blk.qi = qi;
            Vec3 ra = v1 * (ca / sqD);
            blk.r[0] = ra.x; blk.r[1] = ra.y; blk.r[2] = ra.z;
            fill_columns(blk.jp, 3, p, frames[pi],
                         [&](const Vec3& t) {
                           return (reject(t, lq) * (1.0 / sqD) -
                                   v1 * (dot(w1, t) / (2.0 * D2 * sqD))) * ca;
                         },
                         [&](const Vec3&) { return Vec3{}; });
            fill_columns(blk.jq, 3, q, frames[qi],
                         [&](const Vec3& t) {
                           return (reject(t, lq) * (-1.0 / sqD) +
                                   v1 * (dot(w1, t) / (2.0 * D2 * sqD))) * ca;
                         },
                         [&](const Vec3& ev) {
                           return (lq * dot(w1, ev) + ev * dot(w1, lq)) * (-ca / sqD);
                         });
            accumulate(blk, curv_pair_idx_[e]);
            // r_b1 = sqrt(gamma d1h / 4) / sqrt(D), scalar
            double cb = std::sqrt(P.gamma * d1h / 4.0);
            blk.dim = 1;
            blk.r[0] = cb / sqD;
            double coef = -cb / (2.0 * D2 * sqD);
            fill_columns(blk.jp, 1, p, frames[pi],
                         [&](const Vec3& t) { return Vec3{dot(w1, t) * coef, 0, 0}; },
                         [&](const Vec3&) { return Vec3{}; });
            fill_columns(blk.jq, 1, q, frames[qi],
                         [&](const Vec3& t) { return Vec3{-dot(w1, t) * coef, 0, 0}; },
                         [&](const Vec3&) { return Vec3{}; });
            accumulate(blk, curv_pair_idx_[e]);
          }
          {
            // mirrored terms for d2 (q against L_p), w2 = -w1
            double ca = std::sqrt(P.gamma / (4.0 * d2h));
            blk.dim = 3;
            blk.pi = pi;
            blk.qi = qi;
            Vec3 ra = v2 * (ca / sqD);
            blk.r[0] = ra.x; blk.r[1] = ra.y; blk.r[2] = ra.z;
            fill_columns(blk.jq, 3, q, frames[qi],
                         [&](const Vec3& t) {
                           return (reject(t, lp) * (1.0 / sqD) -
                                   v2 * (dot(w1 * -1.0, t) / (2.0 * D2 * sqD))) * ca;
                         },
                         [&](const Vec3&) { return Vec3{}; });
            fill_columns(blk.jp, 3, p, frames[pi],
                         [&](const Vec3& t) {
                           return (reject(t, lp) * (-1.0 / sqD) +
                                   v2 * (dot(w1 * -1.0, t) / (2.0 * D2 * sqD))) * ca;
                         },
                         [&](const Vec3& ev) {
                           return (lp * dot(w1 * -1.0, ev) + ev * dot(w1 * -1.0, lp)) *
                                  (-ca / sqD);
                         });
            accumulate(blk, curv_pair_idx_[e]);
            double cb = std::sqrt(P.gamma * d2h / 4.0);
            blk.dim = 1;
            blk.r[0] = cb / sqD;
            double coef = -cb / (2.0 * D2 * sqD);
            fill_columns(blk.jp, 1, p, frames[pi],
                         [&](const Vec3& t) { return Vec3{dot(w1, t) * coef, 0, 0}; },
                         [&](const Vec3&) { return Vec3{}; });
            fill_columns(blk.jq, 1, q, frames[qi],
                         [&](const Vec3& t) { return Vec3{-dot(w1, t) * coef, 0, 0}; },
                         [&](const Vec3&) { return Vec3{}; });
            accumulate(blk, curv_pair_idx_[e]);
          }
        }
      }
    }

    // divergence blocks: r = sqrt(lambda * softplus(flux))
    if (P.lambda > 0) {
      for (std::size_t e = 0; e < graph_.divergence_pairs.size(); ++e) {
        auto [pi, qi] = graph_.divergence_pairs[e];
        const TangentPoint& p = pts[pi];
        const TangentPoint& q = pts[qi];
        Vec3 u = q.position - p.position;
        double len = norm(u);
        double flux = pair_divergence(p, q, graph_.facet_area);
        double s = P.hinge_smooth(flux);
        double r = std::sqrt(std::max(P.lambda * s, 0.0));
        blk.dim = 1;
        blk.pi = pi;
        blk.qi = qi;
        blk.r[0] = r;
        double dr_dflux = r > 1e-150 ? P.lambda * P.hinge_smooth_grad(flux) / (2.0 * r) : 0.0;
        double k = graph_.facet_area / len;
        fill_columns(blk.jp, 1, p, frames[pi], [&](const Vec3&) { return Vec3{}; },
                     [&](const Vec3& ev) {
                       return Vec3{dr_dflux * (-k * p.sign) * dot(u, ev), 0, 0};
                     });
        fill_columns(blk.jq, 1, q, frames[qi], [&](const Vec3&) { return Vec3{}; },
                     [&](const Vec3& ev) {
                       return Vec3{dr_dflux * (k * q.sign) * dot(u, ev), 0, 0};
                     });
        accumulate(blk, div_pair_idx_[e]);
      }
    }

    jtj_diag_.assign(4 * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (int a = 0; a < 4; ++a) jtj_diag_[4 * i + a] = diag_[i * 16 + a * 4 + a];
  }

  /// (J^T J + mu * diag) delta = -grad via block-Jacobi preconditioned CG.
  std::vector<double> solve_normal_eq(double mu, std::size_t n) {
    double floor = 0.0;
    for (double v : jtj_diag_) floor = std::max(floor, v);
    floor = std::max(floor * 1e-12, 1e-300);

    auto matvec = [&](const std::vector<double>& x, std::vector<double>& y) {
      std::fill(y.begin(), y.end(), 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (int a = 0; a < 4; ++a) {
          double s = 0;
          for (int b = 0; b < 4; ++b) s += diag_[i * 16 + a * 4 + b] * x[4 * i + b];
          y[4 * i + a] += s + mu * std::max(jtj_diag_[4 * i + a], floor) * x[4 * i + a];
        }
      for (std::size_t e = 0; e < pairs_.size(); ++e) {
        auto [ia, ib] = pairs_[e];
        const double* m = &off_[e * 16];
        for (int a = 0; a < 4; ++a) {
          double s1 = 0, s2 = 0;
          for (int b = 0; b < 4; ++b) {
            s1 += m[a * 4 + b] * x[4 * ib + b];
            s2 += m[b * 4 + a] * x[4 * ia + b];
          }
          y[4 * ia + a] += s1;
          y[4 * ib + a] += s2;
        }
      }
    };

    // block-Jacobi preconditioner
    std::vector<std::array<double, 16>> prec(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::array<double, 16> m;
      for (int t = 0; t < 16; ++t) m[t] = diag_[i * 16 + t];
      for (int a = 0; a < 4; ++a) m[a * 4 + a] += mu * std::max(jtj_diag_[4 * i + a], floor);
      prec[i] = m;
    }
    auto apply_prec = [&](const std::vector<double>& r, std::vector<double>& z) {
      for (std::size_t i = 0; i < n; ++i) {
        std::array<double, 4> rhs{r[4 * i], r[4 * i + 1], r[4 * i + 2], r[4 * i + 3]};
        auto x = detail::solve4(prec[i], rhs);
        for (int a = 0; a < 4; ++a) z[4 * i + a] = x[a];
      }
    };

    std::size_t m = 4 * n;
    std::vector<double> x(m, 0.0), r(m), z(m), pvec(m), ap(m);
    for (std::size_t i = 0; i < m; ++i) r[i] = -grad_[i];
    double rnorm0 = 0;
    for (double v : r) rnorm0 += v * v;
    if (rnorm0 == 0) return x;
    apply_prec(r, z);
    pvec = z;
    double rz = 0;
    for (std::size_t i = 0; i < m; ++i) rz += r[i] * z[i];
    for (int it = 0; it < opt_.cg_max_iters; ++it) {
      matvec(pvec, ap);
      double pap = 0;
      for (std::size_t i = 0; i < m; ++i) pap += pvec[i] * ap[i];
      if (pap <= 0) break;
      double alpha = rz / pap;
      double rnorm = 0;
      for (std::size_t i = 0; i < m; ++i) {
        x[i] += alpha * pvec[i];
        r[i] -= alpha * ap[i];
        rnorm += r[i] * r[i];
      }
      if (rnorm <= opt_.cg_tol * opt_.cg_tol * rnorm0) break;
      apply_prec(r, z);
      double rz_new = 0;
      for (std::size_t i = 0; i < m; ++i) rz_new += r[i] * z[i];
      double beta = rz_new / rz;
      rz = rz_new;
      for (std::size_t i = 0; i < m; ++i) pvec[i] = z[i] + beta * pvec[i];
    }
    return x;
  }
};

/// Eq.(12) block: optimize tangent lines at frozen signs.
inline TrustRegionState solve_tangents(TrustRegionState state, const NeighborGraph& graph,
                                       const EnergyParams& params, int max_iters = 1500) {
  TangentSolveOptions opt;
  opt.max_iters = max_iters;
  opt.rel_tol = state.rel_tol;
  opt.damping_cap = state.damping_cap;
  TangentSolver solver(graph, params, opt);
  return solver.solve(std::move(state));
}

}  // namespace vtree
