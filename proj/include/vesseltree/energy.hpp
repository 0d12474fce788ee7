#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "vesseltree/field.hpp"
#include "vesseltree/points.hpp"
#include "vesseltree/util.hpp"
#include "vesseltree/vec3.hpp"

namespace vtree {

enum class CurvatureKind { quadratic, absolute };
enum class DivergenceSense { penalize_negative, penalize_positive };

struct EnergyParams {
  double gamma = 3.80;    // curvature weight
  double lambda = 18.06;  // divergence weight
  double tau = 0.3420201433256688;  // cos 70 degrees
  CurvatureKind curvature_kind = CurvatureKind::quadratic;
  DivergenceSense divergence_sense = DivergenceSense::penalize_negative;
  double hinge_sharpness = 20.0;  // softplus beta for the continuous block
  bool oriented = true;  // false: sign-ignoring curvature (no saturation gate)

  void validate() const {
    if (gamma < 0.0 || lambda < 0.0) throw std::runtime_error("energy: gamma, lambda must be >= 0");
    if (!(tau >= 0.0 && tau < 1.0)) throw std::runtime_error("energy: tau must be in [0,1)");
    if (!(hinge_sharpness > 0.0)) throw std::runtime_error("energy: hinge_sharpness must be > 0");
  }

  double hinge(double a) const {
    return divergence_sense == DivergenceSense::penalize_negative ? negative_part(a)
                                                                  : positive_part(a);
  }

  /// Softplus smoothing of the hinge, used by the continuous solver.
  double hinge_smooth(double a) const {
    double beta = hinge_sharpness;
    double t = divergence_sense == DivergenceSense::penalize_negative ? a : -a;
    // (1/beta) * log(1 + exp(-beta t)), stable form
    double bt = beta * t;
    if (bt > 700.0) return 0.0;
    if (bt < -700.0) return -t;
    return (bt < 0 ? -t : 0.0) + std::log1p(std::exp(-std::fabs(bt))) / beta;
  }

  /// d/da of hinge_smooth.
  double hinge_smooth_grad(double a) const {
    double beta = hinge_sharpness;
    double t = divergence_sense == DivergenceSense::penalize_negative ? a : -a;
    double bt = beta * t;
    double g;  // d/dt of (1/beta) log(1+exp(-beta t)) = -sigmoid(-beta t)
    if (bt > 700.0) g = 0.0;
    else if (bt < -700.0) g = -1.0;
    else g = -1.0 / (1.0 + std::exp(bt));
    return divergence_sense == DivergenceSense::penalize_negative ? g : -g;
  }
};

/// Quadratic curvature of a tangent pair (lines at the current line points):
///   0.5 * (d(p, L_q)^2 + d(q, L_p)^2) / |p - q|^2,
/// invariant to either tangent's sign.
inline double curvature_quadratic(const TangentPoint& p, const TangentPoint& q) {
  double d2pq = norm2(p.line_point - q.line_point);
  if (d2pq == 0.0) throw std::runtime_error("curvature: coincident line points");
  double a = dist2_point_line(p.line_point, q.line_point, q.tangent);
  double b = dist2_point_line(q.line_point, p.line_point, p.tangent);
  return 0.5 * (a + b) / d2pq;
}

/// Absolute curvature variant: 0.5 * (d(p, L_q) + d(q, L_p)) / |p - q|.
inline double curvature_absolute(const TangentPoint& p, const TangentPoint& q) {
  double dpq = norm(p.line_point - q.line_point);
  if (dpq == 0.0) throw std::runtime_error("curvature: coincident line points");
  double a = dist_point_line(p.line_point, q.line_point, q.tangent);
  double b = dist_point_line(q.line_point, p.line_point, p.tangent);
  return 0.5 * (a + b) / dpq;
}

inline double curvature_of_kind(const TangentPoint& p, const TangentPoint& q, CurvatureKind kind) {
  return kind == CurvatureKind::quadratic ? curvature_quadratic(p, q) : curvature_absolute(p, q);
}

/// Robust oriented curvature: the underlying curvature when the oriented
/// tangents agree (dot >= tau, boundary inclusive), else the saturation
/// constant 1. With params.oriented == false the gate is skipped entirely
/// (sign-ignoring model).
inline double curvature_oriented(const TangentPoint& p, const TangentPoint& q,
                                 const EnergyParams& params) {
  if (params.oriented && dot(p.oriented_tangent(), q.oriented_tangent()) < params.tau) return 1.0;
  return curvature_of_kind(p, q, params.curvature_kind);
}

/// Squared distance from the raw position to the point's tangent line.
inline double data_term(const TangentPoint& pt) {
  return dist2_point_line(pt.position, pt.line_point, pt.tangent);
}

struct EnergyBreakdown {
  double data = 0.0;
  double curvature = 0.0;   // gamma-weighted
  double divergence = 0.0;  // lambda-weighted
  double total = 0.0;
};

/// Full objective over the graph:
///   sum_p data + gamma * sum_N oriented curvature + lambda * sum_D hinge(flux).
/// Accumulated with compensated summation in a fixed (serial) order.
inline EnergyBreakdown total_energy(const NeighborGraph& graph, const EnergyParams& params) {
  params.validate();
  KahanSum data, curv, divg;
  for (const auto& p : graph.points) data.add(data_term(p));
  if (params.gamma > 0.0) {
    for (auto [i, j] : graph.curvature_pairs)
      curv.add(curvature_oriented(graph.points[i], graph.points[j], params));
  }
  if (params.lambda > 0.0) {
    for (auto [i, j] : graph.divergence_pairs)
      divg.add(params.hinge(pair_divergence(graph.points[i], graph.points[j], graph.facet_area)));
  }
  EnergyBreakdown out;
  out.data = data.value();
  out.curvature = params.gamma * curv.value();
  out.divergence = params.lambda * divg.value();
  out.total = out.data + out.curvature + out.divergence;
  return out;
}

}  // namespace vtree
