#pragma once

#include <chrono>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "vesseltree/energy.hpp"
#include "vesseltree/field.hpp"
#include "vesseltree/tangent_fit.hpp"
#include "vesseltree/trws.hpp"

namespace vtree {

/// Discrete block of the joint energy: binary sign variables with pairwise
/// 2x2 cost tables (label 0 = sign -1, label 1 = sign +1) and no unaries.
/// The sign-independent data-term constant is reported separately.
struct SignProblem {
  BinaryPairwiseProblem mrf;
  double constant = 0.0;  // sum of data terms, sign-independent
};

/// Tables hold gamma * oriented curvature + lambda * hinge(flux) evaluated at
/// the four sign combinations with tangents and line points frozen.
inline SignProblem build_sign_problem(const NeighborGraph& graph, const EnergyParams& params) {
  params.validate();
  SignProblem sp;
  sp.mrf.num_nodes = (int)graph.points.size();

  std::map<std::pair<int, int>, int> edge_index;
  auto edge_for = [&](int a, int b) -> BinaryPairwiseProblem::Edge& {
    auto key = std::make_pair(a, b);
    auto it = edge_index.find(key);
    if (it == edge_index.end()) {
      it = edge_index.emplace(key, (int)sp.mrf.edges.size()).first;
      BinaryPairwiseProblem::Edge e;
      e.a = a;
      e.b = b;
      sp.mrf.edges.push_back(e);
    }
    return sp.mrf.edges[it->second];
  };

  const int sign_of[2] = {-1, +1};
  if (params.gamma > 0.0) {
    for (auto [i, j] : graph.curvature_pairs) {
      TangentPoint p = graph.points[i];
      TangentPoint q = graph.points[j];
      auto& e = edge_for(i, j);
      for (int xa = 0; xa < 2; ++xa)
        for (int xb = 0; xb < 2; ++xb) {
          p.sign = sign_of[xa];
          q.sign = sign_of[xb];
          e.cost[xa][xb] += params.gamma * curvature_oriented(p, q, params);
        }
    }
  }
  if (params.lambda > 0.0) {
    for (auto [i, j] : graph.divergence_pairs) {
      TangentPoint p = graph.points[i];
      TangentPoint q = graph.points[j];
      auto& e = edge_for(i, j);
      for (int xa = 0; xa < 2; ++xa)
        for (int xb = 0; xb < 2; ++xb) {
          p.sign = sign_of[xa];
          q.sign = sign_of[xb];
          e.cost[xa][xb] +=
              params.hinge(pair_divergence(p, q, graph.facet_area)) * params.lambda;
        }
    }
  }
  KahanSum data;
  for (const auto& p : graph.points) data.add(data_term(p));
  sp.constant = data.value();
  sp.mrf.validate();
  return sp;
}

struct SignSolveResult {
  std::vector<int> signs;  // -1 / +1 per point
  double energy = 0.0;     // pairwise table energy of `signs` (constant excluded)
  double lower_bound = 0.0;
  std::vector<double> bound_trace;
  bool converged = false;
  int iterations = 0;
};

/// Eq.(11) block: TRW-S over the sign variables. Returns the best labeling
/// found; non-convergence within max_iters is reported via the flag.
inline SignSolveResult solve_signs(const SignProblem& problem, int max_iters = 1500) {
  TrwsOptions opt;
  opt.max_iters = max_iters;
  TrwsResult r = solve_binary_mrf(problem.mrf, opt);
  SignSolveResult out;
  out.signs.resize(r.labels.size());
  for (std::size_t i = 0; i < r.labels.size(); ++i) out.signs[i] = r.labels[i] == 0 ? -1 : +1;
  out.energy = r.energy;
  out.lower_bound = r.lower_bound;
  out.bound_trace = std::move(r.bound_trace);
  out.converged = r.converged;
  out.iterations = r.iterations;
  return out;
}

struct SolveReport {
  std::vector<EnergyBreakdown> energy_trace;  // per outer iteration, entry state first
  std::vector<double> sign_lower_bounds;      // final TRW-S bound per outer iteration
  std::vector<double> last_bound_trace;       // inner bound trace of the last sign solve
  int outer_iterations = 0;
  int sign_flips_total = 0;
  int lm_accepted = 0;
  int lm_rejected = 0;
  bool sign_converged = true;
  bool tangent_stagnated = false;
  bool converged = false;
  double wall_seconds = 0.0;

  void check_monotone(double tol = 1e-9) const {
    for (std::size_t i = 1; i < energy_trace.size(); ++i)
      if (energy_trace[i].total > energy_trace[i - 1].total + tol)
        throw std::runtime_error("energy trace increased across outer iterations");
  }
};

struct DescentOptions {
  int outer_iters = 20;
  double rel_tol = 1e-6;
  int sign_iters = 1500;
  int lm_iters = 1500;
  bool skip_sign_step = false;  // forced off when signs cannot affect the energy
};

/// Block-coordinate descent on the joint energy: alternate TRW-S over signs
/// (keeping the incumbent labeling unless the new one is strictly better) and
/// trust-region refinement of tangent lines. The energy trace is non-
/// increasing by construction.
inline SolveReport block_coordinate_descent(NeighborGraph& graph, const EnergyParams& params,
                                            const DescentOptions& opt = {}) {
  params.validate();
  auto t0 = std::chrono::steady_clock::now();
  SolveReport report;
  report.energy_trace.push_back(total_energy(graph, params));

  bool signs_matter = (params.oriented && params.gamma > 0.0) || params.lambda > 0.0;
  bool do_signs = signs_matter && !opt.skip_sign_step;

  for (int outer = 0; outer < opt.outer_iters; ++outer) {
    report.outer_iterations = outer + 1;
    double entry_total = report.energy_trace.back().total;

    if (do_signs) {
      SignProblem sp = build_sign_problem(graph, params);
      SignSolveResult sr = solve_signs(sp, opt.sign_iters);
      report.sign_lower_bounds.push_back(sr.lower_bound);
      report.last_bound_trace = sr.bound_trace;
      report.sign_converged = report.sign_converged && sr.converged;
      // incumbent policy: adopt only a strictly better labeling
      std::vector<int> current(graph.points.size());
      for (std::size_t i = 0; i < graph.points.size(); ++i) current[i] = graph.points[i].sign;
      std::vector<int> cur_labels(current.size());
      for (std::size_t i = 0; i < current.size(); ++i) cur_labels[i] = current[i] < 0 ? 0 : 1;
      double cur_energy = sp.mrf.labeling_energy(cur_labels);
      if (sr.energy < cur_energy - 1e-12 * std::max(1.0, std::fabs(cur_energy))) {
        for (std::size_t i = 0; i < graph.points.size(); ++i) {
          if (graph.points[i].sign != sr.signs[i]) ++report.sign_flips_total;
          graph.points[i].sign = sr.signs[i];
        }
      }
    }

    TangentSolveOptions topt;
    topt.max_iters = opt.lm_iters;
    TangentSolver solver(graph, params, topt);
    TrustRegionState st = TrustRegionState::from_points(graph.points);
    st = solver.solve(std::move(st));
    st.apply_to(graph.points);
    report.lm_accepted += st.accepted;
    report.lm_rejected += st.rejected;
    report.tangent_stagnated = report.tangent_stagnated || st.stagnated;

    EnergyBreakdown now = total_energy(graph, params);
    report.energy_trace.push_back(now);
    bool stalled = entry_total - now.total < opt.rel_tol * std::max(1.0, std::fabs(entry_total));
    bool at_zero = now.total <= 1e-12 * std::max(1.0, std::fabs(entry_total));
    if (stalled || at_zero) {
      report.converged = true;
      break;
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  report.check_monotone();
  return report;
}

}  // namespace vtree
