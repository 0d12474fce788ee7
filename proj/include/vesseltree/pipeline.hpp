#pragma once

#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "vesseltree/config.hpp"
#include "vesseltree/eval.hpp"
#include "vesseltree/io.hpp"
#include "vesseltree/optimize.hpp"
#include "vesseltree/svg.hpp"
#include "vesseltree/tree.hpp"
#include "vesseltree/vesselness.hpp"

namespace vtree {

namespace detail {

inline std::string zero_pad(int v, int width = 3) {
  std::string s = std::to_string(v);
  while ((int)s.size() < width) s = "0" + s;
  return s;
}

inline std::string sigma_tag(double sigma) {
  std::string s = fmt_double(sigma);
  for (char& c : s)
    if (c == '.') c = 'p';
  return s;
}

inline void ensure_dir(const std::string& path) { std::filesystem::create_directories(path); }

}  // namespace detail

// ---------------------------------------------------------------------------
// stage: generate
// ---------------------------------------------------------------------------

struct GeneratedVolume {
  CenterlineTree tree;
  VoxelVolume volume;
};

inline GeneratedVolume generate_volume(const RunConfig& cfg, int volume_index) {
  SynthesisParams sp = cfg.synthesis_params();
  sp.seed = derive_seed(cfg.seed, 1, (std::uint64_t)volume_index);
  GeneratedVolume out;
  out.tree = synthesize_tree(sp);
  out.volume =
      rasterize(out.tree, cfg.volume_nx, cfg.volume_ny, cfg.volume_nz, cfg.spacing,
                cfg.intensity_peak);
  return out;
}

inline void run_generate(const RunConfig& cfg, const std::string& out_dir, int volume_index) {
  detail::ensure_dir(out_dir);
  GeneratedVolume g = generate_volume(cfg, volume_index);
  std::string tag = detail::zero_pad(volume_index);
  write_volume(g.volume, out_dir + "/vol_" + tag);
  write_tree(g.tree, out_dir + "/gt_" + tag + ".txt");
}

// ---------------------------------------------------------------------------
// stage: filter (noise + Frangi + threshold + NMS)
// ---------------------------------------------------------------------------

struct FilterResult {
  std::vector<TangentPoint> points;
  double threshold_used = 0.0;
};

inline std::uint64_t noise_seed_for(const RunConfig& cfg, int volume_index, double sigma) {
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(sigma));
  std::memcpy(&bits, &sigma, sizeof(bits));
  return derive_seed(cfg.seed, 2, (std::uint64_t)volume_index * 0x9e3779b97f4a7c15ull ^ bits);
}

/// Adds noise, runs multiscale Frangi and NMS. threshold <= 0 resolves the
/// per-volume default (value retaining the top top_fraction of voxels).
inline FilterResult filter_volume(const RunConfig& cfg, const VoxelVolume& volume,
                                  double noise_sigma, int volume_index, double threshold) {
  VoxelVolume noisy = noise_sigma > 0.0
                          ? add_gaussian_noise(volume, noise_sigma,
                                               noise_seed_for(cfg, volume_index, noise_sigma))
                          : volume;
  VesselnessField field = multiscale_frangi(noisy, cfg.frangi_params());
  FilterResult out;
  out.threshold_used = threshold > 0.0 ? threshold : vesselness_quantile(field, cfg.top_fraction);
  out.points = threshold_and_nms(field, out.threshold_used);
  return out;
}

/// Vesselness field alone; lets sweeps reuse one field across thresholds.
inline VesselnessField filter_field(const RunConfig& cfg, const VoxelVolume& volume,
                                    double noise_sigma, int volume_index) {
  VoxelVolume noisy = noise_sigma > 0.0
                          ? add_gaussian_noise(volume, noise_sigma,
                                               noise_seed_for(cfg, volume_index, noise_sigma))
                          : volume;
  return multiscale_frangi(noisy, cfg.frangi_params());
}

// ---------------------------------------------------------------------------
// stage: reconstruct
// ---------------------------------------------------------------------------

struct ReconstructResult {
  NeighborGraph graph;
  SolveReport report;
};

inline ReconstructResult reconstruct_points(const RunConfig& cfg,
                                            const std::vector<TangentPoint>& points,
                                            const std::string& method) {
  if (points.empty()) throw std::runtime_error("reconstruct: empty point set");
  ReconstructResult out;
  out.graph = build_neighborhood(points, cfg.neighborhood(), cfg.spacing, cfg.neighborhood_k);
  out.graph.facet_area = cfg.facet_area;
  // the reference weights balance the scale-invariant curvature and
  // divergence terms against a data term measured in voxels, so the descent
  // runs in voxel units
  double inv = 1.0 / cfg.spacing;
  for (auto& p : out.graph.points) {
    p.position *= inv;
    p.line_point *= inv;
  }
  EnergyParams params = cfg.energy_params(method);
  DescentOptions opt;
  opt.outer_iters = cfg.outer_iters;
  opt.rel_tol = cfg.descent_rel_tol;
  opt.sign_iters = cfg.sign_iters;
  opt.lm_iters = cfg.lm_iters;
  out.report = block_coordinate_descent(out.graph, params, opt);
  for (auto& p : out.graph.points) {
    p.position *= cfg.spacing;
    p.line_point *= cfg.spacing;
  }
  return out;
}

inline void write_energy_trace_csv(const SolveReport& report, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "iter,data,curvature,divergence,total\n";
  for (std::size_t i = 0; i < report.energy_trace.size(); ++i) {
    const auto& e = report.energy_trace[i];
    f << i << "," << fmt_double(e.data) << "," << fmt_double(e.curvature) << ","
      << fmt_double(e.divergence) << "," << fmt_double(e.total) << "\n";
  }
}

inline void write_solve_report_json(const SolveReport& report, const std::string& path) {
  nlohmann::ordered_json j;
  j["outer_iterations"] = report.outer_iterations;
  j["converged"] = report.converged;
  j["sign_converged"] = report.sign_converged;
  j["tangent_stagnated"] = report.tangent_stagnated;
  j["lm_accepted"] = report.lm_accepted;
  j["lm_rejected"] = report.lm_rejected;
  j["sign_flips_total"] = report.sign_flips_total;
  j["wall_seconds"] = report.wall_seconds;
  j["sign_lower_bounds"] = report.sign_lower_bounds;
  j["last_sign_bound_trace"] = report.last_bound_trace;
  nlohmann::ordered_json trace = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < report.energy_trace.size(); ++i) {
    const auto& e = report.energy_trace[i];
    trace.push_back({{"iter", i},
                     {"data", e.data},
                     {"curvature", e.curvature},
                     {"divergence", e.divergence},
                     {"total", e.total}});
  }
  j["energy_trace"] = trace;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// stage: tree extraction
// ---------------------------------------------------------------------------

/// KNN (complete graph for small sets) + MST, bridged to a single connected
/// tree when the KNN graph falls apart. Point positions are canonicalized to
/// the refined line points first, matching the on-disk point format.
inline CenterlineTree extract_tree(const RunConfig& cfg, const std::vector<TangentPoint>& points,
                                   WeightedGraph* graph_out = nullptr) {
  if (points.empty()) throw std::runtime_error("extract_tree: empty point set");
  std::vector<TangentPoint> canon = points;
  for (auto& p : canon) {
    p.position = p.line_point;
    p.tangent = p.oriented_tangent();
    p.sign = 1;
  }
  bool complete = (int)canon.size() <= cfg.complete_graph_max;
  WeightedGraph g = build_knn_graph(canon, cfg.tree_knn_k, complete);

  // bridge components with minimal arc-length edges until connected
  while (true) {
    detail::UnionFind uf((int)canon.size());
    for (const auto& e : g.edges) uf.unite(e.i, e.j);
    int root0 = uf.find(0);
    bool connected = true;
    for (int i = 1; i < (int)canon.size(); ++i)
      if (uf.find(i) != root0) {
        connected = false;
        break;
      }
    if (connected) break;
    double best_w = std::numeric_limits<double>::infinity();
    int bi = -1, bj = -1;
    for (int i = 0; i < (int)canon.size(); ++i)
      for (int j = i + 1; j < (int)canon.size(); ++j) {
        if (uf.find(i) == uf.find(j)) continue;
        double w = arc_length_weight(canon[i], canon[j]);
        if (w < best_w) {
          best_w = w;
          bi = i;
          bj = j;
        }
      }
    g.edges.push_back({bi, bj, best_w});
  }
  if (graph_out) *graph_out = g;
  return minimum_spanning_tree(g, canon);
}

inline void write_edge_dump(const WeightedGraph& g, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& e : g.edges)
    f << e.i << " " << e.j << " " << fmt_double(e.weight) << "\n";
}

// ---------------------------------------------------------------------------
// stage: eval
// ---------------------------------------------------------------------------

struct EvalRow {
  double threshold = 0.0;
  double recall = 0.0;
  double fallout = 0.0;
  double bif_recall = 0.0;
  double bif_fallout = 0.0;
  double mean_angle_deg = std::numeric_limits<double>::quiet_NaN();
  int matched_bifs = 0;
  int unmatched_bifs = 0;
  bool empty_reconstruction = false;
  std::vector<double> angle_errors_deg;
};

/// Resamples a reconstructed tree and replaces its bifurcation directions by
/// the converged tangent estimates of the incident points (folded to point
/// away from the junction). The tree's node indices match the point indices.
inline ResampledTree resample_reconstruction(const CenterlineTree& recon,
                                             const std::vector<TangentPoint>& points,
                                             double step) {
  ResampledTree rs = resample_tree(recon, step);
  if (points.size() != recon.nodes.size()) return rs;
  auto kids = recon.children();
  for (auto& b : rs.bifurcations) {
    std::vector<int> incident;
    if (recon.nodes[b.node].parent >= 0) incident.push_back(recon.nodes[b.node].parent);
    for (int c : kids[b.node]) incident.push_back(c);
    b.directions.clear();
    for (int n : incident) {
      Vec3 chord = recon.nodes[n].pos - recon.nodes[b.node].pos;
      Vec3 t = points[n].oriented_tangent();
      if (dot(t, chord) < 0) t = -t;
      b.directions.push_back(t);
    }
  }
  return rs;
}

inline EvalRow evaluate_reconstruction(const RunConfig& cfg, const ResampledTree& gt,
                                       const CenterlineTree& recon, double threshold_label,
                                       const std::vector<TangentPoint>* recon_points = nullptr) {
  MatchParams mp = cfg.match_params();
  ResampledTree rs = recon_points
                         ? resample_reconstruction(recon, *recon_points, mp.resample_step)
                         : resample_tree(recon, mp.resample_step);
  EvalRow row;
  row.threshold = threshold_label;
  MatchResult m = match_and_score(gt, rs.points, mp);
  row.recall = m.recall;
  row.fallout = m.fallout;
  row.empty_reconstruction = m.empty_reconstruction;
  BifurcationScores b = bifurcation_scores(gt, rs, mp);
  row.bif_recall = b.bif_recall;
  row.bif_fallout = b.bif_fallout;
  row.mean_angle_deg = b.mean_angle_error();
  row.matched_bifs = (int)b.angle_errors_deg.size();
  row.unmatched_bifs = b.unmatched_gt;
  row.angle_errors_deg = std::move(b.angle_errors_deg);
  return row;
}

inline void write_roc_csv(const std::vector<EvalRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "threshold,recall,fallout\n";
  for (const auto& r : rows)
    f << fmt_double(r.threshold) << "," << fmt_double(r.recall) << "," << fmt_double(r.fallout)
      << "\n";
}

inline void write_bif_roc_csv(const std::vector<EvalRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "threshold,bif_recall,bif_fallout\n";
  for (const auto& r : rows)
    f << fmt_double(r.threshold) << "," << fmt_double(r.bif_recall) << ","
      << fmt_double(r.bif_fallout) << "\n";
}

inline void write_angle_csv(const EvalRow& row, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << "bif_id,error_deg\n";
  for (std::size_t i = 0; i < row.angle_errors_deg.size(); ++i)
    f << i << "," << fmt_double(row.angle_errors_deg[i]) << "\n";
}

// ---------------------------------------------------------------------------
// stage: experiment (full sweep)
// ---------------------------------------------------------------------------

/// One (volume, sigma, method) sweep cell: per-threshold reconstructions and
/// their evaluation rows.
struct CellResult {
  int volume = 0;
  double sigma = 0.0;
  std::string method;
  std::vector<EvalRow> rows;  // one per threshold, ascending threshold
};

inline std::vector<double> resolve_thresholds(const RunConfig& cfg,
                                              const VesselnessField& field) {
  std::vector<double> values;
  for (auto it = cfg.threshold_fractions.rbegin(); it != cfg.threshold_fractions.rend(); ++it)
    values.push_back(vesselness_quantile(field, *it));
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  return values;
}

/// Runs the stage chain downstream of one threshold level. Returns the
/// reconstructed tree, or nothing when the point set came out empty.
inline std::optional<CenterlineTree> reconstruct_cell_at(
    const RunConfig& cfg, const VesselnessField& field, const std::string& method,
    double threshold, std::vector<TangentPoint>* points_out = nullptr, SolveReport* report_out = nullptr) {
  std::vector<TangentPoint> pts = threshold_and_nms(field, threshold);
  if (pts.empty()) return std::nullopt;
  std::vector<TangentPoint> final_pts;
  if (method == "nms") {
    final_pts = pts;
  } else {
    ReconstructResult rec = reconstruct_points(cfg, pts, method);
    final_pts = rec.graph.points;
    if (report_out) *report_out = rec.report;
  }
  if (points_out) *points_out = final_pts;
  return extract_tree(cfg, final_pts);
}

inline CellResult run_cell(const RunConfig& cfg, const VesselnessField& field,
                           const ResampledTree& gt, int volume_index, double sigma,
                           const std::string& method, const std::vector<double>& thresholds) {
  CellResult cell;
  cell.volume = volume_index;
  cell.sigma = sigma;
  cell.method = method;
  for (double t : thresholds) {
    std::vector<TangentPoint> pts;
    auto tree = reconstruct_cell_at(cfg, field, method, t, &pts);
    if (!tree) {
      EvalRow row;
      row.threshold = t;
      row.empty_reconstruction = true;
      cell.rows.push_back(row);
      continue;
    }
    cell.rows.push_back(evaluate_reconstruction(cfg, gt, *tree, t, &pts));
  }
  return cell;
}

inline void write_manifest(const RunConfig& cfg, const nlohmann::ordered_json& extra,
                           const std::string& path) {
  nlohmann::ordered_json j;
  j["config"] = to_json(cfg);
  j["seed_derivation"] = "volume: hash(seed,1,index); noise: hash(seed,2,index*K^bits(sigma))";
  j["fallout_definition"] =
      "1 - N_RTmatch/N_RTtotal with counts over the reconstructed tree (false-detection rate "
      "reading of the printed formula)";
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f << j.dump(2) << "\n";
}

inline void append_cell_csv(const CellResult& cell, const std::string& path, bool header) {
  std::ofstream f(path, header ? std::ios::trunc : std::ios::app);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  if (header)
    f << "volume,threshold,recall,fallout,bif_recall,bif_fallout,mean_angle_deg,matched_bifs,"
         "unmatched_bifs,empty\n";
  for (const auto& r : cell.rows)
    f << cell.volume << "," << fmt_double(r.threshold) << "," << fmt_double(r.recall) << ","
      << fmt_double(r.fallout) << "," << fmt_double(r.bif_recall) << ","
      << fmt_double(r.bif_fallout) << ","
      << (std::isnan(r.mean_angle_deg) ? "nan" : fmt_double(r.mean_angle_deg)) << ","
      << r.matched_bifs << "," << r.unmatched_bifs << "," << (r.empty_reconstruction ? 1 : 0)
      << "\n";
}

/// Full sweep over volumes x noise levels x methods. Cells run independently
/// (parallel over a fixed cell list); all aggregation is serial and
/// deterministic.
inline void run_experiment(const RunConfig& cfg) {
  cfg.validate();
  if (cfg.methods.empty()) throw std::runtime_error("experiment: empty method list");
  const std::string out = cfg.out_dir;
  detail::ensure_dir(out);
  detail::ensure_dir(out + "/volumes");
  detail::ensure_dir(out + "/metrics");

  struct VolumeData {
    CenterlineTree gt;
    ResampledTree gt_rs;
    VoxelVolume volume;
  };
  std::vector<VolumeData> volumes(cfg.num_volumes);
  for (int v = 0; v < cfg.num_volumes; ++v) {
    GeneratedVolume g = generate_volume(cfg, v);
    volumes[v].gt = g.tree;
    volumes[v].gt_rs = resample_tree(g.tree, cfg.resample_step);
    volumes[v].volume = std::move(g.volume);
    std::string tag = detail::zero_pad(v);
    write_volume(volumes[v].volume, out + "/volumes/vol_" + tag);
    write_tree(volumes[v].gt, out + "/volumes/gt_" + tag + ".txt");
  }

  struct Task {
    int volume;
    double sigma;
  };
  std::vector<Task> tasks;
  for (int v = 0; v < cfg.num_volumes; ++v)
    for (double s : cfg.noise_sigmas) tasks.push_back({v, s});

  // cell results in deterministic task order; (volume, sigma) pairs run in
  // parallel, methods within a pair share the vesselness field
  std::vector<std::vector<CellResult>> results(tasks.size());
  std::vector<nlohmann::ordered_json> task_meta(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t t = next.fetch_add(1);
      if (t >= tasks.size()) break;
      const Task& task = tasks[t];
      VesselnessField field =
          filter_field(cfg, volumes[task.volume].volume, task.sigma, task.volume);
      std::vector<double> thresholds = resolve_thresholds(cfg, field);
      task_meta[t] = {{"volume", task.volume},
                      {"sigma", task.sigma},
                      {"thresholds", thresholds}};
      for (const std::string& method : cfg.methods)
        results[t].push_back(run_cell(cfg, field, volumes[task.volume].gt_rs, task.volume,
                                      task.sigma, method, thresholds));
    }
  };
  {
    int nt = std::min<int>(thread_count(), (int)tasks.size());
    std::vector<std::thread> threads;
    for (int i = 0; i < nt; ++i) threads.emplace_back(worker);
    for (auto& th : threads) th.join();
  }

  // aggregate per (method, sigma)
  for (const std::string& method : cfg.methods) {
    for (double sigma : cfg.noise_sigmas) {
      std::string base = out + "/metrics/" + method + "_s" + detail::sigma_tag(sigma);
      bool first = true;
      std::vector<CellResult> cells;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        if (tasks[t].sigma != sigma) continue;
        for (const auto& cell : results[t])
          if (cell.method == method) {
            append_cell_csv(cell, base + ".csv", first);
            first = false;
            cells.push_back(cell);
          }
      }
      // angle error CSV across volumes (all thresholds)
      std::ofstream af(base + "_angles.csv");
      af << "volume,threshold,bif_id,error_deg\n";
      for (const auto& cell : cells)
        for (const auto& row : cell.rows)
          for (std::size_t i = 0; i < row.angle_errors_deg.size(); ++i)
            af << cell.volume << "," << fmt_double(row.threshold) << "," << i << ","
               << fmt_double(row.angle_errors_deg[i]) << "\n";
    }
  }

  nlohmann::ordered_json meta;
  meta["tasks"] = nlohmann::ordered_json::array();
  for (const auto& m : task_meta) meta["tasks"].push_back(m);
  write_manifest(cfg, meta, out + "/manifest.json");
}

// ---------------------------------------------------------------------------
// stage: plot
// ---------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<double>> rows;
};

inline CsvTable read_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open csv " + path);
  CsvTable t;
  std::string line;
  if (!std::getline(f, line)) throw std::runtime_error("empty csv " + path);
  std::stringstream hs(line);
  std::string cell;
  while (std::getline(hs, cell, ',')) t.columns.push_back(cell);
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<double> row;
    while (std::getline(ls, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (...) {
        row.push_back(std::numeric_limits<double>::quiet_NaN());
      }
    }
    t.rows.push_back(row);
  }
  return t;
}

/// Mean ROC polyline (recall vs fallout) per csv, one SVG plus the exact CSV
/// behind it.
inline void run_plot(const std::vector<std::string>& csv_paths, const std::string& out_prefix,
                     bool bifurcation = false) {
  std::vector<PlotSeries> series;
  std::ofstream data(out_prefix + ".csv");
  if (!data) throw std::runtime_error("cannot open " + out_prefix + ".csv for writing");
  const char* rc = bifurcation ? "bif_recall" : "recall";
  const char* fc = bifurcation ? "bif_fallout" : "fallout";
  data << "series,threshold," << fc << "," << rc << "\n";
  for (const std::string& path : csv_paths) {
    CsvTable t = read_csv(path);
    auto col = [&](const std::string& name) {
      for (std::size_t i = 0; i < t.columns.size(); ++i)
        if (t.columns[i] == name) return (int)i;
      throw std::runtime_error("csv " + path + " lacks column " + name);
    };
    int tcol = col("threshold"), rcol = col(rc), fcol = col(fc);
    // average rows per threshold
    std::map<double, std::pair<double, int>> rec, fal;
    for (const auto& row : t.rows) {
      rec[row[tcol]].first += row[rcol];
      rec[row[tcol]].second += 1;
      fal[row[tcol]].first += row[fcol];
      fal[row[tcol]].second += 1;
    }
    PlotSeries s;
    s.label = std::filesystem::path(path).stem().string();
    for (auto& [t_at, pr] : rec) {
      double f = fal[t_at].first / fal[t_at].second;
      double r = pr.first / pr.second;
      s.x.push_back(f);
      s.y.push_back(r);
      data << s.label << "," << fmt_double(t_at) << "," << fmt_double(f) << "," << fmt_double(r)
           << "\n";
    }
    series.push_back(std::move(s));
  }
  write_svg_chart(out_prefix + ".svg", bifurcation ? "Bifurcation ROC" : "ROC",
                  bifurcation ? "bifurcation fall-out" : "fall-out",
                  bifurcation ? "bifurcation recall" : "recall", series);
}

/// Energy trace chart (reproduces the convergence figure from a trace CSV).
inline void plot_energy_trace(const std::string& trace_csv, const std::string& out_prefix) {
  CsvTable t = read_csv(trace_csv);
  PlotSeries s;
  s.label = "total energy";
  for (const auto& row : t.rows) {
    s.x.push_back(row[0]);
    s.y.push_back(row[4]);
  }
  write_svg_chart(out_prefix + ".svg", "Energy by outer iteration", "outer iteration",
                  "total energy", {s});
}

}  // namespace vtree
