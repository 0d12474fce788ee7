#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vesseltree/pipeline.hpp"

using namespace vtree;

namespace {

RunConfig make_config(const std::string& config_path, std::uint64_t seed_override, bool has_seed,
                      const std::string& out_override) {
  RunConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  if (has_seed) cfg.seed = seed_override;
  if (!out_override.empty()) cfg.out_dir = out_override;
  cfg.validate();
  return cfg;
}

std::vector<double> parse_doubles(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"vesseltree: divergence-regularized vessel tree centerline reconstruction"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path, out_dir, method = "oriquacurv";
  std::uint64_t seed = 0;
  bool has_seed = false;
  double noise = 0.0;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--seed", seed, "master RNG seed (overrides config)")->each([&](std::string) {
    has_seed = true;
  });
  app.add_option("--out", out_dir, "output directory (overrides config)");

  // generate
  auto* gen = app.add_subcommand("generate", "synthesize a volume and its ground-truth tree");
  int gen_index = 0;
  gen->add_option("--volume-index", gen_index, "volume index (seeds the generator stream)");

  // filter
  auto* flt = app.add_subcommand("filter", "Frangi + threshold + NMS on a volume");
  std::string flt_volume, flt_points = "points.txt";
  double flt_threshold = 0.0;
  int flt_index = 0;
  flt->add_option("--volume", flt_volume, "volume header (.vhdr)")->required();
  flt->add_option("--points", flt_points, "output point-set file");
  flt->add_option("--noise", noise, "additive Gaussian noise sigma before filtering");
  flt->add_option("--threshold", flt_threshold, "vesselness threshold (default: top fraction)");
  flt->add_option("--volume-index", flt_index, "volume index (seeds the noise stream)");

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "optimize signs and tangent lines");
  std::string rec_points, rec_out_points = "recon_points.txt";
  std::string rec_trace = "energy_trace.csv", rec_report = "report.json";
  rec->add_option("--points", rec_points, "input point-set file")->required();
  rec->add_option("--out-points", rec_out_points, "converged point-set file");
  rec->add_option("--trace", rec_trace, "energy trace CSV");
  rec->add_option("--report", rec_report, "solve report JSON");
  rec->add_option("--method", method, "quacurv | oriquacurv | oriabscurv");

  // tree
  auto* tre = app.add_subcommand("tree", "KNN + MST tree extraction");
  std::string tre_points, tre_out = "tree.txt", tre_edges;
  tre->add_option("--points", tre_points, "input point-set file")->required();
  tre->add_option("--tree", tre_out, "output tree file");
  tre->add_option("--edges", tre_edges, "optional edge-list dump with weights");

  // eval
  auto* evl = app.add_subcommand("eval", "score reconstructed trees against ground truth");
  std::string evl_gt, evl_recon, evl_thresholds, evl_prefix = "metrics";
  evl->add_option("--gt", evl_gt, "ground-truth tree file")->required();
  evl->add_option("--recon", evl_recon, "comma-separated reconstructed tree files")->required();
  evl->add_option("--thresholds", evl_thresholds,
                  "comma-separated threshold labels (one per tree)");
  evl->add_option("--prefix", evl_prefix, "output prefix for metrics CSVs");

  // experiment
  auto* exp = app.add_subcommand("experiment", "full sweep: volumes x noise x methods");
  std::string exp_methods, exp_sigmas;
  exp->add_option("--methods", exp_methods, "comma-separated method list (overrides config)");
  exp->add_option("--noise", exp_sigmas, "comma-separated noise sigmas (overrides config)");

  // plot
  auto* plt = app.add_subcommand("plot", "SVG charts from metrics CSVs");
  std::vector<std::string> plt_inputs;
  std::string plt_prefix = "plot";
  bool plt_bif = false;
  std::string plt_trace;
  plt->add_option("--metrics", plt_inputs, "metrics CSV files (ROC chart)");
  plt->add_option("--prefix", plt_prefix, "output prefix");
  plt->add_flag("--bifurcation", plt_bif, "plot bifurcation-only ROC columns");
  plt->add_option("--energy-trace", plt_trace, "energy trace CSV (convergence chart)");

  CLI11_PARSE(app, argc, argv);

  try {
    RunConfig cfg = make_config(config_path, seed, has_seed, out_dir);

    if (gen->parsed()) {
      run_generate(cfg, cfg.out_dir, gen_index);
      std::cout << "wrote vol_" << detail::zero_pad(gen_index) << " and gt_"
                << detail::zero_pad(gen_index) << ".txt under " << cfg.out_dir << "\n";
    } else if (flt->parsed()) {
      VoxelVolume vol = read_volume(flt_volume);
      FilterResult fr = filter_volume(cfg, vol, noise, flt_index, flt_threshold);
      write_points(fr.points, flt_points);
      std::cout << "threshold " << fmt_double(fr.threshold_used) << ", " << fr.points.size()
                << " points -> " << flt_points << "\n";
    } else if (rec->parsed()) {
      std::vector<TangentPoint> pts = read_points(rec_points);
      ReconstructResult rr = reconstruct_points(cfg, pts, method);
      write_points(rr.graph.points, rec_out_points, /*refined=*/true);
      write_energy_trace_csv(rr.report, rec_trace);
      write_solve_report_json(rr.report, rec_report);
      if (rr.report.tangent_stagnated)
        std::cerr << "warning: trust region stagnated (damping cap reached)\n";
      if (!rr.report.sign_converged)
        std::cerr << "warning: message passing hit the iteration cap\n";
      std::cout << "energy " << fmt_double(rr.report.energy_trace.front().total) << " -> "
                << fmt_double(rr.report.energy_trace.back().total) << " in "
                << rr.report.outer_iterations << " outer iterations\n";
    } else if (tre->parsed()) {
      std::vector<TangentPoint> pts = read_points(tre_points);
      WeightedGraph g;
      CenterlineTree t = extract_tree(cfg, pts, &g);
      write_tree(t, tre_out);
      if (!tre_edges.empty()) write_edge_dump(g, tre_edges);
      std::cout << t.nodes.size() << " nodes -> " << tre_out << "\n";
    } else if (evl->parsed()) {
      CenterlineTree gt = read_tree(evl_gt);
      ResampledTree gt_rs = resample_tree(gt, cfg.resample_step);
      std::vector<std::string> files;
      {
        std::stringstream ss(evl_recon);
        std::string item;
        while (std::getline(ss, item, ','))
          if (!item.empty()) files.push_back(item);
      }
      std::vector<double> labels = parse_doubles(evl_thresholds);
      std::vector<EvalRow> rows;
      for (std::size_t i = 0; i < files.size(); ++i) {
        CenterlineTree recon = read_tree(files[i]);
        double label = i < labels.size() ? labels[i] : (double)i;
        rows.push_back(evaluate_reconstruction(cfg, gt_rs, recon, label));
      }
      write_roc_csv(rows, evl_prefix + "_roc.csv");
      write_bif_roc_csv(rows, evl_prefix + "_bif_roc.csv");
      for (std::size_t i = 0; i < rows.size(); ++i)
        write_angle_csv(rows[i], evl_prefix + "_angles_" + detail::zero_pad((int)i) + ".csv");
      write_manifest(cfg, {{"gt", evl_gt}, {"reconstructions", files}},
                     evl_prefix + "_manifest.json");
      std::cout << "wrote " << evl_prefix << "_roc.csv and related metrics\n";
    } else if (exp->parsed()) {
      if (!exp_methods.empty()) {
        cfg.methods.clear();
        std::stringstream ss(exp_methods);
        std::string item;
        while (std::getline(ss, item, ','))
          if (!item.empty()) cfg.methods.push_back(item);
      }
      if (!exp_sigmas.empty()) cfg.noise_sigmas = parse_doubles(exp_sigmas);
      run_experiment(cfg);
      std::cout << "experiment complete under " << cfg.out_dir << "\n";
    } else if (plt->parsed()) {
      if (!plt_trace.empty()) {
        plot_energy_trace(plt_trace, plt_prefix);
      } else {
        if (plt_inputs.empty()) throw std::runtime_error("plot: no inputs given");
        run_plot(plt_inputs, plt_prefix, plt_bif);
      }
      std::cout << "wrote " << plt_prefix << ".svg\n";
    }
  } catch (const std::exception& e) {
    nlohmann::ordered_json err;
    err["error"] = e.what();
    std::cerr << err.dump() << "\n";
    return 1;
  }
  return 0;
}
