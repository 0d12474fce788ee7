#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "vesseltree/energy.hpp"
#include "vesseltree/eval.hpp"
#include "vesseltree/field.hpp"
#include "vesseltree/vesselness.hpp"
#include "vesseltree/volume.hpp"

namespace vtree {

/// Flat run configuration. Defaults follow the reference hyperparameters:
/// gamma=3.80, lambda=18.06, tau=cos 70 deg, 1500 inner iterations, matching
/// c=0.7 voxels (sqrt(3) at bifurcations), Frangi alpha=beta=0.5, gamma_f=30.
struct RunConfig {
  int schema_version = 1;

  // volume synthesis
  int volume_nx = 100, volume_ny = 100, volume_nz = 100;
  double spacing = 0.046;  // mm
  int depth = 3;
  double branch_len_min = 0.9, branch_len_max = 1.3;  // mm
  double angle_min_deg = 25.0, angle_max_deg = 50.0;
  double radius_decay = 0.75;
  double root_radius = 0.14;  // mm
  double intensity_peak = 512.0;
  double margin = 0.4;  // mm
  std::uint64_t seed = 1;

  // vesselness
  double frangi_alpha = 0.5, frangi_beta = 0.5, frangi_gamma = 30.0;
  double sigma_min = 0.023, sigma_max = 0.1152;  // mm
  int n_scales = 5;
  double nms_threshold = 0.0;        // explicit value; <= 0 uses top_fraction
  double top_fraction = 0.02;        // per-volume default threshold rule

  // neighborhood
  std::string neighborhood_mode = "grid26";  // grid26 | knn
  int neighborhood_k = 6;
  double facet_area = 1.0;

  // energy
  double gamma = 3.80;
  double lambda = 18.06;
  double tau = 0.3420201433256687;  // cos 70 deg
  double hinge_sharpness = 20.0;
  std::string divergence_sense = "penalize_negative";

  // optimization
  int outer_iters = 20;
  int sign_iters = 1500;
  int lm_iters = 1500;
  double descent_rel_tol = 1e-6;

  // tree extraction
  int tree_knn_k = 6;
  int complete_graph_max = 2000;

  // evaluation
  double resample_step = 0.0023;  // mm
  double match_c = 0.7;           // voxels
  double bifurcation_c = 1.7320508075688772;

  // experiment sweep
  int num_volumes = 10;
  std::vector<double> noise_sigmas = {5.0, 10.0, 15.0};
  std::vector<std::string> methods = {"nms", "quacurv", "oriquacurv", "oriabscurv"};
  std::vector<double> threshold_fractions = {0.005, 0.01, 0.02, 0.04, 0.08};
  std::string out_dir = "out";

  SynthesisParams synthesis_params() const {
    SynthesisParams p;
    p.depth = depth;
    p.branch_len_min = branch_len_min;
    p.branch_len_max = branch_len_max;
    p.angle_min_deg = angle_min_deg;
    p.angle_max_deg = angle_max_deg;
    p.radius_decay = radius_decay;
    p.root_radius = root_radius;
    p.intensity_peak = intensity_peak;
    p.seed = seed;
    p.extent = {(volume_nx - 1) * spacing, (volume_ny - 1) * spacing, (volume_nz - 1) * spacing};
    p.margin = margin;
    return p;
  }

  FrangiParams frangi_params() const {
    FrangiParams p;
    p.alpha = frangi_alpha;
    p.beta = frangi_beta;
    p.gamma_f = frangi_gamma;
    p.sigma_min = sigma_min;
    p.sigma_max = sigma_max;
    p.n_scales = n_scales;
    p.threshold = nms_threshold;
    return p;
  }

  /// quacurv = unoriented quadratic (no gate, no divergence);
  /// oriquacurv / oriabscurv = joint energy with the divergence prior.
  EnergyParams energy_params(const std::string& method) const {
    EnergyParams p;
    p.gamma = gamma;
    p.lambda = lambda;
    p.tau = tau;
    p.hinge_sharpness = hinge_sharpness;
    p.divergence_sense = divergence_sense == "penalize_positive"
                             ? DivergenceSense::penalize_positive
                             : DivergenceSense::penalize_negative;
    if (method == "quacurv") {
      p.oriented = false;
      p.lambda = 0.0;
      p.curvature_kind = CurvatureKind::quadratic;
    } else if (method == "oriquacurv") {
      p.curvature_kind = CurvatureKind::quadratic;
    } else if (method == "oriabscurv") {
      p.curvature_kind = CurvatureKind::absolute;
    } else {
      throw std::runtime_error("unknown reconstruction method: " + method);
    }
    p.validate();
    return p;
  }

  MatchParams match_params() const {
    MatchParams p;
    p.resample_step = resample_step;
    p.match_threshold_c = match_c;
    p.bifurcation_threshold_c = bifurcation_c;
    p.voxel_size = spacing;
    p.validate();
    return p;
  }

  NeighborhoodMode neighborhood() const {
    if (neighborhood_mode == "grid26") return NeighborhoodMode::grid26;
    if (neighborhood_mode == "knn") return NeighborhoodMode::knn;
    throw std::runtime_error("unknown neighborhood mode: " + neighborhood_mode);
  }

  void validate() const {
    synthesis_params().validate();
    frangi_params().validate();
    energy_params("oriquacurv").validate();
    match_params().validate();
    (void)neighborhood();
    if (divergence_sense != "penalize_negative" && divergence_sense != "penalize_positive")
      throw std::runtime_error("unknown divergence sense: " + divergence_sense);
    if (volume_nx < 8 || volume_ny < 8 || volume_nz < 8)
      throw std::runtime_error("volume dims too small");
    for (const auto& m : methods)
      if (m != "nms") (void)energy_params(m);
    for (std::size_t i = 1; i < threshold_fractions.size(); ++i)
      if (!(threshold_fractions[i] > threshold_fractions[i - 1]))
        throw std::runtime_error("threshold fractions must be strictly increasing");
    if (num_volumes < 1) throw std::runtime_error("num_volumes must be >= 1");
  }
};

namespace detail {

template <typename T>
void get_if(const nlohmann::ordered_json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const RunConfig& c) {
  nlohmann::ordered_json j;
  j["schema_version"] = c.schema_version;
  j["volume_nx"] = c.volume_nx;
  j["volume_ny"] = c.volume_ny;
  j["volume_nz"] = c.volume_nz;
  j["spacing"] = c.spacing;
  j["depth"] = c.depth;
  j["branch_len_min"] = c.branch_len_min;
  j["branch_len_max"] = c.branch_len_max;
  j["angle_min_deg"] = c.angle_min_deg;
  j["angle_max_deg"] = c.angle_max_deg;
  j["radius_decay"] = c.radius_decay;
  j["root_radius"] = c.root_radius;
  j["intensity_peak"] = c.intensity_peak;
  j["margin"] = c.margin;
  j["seed"] = c.seed;
  j["frangi_alpha"] = c.frangi_alpha;
  j["frangi_beta"] = c.frangi_beta;
  j["frangi_gamma"] = c.frangi_gamma;
  j["sigma_min"] = c.sigma_min;
  j["sigma_max"] = c.sigma_max;
  j["n_scales"] = c.n_scales;
  j["nms_threshold"] = c.nms_threshold;
  j["top_fraction"] = c.top_fraction;
  j["neighborhood_mode"] = c.neighborhood_mode;
  j["neighborhood_k"] = c.neighborhood_k;
  j["facet_area"] = c.facet_area;
  j["gamma"] = c.gamma;
  j["lambda"] = c.lambda;
  j["tau"] = c.tau;
  j["hinge_sharpness"] = c.hinge_sharpness;
  j["divergence_sense"] = c.divergence_sense;
  j["outer_iters"] = c.outer_iters;
  j["sign_iters"] = c.sign_iters;
  j["lm_iters"] = c.lm_iters;
  j["descent_rel_tol"] = c.descent_rel_tol;
  j["tree_knn_k"] = c.tree_knn_k;
  j["complete_graph_max"] = c.complete_graph_max;
  j["resample_step"] = c.resample_step;
  j["match_c"] = c.match_c;
  j["bifurcation_c"] = c.bifurcation_c;
  j["num_volumes"] = c.num_volumes;
  j["noise_sigmas"] = c.noise_sigmas;
  j["methods"] = c.methods;
  j["threshold_fractions"] = c.threshold_fractions;
  j["out_dir"] = c.out_dir;
  return j;
}

inline RunConfig config_from_json(const nlohmann::ordered_json& j) {
  RunConfig c;
  if (j.contains("schema_version")) {
    int v = j.at("schema_version").get<int>();
    if (v != 1) throw std::runtime_error("unsupported config schema_version " + std::to_string(v));
  }
  detail::get_if(j, "volume_nx", c.volume_nx);
  detail::get_if(j, "volume_ny", c.volume_ny);
  detail::get_if(j, "volume_nz", c.volume_nz);
  detail::get_if(j, "spacing", c.spacing);
  detail::get_if(j, "depth", c.depth);
  detail::get_if(j, "branch_len_min", c.branch_len_min);
  detail::get_if(j, "branch_len_max", c.branch_len_max);
  detail::get_if(j, "angle_min_deg", c.angle_min_deg);
  detail::get_if(j, "angle_max_deg", c.angle_max_deg);
  detail::get_if(j, "radius_decay", c.radius_decay);
  detail::get_if(j, "root_radius", c.root_radius);
  detail::get_if(j, "intensity_peak", c.intensity_peak);
  detail::get_if(j, "margin", c.margin);
  detail::get_if(j, "seed", c.seed);
  detail::get_if(j, "frangi_alpha", c.frangi_alpha);
  detail::get_if(j, "frangi_beta", c.frangi_beta);
  detail::get_if(j, "frangi_gamma", c.frangi_gamma);
  detail::get_if(j, "sigma_min", c.sigma_min);
  detail::get_if(j, "sigma_max", c.sigma_max);
  detail::get_if(j, "n_scales", c.n_scales);
  detail::get_if(j, "nms_threshold", c.nms_threshold);
  detail::get_if(j, "top_fraction", c.top_fraction);
  detail::get_if(j, "neighborhood_mode", c.neighborhood_mode);
  detail::get_if(j, "neighborhood_k", c.neighborhood_k);
  detail::get_if(j, "facet_area", c.facet_area);
  detail::get_if(j, "gamma", c.gamma);
  detail::get_if(j, "lambda", c.lambda);
  detail::get_if(j, "tau", c.tau);
  detail::get_if(j, "hinge_sharpness", c.hinge_sharpness);
  detail::get_if(j, "divergence_sense", c.divergence_sense);
  detail::get_if(j, "outer_iters", c.outer_iters);
  detail::get_if(j, "sign_iters", c.sign_iters);
  detail::get_if(j, "lm_iters", c.lm_iters);
  detail::get_if(j, "descent_rel_tol", c.descent_rel_tol);
  detail::get_if(j, "tree_knn_k", c.tree_knn_k);
  detail::get_if(j, "complete_graph_max", c.complete_graph_max);
  detail::get_if(j, "resample_step", c.resample_step);
  detail::get_if(j, "match_c", c.match_c);
  detail::get_if(j, "bifurcation_c", c.bifurcation_c);
  detail::get_if(j, "num_volumes", c.num_volumes);
  detail::get_if(j, "noise_sigmas", c.noise_sigmas);
  detail::get_if(j, "methods", c.methods);
  detail::get_if(j, "threshold_fractions", c.threshold_fractions);
  detail::get_if(j, "out_dir", c.out_dir);
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config file " + path);
  nlohmann::ordered_json j;
  try {
    f >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("config parse error in " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Seed derivation for sub-streams; documented in the run manifest.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t purpose,
                                 std::uint64_t index) {
  return hash_u64(master, purpose, index);
}

}  // namespace vtree
