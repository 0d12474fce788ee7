#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "vesseltree/eig33.hpp"
#include "vesseltree/points.hpp"
#include "vesseltree/util.hpp"
#include "vesseltree/vec3.hpp"
#include "vesseltree/volume.hpp"

namespace vtree {

struct FrangiParams {
  double alpha = 0.5;
  double beta = 0.5;
  double gamma_f = 30.0;
  double sigma_min = 0.023;   // mm
  double sigma_max = 0.1152;  // mm
  int n_scales = 5;
  double threshold = 0.0;  // <= 0 means "pick per volume" upstream

  void validate() const {
    if (!(sigma_min > 0.0 && sigma_min <= sigma_max))
      throw std::runtime_error("frangi: need 0 < sigma_min <= sigma_max");
    if (n_scales < 1) throw std::runtime_error("frangi: n_scales must be >= 1");
    if (!(alpha > 0.0 && beta > 0.0 && gamma_f > 0.0))
      throw std::runtime_error("frangi: alpha, beta, gamma_f must be > 0");
  }

  std::vector<double> scale_ladder() const {
    std::vector<double> s(n_scales);
    if (n_scales == 1) {
      s[0] = sigma_min;
      return s;
    }
    double ratio = sigma_max / sigma_min;
    for (int i = 0; i < n_scales; ++i)
      s[i] = sigma_min * std::pow(ratio, (double)i / (n_scales - 1));
    return s;
  }
};

namespace detail {

/// Sampled Gaussian-derivative correlation kernel (voxel units), corrected so
/// polynomial moments are exact: order 0 sums to 1; order 1 has sum 0 and
/// first moment 1; order 2 has sum 0 and second moment 2. This keeps the
/// discrete Hessian exact on quadratics.
inline std::vector<double> gaussian_kernel(double sigma_vox, int order) {
  int radius = std::max(3, (int)std::ceil(4.0 * sigma_vox));
  int size = 2 * radius + 1;
  std::vector<double> k(size);
  double s2 = sigma_vox * sigma_vox;
  for (int i = -radius; i <= radius; ++i) {
    double g = std::exp(-(double)(i * i) / (2.0 * s2));
    if (order == 0) k[i + radius] = g;
    else if (order == 1) k[i + radius] = (double)i / s2 * g;
    else k[i + radius] = ((double)(i * i) - s2) / (s2 * s2) * g;
  }
  if (order == 0) {
    double sum = 0;
    for (double v : k) sum += v;
    for (double& v : k) v /= sum;
  } else if (order == 1) {
    double m1 = 0;
    for (int i = -radius; i <= radius; ++i) m1 += i * k[i + radius];
    for (double& v : k) v /= m1;
  } else {
    double sum = 0;
    for (double v : k) sum += v;
    for (double& v : k) v -= sum / size;
    double m2 = 0;
    for (int i = -radius; i <= radius; ++i) m2 += (double)i * i * k[i + radius];
    for (double& v : k) v *= 2.0 / m2;
  }
  return k;
}

/// 1D correlation along an axis with clamped boundaries.
inline void correlate_axis(const std::vector<float>& in, std::vector<float>& out, int nx, int ny,
                           int nz, int axis, const std::vector<double>& k) {
  int radius = ((int)k.size() - 1) / 2;
  int n[3] = {nx, ny, nz};
  std::size_t stride[3] = {1, (std::size_t)nx, (std::size_t)nx * ny};
  int na = n[axis];
  std::size_t sa = stride[axis];
  int o1 = axis == 0 ? 1 : 0;
  int o2 = axis == 2 ? 1 : 2;
  std::size_t lines = (std::size_t)n[o1] * n[o2];
  parallel_for(lines, [&](std::size_t lb, std::size_t le) {
    for (std::size_t line = lb; line < le; ++line) {
      std::size_t i1 = line % n[o1];
      std::size_t i2 = line / n[o1];
      std::size_t base = i1 * stride[o1] + i2 * stride[o2];
      for (int pos = 0; pos < na; ++pos) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) {
          int idx = std::clamp(pos + t, 0, na - 1);
          acc += k[t + radius] * in[base + (std::size_t)idx * sa];
        }
        out[base + (std::size_t)pos * sa] = (float)acc;
      }
    }
  });
}

}  // namespace detail

/// Per-voxel scale-normalized Hessian of the Gaussian-smoothed volume.
struct HessianField {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 1.0;
  double sigma = 0.0;  // mm
  // component order: xx, xy, xz, yy, yz, zz
  std::array<std::vector<float>, 6> comp;

  Sym3 at(std::size_t i) const {
    return {comp[0][i], comp[1][i], comp[2][i], comp[3][i], comp[4][i], comp[5][i]};
  }
  std::size_t size() const { return (std::size_t)nx * ny * nz; }
};

/// Second derivatives of the sigma-smoothed volume, gamma-normalized by
/// sigma^2 (exponent 2). Separable kernels; 15 1D passes.
inline HessianField hessian_at_scale(const VoxelVolume& vol, double sigma) {
  vol.validate();
  if (sigma < vol.spacing / 2.0)
    throw std::runtime_error("hessian sigma below resolvable limit (spacing/2)");
  double sv = sigma / vol.spacing;  // voxel units
  auto g0 = detail::gaussian_kernel(sv, 0);
  auto g1 = detail::gaussian_kernel(sv, 1);
  auto g2 = detail::gaussian_kernel(sv, 2);

  HessianField h;
  h.nx = vol.nx; h.ny = vol.ny; h.nz = vol.nz;
  h.spacing = vol.spacing;
  h.sigma = sigma;

  std::size_t n = vol.size();
  std::vector<float> z0(n), z1(n), z2(n), t(n);
  detail::correlate_axis(vol.data, z0, vol.nx, vol.ny, vol.nz, 2, g0);
  detail::correlate_axis(vol.data, z1, vol.nx, vol.ny, vol.nz, 2, g1);
  detail::correlate_axis(vol.data, z2, vol.nx, vol.ny, vol.nz, 2, g2);

  for (auto& c : h.comp) c.resize(n);
  // from z0: y-order 0,1,2 -> xx, xy, yy
  detail::correlate_axis(z0, t, vol.nx, vol.ny, vol.nz, 1, g0);
  detail::correlate_axis(t, h.comp[0], vol.nx, vol.ny, vol.nz, 0, g2);  // xx
  detail::correlate_axis(z0, t, vol.nx, vol.ny, vol.nz, 1, g1);
  detail::correlate_axis(t, h.comp[1], vol.nx, vol.ny, vol.nz, 0, g1);  // xy
  detail::correlate_axis(z0, t, vol.nx, vol.ny, vol.nz, 1, g2);
  detail::correlate_axis(t, h.comp[3], vol.nx, vol.ny, vol.nz, 0, g0);  // yy
  // from z1: y-order 0,1 -> xz, yz
  detail::correlate_axis(z1, t, vol.nx, vol.ny, vol.nz, 1, g0);
  detail::correlate_axis(t, h.comp[2], vol.nx, vol.ny, vol.nz, 0, g1);  // xz
  detail::correlate_axis(z1, t, vol.nx, vol.ny, vol.nz, 1, g1);
  detail::correlate_axis(t, h.comp[4], vol.nx, vol.ny, vol.nz, 0, g0);  // yz
  // from z2 -> zz
  detail::correlate_axis(z2, t, vol.nx, vol.ny, vol.nz, 1, g0);
  detail::correlate_axis(t, h.comp[5], vol.nx, vol.ny, vol.nz, 0, g0);  // zz

  // derivatives are per voxel^2; (1/spacing^2) to mm^-2 then gamma-normalize
  // by sigma_mm^2 == multiplying by sigma_vox^2
  float norm = (float)(sv * sv);
  for (auto& c : h.comp)
    parallel_for(n, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) c[i] *= norm;
    });
  return h;
}

struct FrangiResponse {
  double vesselness = 0.0;
  Vec3 tangent{1, 0, 0};
};

/// Frangi tubularness of one Hessian. Bright tubes only: the two
/// large-magnitude eigenvalues must be negative. The returned tangent is the
/// eigenvector of the smallest-|lambda| eigenvalue, canonicalized to a
/// deterministic sign; callers must treat the orientation as ambiguous.
inline FrangiResponse frangi_response(const Sym3& h, const FrangiParams& params) {
  params.validate();
  Eig3 e = eig_sym3(h);
  int idx[3] = {0, 1, 2};
  double a[3] = {std::fabs(e.values[0]), std::fabs(e.values[1]), std::fabs(e.values[2])};
  std::sort(idx, idx + 3, [&](int i, int j) { return a[i] < a[j]; });

  // |lambda1| <= |lambda2| <= |lambda3|
  double l1 = e.values[idx[0]], l2 = e.values[idx[1]], l3 = e.values[idx[2]];
  double a1 = std::fabs(l1), a2 = std::fabs(l2), a3 = std::fabs(l3);

  FrangiResponse out;
  Vec3 tangent = e.vectors[idx[0]];
  // deterministic tie break on |lambda1| == |lambda2|: lexicographically
  // largest absolute components
  if (a2 - a1 <= 1e-12 * (a3 + 1e-300)) {
    Vec3 alt = e.vectors[idx[1]];
    auto key = [](const Vec3& v) {
      return std::array<double, 3>{std::fabs(v.x), std::fabs(v.y), std::fabs(v.z)};
    };
    if (key(alt) > key(tangent)) tangent = alt;
  }
  // canonical sign: largest-|.| component positive
  {
    double ax = std::fabs(tangent.x), ay = std::fabs(tangent.y), az = std::fabs(tangent.z);
    double lead = (ax >= ay && ax >= az) ? tangent.x : (ay >= az ? tangent.y : tangent.z);
    if (lead < 0) tangent = -tangent;
  }
  out.tangent = normalized(tangent);

  if (l2 > 0.0 || l3 > 0.0 || a3 == 0.0) return out;  // vesselness 0
  double ra = a2 / a3;
  double rb = a1 / std::sqrt(a2 * a3);
  double s2 = l1 * l1 + l2 * l2 + l3 * l3;
  out.vesselness = (1.0 - std::exp(-ra * ra / (2.0 * params.alpha * params.alpha))) *
                   std::exp(-rb * rb / (2.0 * params.beta * params.beta)) *
                   (1.0 - std::exp(-s2 / (2.0 * params.gamma_f * params.gamma_f)));
  return out;
}

/// Per-voxel best response over the geometric scale ladder.
struct VesselnessField {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 1.0;
  std::vector<float> vesselness;
  std::vector<Vec3> tangent;
  std::vector<float> scale;  // argmax sigma, mm

  std::size_t size() const { return (std::size_t)nx * ny * nz; }
  std::size_t index(int i, int j, int k) const { return ((std::size_t)k * ny + j) * nx + i; }
};

inline VesselnessField multiscale_frangi(const VoxelVolume& vol, const FrangiParams& params) {
  params.validate();
  vol.validate();
  VesselnessField f;
  f.nx = vol.nx; f.ny = vol.ny; f.nz = vol.nz;
  f.spacing = vol.spacing;
  std::size_t n = vol.size();
  f.vesselness.assign(n, 0.0f);
  f.tangent.assign(n, Vec3{1, 0, 0});
  f.scale.assign(n, (float)params.sigma_min);

  for (double sigma : params.scale_ladder()) {
    HessianField h = hessian_at_scale(vol, sigma);
    parallel_for(n, [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        FrangiResponse r = frangi_response(h.at(i), params);
        if (r.vesselness > f.vesselness[i]) {
          f.vesselness[i] = (float)r.vesselness;
          f.tangent[i] = r.tangent;
          f.scale[i] = (float)sigma;
        }
      }
    });
  }
  return f;
}

/// Vesselness value retaining the given top fraction of voxels (the default
/// per-volume threshold rule).
inline double vesselness_quantile(const VesselnessField& field, double top_fraction) {
  std::vector<float> v = field.vesselness;
  std::size_t k = (std::size_t)((double)v.size() * std::clamp(top_fraction, 0.0, 1.0));
  k = std::clamp<std::size_t>(k, 1, v.size());
  std::nth_element(v.begin(), v.begin() + (k - 1), v.end(), std::greater<float>());
  return std::max((double)v[k - 1], 1e-12);
}

namespace detail {

inline double trilinear(const std::vector<float>& data, int nx, int ny, int nz, const Vec3& p) {
  double x = std::clamp(p.x, 0.0, (double)nx - 1);
  double y = std::clamp(p.y, 0.0, (double)ny - 1);
  double z = std::clamp(p.z, 0.0, (double)nz - 1);
  int x0 = std::min((int)x, nx - 2 >= 0 ? nx - 2 : 0);
  int y0 = std::min((int)y, ny - 2 >= 0 ? ny - 2 : 0);
  int z0 = std::min((int)z, nz - 2 >= 0 ? nz - 2 : 0);
  if (nx == 1) x0 = 0;
  if (ny == 1) y0 = 0;
  if (nz == 1) z0 = 0;
  double fx = x - x0, fy = y - y0, fz = z - z0;
  auto at = [&](int i, int j, int k) {
    i = std::min(i, nx - 1); j = std::min(j, ny - 1); k = std::min(k, nz - 1);
    return (double)data[((std::size_t)k * ny + j) * nx + i];
  };
  double c00 = at(x0, y0, z0) * (1 - fx) + at(x0 + 1, y0, z0) * fx;
  double c10 = at(x0, y0 + 1, z0) * (1 - fx) + at(x0 + 1, y0 + 1, z0) * fx;
  double c01 = at(x0, y0, z0 + 1) * (1 - fx) + at(x0 + 1, y0, z0 + 1) * fx;
  double c11 = at(x0, y0 + 1, z0 + 1) * (1 - fx) + at(x0 + 1, y0 + 1, z0 + 1) * fx;
  double c0 = c00 * (1 - fy) + c10 * fy;
  double c1 = c01 * (1 - fy) + c11 * fy;
  return c0 * (1 - fz) + c1 * fz;
}

}  // namespace detail

/// Keeps voxels at or above threshold that are strict vesselness maxima along
/// the two probe axes orthogonal to their tangent (trilinear samples at +-1
/// voxel). Voxels whose probe stencil leaves the grid are dropped. Output is
/// sorted by voxel linear index; positions are voxel centers in mm.
inline std::vector<TangentPoint> threshold_and_nms(const VesselnessField& field,
                                                   double threshold) {
  if (!(threshold > 0.0)) throw std::runtime_error("nms threshold must be > 0");
  std::vector<TangentPoint> out;
  for (int k = 0; k < field.nz; ++k) {
    for (int j = 0; j < field.ny; ++j) {
      for (int i = 0; i < field.nx; ++i) {
        std::size_t li = field.index(i, j, k);
        double v = field.vesselness[li];
        if (v < threshold) continue;
        Vec3 t = field.tangent[li];
        Vec3 e1, e2;
        orthonormal_frame(t, e1, e2);
        Vec3 c{(double)i, (double)j, (double)k};
        bool keep = true;
        bool in_stencil = true;
        for (const Vec3& dir : {e1, e1 * -1.0, e2, e2 * -1.0}) {
          Vec3 p = c + dir;
          if (p.x < 0 || p.y < 0 || p.z < 0 || p.x > field.nx - 1 || p.y > field.ny - 1 ||
              p.z > field.nz - 1) {
            in_stencil = false;
            break;
          }
          double pv = detail::trilinear(field.vesselness, field.nx, field.ny, field.nz, p);
          if (!(v > pv)) {
            keep = false;
            break;
          }
        }
        if (!in_stencil || !keep) continue;
        TangentPoint pt = make_tangent_point(
            Vec3{i * field.spacing, j * field.spacing, k * field.spacing}, t,
            field.scale[li], v);
        out.push_back(pt);
      }
    }
  }
  return out;
}

}  // namespace vtree
