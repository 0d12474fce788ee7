#pragma once

#include <algorithm>
#include <array>
#include <cmath>

#include "vesseltree/vec3.hpp"

namespace vtree {

/// Symmetric 3x3 matrix, upper triangle storage order:
/// xx, xy, xz, yy, yz, zz.
struct Sym3 {
  double xx = 0, xy = 0, xz = 0, yy = 0, yz = 0, zz = 0;

  Vec3 mul(const Vec3& v) const {
    return {xx * v.x + xy * v.y + xz * v.z,
            xy * v.x + yy * v.y + yz * v.z,
            xz * v.x + yz * v.y + zz * v.z};
  }
  double frobenius2() const {
    return xx * xx + yy * yy + zz * zz + 2.0 * (xy * xy + xz * xz + yz * yz);
  }
  Sym3 operator*(double s) const { return {xx * s, xy * s, xz * s, yy * s, yz * s, zz * s}; }
  Sym3 operator+(const Sym3& o) const {
    return {xx + o.xx, xy + o.xy, xz + o.xz, yy + o.yy, yz + o.yz, zz + o.zz};
  }
};

struct Eig3 {
  std::array<double, 3> values{};  // ascending by value
  std::array<Vec3, 3> vectors{};   // orthonormal, vectors[i] pairs with values[i]
};

namespace detail {

/// Cyclic Jacobi sweeps; robust for degenerate spectra.
inline Eig3 jacobi_sym3(const Sym3& m) {
  double a[3][3] = {{m.xx, m.xy, m.xz}, {m.xy, m.yy, m.yz}, {m.xz, m.yz, m.zz}};
  double v[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int sweep = 0; sweep < 50; ++sweep) {
    double off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    double diag = a[0][0] * a[0][0] + a[1][1] * a[1][1] + a[2][2] * a[2][2];
    if (off <= 1e-30 * (diag + 1e-300)) break;
    for (int p = 0; p < 2; ++p) {
      for (int q = p + 1; q < 3; ++q) {
        if (a[p][q] == 0.0) continue;
        double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        double t = (theta >= 0 ? 1.0 : -1.0) / (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
        double c = 1.0 / std::sqrt(t * t + 1.0);
        double s = t * c;
        double apq = a[p][q];
        double app = a[p][p], aqq = a[q][q];
        a[p][p] = c * c * app - 2.0 * s * c * apq + s * s * aqq;
        a[q][q] = s * s * app + 2.0 * s * c * apq + c * c * aqq;
        a[p][q] = a[q][p] = 0.0;
        for (int k = 0; k < 3; ++k) {
          if (k == p || k == q) continue;
          double akp = a[k][p], akq = a[k][q];
          a[k][p] = a[p][k] = c * akp - s * akq;
          a[k][q] = a[q][k] = s * akp + c * akq;
        }
        for (int k = 0; k < 3; ++k) {
          double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
    }
  }
  Eig3 out;
  int order[3] = {0, 1, 2};
  double w[3] = {a[0][0], a[1][1], a[2][2]};
  std::sort(order, order + 3, [&](int i, int j) { return w[i] < w[j]; });
  for (int i = 0; i < 3; ++i) {
    out.values[i] = w[order[i]];
    out.vectors[i] = normalized(Vec3{v[0][order[i]], v[1][order[i]], v[2][order[i]]});
  }
  return out;
}

inline Vec3 eigenvector_from_rows(const Sym3& m, double lambda, bool& ok) {
  Vec3 r0{m.xx - lambda, m.xy, m.xz};
  Vec3 r1{m.xy, m.yy - lambda, m.yz};
  Vec3 r2{m.xz, m.yz, m.zz - lambda};
  Vec3 c01 = cross(r0, r1), c02 = cross(r0, r2), c12 = cross(r1, r2);
  double n01 = norm2(c01), n02 = norm2(c02), n12 = norm2(c12);
  Vec3 best = c01;
  double nb = n01;
  if (n02 > nb) { best = c02; nb = n02; }
  if (n12 > nb) { best = c12; nb = n12; }
  ok = nb > 1e-24 * (m.frobenius2() + 1e-300) * (m.frobenius2() + 1e-300);
  return ok ? best / std::sqrt(nb) : Vec3{1, 0, 0};
}

}  // namespace detail

/// Eigen decomposition of a symmetric 3x3 matrix. Analytic (Smith/Cardano)
/// path with a cyclic-Jacobi fallback when the spectrum is nearly degenerate
/// (relative eigenvalue gap below 1e-10) or the analytic vectors fail the
/// residual check.
inline Eig3 eig_sym3(const Sym3& m) {
  double p1 = m.xy * m.xy + m.xz * m.xz + m.yz * m.yz;
  double scale = std::sqrt(m.frobenius2());
  if (scale == 0.0) {
    return Eig3{{0, 0, 0}, {Vec3{1, 0, 0}, Vec3{0, 1, 0}, Vec3{0, 0, 1}}};
  }
  if (p1 <= 1e-30 * scale * scale) {
    // already diagonal
    Eig3 out;
    int order[3] = {0, 1, 2};
    double w[3] = {m.xx, m.yy, m.zz};
    std::sort(order, order + 3, [&](int i, int j) { return w[i] < w[j]; });
    Vec3 axes[3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    for (int i = 0; i < 3; ++i) {
      out.values[i] = w[order[i]];
      out.vectors[i] = axes[order[i]];
    }
    return out;
  }

  double q = (m.xx + m.yy + m.zz) / 3.0;
  double p2 = (m.xx - q) * (m.xx - q) + (m.yy - q) * (m.yy - q) + (m.zz - q) * (m.zz - q) + 2.0 * p1;
  double p = std::sqrt(p2 / 6.0);
  Sym3 b{(m.xx - q) / p, m.xy / p,       m.xz / p,
         (m.yy - q) / p, m.yz / p,       (m.zz - q) / p};
  double detb = b.xx * (b.yy * b.zz - b.yz * b.yz) - b.xy * (b.xy * b.zz - b.yz * b.xz) +
                b.xz * (b.xy * b.yz - b.yy * b.xz);
  double r = std::clamp(detb / 2.0, -1.0, 1.0);
  double phi = std::acos(r) / 3.0;

  Eig3 out;
  out.values[2] = q + 2.0 * p * std::cos(phi);
  out.values[0] = q + 2.0 * p * std::cos(phi + 2.0943951023931954923);  // + 2*pi/3
  out.values[1] = 3.0 * q - out.values[0] - out.values[2];

  double gap01 = std::fabs(out.values[1] - out.values[0]);
  double gap12 = std::fabs(out.values[2] - out.values[1]);
  if (std::min(gap01, gap12) < 1e-10 * scale) return detail::jacobi_sym3(m);

  bool ok0 = false, ok2 = false;
  Vec3 v0 = detail::eigenvector_from_rows(m, out.values[0], ok0);
  Vec3 v2 = detail::eigenvector_from_rows(m, out.values[2], ok2);
  if (!ok0 || !ok2) return detail::jacobi_sym3(m);
  Vec3 v1 = cross(v2, v0);

  // residual check guards against analytic cancellation
  double tol = 1e-8 * scale;
  if (norm(m.mul(v0) - v0 * out.values[0]) > tol || norm(m.mul(v2) - v2 * out.values[2]) > tol ||
      norm(m.mul(v1) - v1 * out.values[1]) > tol) {
    return detail::jacobi_sym3(m);
  }
  out.vectors = {v0, v1, v2};
  return out;
}

}  // namespace vtree
