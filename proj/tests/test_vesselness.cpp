#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vesseltree/vesselness.hpp"
#include "vesseltree/volume.hpp"

using namespace vtree;

namespace {

Sym3 rotate_sym(const Sym3& m, const Vec3& axis, double angle) {
  // R = I + sin K + (1 - cos) K^2, then R m R^T
  Vec3 a = normalized(axis);
  double c = std::cos(angle), s = std::sin(angle);
  double K[3][3] = {{0, -a.z, a.y}, {a.z, 0, -a.x}, {-a.y, a.x, 0}};
  double R[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double k2 = 0;
      for (int t = 0; t < 3; ++t) k2 += K[i][t] * K[t][j];
      R[i][j] = (i == j ? 1.0 : 0.0) + s * K[i][j] + (1 - c) * k2;
    }
  double M[3][3] = {{m.xx, m.xy, m.xz}, {m.xy, m.yy, m.yz}, {m.xz, m.yz, m.zz}};
  double T[3][3] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int t = 0; t < 3; ++t) T[i][j] += R[i][t] * M[t][j];
  double O[3][3] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int t = 0; t < 3; ++t) O[i][j] += T[i][t] * R[j][t];
  return Sym3{O[0][0], O[0][1], O[0][2], O[1][1], O[1][2], O[2][2]};
}

Vec3 rotate_vec(const Vec3& v, const Vec3& axis, double angle) {
  Vec3 a = normalized(axis);
  double c = std::cos(angle), s = std::sin(angle);
  return v * c + cross(a, v) * s + a * dot(a, v) * (1 - c);
}

VoxelVolume tube_volume(int n, double radius_vox, double peak = 512.0) {
  // straight tube along z through the grid center, spacing 1 (voxel units)
  CenterlineTree t;
  double c = (n - 1) / 2.0;
  t.nodes.push_back({{c, c, 1.0}, radius_vox, -1});
  t.nodes.push_back({{c, c, (double)n - 2.0}, radius_vox, 0});
  t.root = 0;
  return rasterize(t, n, n, n, 1.0, peak);
}

}  // namespace

TEST_CASE("hessian of constant volume is zero") {
  VoxelVolume v = VoxelVolume::zeros(12, 12, 12, 1.0);
  for (auto& f : v.data) f = 7.5f;
  HessianField h = hessian_at_scale(v, 1.5);
  for (int c = 0; c < 6; ++c)
    for (float x : h.comp[c]) CHECK(std::fabs(x) < 1e-4);
}

TEST_CASE("hessian of x^2 is diag(2,0,0)") {
  int n = 20;
  VoxelVolume v = VoxelVolume::zeros(n, n, n, 1.0);
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) v.at(i, j, k) = (float)(i * i);
  double sigma = 1.2;
  HessianField h = hessian_at_scale(v, sigma);
  double norm = sigma * sigma;  // spacing 1: normalization factor is sigma^2
  int r = 6;                    // kernel radius at sigma 1.2 is 5
  for (int k = r; k < n - r; ++k)
    for (int j = r; j < n - r; ++j)
      for (int i = r; i < n - r; ++i) {
        std::size_t li = v.index(i, j, k);
        CHECK(h.comp[0][li] / norm == Catch::Approx(2.0).epsilon(1e-3));
        for (int c = 1; c < 6; ++c) CHECK(std::fabs(h.comp[c][li] / norm) < 2e-3);
      }
}

TEST_CASE("hessian of gaussian blob at center is isotropic negative") {
  int n = 25;
  double s0 = 2.5;
  VoxelVolume v = VoxelVolume::zeros(n, n, n, 1.0);
  double c = (n - 1) / 2.0;
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        double r2 = (i - c) * (i - c) + (j - c) * (j - c) + (k - c) * (k - c);
        v.at(i, j, k) = (float)(100.0 * std::exp(-r2 / (2 * s0 * s0)));
      }
  HessianField h = hessian_at_scale(v, 1.5);
  std::size_t li = v.index((int)c, (int)c, (int)c);
  double xx = h.comp[0][li], yy = h.comp[3][li], zz = h.comp[5][li];
  CHECK(xx < 0.0);
  CHECK(yy == Catch::Approx(xx).epsilon(1e-6));
  CHECK(zz == Catch::Approx(xx).epsilon(1e-6));
  for (int comp : {1, 2, 4}) CHECK(std::fabs(h.comp[comp][li]) < 1e-6 * std::fabs(xx));
  CHECK(hessian_at_scale(v, 1.5).at(li).xx == Catch::Approx(xx));
}

TEST_CASE("hessian rejects unresolvable sigma") {
  VoxelVolume v = VoxelVolume::zeros(8, 8, 8, 0.046);
  CHECK_THROWS(hessian_at_scale(v, 0.01));
}

TEST_CASE("frangi response frozen values") {
  FrangiParams p;  // alpha=beta=0.5, gamma_f=30
  SECTION("zero hessian") {
    CHECK(frangi_response(Sym3{}, p).vesselness == 0.0);
  }
  SECTION("ideal tube diag(0,-2,-2)") {
    FrangiResponse r = frangi_response(Sym3{0, 0, 0, -2, 0, -2}, p);
    CHECK(r.vesselness == Catch::Approx(0.003834427035945437).epsilon(1e-12));
    CHECK(std::fabs(r.tangent.x) == Catch::Approx(1.0));
  }
  SECTION("blob diag(-2,-2,-2) suppressed by exp(-1/(2 beta^2))") {
    FrangiResponse r = frangi_response(Sym3{-2, 0, 0, -2, 0, -2}, p);
    CHECK(r.vesselness == Catch::Approx(0.0007775362949075736).epsilon(1e-12));
    FrangiResponse tube = frangi_response(Sym3{0, 0, 0, -2, 0, -2}, p);
    CHECK(r.vesselness < tube.vesselness);
  }
  SECTION("positive eigenvalues give zero") {
    CHECK(frangi_response(Sym3{0, 0, 0, 2, 0, 2}, p).vesselness == 0.0);
    CHECK(frangi_response(Sym3{0, 0, 0, -2, 0, 2}, p).vesselness == 0.0);
  }
}

TEST_CASE("frangi rotational equivariance") {
  FrangiParams p;
  Rng rng(31);
  Sym3 base{0.1, 0, 0, -3, 0, -2.5};
  FrangiResponse r0 = frangi_response(base, p);
  for (int t = 0; t < 50; ++t) {
    Vec3 axis{rng.normal(), rng.normal(), rng.normal()};
    double ang = rng.uniform(0, 6.28);
    Sym3 rot = rotate_sym(base, axis, ang);
    FrangiResponse r = frangi_response(rot, p);
    CHECK(r.vesselness == Catch::Approx(r0.vesselness).margin(1e-6));
    Vec3 expected = rotate_vec(r0.tangent, axis, ang);
    CHECK(std::fabs(dot(expected, r.tangent)) == Catch::Approx(1.0).margin(1e-6));
  }
}

TEST_CASE("frangi monotone under brightening") {
  FrangiParams p;
  Rng rng(77);
  for (int t = 0; t < 100; ++t) {
    double l2 = -rng.uniform(0.5, 20), l3 = -rng.uniform(0.5, 20);
    double l1 = rng.uniform(-0.4, 0.4) * std::min(-l2, -l3);
    Sym3 h{l1, 0, 0, l2, 0, l3};
    double c = rng.uniform(1.0, 4.0);
    double v1 = frangi_response(h, p).vesselness;
    double v2 = frangi_response(h * c, p).vesselness;
    CHECK(v2 >= v1 - 1e-12);
  }
}

TEST_CASE("multiscale frangi on constant volume is all zero") {
  VoxelVolume v = VoxelVolume::zeros(16, 16, 16, 1.0);
  for (auto& f : v.data) f = 100.0f;
  FrangiParams p;
  p.sigma_min = 0.8;
  p.sigma_max = 3.0;
  p.n_scales = 3;
  VesselnessField f = multiscale_frangi(v, p);
  for (float x : f.vesselness) CHECK(x == 0.0f);
}

TEST_CASE("multiscale frangi recovers tube scale and axis dominance") {
  int n = 33;
  double r = 2.0;
  VoxelVolume v = tube_volume(n, r);
  FrangiParams p;
  p.sigma_min = 0.8;
  p.sigma_max = 4.5;
  p.n_scales = 7;
  VesselnessField f = multiscale_frangi(v, p);
  double c = (n - 1) / 2.0;
  int ci = (int)c;
  int good = 0, total = 0;
  for (int k = 4; k < n - 4; ++k) {
    std::size_t on = f.index(ci, ci, k);
    ++total;
    double s = f.scale[on];
    if (s >= r / 1.5 && s <= r * 1.5) ++good;
    // on-axis response exceeds response at 2r off axis
    std::size_t off = f.index(ci + (int)std::lround(2 * r), ci, k);
    CHECK(f.vesselness[on] > f.vesselness[off]);
    // tangent aligned with z
    CHECK(std::fabs(f.tangent[on].z) > 0.99);
  }
  CHECK((double)good / total >= 0.9);
}

TEST_CASE("nms keeps isolated super-threshold voxel and drops empty fields") {
  VesselnessField f;
  f.nx = f.ny = f.nz = 9;
  f.spacing = 1.0;
  f.vesselness.assign(9 * 9 * 9, 0.0f);
  f.tangent.assign(9 * 9 * 9, Vec3{0, 0, 1});
  f.scale.assign(9 * 9 * 9, 1.0f);

  SECTION("all below threshold") {
    CHECK(threshold_and_nms(f, 0.5).empty());
  }
  SECTION("single isolated voxel retained") {
    f.vesselness[f.index(4, 4, 4)] = 0.9f;
    auto pts = threshold_and_nms(f, 0.5);
    REQUIRE(pts.size() == 1);
    CHECK(pts[0].position == Vec3{4, 4, 4});
    CHECK(pts[0].vesselness == Catch::Approx(0.9));
  }
  SECTION("threshold must be positive") {
    CHECK_THROWS(threshold_and_nms(f, 0.0));
  }
}

TEST_CASE("nms on ideal tube stays near axis with full slice coverage") {
  int n = 33;
  double r = 2.0;
  VoxelVolume v = tube_volume(n, r);
  FrangiParams p;
  p.sigma_min = 0.8;
  p.sigma_max = 4.5;
  p.n_scales = 7;
  VesselnessField f = multiscale_frangi(v, p);
  double thr = vesselness_quantile(f, 0.02);
  auto pts = threshold_and_nms(f, thr);
  REQUIRE(!pts.empty());
  double c = (n - 1) / 2.0;
  std::vector<int> per_slice(n, 0);
  for (const auto& pt : pts) {
    double dax = std::hypot(pt.position.x - c, pt.position.y - c);
    CHECK(dax <= 1.0 + 1e-9);
    per_slice[(int)std::lround(pt.position.z)]++;
  }
  for (int k = 4; k < n - 4; ++k) CHECK(per_slice[k] >= 1);
  // deterministic ordering by voxel linear index
  for (std::size_t i = 1; i < pts.size(); ++i) {
    std::size_t a = f.index((int)pts[i - 1].position.x, (int)pts[i - 1].position.y,
                            (int)pts[i - 1].position.z);
    std::size_t b =
        f.index((int)pts[i].position.x, (int)pts[i].position.y, (int)pts[i].position.z);
    CHECK(a < b);
  }
}
