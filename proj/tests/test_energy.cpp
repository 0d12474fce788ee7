#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vesseltree/energy.hpp"

using namespace vtree;

namespace {

TangentPoint pt(Vec3 pos, Vec3 tangent, int sign = 1) {
  TangentPoint p = make_tangent_point(pos, tangent);
  p.sign = sign;
  return p;
}

NeighborGraph y_junction(int flip_child = -1) {
  // trunk along +z into a symmetric split
  NeighborGraph g;
  g.points = {pt({0, 0, -1}, {0, 0, 1}), pt({0, 0, 0}, {0, 0, 1}),
              pt({0.7, 0, 0.7}, normalized(Vec3{1, 0, 1})),
              pt({-0.7, 0, 0.7}, normalized(Vec3{-1, 0, 1}))};
  if (flip_child >= 0) g.points[flip_child].sign = -1;
  g.curvature_pairs = {{0, 1}, {1, 2}, {1, 3}, {2, 3}};
  g.divergence_pairs = g.curvature_pairs;
  return g;
}

}  // namespace

TEST_CASE("curvature quadratic examples") {
  SECTION("collinear is zero") {
    CHECK(curvature_quadratic(pt({0, 0, 0}, {1, 0, 0}), pt({1, 0, 0}, {1, 0, 0})) == 0.0);
  }
  SECTION("hand-evaluated 0.5 case") {
    auto p = pt({0, 0, 0}, {1, 0, 0});
    auto q = pt({1, 0, 0}, {0, 1, 0});
    CHECK(curvature_quadratic(p, q) == Catch::Approx(0.5));
    CHECK(curvature_absolute(p, q) == Catch::Approx(0.5));
  }
  SECTION("tangent sign invariance") {
    Rng rng(3);
    for (int t = 0; t < 50; ++t) {
      auto p = pt({rng.normal(), rng.normal(), rng.normal()},
                  {rng.normal(), rng.normal(), rng.normal()});
      auto q = pt({rng.normal() + 3, rng.normal(), rng.normal()},
                  {rng.normal(), rng.normal(), rng.normal()});
      double base = curvature_quadratic(p, q);
      auto qf = q;
      qf.tangent = -qf.tangent;
      CHECK(curvature_quadratic(p, qf) == Catch::Approx(base).margin(1e-14));
      CHECK(curvature_quadratic(q, p) == Catch::Approx(base).margin(1e-14));
      CHECK(curvature_quadratic(p, q) >= 0.0);
      CHECK(curvature_absolute(p, q) >= 0.0);
    }
  }
  SECTION("absolute curvature scale invariance") {
    Rng rng(4);
    for (int t = 0; t < 50; ++t) {
      auto p = pt({rng.normal(), rng.normal(), rng.normal()},
                  {rng.normal(), rng.normal(), rng.normal()});
      auto q = pt({rng.normal() + 3, rng.normal(), rng.normal()},
                  {rng.normal(), rng.normal(), rng.normal()});
      double base = curvature_absolute(p, q);
      auto ps = p, qs = q;
      double c = 3.7;
      ps.line_point *= c;
      ps.position *= c;
      qs.line_point *= c;
      qs.position *= c;
      CHECK(curvature_absolute(ps, qs) == Catch::Approx(base).margin(1e-12));
    }
  }
  SECTION("coincident line points rejected") {
    CHECK_THROWS(curvature_quadratic(pt({1, 2, 3}, {1, 0, 0}), pt({1, 2, 3}, {0, 1, 0})));
  }
}

TEST_CASE("oriented curvature gate") {
  EnergyParams params;  // tau = cos 70
  SECTION("aligned tangents pass through") {
    auto p = pt({0, 0, 0}, {1, 0, 0});
    auto q = pt({1, 0, 0}, {0, 1, 0});  // orthogonal tangents but... dot=0 < tau: saturates
    CHECK(curvature_oriented(p, q, params) == 1.0);
    auto q2 = pt({1, 0, 0}, {1, 0, 0});
    CHECK(curvature_oriented(p, q2, params) == 0.0);
  }
  SECTION("anti-parallel saturates to exactly 1") {
    auto p = pt({0, 0, 0}, {1, 0, 0});
    auto q = pt({1, 0, 0}, {1, 0, 0}, -1);
    CHECK(curvature_oriented(p, q, params) == 1.0);
  }
  SECTION("dot exactly tau is inclusive") {
    double tau = params.tau;
    auto p = pt({0, 0, 0}, {1, 0, 0});
    auto q = pt({1, 0, 1}, {tau, std::sqrt(1 - tau * tau), 0});
    EnergyParams boundary = params;
    boundary.tau = dot(p.oriented_tangent(), q.oriented_tangent());  // exact boundary
    CHECK(curvature_oriented(p, q, boundary) == curvature_quadratic(p, q));
    boundary.tau = std::nextafter(boundary.tau, 1.0);  // one ulp above: saturates
    CHECK(curvature_oriented(p, q, boundary) == 1.0);
  }
  SECTION("sign flip of one point can saturate the pair") {
    auto p = pt({0, 0, 0}, {1, 0, 0});
    auto q = pt({1, 0, 0}, {1, 0, 0});
    CHECK(curvature_oriented(p, q, params) == 0.0);
    q.sign = -1;
    CHECK(curvature_oriented(p, q, params) == 1.0);
  }
  SECTION("unoriented mode never saturates") {
    EnergyParams un = params;
    un.oriented = false;
    auto p = pt({0, 0, 0}, {1, 0, 0});
    auto q = pt({1, 0, 0}, {1, 0, 0}, -1);
    CHECK(curvature_oriented(p, q, un) == 0.0);
  }
}

TEST_CASE("data term") {
  SECTION("line through raw point is zero") {
    auto p = pt({1, 2, 3}, {0, 0, 1});
    CHECK(data_term(p) == 0.0);
  }
  SECTION("2mm perpendicular offset gives 4") {
    auto p = pt({0, 0, 0}, {0, 0, 1});
    p.line_point = {2, 0, 0};
    CHECK(data_term(p) == Catch::Approx(4.0));
  }
  SECTION("sliding the line point along the tangent changes nothing") {
    auto p = pt({0.3, -0.2, 1.0}, {0, 1, 0});
    p.line_point = {1, 0, 0};
    double base = data_term(p);
    p.line_point = p.line_point + p.tangent * 5.0;
    CHECK(data_term(p) == Catch::Approx(base).margin(1e-12));
  }
}

TEST_CASE("total energy on straight chain is zero") {
  NeighborGraph g;
  for (int i = 0; i < 6; ++i) g.points.push_back(pt({(double)i, 0, 0}, {1, 0, 0}));
  for (int i = 0; i + 1 < 6; ++i) g.curvature_pairs.push_back({i, i + 1});
  g.divergence_pairs = g.curvature_pairs;
  EnergyParams params;
  params.lambda = 7.0;
  EnergyBreakdown e = total_energy(g, params);
  CHECK(e.data == 0.0);
  CHECK(e.curvature == 0.0);
  CHECK(e.divergence == 0.0);
  CHECK(e.total == 0.0);
}

TEST_CASE("Y junction divergence term") {
  EnergyParams params;
  SECTION("consistent signs: zero penalty under penalize_negative") {
    NeighborGraph g = y_junction();
    // oracle: every pair flux is >= 0 by direct evaluation
    for (auto [i, j] : g.divergence_pairs)
      CHECK(pair_divergence(g.points[i], g.points[j], 1.0) >= -1e-12);
    EnergyBreakdown e = total_energy(g, params);
    CHECK(e.divergence == 0.0);
  }
  SECTION("one branch flipped: positive penalty") {
    NeighborGraph g = y_junction(3);
    bool has_negative = false;
    for (auto [i, j] : g.divergence_pairs)
      has_negative |= pair_divergence(g.points[i], g.points[j], 1.0) < -1e-9;
    CHECK(has_negative);
    EnergyBreakdown e = total_energy(g, params);
    CHECK(e.divergence > 0.0);
  }
}

TEST_CASE("global sign flip swaps divergence senses") {
  Rng rng(17);
  NeighborGraph g;
  for (int i = 0; i < 12; ++i) {
    auto p = pt({rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3)},
                {rng.normal(), rng.normal(), rng.normal()}, rng.uniform() < 0.5 ? -1 : 1);
    p.line_point = p.position + Vec3{rng.normal(), rng.normal(), rng.normal()} * 0.05;
    g.points.push_back(p);
  }
  for (int i = 0; i < 12; ++i)
    for (int j = i + 1; j < 12; ++j)
      if (rng.uniform() < 0.4) g.curvature_pairs.push_back({i, j});
  g.divergence_pairs = g.curvature_pairs;

  EnergyParams neg;
  neg.divergence_sense = DivergenceSense::penalize_negative;
  EnergyParams pos = neg;
  pos.divergence_sense = DivergenceSense::penalize_positive;

  NeighborGraph flipped = g;
  for (auto& p : flipped.points) p.sign = -p.sign;

  EnergyBreakdown a = total_energy(g, neg);
  EnergyBreakdown b = total_energy(flipped, pos);
  CHECK(a.data == Catch::Approx(b.data).margin(1e-12));
  CHECK(a.curvature == Catch::Approx(b.curvature).margin(1e-12));
  CHECK(a.divergence == Catch::Approx(b.divergence).margin(1e-12));
  CHECK(a.total == Catch::Approx(b.total).margin(1e-12));
}

TEST_CASE("lambda=0 reduces the joint energy to the oriented energy") {
  Rng rng(23);
  NeighborGraph g;
  for (int i = 0; i < 10; ++i)
    g.points.push_back(pt({rng.uniform(0, 3), rng.uniform(0, 3), rng.uniform(0, 3)},
                          {rng.normal(), rng.normal(), rng.normal()},
                          rng.uniform() < 0.5 ? -1 : 1));
  for (int i = 0; i + 1 < 10; ++i) g.curvature_pairs.push_back({i, i + 1});
  g.divergence_pairs = g.curvature_pairs;

  EnergyParams params;
  params.lambda = 0.0;
  EnergyBreakdown e = total_energy(g, params);
  // direct Eq.(5) evaluation: data + gamma * sum oriented curvature
  KahanSum data, curv;
  for (const auto& p : g.points) data.add(data_term(p));
  for (auto [i, j] : g.curvature_pairs)
    curv.add(curvature_oriented(g.points[i], g.points[j], params));
  double eq5 = data.value() + params.gamma * curv.value();
  CHECK(std::fabs(e.total - eq5) <= 1e-12);
}

TEST_CASE("hinge smoothing approaches the hinge") {
  EnergyParams params;
  params.hinge_sharpness = 20.0;
  for (double a : {-2.0, -0.5, -0.01, 0.0, 0.01, 0.5, 2.0}) {
    double s = params.hinge_smooth(a);
    CHECK(s >= params.hinge(a));
    CHECK(s - params.hinge(a) <= std::log(2.0) / params.hinge_sharpness + 1e-12);
    // gradient by central differences
    double h = 1e-7;
    double g = (params.hinge_smooth(a + h) - params.hinge_smooth(a - h)) / (2 * h);
    CHECK(params.hinge_smooth_grad(a) == Catch::Approx(g).margin(1e-6));
  }
  EnergyParams pos = params;
  pos.divergence_sense = DivergenceSense::penalize_positive;
  for (double a : {-1.0, 0.3, 1.7}) {
    CHECK(pos.hinge_smooth(a) >= pos.hinge(a));
    double h = 1e-7;
    double g = (pos.hinge_smooth(a + h) - pos.hinge_smooth(a - h)) / (2 * h);
    CHECK(pos.hinge_smooth_grad(a) == Catch::Approx(g).margin(1e-6));
  }
}
