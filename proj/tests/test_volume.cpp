#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "vesseltree/volume.hpp"

using namespace vtree;

TEST_CASE("synthesize depth=1 gives one bifurcation with two children") {
  SynthesisParams p;
  p.depth = 1;
  p.seed = 3;
  CenterlineTree t = synthesize_tree(p);
  REQUIRE(t.nodes.size() == 4);  // root, trunk end, two leaves
  auto deg = t.degrees();
  int bifs = 0;
  for (int d : deg) bifs += (d == 3);
  CHECK(bifs == 1);
  auto ch = t.children();
  CHECK(ch[1].size() == 2);
}

TEST_CASE("synthesize depth=0 rejected") {
  SynthesisParams p;
  p.depth = 0;
  CHECK_THROWS(synthesize_tree(p));
}

TEST_CASE("synthesize depth=4 seed=7 has 15 bifurcation nodes") {
  SynthesisParams p;
  p.depth = 4;
  p.seed = 7;
  p.branch_len_min = 0.35;
  p.branch_len_max = 0.55;
  CenterlineTree t = synthesize_tree(p);
  // oracle: direct degree count over the generated graph
  auto deg = t.degrees();
  int bifs = 0;
  for (int d : deg) bifs += (d == 3);
  CHECK(bifs == 15);
}

TEST_CASE("synthesize is deterministic and respects radius decay") {
  SynthesisParams p;
  p.depth = 3;
  p.seed = 99;
  CenterlineTree a = synthesize_tree(p);
  CenterlineTree b = synthesize_tree(p);
  REQUIRE(a.nodes.size() == b.nodes.size());
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    CHECK(a.nodes[i].pos == b.nodes[i].pos);
    CHECK(a.nodes[i].radius == b.nodes[i].radius);
    CHECK(a.nodes[i].parent == b.nodes[i].parent);
  }
  auto ch = a.children();
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    if (ch[i].size() == 2) {
      for (int c : ch[i])
        CHECK(a.nodes[c].radius == Catch::Approx(a.nodes[i].radius * p.radius_decay));
    }
  }
}

TEST_CASE("synthesize reports out-of-bounds branch") {
  SynthesisParams p;
  p.depth = 2;
  p.branch_len_min = 3.0;
  p.branch_len_max = 3.0;  // guaranteed to leave the 4.6mm extent
  CHECK_THROWS_WITH(synthesize_tree(p), Catch::Matchers::ContainsSubstring("bounds"));
}

TEST_CASE("rasterize on-centerline and far-field intensities") {
  CenterlineTree t;
  t.nodes.push_back({{0.5, 0.5, 0.1}, 0.1, -1});
  t.nodes.push_back({{0.5, 0.5, 0.9}, 0.1, 0});
  t.root = 0;
  VoxelVolume v = rasterize(t, 21, 21, 21, 0.05, 512.0);

  // voxel exactly on the centerline: (10, 10, k) for k*0.05 in [0.1, 0.9]
  CHECK(v.at(10, 10, 10) == Catch::Approx(512.0).margin(1e-4));
  // voxel farther than 4r from every segment: distance >= 0.4mm + tail bound
  // (0,0,10) is at perpendicular distance sqrt(0.5^2+0.5^2)=0.707 > 4r
  CHECK(v.at(0, 0, 10) < 0.0004 * 512.0);
}

TEST_CASE("rasterize straight tube is radially symmetric") {
  CenterlineTree t;
  t.nodes.push_back({{0.5, 0.5, 0.05}, 0.08, -1});
  t.nodes.push_back({{0.5, 0.5, 0.95}, 0.08, 0});
  t.root = 0;
  VoxelVolume v = rasterize(t, 21, 21, 21, 0.05, 512.0);
  // symmetric voxel pairs across the axis at x=y=0.5 (index 10)
  for (int off = 1; off <= 6; ++off) {
    double a = v.at(10 + off, 10, 10);
    double b = v.at(10 - off, 10, 10);
    double c = v.at(10, 10 + off, 10);
    double d = v.at(10, 10 - off, 10);
    REQUIRE(a > 0.0);
    CHECK(std::fabs(a - b) <= 1e-6 * a);
    CHECK(std::fabs(a - c) <= 1e-6 * a);
    CHECK(std::fabs(a - d) <= 1e-6 * a);
  }
}

TEST_CASE("rasterize monotone in radius") {
  CenterlineTree small, big;
  for (auto* t : {&small, &big}) {
    t->nodes.push_back({{0.5, 0.5, 0.2}, 0.05, -1});
    t->nodes.push_back({{0.5, 0.5, 0.8}, 0.05, 0});
    t->root = 0;
  }
  big.nodes[0].radius = big.nodes[1].radius = 0.09;
  VoxelVolume vs = rasterize(small, 15, 15, 15, 0.07, 512.0);
  VoxelVolume vb = rasterize(big, 15, 15, 15, 0.07, 512.0);
  for (std::size_t i = 0; i < vs.size(); ++i) CHECK(vb.data[i] >= vs.data[i] - 1e-9f);
}

TEST_CASE("noise sigma=0 is identity") {
  VoxelVolume v = VoxelVolume::zeros(8, 8, 8, 1.0);
  v.data[17] = 3.5f;
  VoxelVolume out = add_gaussian_noise(v, 0.0, 5);
  CHECK(out.data == v.data);
}

TEST_CASE("noise sample std matches sigma") {
  VoxelVolume v = VoxelVolume::zeros(100, 100, 100, 1.0);
  VoxelVolume out = add_gaussian_noise(v, 10.0, 1234);
  double s = 0, s2 = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    double d = out.data[i] - v.data[i];
    s += d;
    s2 += d * d;
  }
  double n = (double)v.size();
  double mean = s / n;
  double stdv = std::sqrt(s2 / n - mean * mean);
  CHECK(stdv >= 9.95);
  CHECK(stdv <= 10.05);
  // sample mean within 3*sigma/sqrt(n)
  CHECK(std::fabs(mean) <= 3.0 * 10.0 / std::sqrt(n));
}

TEST_CASE("noise tail fraction matches Phi(-1)") {
  VoxelVolume v = VoxelVolume::zeros(100, 100, 100, 1.0);
  VoxelVolume out = add_gaussian_noise(v, 15.0, 777);
  std::size_t count = 0;
  for (float f : out.data) count += (f > 15.0f);
  double frac = (double)count / (double)v.size();
  CHECK(frac == Catch::Approx(0.158655).margin(0.01));
}

TEST_CASE("noise deterministic per seed") {
  VoxelVolume v = VoxelVolume::zeros(16, 16, 16, 1.0);
  VoxelVolume a = add_gaussian_noise(v, 5.0, 42);
  VoxelVolume b = add_gaussian_noise(v, 5.0, 42);
  VoxelVolume c = add_gaussian_noise(v, 5.0, 43);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
}

TEST_CASE("tree validate rejects malformed structures") {
  CenterlineTree t;
  t.nodes.push_back({{0, 0, 0}, 1.0, -1});
  t.nodes.push_back({{1, 0, 0}, 1.0, -1});  // second root
  t.root = 0;
  CHECK_THROWS_WITH(t.validate(), Catch::Matchers::ContainsSubstring("root"));

  CenterlineTree c;
  c.nodes.push_back({{0, 0, 0}, 1.0, 1});
  c.nodes.push_back({{1, 0, 0}, 1.0, 0});  // cycle, no root
  c.root = 0;
  CHECK_THROWS(c.validate());

  CenterlineTree r;
  r.nodes.push_back({{0, 0, 0}, 0.0, -1});  // zero radius
  r.root = 0;
  CHECK_THROWS_WITH(r.validate(), Catch::Matchers::ContainsSubstring("radius"));
}
