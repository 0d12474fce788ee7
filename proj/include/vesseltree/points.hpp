#pragma once

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "vesseltree/util.hpp"
#include "vesseltree/vec3.hpp"

namespace vtree {

/// A detected centerline sample. `position` is the raw detected location
/// (fixed); `line_point` is the current point of tangency of the estimated
/// centerline and starts equal to `position`. `tangent` is unit length and
/// orientation-ambiguous; `sign` resolves it: the oriented tangent is
/// sign * tangent.
struct TangentPoint {
  Vec3 position;
  Vec3 tangent{1, 0, 0};
  int sign = 1;  // -1 or +1
  double scale = 0.0;       // mm
  double vesselness = 0.0;  // in [0,1]
  Vec3 line_point;

  Vec3 oriented_tangent() const { return tangent * (double)sign; }

  void validate() const {
    if (std::fabs(norm(tangent) - 1.0) > 1e-9)
      throw std::runtime_error("tangent must be unit length");
    if (sign != -1 && sign != 1) throw std::runtime_error("sign must be -1 or +1");
  }
};

inline TangentPoint make_tangent_point(const Vec3& pos, const Vec3& tangent, double scale = 0.0,
                                       double vesselness = 0.0) {
  TangentPoint p;
  p.position = pos;
  p.tangent = normalized(tangent);
  p.sign = 1;
  p.scale = scale;
  p.vesselness = vesselness;
  p.line_point = pos;
  return p;
}

/// Point set on disk: one per line, `x y z tx ty tz scale vesselness`, mm
/// units. Written tangents carry the current sign; line points are written as
/// the positions, so a round trip of a converged set keeps the refined
/// geometry.
inline void write_points(const std::vector<TangentPoint>& pts, const std::string& path,
                         bool refined = false) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  for (const auto& p : pts) {
    Vec3 pos = refined ? p.line_point : p.position;
    Vec3 t = p.oriented_tangent();
    f << fmt_double(pos.x) << " " << fmt_double(pos.y) << " " << fmt_double(pos.z)
      << " " << fmt_double(t.x) << " " << fmt_double(t.y) << " " << fmt_double(t.z)
      << " " << fmt_double(p.scale) << " " << fmt_double(p.vesselness) << "\n";
  }
}

inline std::vector<TangentPoint> read_points(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open point set " + path);
  std::vector<TangentPoint> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    TangentPoint p;
    if (!(ss >> p.position.x >> p.position.y >> p.position.z >> p.tangent.x >> p.tangent.y >>
          p.tangent.z >> p.scale >> p.vesselness))
      throw std::runtime_error("malformed point set " + path + " at line " +
                               std::to_string(lineno));
    p.tangent = normalized(p.tangent);
    p.sign = 1;
    p.line_point = p.position;
    p.validate();
    pts.push_back(p);
  }
  return pts;
}

}  // namespace vtree
