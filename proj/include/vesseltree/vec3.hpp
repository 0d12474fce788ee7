#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>

namespace vtree {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator/(double s) const { return {x / s, y / s, z / s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  Vec3& operator+=(const Vec3& o) { x += o.x; y += o.y; z += o.z; return *this; }
  Vec3& operator-=(const Vec3& o) { x -= o.x; y -= o.y; z -= o.z; return *this; }
  Vec3& operator*=(double s) { x *= s; y *= s; z *= s; return *this; }
  bool operator==(const Vec3& o) const { return x == o.x && y == o.y && z == o.z; }
};

inline Vec3 operator*(double s, const Vec3& v) { return v * s; }

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}

inline double norm2(const Vec3& v) { return dot(v, v); }
inline double norm(const Vec3& v) { return std::sqrt(norm2(v)); }

inline Vec3 normalized(const Vec3& v) {
  double n = norm(v);
  return n > 0.0 ? v / n : Vec3{0.0, 0.0, 0.0};
}

/// Squared distance from point a to the infinite line through `point` with unit
/// direction `dir`.
inline double dist2_point_line(const Vec3& a, const Vec3& point, const Vec3& dir) {
  Vec3 w = a - point;
  double t = dot(w, dir);
  return norm2(w) - t * t;
}

inline double dist_point_line(const Vec3& a, const Vec3& point, const Vec3& dir) {
  double d2 = dist2_point_line(a, point, dir);
  return d2 > 0.0 ? std::sqrt(d2) : 0.0;
}

/// Component of w orthogonal to unit vector dir.
inline Vec3 reject(const Vec3& w, const Vec3& dir) { return w - dir * dot(w, dir); }

/// Deterministic orthonormal frame {e1, e2} spanning the plane orthogonal to
/// unit vector l. Picks the coordinate axis least aligned with l as the seed.
inline void orthonormal_frame(const Vec3& l, Vec3& e1, Vec3& e2) {
  double ax = std::fabs(l.x), ay = std::fabs(l.y), az = std::fabs(l.z);
  Vec3 seed = (ax <= ay && ax <= az) ? Vec3{1, 0, 0} : (ay <= az ? Vec3{0, 1, 0} : Vec3{0, 0, 1});
  e1 = normalized(reject(seed, l));
  e2 = cross(l, e1);
}

inline std::ostream& operator<<(std::ostream& os, const Vec3& v) {
  return os << "(" << v.x << ", " << v.y << ", " << v.z << ")";
}

struct Vec3i {
  std::int64_t x = 0, y = 0, z = 0;
  bool operator==(const Vec3i& o) const { return x == o.x && y == o.y && z == o.z; }
};

struct Vec3iHash {
  std::size_t operator()(const Vec3i& v) const {
    std::uint64_t h = 1469598103934665603ull;
    for (std::uint64_t c : {(std::uint64_t)v.x, (std::uint64_t)v.y, (std::uint64_t)v.z}) {
      h ^= c + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
    }
    return (std::size_t)h;
  }
};

}  // namespace vtree
