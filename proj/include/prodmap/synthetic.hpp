#pragma once

#include "prodmap/maps.hpp"
#include "prodmap/mesh.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace prodmap {

/// Regular n-gon of circumradius `radius`, so total length n*2r*sin(pi/n).
inline CurveMesh uniform_circle(Index n, double radius = 1.0) {
  Eigen::MatrixXd V(n, 2);
  for (Index i = 0; i < n; ++i) {
    const double th = 2.0 * std::numbers::pi * double(i) / double(n);
    V(i, 0) = radius * std::cos(th);
    V(i, 1) = radius * std::sin(th);
  }
  return make_curve(std::move(V));
}

/// Closed star-ish curve with uneven vertex spacing: the parameter is warped
/// so edge lengths vary smoothly by roughly +-40%, and the radius carries a
/// few low-order harmonics. Deterministic in (n, seed).
inline CurveMesh irregular_closed_curve(Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
  const double warp_phase = unif(rng);
  const double r2_phase = unif(rng), r5_phase = unif(rng);
  std::uniform_real_distribution<double> amp(0.05, 0.15);
  const double a2 = amp(rng), a5 = 0.5 * amp(rng);
  Eigen::MatrixXd V(n, 2);
  for (Index i = 0; i < n; ++i) {
    const double t = 2.0 * std::numbers::pi * double(i) / double(n);
    const double th = t + 0.13 * std::sin(3.0 * t + warp_phase);
    const double r =
        1.0 + a2 * std::cos(2.0 * th + r2_phase) + a5 * std::cos(5.0 * th + r5_phase);
    V(i, 0) = r * std::cos(th);
    V(i, 1) = r * std::sin(th);
  }
  return make_curve(std::move(V));
}

struct CurvePair {
  CurveMesh M, N;
  PointMap gt; // source vertex i of M corresponds to gt.targets[i] on N
};

/// Near-isometric pair: N is M relabeled by a cyclic shift, rigidly moved,
/// and bent by a small smooth warp (edge lengths change by under ~2%).
/// Ground truth is the relabeling.
inline CurvePair near_isometric_curve_pair(Index n, std::uint64_t seed) {
  CurvePair pair;
  pair.M = irregular_closed_curve(n, seed);
  std::mt19937_64 rng(seed ^ 0x5851f42d4c957f2dull);
  std::uniform_int_distribution<Index> shift_dist(1, n - 1);
  const Index shift = shift_dist(rng);
  std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
  const double rot = unif(rng);
  const double c = std::cos(rot), s = std::sin(rot);

  Eigen::MatrixXd V(n, 2);
  for (Index j = 0; j < n; ++j) {
    const Index src = (j + shift) % n;
    const double x = pair.M.vertices(src, 0), y = pair.M.vertices(src, 1);
    const double rx = c * x - s * y + 3.0;
    const double ry = s * x + c * y - 1.0;
    V(j, 0) = rx + 0.01 * std::sin(2.0 * ry);
    V(j, 1) = ry + 0.01 * std::sin(2.0 * rx);
  }
  pair.N = make_curve(std::move(V));
  // N's vertex j came from M's vertex (j + shift) % n
  pair.gt.targets.resize(size_t(n));
  for (Index i = 0; i < n; ++i) pair.gt.targets[size_t(i)] = (i - shift + n) % n;
  return pair;
}

/// Icosahedron subdivided `subdiv` times and projected to the sphere.
inline TriMesh icosphere(int subdiv, double radius = 1.0) {
  const double phi = (1.0 + std::sqrt(5.0)) / 2.0;
  std::vector<Eigen::Vector3d> verts = {
      {-1, phi, 0}, {1, phi, 0},   {-1, -phi, 0}, {1, -phi, 0},
      {0, -1, phi}, {0, 1, phi},   {0, -1, -phi}, {0, 1, -phi},
      {phi, 0, -1}, {phi, 0, 1},   {-phi, 0, -1}, {-phi, 0, 1}};
  std::vector<std::array<Index, 3>> faces = {
      {0, 11, 5}, {0, 5, 1},  {0, 1, 7},   {0, 7, 10}, {0, 10, 11},
      {1, 5, 9},  {5, 11, 4}, {11, 10, 2}, {10, 7, 6}, {7, 1, 8},
      {3, 9, 4},  {3, 4, 2},  {3, 2, 6},   {3, 6, 8},  {3, 8, 9},
      {4, 9, 5},  {2, 4, 11}, {6, 2, 10},  {8, 6, 7},  {9, 8, 1}};
  for (auto& v : verts) v.normalize();

  for (int lvl = 0; lvl < subdiv; ++lvl) {
    std::map<std::pair<Index, Index>, Index> midpoint;
    auto mid = [&](Index a, Index b) {
      auto key = std::minmax(a, b);
      auto it = midpoint.find(key);
      if (it != midpoint.end()) return it->second;
      Eigen::Vector3d m = (verts[size_t(a)] + verts[size_t(b)]).normalized();
      verts.push_back(m);
      Index id = Index(verts.size()) - 1;
      midpoint[key] = id;
      return id;
    };
    std::vector<std::array<Index, 3>> next;
    next.reserve(faces.size() * 4);
    for (const auto& f : faces) {
      Index ab = mid(f[0], f[1]), bc = mid(f[1], f[2]), ca = mid(f[2], f[0]);
      next.push_back({f[0], ab, ca});
      next.push_back({f[1], bc, ab});
      next.push_back({f[2], ca, bc});
      next.push_back({ab, bc, ca});
    }
    faces = std::move(next);
  }

  Eigen::MatrixXd V(Index(verts.size()), 3);
  for (size_t i = 0; i < verts.size(); ++i) V.row(Index(i)) = radius * verts[i];
  Eigen::MatrixXi F(Index(faces.size()), 3);
  for (size_t f = 0; f < faces.size(); ++f)
    for (int c = 0; c < 3; ++c) F(Index(f), c) = int(faces[f][size_t(c)]);
  return make_trimesh(std::move(V), std::move(F));
}

struct MeshPair {
  TriMesh M, N;
  PointMap gt;
};

/// Sphere pair with a gentle radial bump warp on the second mesh; identical
/// connectivity, identity ground truth.
inline MeshPair near_isometric_mesh_pair(int subdiv, std::uint64_t seed) {
  MeshPair pair;
  pair.M = icosphere(subdiv);
  std::mt19937_64 rng(seed ^ 0xa0761d6478bd642full);
  std::uniform_real_distribution<double> unif(0.0, 2.0 * std::numbers::pi);
  const double ph1 = unif(rng), ph2 = unif(rng);
  Eigen::MatrixXd V = pair.M.vertices;
  for (Index i = 0; i < V.rows(); ++i) {
    Eigen::Vector3d p = V.row(i);
    const double th = std::atan2(p.y(), p.x());
    const double r = 1.0 + 0.06 * std::sin(2.0 * th + ph1) * p.z() +
                     0.04 * std::cos(3.0 * th + ph2);
    V.row(i) = r * p;
  }
  pair.N = make_trimesh(std::move(V), pair.M.faces);
  pair.gt.targets.resize(size_t(pair.M.n()));
  for (Index i = 0; i < pair.M.n(); ++i) pair.gt.targets[size_t(i)] = i;
  return pair;
}

/// Sparse seed map: a deterministic subset of the ground truth, optionally
/// with a fraction of targets replaced by random wrong vertices.
inline PointMap sparse_seeds(const PointMap& gt, double keep_fraction,
                             double mismatch_fraction, std::uint64_t seed,
                             Index nN) {
  std::mt19937_64 rng(seed);
  PointMap pm;
  pm.targets.assign(gt.targets.size(), kUnmatched);
  std::vector<Index> order(gt.targets.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const Index keep = std::max<Index>(1, Index(std::llround(
                                            keep_fraction * double(gt.n()))));
  std::uniform_int_distribution<Index> wrong(0, nN - 1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (Index r = 0; r < keep && r < gt.n(); ++r) {
    const Index i = order[size_t(r)];
    Index t = gt.targets[size_t(i)];
    if (unif(rng) < mismatch_fraction) t = wrong(rng);
    pm.targets[size_t(i)] = t;
  }
  return pm;
}

} // namespace prodmap
