#pragma once

#include "prodmap/maps.hpp"
#include "prodmap/product.hpp"

#include <map>

namespace prodmap {

/// Intrinsic measure: total length of a curve, total area of a surface.
inline double mesh_measure(const AnyMesh& m) {
  return std::visit(
      [](const auto& mesh) {
        using T = std::decay_t<decltype(mesh)>;
        if constexpr (std::is_same_v<T, CurveMesh>)
          return mesh.length();
        else
          return mesh.total_area();
      },
      m);
}

struct ErrorCurve {
  std::vector<double> thresholds;
  std::vector<double> fractions; // fraction of vertices with error <= t
  Index skipped = 0;             // vertices missing in either map
};

/// Cumulative fraction of correct correspondences: err(x) is the geodesic
/// distance on N between pm(x) and gt(x), normalized by sqrt(measure(N)).
inline ErrorCurve geodesic_error_curve(const PointMap& pm, const PointMap& gt,
                                       const AnyMesh& meshN,
                                       std::vector<double> thresholds) {
  if (pm.n() != gt.n())
    throw DataError("error curve: maps disagree on the source vertex count");
  std::sort(thresholds.begin(), thresholds.end());
  const EdgeGraph gN = edge_graph(meshN);
  const double normalizer = std::sqrt(mesh_measure(meshN));
  std::map<Index, Eigen::VectorXd> dist_cache;
  std::vector<double> errs;
  ErrorCurve curve;
  for (Index i = 0; i < pm.n(); ++i) {
    const Index a = pm.targets[size_t(i)], b = gt.targets[size_t(i)];
    if (a < 0 || b < 0) {
      ++curve.skipped;
      continue;
    }
    if (!dist_cache.count(b)) dist_cache[b] = geodesic_distances(gN, b);
    errs.push_back(dist_cache[b][a] / normalizer);
  }
  curve.thresholds = std::move(thresholds);
  curve.fractions.resize(curve.thresholds.size(), 0.0);
  if (errs.empty()) return curve;
  std::sort(errs.begin(), errs.end());
  for (size_t t = 0; t < curve.thresholds.size(); ++t) {
    const auto it =
        std::upper_bound(errs.begin(), errs.end(), curve.thresholds[t]);
    curve.fractions[t] = double(it - errs.begin()) / double(errs.size());
  }
  return curve;
}

inline std::pair<double, double> geodesic_error_mean_max(const PointMap& pm,
                                                         const PointMap& gt,
                                                         const AnyMesh& meshN) {
  if (pm.n() != gt.n())
    throw DataError("error stats: maps disagree on the source vertex count");
  const EdgeGraph gN = edge_graph(meshN);
  const double normalizer = std::sqrt(mesh_measure(meshN));
  std::map<Index, Eigen::VectorXd> dist_cache;
  double sum = 0, mx = 0;
  Index count = 0;
  for (Index i = 0; i < pm.n(); ++i) {
    const Index a = pm.targets[size_t(i)], b = gt.targets[size_t(i)];
    if (a < 0 || b < 0) continue;
    if (!dist_cache.count(b)) dist_cache[b] = geodesic_distances(gN, b);
    const double e = dist_cache[b][a] / normalizer;
    sum += e;
    mx = std::max(mx, e);
    ++count;
  }
  if (count == 0)
    return {std::numeric_limits<double>::quiet_NaN(),
            std::numeric_limits<double>::quiet_NaN()};
  return {sum / double(count), mx};
}

/// ||mu - P_basis mu||_S / ||mu||_S over the product grid.
inline double reconstruction_error(const ProductFunction& mu, const EigenBasis& basis,
                                   const ProductOperator& prod) {
  const double denom = prod.norm(mu);
  if (denom <= 0) throw DataError("reconstruction error: zero density");
  if (basis.k() == 0) return 1.0;
  Eigen::VectorXd Sf = prod.flat_from_grid(prod.apply_mass(mu));
  Eigen::VectorXd c = expand(basis, Sf);
  ProductFunction residual = mu - prod.grid_from_flat(synthesize(basis, c));
  return prod.norm(residual) / denom;
}

/// Same, with the separable basis kept implicit: coefficients are the pair
/// entries of Phi^T S_M mu S_N Psi.
inline double reconstruction_error(const ProductFunction& mu,
                                   const SeparableBasis& basis,
                                   const ProductOperator& prod) {
  const double denom = prod.norm(mu);
  if (denom <= 0) throw DataError("reconstruction error: zero density");
  if (basis.k() == 0) return 1.0;
  Eigen::MatrixXd A = basis.basisM.vectors.transpose() *
                      (prod.factor_M().S * mu * prod.factor_N().S) *
                      basis.basisN.vectors;
  ProductFunction recon = ProductFunction::Zero(mu.rows(), mu.cols());
  for (Index l = 0; l < basis.k(); ++l)
    recon.noalias() += A(basis.pairs[l].i, basis.pairs[l].j) *
                       basis.basisM.vectors.col(basis.pairs[l].i) *
                       basis.basisN.vectors.col(basis.pairs[l].j).transpose();
  return prod.norm(mu - recon) / denom;
}

} // namespace prodmap
