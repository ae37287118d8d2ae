#pragma once

#include "prodmap/maps.hpp"
#include "prodmap/product.hpp"

#include <limits>
#include <map>
#include <unordered_set>

namespace prodmap {

/// Subset of the product grid with interior/boundary split. A member is
/// boundary when some W_prod-coupled neighbor lies outside the patch.
struct Patch {
  Index nM = 0, nN = 0;
  std::vector<Index> vertices; // sorted flat indices
  std::vector<Index> interior; // sorted
  std::vector<Index> boundary; // sorted
  double area_fraction = 0.0;  // lumped mass over patch / total product area

  Index size() const { return Index(vertices.size()); }
  bool covers_all() const { return size() == nM * nN; }
};

/// Classify a sorted vertex set into interior and boundary and compute the
/// covered area fraction.
inline Patch make_patch(const ProductOperator& prod, std::vector<Index> vertices) {
  std::sort(vertices.begin(), vertices.end());
  vertices.erase(std::unique(vertices.begin(), vertices.end()), vertices.end());
  Patch patch;
  patch.nM = prod.nM();
  patch.nN = prod.nN();
  std::unordered_set<Index> members(vertices.begin(), vertices.end());
  for (Index l : vertices) {
    auto [i, p] = prod.grid_pair(l);
    bool is_boundary = false;
    prod.for_each_neighbor(i, p, [&](Index j, Index q) {
      if (!is_boundary && !members.count(prod.grid_index(j, q))) is_boundary = true;
    });
    (is_boundary ? patch.boundary : patch.interior).push_back(l);
  }
  const ProductFunction lumped = prod.lumped_grid();
  double mass = 0.0;
  for (Index l : vertices) {
    auto [i, p] = prod.grid_pair(l);
    mass += lumped(i, p);
  }
  patch.area_fraction = mass / prod.total_area();
  patch.vertices = std::move(vertices);
  return patch;
}

namespace detail {

/// min over seeds of sqrt(d_M(x, x_s)^2 + d_N(y, y_s)^2) on the whole grid.
inline ProductFunction band_distance(const AnyMesh& meshM, const AnyMesh& meshN,
                                     const std::vector<std::pair<Index, Index>>& seeds) {
  if (seeds.empty()) throw DataError("band patch: empty seed set");
  const EdgeGraph gM = edge_graph(meshM);
  const EdgeGraph gN = edge_graph(meshN);
  const Index nM = gM.n(), nN = gN.n();
  std::map<Index, Eigen::VectorXd> dM, dN;
  for (const auto& [xs, ys] : seeds) {
    if (xs < 0 || xs >= nM || ys < 0 || ys >= nN)
      throw DataError("band patch: seed out of range");
    if (!dM.count(xs)) dM[xs] = geodesic_distances(gM, xs);
    if (!dN.count(ys)) dN[ys] = geodesic_distances(gN, ys);
  }
  ProductFunction rho2 =
      ProductFunction::Constant(nM, nN, std::numeric_limits<double>::infinity());
  for (const auto& [xs, ys] : seeds) {
    const Eigen::VectorXd& a = dM[xs];
    const Eigen::VectorXd& b = dN[ys];
    for (Index i = 0; i < nM; ++i) {
      const double a2 = a[i] * a[i];
      for (Index p = 0; p < nN; ++p) {
        const double r2 = a2 + b[p] * b[p];
        if (r2 < rho2(i, p)) rho2(i, p) = r2;
      }
    }
  }
  return rho2.cwiseSqrt();
}

} // namespace detail

/// Band of product-space radius r around the seed correspondences.
inline Patch band_patch(const ProductOperator& prod, const AnyMesh& meshM,
                        const AnyMesh& meshN,
                        const std::vector<std::pair<Index, Index>>& seeds,
                        double radius) {
  if (radius < 0) throw DataError("band patch: negative radius");
  const ProductFunction rho = detail::band_distance(meshM, meshN, seeds);
  if (rho.rows() != prod.nM() || rho.cols() != prod.nN())
    throw DataError("band patch: mesh/operator size mismatch");
  std::vector<Index> verts;
  for (Index i = 0; i < prod.nM(); ++i)
    for (Index p = 0; p < prod.nN(); ++p)
      if (rho(i, p) <= radius) verts.push_back(prod.grid_index(i, p));
  return make_patch(prod, std::move(verts));
}

/// Band whose covered area fraction best matches the target; the radius is
/// taken from the sorted distance profile (the limit of bisection). Errors
/// when no radius gets within 2% relative of the target.
inline std::pair<Patch, double>
band_patch_fraction(const ProductOperator& prod, const AnyMesh& meshM,
                    const AnyMesh& meshN,
                    const std::vector<std::pair<Index, Index>>& seeds,
                    double fraction, double rel_tol = 0.02) {
  if (fraction <= 0.0 || fraction > 1.0)
    throw DataError("band patch: area fraction must be in (0, 1]");
  const ProductFunction rho = detail::band_distance(meshM, meshN, seeds);
  const ProductFunction lumped = prod.lumped_grid();
  const double total = prod.total_area();
  std::vector<std::pair<double, double>> profile; // (rho, mass)
  profile.reserve(size_t(prod.rows()));
  for (Index i = 0; i < prod.nM(); ++i)
    for (Index p = 0; p < prod.nN(); ++p)
      profile.emplace_back(rho(i, p), lumped(i, p));
  std::stable_sort(profile.begin(), profile.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  double cum = 0.0, best_r = 0.0, best_gap = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < profile.size(); ++i) {
    cum += profile[i].second;
    // a radius cut must include the whole tie group
    if (i + 1 < profile.size() && profile[i + 1].first == profile[i].first) continue;
    const double gap = std::abs(cum / total - fraction);
    if (gap < best_gap) {
      best_gap = gap;
      best_r = profile[i].first;
    }
    if (cum / total >= fraction && gap >= best_gap) break;
  }
  if (best_gap > rel_tol * fraction)
    throw DataError("band patch: target area fraction " + std::to_string(fraction) +
                    " unreachable (closest misses by " + std::to_string(best_gap) +
                    ")");
  return {band_patch(prod, meshM, meshN, seeds, best_r), best_r};
}

inline std::vector<std::pair<Index, Index>> seeds_from_pointmap(const PointMap& pm) {
  std::vector<std::pair<Index, Index>> seeds;
  for (Index i = 0; i < pm.n(); ++i)
    if (pm.targets[size_t(i)] >= 0) seeds.emplace_back(i, pm.targets[size_t(i)]);
  return seeds;
}

inline std::vector<std::pair<Index, Index>> seeds_from_density(const MapDensity& mu) {
  std::vector<std::pair<Index, Index>> seeds;
  for (const auto& [i, p, v] : mu.entries)
    if (v > 0) seeds.emplace_back(i, p);
  return seeds;
}

/// Dirichlet harmonics of the patch: the pencil restricted to interior rows
/// and columns, eigenvectors extended by zero over the boundary and the rest
/// of the grid (stored sparse on the interior).
inline EigenBasis patch_dirichlet_basis(const ProductOperator& prod,
                                        const Patch& patch, Index k,
                                        const EigsOptions& opts = {}) {
  if (patch.covers_all() && patch.boundary.empty()) {
    // closed product grid: no Dirichlet rows to drop, plain global solve
    return eigs_smallest(prod.pencil(), k, opts, Provenance::PatchDirichlet);
  }
  const Index ni = Index(patch.interior.size());
  if (ni <= k)
    throw DataError("patch interior has " + std::to_string(ni) +
                    " vertices; need more than k = " + std::to_string(k));
  auto [W, S] = prod.restricted(patch.interior);
  OperatorPair op{std::move(W), std::move(S), false};
  EigenBasis basis = eigs_smallest(op, k, opts, Provenance::PatchDirichlet);
  basis.support = patch.interior;
  basis.full_dim = prod.rows();
  return basis;
}

enum class PotentialKind { Step, Soft };

inline const char* potential_kind_name(PotentialKind k) {
  return k == PotentialKind::Step ? "step" : "soft";
}

/// Nonnegative potential on the product grid, flat indexing.
struct Potential {
  PotentialKind kind = PotentialKind::Step;
  double nu = 0.0;        // step height; 0 for soft potentials
  Eigen::VectorXd values; // size nM * nN
};

/// V = nu outside the patch, 0 on it.
inline Potential step_potential(const ProductOperator& prod, const Patch& patch,
                                double nu = 100.0) {
  if (nu < 1.0) throw DataError("step potential: nu must be >= 1");
  Potential V;
  V.kind = PotentialKind::Step;
  V.nu = nu;
  V.values = Eigen::VectorXd::Constant(prod.rows(), nu);
  for (Index l : patch.vertices) V.values[l] = 0.0;
  return V;
}

/// V = 1 - mu, requiring mu in [0, 1] pointwise.
inline Potential soft_potential(const ProductOperator& prod, const ProductFunction& mu) {
  if (mu.rows() != prod.nM() || mu.cols() != prod.nN())
    throw DataError("soft potential: grid dimension mismatch");
  if (mu.minCoeff() < 0.0 || mu.maxCoeff() > 1.0)
    throw DataError("soft potential: density values must lie in [0, 1]");
  Potential V;
  V.kind = PotentialKind::Soft;
  V.nu = 0.0;
  Eigen::VectorXd flat(prod.rows());
  for (Index i = 0; i < mu.rows(); ++i)
    for (Index p = 0; p < mu.cols(); ++p)
      flat[i * mu.cols() + p] = 1.0 - mu(i, p);
  V.values = std::move(flat);
  return V;
}

/// Pencil of H = W + S_V with S_V = diag(V .* lumped product masses).
inline PencilOperator hamiltonian_pencil(const ProductOperator& prod,
                                         const Potential& V) {
  if (V.values.size() != prod.rows())
    throw DataError("hamiltonian: potential dimension mismatch");
  auto sv = std::make_shared<Eigen::VectorXd>(
      V.values.cwiseProduct(prod.flat_from_grid(prod.lumped_grid())));
  PencilOperator base = prod.pencil();
  PencilOperator p;
  p.dim = base.dim;
  p.trace_S = base.trace_S;
  p.apply_S = base.apply_S;
  auto baseW = base.apply_W;
  p.apply_W = [baseW, sv](const Eigen::MatrixXd& X) {
    Eigen::MatrixXd Y = baseW(X);
    Y += sv->asDiagonal() * X;
    return Y;
  };
  if (prod.materialized()) {
    const SpMat* Wp = &prod.W_prod();
    const SpMat* Sp = &prod.S_prod();
    p.make_shifted_solver = [Wp, Sp, sv](double sigma) {
      SpMat A = *Wp - sigma * *Sp;
      for (Index i = 0; i < A.rows(); ++i) A.coeffRef(i, i) += (*sv)[i];
      A.makeCompressed();
      auto fact = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
      fact->compute(A);
      if (fact->info() != Eigen::Success)
        throw SolverError("shifted hamiltonian factorization failed");
      return [fact](const Eigen::MatrixXd& B) -> Eigen::MatrixXd {
        return fact->solve(B);
      };
    };
  } else {
    p.jacobi_diag = prod.diag_W() + *sv + 1e-8 * prod.diag_S();
  }
  return p;
}

inline EigenBasis hamiltonian_basis(const ProductOperator& prod, const Potential& V,
                                    Index k, const EigsOptions& opts = {}) {
  return eigs_smallest(hamiltonian_pencil(prod, V), k, opts, Provenance::Hamiltonian);
}

enum class Side { M, N };

/// Energy marginal m(x) = sum_y F(x,y)^2 s_other(y). For a separable
/// ksi = phi psi^T with psi S-normalized this is phi^2 exactly.
inline Eigen::VectorXd energy_marginal(const ProductFunction& F, Side side,
                                       const Eigen::VectorXd& lumped_other) {
  if (side == Side::M) {
    if (lumped_other.size() != F.cols())
      throw DataError("energy marginal: mass vector length mismatch");
    return F.array().square().matrix() * lumped_other;
  }
  if (lumped_other.size() != F.rows())
    throw DataError("energy marginal: mass vector length mismatch");
  return F.array().square().matrix().transpose() * lumped_other;
}

/// Fraction of ||F||^2 carried by grid vertices outside the patch, under the
/// lumped product quadrature.
inline double outside_energy_fraction(const ProductOperator& prod,
                                      const ProductFunction& F, const Patch& patch) {
  const ProductFunction lumped = prod.lumped_grid();
  ProductFunction E = F.cwiseProduct(F).cwiseProduct(lumped);
  double total = E.sum();
  if (total <= 0) return 0.0;
  double inside = 0.0;
  for (Index l : patch.vertices) {
    auto [i, p] = prod.grid_pair(l);
    inside += E(i, p);
  }
  return (total - inside) / total;
}

} // namespace prodmap
