#pragma once

#include "prodmap/product.hpp"

namespace prodmap {

/// Vertex-to-vertex map M -> N; -1 marks an unmatched source vertex.
struct PointMap {
  std::vector<Index> targets;

  Index n() const { return Index(targets.size()); }
  bool is_total() const {
    return std::all_of(targets.begin(), targets.end(),
                       [](Index t) { return t >= 0; });
  }
  Index mapped_count() const {
    return Index(std::count_if(targets.begin(), targets.end(),
                               [](Index t) { return t >= 0; }));
  }
  void validate(Index nN) const {
    for (Index t : targets)
      if (t != kUnmatched && (t < 0 || t >= nN))
        throw DataError("point map target " + std::to_string(t) +
                        " out of range [0, " + std::to_string(nN) + ")");
  }
};

inline bool is_bijection(const PointMap& pm, Index nN) {
  if (pm.n() != nN || !pm.is_total()) return false;
  std::vector<char> seen(nN, 0);
  for (Index t : pm.targets) {
    if (seen[t]) return false;
    seen[t] = 1;
  }
  return true;
}

/// Sparse nonnegative density on the n_M x n_N grid, per unit target area.
struct MapDensity {
  Index nM = 0, nN = 0;
  std::vector<std::tuple<Index, Index, double>> entries;
  bool stochastic = false;

  void validate() const {
    for (const auto& [i, p, v] : entries) {
      if (i < 0 || i >= nM || p < 0 || p >= nN)
        throw DataError("density entry out of range");
      if (v < 0.0) throw DataError("density entries must be nonnegative");
    }
  }

  ProductFunction grid() const {
    ProductFunction F = ProductFunction::Zero(nM, nN);
    for (const auto& [i, p, v] : entries) F(i, p) += v;
    return F;
  }

  SpMat sparse() const {
    std::vector<Triplet> t;
    t.reserve(entries.size());
    for (const auto& [i, p, v] : entries) t.emplace_back(int(i), int(p), v);
    SpMat S(nM, nN);
    S.setFromTriplets(t.begin(), t.end());
    S.makeCompressed();
    return S;
  }

  /// Check the mass-weighted row marginal against 1 for every nonempty row.
  bool check_stochastic(const Eigen::VectorXd& massN, double tol = 1e-9) const {
    Eigen::VectorXd row_sum = Eigen::VectorXd::Zero(nM);
    std::vector<char> nonempty(size_t(nM), 0);
    for (const auto& [i, p, v] : entries) {
      row_sum[i] += v * massN[p];
      nonempty[size_t(i)] = 1;
    }
    for (Index i = 0; i < nM; ++i)
      if (nonempty[size_t(i)] && std::abs(row_sum[i] - 1.0) > tol) return false;
    return true;
  }
};

inline MapDensity density_from_grid(const ProductFunction& F, double drop_tol = 0.0) {
  MapDensity mu;
  mu.nM = F.rows();
  mu.nN = F.cols();
  for (Index i = 0; i < F.rows(); ++i)
    for (Index p = 0; p < F.cols(); ++p)
      if (std::abs(F(i, p)) > drop_tol) mu.entries.emplace_back(i, p, F(i, p));
  return mu;
}

/// Dense functional-map coefficients in truncated factor bases.
enum class Truncation { RectangularSection, ProductOrdered };

inline const char* truncation_name(Truncation t) {
  return t == Truncation::RectangularSection ? "rectangular-section"
                                             : "product-ordered";
}

struct FunctionalMapMatrix {
  Eigen::MatrixXd C;
  Truncation truncation = Truncation::RectangularSection;
  std::string basisM_ref, basisN_ref;
};

/// Dirac density of a point map: one entry 1/s_N(target) per mapped vertex,
/// which makes the mass-weighted row marginal exactly 1.
inline MapDensity density_from_pointmap(const PointMap& pm,
                                        const Eigen::VectorXd& massN) {
  pm.validate(massN.size());
  MapDensity mu;
  mu.nM = pm.n();
  mu.nN = massN.size();
  mu.stochastic = true;
  for (Index i = 0; i < pm.n(); ++i) {
    const Index t = pm.targets[i];
    if (t == kUnmatched) continue;
    mu.entries.emplace_back(i, t, 1.0 / massN[t]);
  }
  return mu;
}

/// T_mu(g)(x) = sum_y mu(x,y) g(y) s_N(y), the expectation of g under the
/// row densities.
inline Eigen::VectorXd soft_functional_apply(const MapDensity& mu,
                                             const Eigen::VectorXd& g,
                                             const Eigen::VectorXd& massN) {
  if (g.size() != mu.nN || massN.size() != mu.nN)
    throw DataError("soft functional apply: dimension mismatch");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(mu.nM);
  for (const auto& [i, p, v] : mu.entries) out[i] += v * g[p] * massN[p];
  return out;
}

/// C = Phi^T S_M M_mu S_N Psi. Entry c_ij is the i-th source coefficient of
/// the pulled-back j-th target eigenfunction.
inline FunctionalMapMatrix fmap_from_density(const MapDensity& mu,
                                             const EigenBasis& basisM,
                                             const OperatorPair& opM,
                                             const EigenBasis& basisN,
                                             const OperatorPair& opN) {
  if (basisM.full_dim != mu.nM || basisN.full_dim != mu.nN)
    throw DataError("fmap_from_density: basis/grid dimension mismatch");
  if (!basisM.support.empty() || !basisN.support.empty())
    throw DataError("fmap_from_density expects dense factor bases");
  const SpMat Mu = mu.sparse();
  FunctionalMapMatrix fm;
  fm.C = basisM.vectors.transpose() * (opM.S * (Mu * (opN.S * basisN.vectors)));
  fm.truncation = Truncation::RectangularSection;
  return fm;
}

/// Band-limited synthesis of a density from product-basis coefficients.
/// The result is generally signed; no clamping here.
inline ProductFunction density_from_coeffs(const Eigen::VectorXd& coeffs,
                                           const EigenBasis& basis, Index nM,
                                           Index nN) {
  if (basis.provenance == Provenance::GlobalFactor)
    throw DataError("density_from_coeffs requires a product-grid basis");
  if (basis.full_dim != nM * nN)
    throw DataError("density_from_coeffs: grid dimension mismatch");
  Eigen::VectorXd flat = synthesize(basis, coeffs);
  return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                        Eigen::RowMajor>>(flat.data(), nM, nN);
}

inline ProductFunction density_from_coeffs(const Eigen::VectorXd& coeffs,
                                           const SeparableBasis& basis) {
  if (coeffs.size() != basis.k())
    throw DataError("density_from_coeffs: coefficient count mismatch");
  const Index nM = basis.basisM.full_dim, nN = basis.basisN.full_dim;
  ProductFunction F = ProductFunction::Zero(nM, nN);
  for (Index l = 0; l < basis.k(); ++l)
    F.noalias() += coeffs[l] * basis.basisM.vectors.col(basis.pairs[l].i) *
                   basis.basisN.vectors.col(basis.pairs[l].j).transpose();
  return F;
}

/// Per-row argmax extraction; ties go to the smallest target index.
inline PointMap row_argmax_map(const ProductFunction& F) {
  PointMap pm;
  pm.targets.resize(size_t(F.rows()));
  for (Index i = 0; i < F.rows(); ++i) {
    Index best = 0;
    for (Index p = 1; p < F.cols(); ++p)
      if (F(i, p) > F(i, best)) best = p;
    pm.targets[size_t(i)] = best;
  }
  return pm;
}

/// Explicit clamp to [0, 1] for consumers that need a probability.
inline ProductFunction clamp_unit(const ProductFunction& F) {
  return F.cwiseMax(0.0).cwiseMin(1.0);
}

/// Index pairs of a truncation scheme. Rectangular uses the full given
/// spectra as the block and requires k = k_M * k_N; product-ordered takes
/// the first k pairs by alpha_i + beta_j with the separable tie rule.
inline std::vector<std::pair<Index, Index>>
truncation_index_sets(const Eigen::VectorXd& spectrumM,
                      const Eigen::VectorXd& spectrumN, Index k,
                      Truncation scheme) {
  const Index kM = spectrumM.size(), kN = spectrumN.size();
  std::vector<std::pair<Index, Index>> out;
  if (scheme == Truncation::RectangularSection) {
    if (k != kM * kN)
      throw DataError("rectangular section needs k = kM*kN = " +
                      std::to_string(kM * kN) + ", got " + std::to_string(k));
    out.reserve(size_t(k));
    for (Index i = 0; i < kM; ++i)
      for (Index j = 0; j < kN; ++j) out.emplace_back(i, j);
    return out;
  }
  auto [pairs, tie] = select_separable_pairs(spectrumM, spectrumN, k);
  (void)tie;
  out.reserve(pairs.size());
  for (const auto& pr : pairs) out.emplace_back(pr.i, pr.j);
  return out;
}

} // namespace prodmap
