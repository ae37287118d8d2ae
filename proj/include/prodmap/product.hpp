#pragma once

#include "prodmap/eigs.hpp"
#include "prodmap/fem.hpp"

#include <unordered_map>

namespace prodmap {

/// Functions on the product grid are n_M x n_N matrices; rows index M,
/// columns index N. The flat (vector) index of grid entry (i, p) is
/// l = i * n_N + p, so the materialized product matrices are exactly
/// S_M (x) S_N and W_M (x) S_N + S_M (x) W_N in that index.
using ProductFunction = Eigen::MatrixXd;

constexpr Index kDefaultMaterializeCap = 4'000'000;

namespace detail {

/// Merged structural pattern of (W, S) per row: (col, w, s). Includes the
/// diagonal. Used for restricted product assembly and neighbor queries.
struct FactorStencil {
  std::vector<std::vector<std::tuple<Index, double, double>>> rows;

  static FactorStencil build(const OperatorPair& op) {
    FactorStencil st;
    const Index n = op.n();
    st.rows.resize(n);
    std::vector<std::map<Index, std::pair<double, double>>> tmp(n);
    for (Index c = 0; c < n; ++c) {
      for (SpMat::InnerIterator it(op.W, c); it; ++it)
        tmp[it.row()][c].first = it.value();
      for (SpMat::InnerIterator it(op.S, c); it; ++it)
        tmp[it.row()][c].second = it.value();
    }
    for (Index r = 0; r < n; ++r) {
      st.rows[r].reserve(tmp[r].size());
      for (const auto& [c, ws] : tmp[r])
        st.rows[r].emplace_back(c, ws.first, ws.second);
    }
    return st;
  }
};

} // namespace detail

/// Product-manifold operators derived from two factor pairs through the
/// Kronecker identities. The implicit application path is always available;
/// sparse product matrices are materialized only on request and below a cap.
class ProductOperator {
 public:
  ProductOperator(OperatorPair opM, OperatorPair opN)
      : M_(std::move(opM)), N_(std::move(opN)),
        stM_(detail::FactorStencil::build(M_)),
        stN_(detail::FactorStencil::build(N_)) {}

  const OperatorPair& factor_M() const { return M_; }
  const OperatorPair& factor_N() const { return N_; }
  Index nM() const { return M_.n(); }
  Index nN() const { return N_.n(); }
  Index rows() const { return nM() * nN(); }
  Index grid_index(Index i, Index p) const { return i * nN() + p; }
  std::pair<Index, Index> grid_pair(Index l) const { return {l / nN(), l % nN()}; }

  bool materialized() const { return bool(Wp_); }
  const SpMat& W_prod() const { require_materialized(); return *Wp_; }
  const SpMat& S_prod() const { require_materialized(); return *Sp_; }

  void materialize(Index cap = kDefaultMaterializeCap) {
    if (Wp_) return;
    if (rows() > cap)
      throw DataError("refusing to materialize product matrices: " +
                      std::to_string(rows()) + " rows exceeds cap " +
                      std::to_string(cap));
    std::vector<Triplet> wt, st;
    wt.reserve(size_t(M_.W.nonZeros()) * size_t(N_.S.nonZeros()) / size_t(nM()) + 16);
    for (Index i = 0; i < nM(); ++i) {
      for (const auto& [j, wm, sm] : stM_.rows[i]) {
        for (Index p = 0; p < nN(); ++p) {
          for (const auto& [q, wn, sn] : stN_.rows[p]) {
            const Index r = grid_index(i, p), c = grid_index(j, q);
            const double w = wm * sn + sm * wn;
            const double s = sm * sn;
            if (w != 0.0) wt.emplace_back(int(r), int(c), w);
            if (s != 0.0) st.emplace_back(int(r), int(c), s);
          }
        }
      }
    }
    Wp_.emplace(rows(), rows());
    Wp_->setFromTriplets(wt.begin(), wt.end());
    Wp_->makeCompressed();
    Sp_.emplace(rows(), rows());
    Sp_->setFromTriplets(st.begin(), st.end());
    Sp_->makeCompressed();
  }

  /// S_M F S_N, the mass application on the grid.
  ProductFunction apply_mass(const ProductFunction& F) const {
    check_dims(F);
    return M_.S * F * N_.S;
  }

  /// W_M F S_N + S_M F W_N, the stiffness application on the grid.
  ProductFunction apply_stiffness(const ProductFunction& F) const {
    check_dims(F);
    return M_.W * F * N_.S + M_.S * F * N_.W;
  }

  /// vec(F)^T S_prod vec(G).
  double inner(const ProductFunction& F, const ProductFunction& G) const {
    check_dims(F);
    check_dims(G);
    return apply_mass(F).cwiseProduct(G).sum();
  }

  double norm(const ProductFunction& F) const {
    return std::sqrt(std::max(0.0, inner(F, F)));
  }

  double total_area() const { return M_.total_mass() * N_.total_mass(); }

  /// Lumped product masses: hat(s)_M (x) hat(s)_N as a grid.
  ProductFunction lumped_grid() const {
    return M_.lumped_masses() * N_.lumped_masses().transpose();
  }

  Eigen::VectorXd diag_W() const {
    Eigen::VectorXd dwm = M_.W.diagonal(), dsm = M_.S.diagonal();
    Eigen::VectorXd dwn = N_.W.diagonal(), dsn = N_.S.diagonal();
    Eigen::VectorXd d(rows());
    for (Index i = 0; i < nM(); ++i)
      for (Index p = 0; p < nN(); ++p)
        d[grid_index(i, p)] = dwm[i] * dsn[p] + dsm[i] * dwn[p];
    return d;
  }

  Eigen::VectorXd diag_S() const {
    Eigen::VectorXd dsm = M_.S.diagonal(), dsn = N_.S.diagonal();
    Eigen::VectorXd d(rows());
    for (Index i = 0; i < nM(); ++i)
      for (Index p = 0; p < nN(); ++p) d[grid_index(i, p)] = dsm[i] * dsn[p];
    return d;
  }

  ProductFunction grid_from_flat(const Eigen::VectorXd& x) const {
    if (x.size() != rows()) throw DataError("product vector dimension mismatch");
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(x.data(), nM(), nN());
  }

  Eigen::VectorXd flat_from_grid(const ProductFunction& F) const {
    check_dims(F);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> R = F;
    return Eigen::Map<const Eigen::VectorXd>(R.data(), rows());
  }

  /// Structural neighbors of product vertex (i, p) under the W_prod
  /// coupling pattern, excluding (i, p) itself.
  template <class Fn>
  void for_each_neighbor(Index i, Index p, Fn&& fn) const {
    for (const auto& [j, wm, sm] : stM_.rows[i])
      for (const auto& [q, wn, sn] : stN_.rows[p]) {
        if (j == i && q == p) continue;
        fn(j, q);
      }
  }

  /// Restriction of (W_prod, S_prod) to a sorted subset of flat indices,
  /// assembled straight from the factor stencils.
  std::pair<SpMat, SpMat> restricted(const std::vector<Index>& subset) const {
    std::unordered_map<Index, Index> local;
    local.reserve(subset.size() * 2);
    for (size_t r = 0; r < subset.size(); ++r) local[subset[r]] = Index(r);
    std::vector<Triplet> wt, st;
    for (size_t r = 0; r < subset.size(); ++r) {
      auto [i, p] = grid_pair(subset[r]);
      for (const auto& [j, wm, sm] : stM_.rows[i]) {
        for (const auto& [q, wn, sn] : stN_.rows[p]) {
          auto it = local.find(grid_index(j, q));
          if (it == local.end()) continue;
          const double w = wm * sn + sm * wn;
          const double s = sm * sn;
          if (w != 0.0) wt.emplace_back(int(r), int(it->second), w);
          if (s != 0.0) st.emplace_back(int(r), int(it->second), s);
        }
      }
    }
    const Index m = Index(subset.size());
    SpMat W(m, m), S(m, m);
    W.setFromTriplets(wt.begin(), wt.end());
    S.setFromTriplets(st.begin(), st.end());
    W.makeCompressed();
    S.makeCompressed();
    return {std::move(W), std::move(S)};
  }

  /// Pencil view for full-grid eigensolves. Uses the materialized matrices
  /// when present (shift-invert path); otherwise implicit application with a
  /// Jacobi diagonal (block CG path).
  PencilOperator pencil() const {
    PencilOperator p;
    p.dim = rows();
    p.trace_S = M_.S.diagonal().sum() * N_.S.diagonal().sum();
    p.apply_W = [this](const Eigen::MatrixXd& X) {
      Eigen::MatrixXd Y(X.rows(), X.cols());
      for (Index c = 0; c < X.cols(); ++c)
        Y.col(c) = flat_from_grid(apply_stiffness(grid_from_flat(X.col(c))));
      return Y;
    };
    p.apply_S = [this](const Eigen::MatrixXd& X) {
      Eigen::MatrixXd Y(X.rows(), X.cols());
      for (Index c = 0; c < X.cols(); ++c)
        Y.col(c) = flat_from_grid(apply_mass(grid_from_flat(X.col(c))));
      return Y;
    };
    if (Wp_) {
      const SpMat* W = &*Wp_;
      const SpMat* S = &*Sp_;
      p.make_shifted_solver = [W, S](double sigma) {
        SpMat A = *W - sigma * *S;
        auto fact = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
        fact->compute(A);
        if (fact->info() != Eigen::Success)
          throw SolverError("shifted product factorization failed");
        return [fact](const Eigen::MatrixXd& B) -> Eigen::MatrixXd {
          return fact->solve(B);
        };
      };
    } else {
      p.jacobi_diag = diag_W() + 1e-8 * diag_S();
    }
    return p;
  }

 private:
  void check_dims(const ProductFunction& F) const {
    if (F.rows() != nM() || F.cols() != nN())
      throw DataError("product grid dimension mismatch: got " +
                      std::to_string(F.rows()) + "x" + std::to_string(F.cols()) +
                      ", expected " + std::to_string(nM()) + "x" +
                      std::to_string(nN()));
  }
  void require_materialized() const {
    if (!Wp_) throw DataError("product matrices not materialized");
  }

  OperatorPair M_, N_;
  detail::FactorStencil stM_, stN_;
  std::optional<SpMat> Wp_, Sp_;
};

inline ProductOperator product_pair(OperatorPair opM, OperatorPair opN,
                                    bool materialize = false,
                                    Index cap = kDefaultMaterializeCap) {
  ProductOperator prod(std::move(opM), std::move(opN));
  if (materialize) prod.materialize(cap);
  return prod;
}

/// One separable product eigenpair: factor indices and gamma = alpha + beta.
struct SeparablePair {
  Index i, j;
  double gamma;
};

/// Product basis held implicitly as index pairs into the factor bases;
/// eigenfunctions are realized as outer products on demand.
struct SeparableBasis {
  std::vector<SeparablePair> pairs;
  EigenBasis basisM, basisN;
  /// True when the k-th and (k+1)-th gamma were numerically tied, i.e. the
  /// truncation split an eigenspace; callers may want to enlarge k.
  bool tie_truncated = false;

  Index k() const { return Index(pairs.size()); }

  /// Grid realization phi_i psi_j^T of pair l.
  ProductFunction grid(Index l) const {
    const auto& pr = pairs[l];
    return basisM.vectors.col(pr.i) * basisN.vectors.col(pr.j).transpose();
  }

  /// Dense realization as an EigenBasis over the product grid (flat index).
  EigenBasis realize(const ProductOperator& prod) const {
    EigenBasis b;
    b.provenance = Provenance::ProductSeparable;
    b.full_dim = prod.rows();
    b.tol = std::max(basisM.tol, basisN.tol);
    b.eigenvalues.resize(k());
    b.residual_norms.resize(k());
    b.vectors.resize(prod.rows(), k());
    for (Index l = 0; l < k(); ++l) {
      b.eigenvalues[l] = pairs[l].gamma;
      b.residual_norms[l] = basisM.residual_norms[pairs[l].i] +
                            basisN.residual_norms[pairs[l].j];
      b.vectors.col(l) = prod.flat_from_grid(grid(l));
    }
    return b;
  }
};

/// All (i, j) pairs ordered by alpha_i + beta_j ascending, ties broken
/// lexicographically by (i, j). Returns the first k and whether the cut
/// landed inside a tie group (relative tolerance 1e-9).
inline std::pair<std::vector<SeparablePair>, bool>
select_separable_pairs(const Eigen::VectorXd& alphas, const Eigen::VectorXd& betas,
                       Index k) {
  const Index kM = alphas.size(), kN = betas.size();
  if (k < 1 || k > kM * kN)
    throw DataError("separable pair count k = " + std::to_string(k) +
                    " out of range (have " + std::to_string(kM * kN) + " pairs)");
  std::vector<SeparablePair> all;
  all.reserve(size_t(kM) * size_t(kN));
  for (Index i = 0; i < kM; ++i)
    for (Index j = 0; j < kN; ++j) all.push_back({i, j, alphas[i] + betas[j]});
  std::stable_sort(all.begin(), all.end(), [](const SeparablePair& a,
                                              const SeparablePair& b) {
    if (a.gamma != b.gamma) return a.gamma < b.gamma;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  bool tie = false;
  if (k < Index(all.size())) {
    double ga = all[k - 1].gamma, gb = all[k].gamma;
    tie = std::abs(gb - ga) <= 1e-9 * std::max({1.0, std::abs(ga), std::abs(gb)});
  }
  all.resize(size_t(k));
  return {std::move(all), tie};
}

inline SeparableBasis separable_product_basis(const EigenBasis& basisM,
                                              const EigenBasis& basisN, Index k) {
  auto [pairs, tie] = select_separable_pairs(basisM.eigenvalues, basisN.eigenvalues, k);
  SeparableBasis b;
  b.pairs = std::move(pairs);
  b.basisM = basisM;
  b.basisN = basisN;
  b.tie_truncated = tie;
  return b;
}

} // namespace prodmap
