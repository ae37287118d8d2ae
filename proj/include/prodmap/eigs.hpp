#pragma once

#include "prodmap/fem.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <random>

namespace prodmap {

enum class Provenance : std::uint32_t {
  GlobalFactor = 0,
  ProductSeparable = 1,
  PatchDirichlet = 2,
  Hamiltonian = 3,
};

inline const char* provenance_name(Provenance p) {
  switch (p) {
    case Provenance::GlobalFactor: return "global-factor";
    case Provenance::ProductSeparable: return "product-separable";
    case Provenance::PatchDirichlet: return "patch-dirichlet";
    case Provenance::Hamiltonian: return "hamiltonian";
  }
  return "unknown";
}

/// k generalized eigenpairs W x = lambda S x, S-orthonormal, eigenvalues
/// nondecreasing, each vector sign-fixed so its largest-magnitude entry is
/// positive.
///
/// `support` is empty for bases living on the full space. Patch bases store
/// only the interior rows; `support[r]` is the global index of stored row r,
/// all other entries are exactly zero by construction.
struct EigenBasis {
  Eigen::VectorXd eigenvalues;
  Eigen::MatrixXd vectors; // (dim or |support|) x k
  Provenance provenance = Provenance::GlobalFactor;
  Eigen::VectorXd residual_norms; // per pair, ||Wx - lambda Sx|| / ||Sx||
  std::vector<Index> support;    // sorted global row indices; empty = dense
  Index full_dim = 0;            // dimension of the ambient space
  double tol = 1e-8;             // residual tolerance the solve targeted

  Index k() const { return eigenvalues.size(); }

  /// Zero-extended column as a vector on the full space.
  Eigen::VectorXd full_vector(Index col) const {
    if (support.empty()) return vectors.col(col);
    Eigen::VectorXd v = Eigen::VectorXd::Zero(full_dim);
    for (size_t r = 0; r < support.size(); ++r) v[support[r]] = vectors(r, col);
    return v;
  }
};

/// Callback view of a symmetric pencil (W, S). `shifted_solve`, when
/// present, applies (W - sigma*S)^{-1} to a block; without it the solver
/// falls back to the preconditioned block CG iteration.
struct PencilOperator {
  Index dim = 0;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> apply_W;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> apply_S;
  double trace_S = 0;
  std::function<std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>(double sigma)>
      make_shifted_solver;                 // optional
  Eigen::VectorXd jacobi_diag;             // diag(W) + |sigma| diag(S), optional
};

struct EigsOptions {
  double tol = 1e-8;
  std::uint64_t seed = 0;
  int max_restarts = 300;
};

inline PencilOperator pencil_from_pair(const OperatorPair& op) {
  PencilOperator p;
  p.dim = op.n();
  // Capture the matrices by reference: OperatorPairs are immutable once
  // assembled and outlive any solve that uses them.
  p.apply_W = [&op](const Eigen::MatrixXd& X) { return op.W * X; };
  p.apply_S = [&op](const Eigen::MatrixXd& X) { return op.S * X; };
  p.trace_S = op.S.diagonal().sum();
  p.make_shifted_solver = [&op](double sigma) {
    SpMat A = op.W - sigma * op.S;
    auto fact = std::make_shared<Eigen::SimplicialLDLT<SpMat>>();
    fact->compute(A);
    if (fact->info() != Eigen::Success)
      throw SolverError("shifted factorization failed");
    return [fact](const Eigen::MatrixXd& B) -> Eigen::MatrixXd {
      return fact->solve(B);
    };
  };
  return p;
}

namespace detail {

inline Eigen::MatrixXd random_block(Index n, Index m, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> unif(-1.0, 1.0);
  Eigen::MatrixXd X(n, m);
  for (Index j = 0; j < m; ++j)
    for (Index i = 0; i < n; ++i) X(i, j) = unif(rng);
  return X;
}

/// In-place S-orthonormalization of the columns of X against themselves and
/// against the previously orthonormalized block Q (QtS = S*Q precomputed).
/// Columns are scaled to unit S-norm up front so the drop test is relative
/// to each column's own size: small vectors (residual injections near
/// convergence) carry fresh directions and must not be discarded for their
/// magnitude alone. Two Gram-Schmidt sweeps; columns whose remaining
/// fraction collapses are dropped. Returns the number kept (at the front).
inline Index s_orthonormalize(Eigen::MatrixXd& X, Eigen::MatrixXd& SX,
                              const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& applyS,
                              const Eigen::MatrixXd* Q, const Eigen::MatrixXd* SQ) {
  const double drop_tol = 1e-10;
  Index kept = 0;
  for (Index j = 0; j < X.cols(); ++j) {
    Eigen::VectorXd v = X.col(j);
    {
      Eigen::VectorXd sv = applyS(v);
      double nrm0 = std::sqrt(std::max(0.0, v.dot(sv)));
      if (!(nrm0 > 0)) continue;
      v /= nrm0;
    }
    bool dropped = false;
    for (int sweep = 0; sweep < 2; ++sweep) {
      if (Q && Q->cols() > 0) {
        Eigen::VectorXd coef = SQ->transpose() * v;
        v.noalias() -= (*Q) * coef;
      }
      if (kept > 0) {
        Eigen::VectorXd coef = SX.leftCols(kept).transpose() * v;
        v.noalias() -= X.leftCols(kept) * coef;
      }
      Eigen::VectorXd sv = applyS(v);
      double nrm = std::sqrt(std::max(0.0, v.dot(sv)));
      if (nrm <= drop_tol) {
        dropped = true;
        break;
      }
      v /= nrm;
    }
    if (dropped) continue;
    X.col(kept) = v;
    SX.col(kept) = applyS(v);
    ++kept;
  }
  return kept;
}

inline void fix_signs(Eigen::MatrixXd& X) {
  for (Index j = 0; j < X.cols(); ++j) {
    Index imax = 0;
    X.col(j).cwiseAbs().maxCoeff(&imax);
    if (X(imax, j) < 0) X.col(j) = -X.col(j);
  }
}

struct RitzResult {
  Eigen::VectorXd values;
  Eigen::MatrixXd vectors;   // dim x k
  Eigen::VectorXd residuals; // relative residual norms
};

inline RitzResult rayleigh_ritz(const PencilOperator& op, const Eigen::MatrixXd& Q,
                                Index k) {
  Eigen::MatrixXd WQ = op.apply_W(Q);
  Eigen::MatrixXd H = Q.transpose() * WQ;
  H = 0.5 * (H + H.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
  if (es.info() != Eigen::Success) throw SolverError("dense Ritz solve failed");
  RitzResult r;
  Index kk = std::min(k, Q.cols());
  r.values = es.eigenvalues().head(kk);
  r.vectors = Q * es.eigenvectors().leftCols(kk);
  Eigen::MatrixXd WX = op.apply_W(r.vectors);
  Eigen::MatrixXd SX = op.apply_S(r.vectors);
  r.residuals.resize(kk);
  for (Index j = 0; j < kk; ++j) {
    double denom = SX.col(j).norm();
    r.residuals[j] = (WX.col(j) - r.values[j] * SX.col(j)).norm() /
                     (denom > 0 ? denom : 1.0);
  }
  return r;
}

} // namespace detail

/// Smallest-k eigenpairs of W x = lambda S x via shift-invert block Lanczos
/// with full S-reorthogonalization. The shift sigma = -1e-8 * trace(S)/n
/// keeps (W - sigma S) definite when W is singular (closed manifolds).
/// Deterministic for a fixed seed.
inline EigenBasis eigs_shift_invert(const PencilOperator& op, Index k,
                                    const EigsOptions& opts) {
  const Index n = op.dim;
  const double sigma = -1e-8 * op.trace_S / double(n);
  auto solve = op.make_shifted_solver(sigma);
  // T = (W - sigma S)^{-1} S is S-self-adjoint; its largest Ritz values map
  // to the smallest pencil eigenvalues via lambda = sigma + 1/theta.
  auto applyT = [&](const Eigen::MatrixXd& X) { return solve(op.apply_S(X)); };

  // Generous ncv and a small block give the Krylov chain enough depth per
  // cycle even when the spectrum floor sits far from the shift (patch
  // Dirichlet and Hamiltonian pencils), where the theta values cluster.
  const Index ncv = std::min(n, std::max({2 * k, k + 8, Index(20)}));
  const Index block =
      std::max<Index>(1, std::min<Index>({std::max<Index>(2, ncv / 4), Index(8), k + 1}));

  Eigen::MatrixXd Q(n, ncv), SQ(n, ncv);
  Index qcols = 0;

  Eigen::MatrixXd X = detail::random_block(n, block, opts.seed);

  for (int cycle = 0; cycle < opts.max_restarts; ++cycle) {
    // Expand the Krylov basis until ncv columns are S-orthonormal.
    while (qcols < ncv) {
      Eigen::MatrixXd SX(n, X.cols());
      Eigen::MatrixXd Qhead = Q.leftCols(qcols);
      Eigen::MatrixXd SQhead = SQ.leftCols(qcols);
      Index kept = detail::s_orthonormalize(X, SX, op.apply_S, &Qhead, &SQhead);
      if (kept == 0) {
        // Krylov space exhausted; pad with fresh random directions.
        X = detail::random_block(n, block, opts.seed + 1 + cycle + qcols);
        kept = detail::s_orthonormalize(X, SX, op.apply_S, &Qhead, &SQhead);
        if (kept == 0) break;
      }
      Index take = std::min(kept, ncv - qcols);
      Q.middleCols(qcols, take) = X.leftCols(take);
      SQ.middleCols(qcols, take) = SX.leftCols(take);
      qcols += take;
      if (qcols >= ncv) break;
      X = applyT(Q.middleCols(qcols - take, take));
    }

    // Ritz extraction on T: H = Q^T S T Q.
    Eigen::MatrixXd TQ = applyT(Q.leftCols(qcols));
    Eigen::MatrixXd H = SQ.leftCols(qcols).transpose() * TQ;
    H = 0.5 * (H + H.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    if (es.info() != Eigen::Success) throw SolverError("Ritz solve failed");

    // Largest theta first = smallest lambda first.
    Eigen::MatrixXd Y = es.eigenvectors().rowwise().reverse();
    Eigen::MatrixXd Xr = Q.leftCols(qcols) * Y.leftCols(std::min(qcols, k));

    Eigen::MatrixXd WX = op.apply_W(Xr);
    Eigen::MatrixXd SXr = op.apply_S(Xr);
    Eigen::VectorXd lam(Xr.cols()), res(Xr.cols());
    for (Index j = 0; j < Xr.cols(); ++j) {
      double num = Xr.col(j).dot(WX.col(j));
      double den = Xr.col(j).dot(SXr.col(j));
      lam[j] = num / den;
      double snorm = SXr.col(j).norm();
      res[j] = (WX.col(j) - lam[j] * SXr.col(j)).norm() / (snorm > 0 ? snorm : 1.0);
    }

    bool converged = Xr.cols() == k && (res.array() <= opts.tol).all();
    bool exhausted = qcols >= n; // full space spanned: result is exact
    if (converged || exhausted || cycle == opts.max_restarts - 1) {
      if (!converged && !exhausted)
        throw SolverError("eigensolver did not converge: max residual " +
                          std::to_string(res.maxCoeff()) + " after " +
                          std::to_string(opts.max_restarts) + " cycles");
      // Sort ascending by lambda and sign-fix.
      std::vector<Index> order(Xr.cols());
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(),
                       [&](Index a, Index b) { return lam[a] < lam[b]; });
      EigenBasis basis;
      basis.full_dim = n;
      basis.eigenvalues.resize(Xr.cols());
      basis.residual_norms.resize(Xr.cols());
      basis.vectors.resize(n, Xr.cols());
      for (Index j = 0; j < Xr.cols(); ++j) {
        basis.eigenvalues[j] = lam[order[j]];
        basis.residual_norms[j] = res[order[j]];
        basis.vectors.col(j) = Xr.col(order[j]);
      }
      detail::fix_signs(basis.vectors);
      return basis;
    }

    // Thick restart: keep the best Ritz vectors, capped below ncv so the
    // expansion loop always has room, and continue the chain from the
    // T-residuals of the least-converged wanted pairs. Kept Ritz vectors are
    // nearly invariant, so chaining from them would collapse under
    // reorthogonalization and stall the expansion on random reseeds.
    Index keep = std::min<Index>({k + block, qcols, std::max<Index>(k, ncv - block)});
    Eigen::MatrixXd Xkeep = Q.leftCols(qcols) * Y.leftCols(keep);
    const Index sc = std::min<Index>(block, Xr.cols());
    std::vector<Index> lag(Xr.cols());
    std::iota(lag.begin(), lag.end(), Index(0));
    std::stable_sort(lag.begin(), lag.end(),
                     [&](Index a, Index b) { return res[a] > res[b]; });
    Eigen::MatrixXd R(n, sc);
    for (Index t = 0; t < sc; ++t) {
      const Index j = lag[size_t(t)];
      R.col(t) = TQ * Y.col(j) - es.eigenvalues()[qcols - 1 - j] * Xr.col(j);
    }
    Eigen::MatrixXd SXkeep(n, keep);
    qcols = 0;
    Index kept = detail::s_orthonormalize(Xkeep, SXkeep, op.apply_S, nullptr, nullptr);
    Q.leftCols(kept) = Xkeep.leftCols(kept);
    SQ.leftCols(kept) = SXkeep.leftCols(kept);
    qcols = kept;
    X = std::move(R);
  }
  throw SolverError("eigensolver restart loop exited unexpectedly");
}

/// Locally-optimal block preconditioned CG for the same pencil, used when no
/// factorization of (W - sigma S) is available (implicit product operators).
/// Jacobi preconditioning from `op.jacobi_diag`.
inline EigenBasis eigs_lobpcg(const PencilOperator& op, Index k,
                              const EigsOptions& opts) {
  const Index n = op.dim;
  const Index m = std::min(n, k + std::max<Index>(4, k / 4));
  Eigen::VectorXd prec = op.jacobi_diag.size() == n
                             ? op.jacobi_diag
                             : Eigen::VectorXd::Ones(n);
  prec = prec.cwiseMax(1e-30).cwiseInverse();

  Eigen::MatrixXd X = detail::random_block(n, m, opts.seed);
  {
    Eigen::MatrixXd SX(n, m);
    Index kept = detail::s_orthonormalize(X, SX, op.apply_S, nullptr, nullptr);
    X.conservativeResize(n, kept);
  }
  Eigen::MatrixXd P(n, 0);
  detail::RitzResult ritz = detail::rayleigh_ritz(op, X, X.cols());
  X = ritz.vectors;

  const int max_iters = std::max(400, opts.max_restarts);
  for (int it = 0; it < max_iters; ++it) {
    Eigen::MatrixXd WX = op.apply_W(X);
    Eigen::MatrixXd SX = op.apply_S(X);
    Eigen::MatrixXd R = WX - SX * ritz.values.asDiagonal();

    Eigen::VectorXd relres(X.cols());
    for (Index j = 0; j < X.cols(); ++j) {
      double denom = SX.col(j).norm();
      relres[j] = R.col(j).norm() / (denom > 0 ? denom : 1.0);
    }
    if (X.cols() >= k && (relres.head(std::min<Index>(k, relres.size())).array() <=
                          opts.tol).all()) {
      EigenBasis basis;
      basis.full_dim = n;
      basis.eigenvalues = ritz.values.head(k);
      basis.vectors = X.leftCols(k);
      basis.residual_norms = relres.head(k);
      detail::fix_signs(basis.vectors);
      return basis;
    }

    Eigen::MatrixXd Z = prec.asDiagonal() * R;
    Eigen::MatrixXd V(n, X.cols() + Z.cols() + P.cols());
    V.leftCols(X.cols()) = X;
    V.middleCols(X.cols(), Z.cols()) = Z;
    if (P.cols() > 0) V.rightCols(P.cols()) = P;
    Eigen::MatrixXd SV(n, V.cols());
    Index kept = detail::s_orthonormalize(V, SV, op.apply_S, nullptr, nullptr);
    Eigen::MatrixXd Vk = V.leftCols(kept);
    detail::RitzResult next = detail::rayleigh_ritz(op, Vk, std::min<Index>(kept, m));
    // Conjugate directions: the part of the new iterate outside span(X).
    Eigen::MatrixXd SXold = op.apply_S(X);
    Eigen::MatrixXd coef = SXold.transpose() * next.vectors;
    P = next.vectors - X * coef;
    X = next.vectors;
    ritz = std::move(next);
  }
  throw SolverError("block CG eigensolver did not converge");
}

/// Front door: smallest-k eigenpairs, sorted, S-orthonormal, sign-fixed.
inline EigenBasis eigs_smallest(const PencilOperator& op, Index k,
                                const EigsOptions& opts = {},
                                Provenance prov = Provenance::GlobalFactor) {
  if (k < 1) throw DataError("eigs: k must be positive");
  if (k >= op.dim)
    throw DataError("eigs: k = " + std::to_string(k) +
                    " must be smaller than the dimension " + std::to_string(op.dim));
  EigenBasis basis = op.make_shifted_solver ? eigs_shift_invert(op, k, opts)
                                            : eigs_lobpcg(op, k, opts);
  basis.provenance = prov;
  basis.tol = opts.tol;
  return basis;
}

inline EigenBasis eigs_smallest(const OperatorPair& op, Index k,
                                const EigsOptions& opts = {},
                                Provenance prov = Provenance::GlobalFactor) {
  return eigs_smallest(pencil_from_pair(op), k, opts, prov);
}

/// Fourier coefficients c_i = x_i^T S f of f in the basis.
inline Eigen::VectorXd expand(const EigenBasis& basis, const Eigen::VectorXd& Sf) {
  if (Sf.size() != basis.full_dim)
    throw DataError("expand: dimension mismatch");
  if (basis.support.empty()) return basis.vectors.transpose() * Sf;
  Eigen::VectorXd restricted(basis.support.size());
  for (size_t r = 0; r < basis.support.size(); ++r)
    restricted[r] = Sf[basis.support[r]];
  return basis.vectors.transpose() * restricted;
}

inline Eigen::VectorXd expand(const EigenBasis& basis, const OperatorPair& op,
                              const Eigen::VectorXd& f) {
  return expand(basis, Eigen::VectorXd(op.S * f));
}

/// Reconstruction sum_i c_i x_i on the full space.
inline Eigen::VectorXd synthesize(const EigenBasis& basis, const Eigen::VectorXd& c) {
  if (c.size() != basis.k()) throw DataError("synthesize: coefficient count mismatch");
  if (basis.support.empty()) return basis.vectors * c;
  Eigen::VectorXd full = Eigen::VectorXd::Zero(basis.full_dim);
  Eigen::VectorXd local = basis.vectors * c;
  for (size_t r = 0; r < basis.support.size(); ++r)
    full[basis.support[r]] = local[r];
  return full;
}

} // namespace prodmap
