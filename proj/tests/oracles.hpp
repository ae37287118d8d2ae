// Independent reference implementations the tests compare against. These
// deliberately avoid the library's assembly and solver code paths: the quad
// oracle integrates bilinear elements by Gauss quadrature, the assignment
// oracle enumerates permutations, and the spectral oracle is a dense
// generalized eigendecomposition.
#pragma once

#include "prodmap/prodmap.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <numeric>
#include <random>
#include <vector>

namespace oracles {

using prodmap::Index;

/// Mass and stiffness of the product of two cycles, assembled as bilinear
/// quadrilateral FEM on the torus grid of rectangles, via 2x2 Gauss
/// quadrature (exact for these integrands). Flat index l = i * b + p.
struct QuadGridResult {
  Eigen::MatrixXd S, W;
};

inline QuadGridResult quad_grid_assembly(const Eigen::VectorXd& edgesM,
                                         const Eigen::VectorXd& edgesN) {
  const Index a = edgesM.size(), b = edgesN.size();
  const Index n = a * b;
  QuadGridResult out;
  out.S = Eigen::MatrixXd::Zero(n, n);
  out.W = Eigen::MatrixXd::Zero(n, n);

  const double g0 = 0.5 - 0.5 / std::sqrt(3.0);
  const double g1 = 0.5 + 0.5 / std::sqrt(3.0);
  const double gp[2] = {g0, g1};

  for (Index i = 0; i < a; ++i) {
    for (Index p = 0; p < b; ++p) {
      const double hx = edgesM[i], hy = edgesN[p];
      const Index corners[4] = {i * b + p, ((i + 1) % a) * b + p,
                                ((i + 1) % a) * b + (p + 1) % b,
                                i * b + (p + 1) % b};
      Eigen::Matrix4d Se = Eigen::Matrix4d::Zero(), We = Eigen::Matrix4d::Zero();
      for (int gx = 0; gx < 2; ++gx) {
        for (int gy = 0; gy < 2; ++gy) {
          const double xi = gp[gx], eta = gp[gy];
          const double N[4] = {(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta,
                               (1 - xi) * eta};
          const double dNdxi[4] = {-(1 - eta), (1 - eta), eta, -eta};
          const double dNdeta[4] = {-(1 - xi), -xi, xi, (1 - xi)};
          const double wq = 0.25 * hx * hy; // quadrature weight x Jacobian
          for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) {
              Se(r, c) += wq * N[r] * N[c];
              We(r, c) += wq * (dNdxi[r] * dNdxi[c] / (hx * hx) +
                                dNdeta[r] * dNdeta[c] / (hy * hy));
            }
        }
      }
      for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
          out.S(corners[r], corners[c]) += Se(r, c);
          out.W(corners[r], corners[c]) += We(r, c);
        }
    }
  }
  return out;
}

/// Exhaustive optimum of a dense square assignment instance: max over all
/// permutations of sum v(r, sigma(r)), summed in row order.
inline std::pair<double, std::vector<Index>>
brute_force_assignment(const Eigen::MatrixXd& values) {
  const Index n = values.rows();
  std::vector<Index> perm(static_cast<size_t>(n)), best;
  std::iota(perm.begin(), perm.end(), 0);
  double best_obj = -std::numeric_limits<double>::infinity();
  do {
    double obj = 0;
    for (Index r = 0; r < n; ++r) obj += values(r, perm[size_t(r)]);
    if (obj > best_obj) {
      best_obj = obj;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return {best_obj, best};
}

/// Dense generalized eigendecomposition of the pencil (W, S); eigenvalues
/// ascending, eigenvectors S-orthonormal.
inline std::pair<Eigen::VectorXd, Eigen::MatrixXd>
dense_generalized_eig(const prodmap::SpMat& W, const prodmap::SpMat& S) {
  Eigen::MatrixXd Wd = Eigen::MatrixXd(W), Sd = Eigen::MatrixXd(S);
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Wd, Sd);
  if (es.info() != Eigen::Success) throw std::runtime_error("dense eig failed");
  return {es.eigenvalues(), es.eigenvectors()};
}

/// S-orthogonal projector onto the span of S-orthonormal columns.
inline Eigen::MatrixXd s_projector(const Eigen::MatrixXd& X, const Eigen::MatrixXd& S) {
  return X * X.transpose() * S;
}

/// Indices grouped by eigenvalue ties (relative tolerance).
inline std::vector<std::vector<Index>> tie_groups(const Eigen::VectorXd& vals,
                                                  double rel = 1e-6) {
  std::vector<std::vector<Index>> groups;
  for (Index i = 0; i < vals.size(); ++i) {
    if (!groups.empty()) {
      const double prev = vals[groups.back().back()];
      if (std::abs(vals[i] - prev) <= rel * std::max({1.0, std::abs(prev),
                                                      std::abs(vals[i])})) {
        groups.back().push_back(i);
        continue;
      }
    }
    groups.push_back({i});
  }
  return groups;
}

inline prodmap::MapDensity random_sparse_density(Index nM, Index nN, Index nnz,
                                                 std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<Index> ri(0, nM - 1), rp(0, nN - 1);
  std::uniform_real_distribution<double> rv(0.0, 1.0);
  prodmap::MapDensity mu;
  mu.nM = nM;
  mu.nN = nN;
  for (Index e = 0; e < nnz; ++e) mu.entries.emplace_back(ri(rng), rp(rng), rv(rng));
  return mu;
}

} // namespace oracles
