#pragma once

#include "prodmap/mesh.hpp"

#include <Eigen/Sparse>

namespace prodmap {

using SpMat = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

/// Sparse stiffness W and mass S of one manifold (or of a product).
/// W is symmetric positive-semidefinite with zero row sums, S is symmetric
/// positive-definite. Both are assembled entry-mirrored so symmetry is exact.
struct OperatorPair {
  SpMat W;
  SpMat S;
  bool lumped = false;

  Index n() const { return W.rows(); }
  double total_mass() const {
    Eigen::VectorXd ones = Eigen::VectorXd::Ones(n());
    return ones.dot(S * ones);
  }
  /// Row sums of S; equals diag(S) after lumping.
  Eigen::VectorXd lumped_masses() const {
    return S * Eigen::VectorXd::Ones(n());
  }
};

namespace detail {

/// Accumulates off-diagonal contributions once per unordered pair and
/// mirrors them, so W and S come out bitwise symmetric.
class SymmetricBuilder {
 public:
  explicit SymmetricBuilder(Index n) : n_(n), diag_(Eigen::VectorXd::Zero(n)) {}

  void add_offdiag(Index i, Index j, double v) {
    if (i > j) std::swap(i, j);
    off_[{i, j}] += v;
  }
  void add_diag(Index i, double v) { diag_[i] += v; }

  /// diag = value accumulated via add_diag; if negate_row_sums, the diagonal
  /// is instead set to minus the row sum of off-diagonal entries.
  SpMat build(bool negate_row_sums) const {
    std::vector<Triplet> trips;
    trips.reserve(2 * off_.size() + size_t(n_));
    Eigen::VectorXd diag = diag_;
    if (negate_row_sums) diag.setZero();
    for (const auto& [ij, v] : off_) {
      trips.emplace_back(int(ij.first), int(ij.second), v);
      trips.emplace_back(int(ij.second), int(ij.first), v);
      if (negate_row_sums) {
        diag[ij.first] -= v;
        diag[ij.second] -= v;
      }
    }
    for (Index i = 0; i < n_; ++i)
      if (diag[i] != 0.0) trips.emplace_back(int(i), int(i), diag[i]);
    SpMat A(n_, n_);
    A.setFromTriplets(trips.begin(), trips.end());
    A.makeCompressed();
    return A;
  }

 private:
  Index n_;
  Eigen::VectorXd diag_;
  std::map<std::pair<Index, Index>, double> off_;
};

} // namespace detail

/// Linear hat FEM on a cycle graph: w_ij = -1/|e_ij| off-diagonal,
/// s_ij = |e_ij|/6 off-diagonal, s_ii = (1/3) sum of incident edge lengths.
inline OperatorPair assemble_1d(const CurveMesh& mesh) {
  const Index n = mesh.n();
  detail::SymmetricBuilder wb(n), sb(n);
  for (Index i = 0; i < n; ++i) {
    Index j = (i + 1) % n;
    double len = mesh.edge_lengths[i];
    wb.add_offdiag(i, j, -1.0 / len);
    sb.add_offdiag(i, j, len / 6.0);
    sb.add_diag(i, len / 3.0);
    sb.add_diag(j, len / 3.0);
  }
  OperatorPair op;
  op.W = wb.build(true);
  op.S = sb.build(false);
  return op;
}

/// Per-mesh assembly diagnostics; informational only, assembly never fails
/// on mesh quality.
struct AssemblyDiagnostics {
  Index negative_stiffness_edges = 0; // cot sum < 0, i.e. obtuse-dominated
  Index total_edges = 0;
};

/// Cotangent FEM on a triangle mesh: w_ij = (cot a_ij + cot b_ij)/2 on
/// interior edges, (cot a_ij)/2 on boundary edges; s_ij from incident
/// triangle areas / 12, s_ii = (1/6) sum of incident triangle areas.
inline OperatorPair assemble_2d(const TriMesh& mesh,
                                AssemblyDiagnostics* diag = nullptr) {
  const Index n = mesh.n();
  detail::SymmetricBuilder wb(n), sb(n);

  auto cot_at = [&](Index f, Index opp, Index a, Index b) {
    Eigen::Vector3d po = mesh.vertices.row(opp);
    Eigen::Vector3d u = Eigen::Vector3d(mesh.vertices.row(a)) - po;
    Eigen::Vector3d v = Eigen::Vector3d(mesh.vertices.row(b)) - po;
    (void)f;
    return u.dot(v) / u.cross(v).norm();
  };

  AssemblyDiagnostics d;
  d.total_edges = Index(mesh.edges.size());
  for (const auto& e : mesh.edges) {
    double w = cot_at(e.face0, e.opp0, e.a, e.b);
    double s = mesh.face_area(e.face0);
    if (e.face1 >= 0) {
      w += cot_at(e.face1, e.opp1, e.a, e.b);
      s += mesh.face_area(e.face1);
    }
    wb.add_offdiag(e.a, e.b, -0.5 * w);
    if (0.5 * w < 0.0) ++d.negative_stiffness_edges;
    sb.add_offdiag(e.a, e.b, s / 12.0);
  }
  for (Index f = 0; f < mesh.num_faces(); ++f) {
    double a = mesh.face_area(f);
    for (int c = 0; c < 3; ++c) sb.add_diag(mesh.faces(f, c), a / 6.0);
  }
  if (diag) *diag = d;

  OperatorPair op;
  op.W = wb.build(true);
  op.S = sb.build(false);
  return op;
}

inline OperatorPair assemble(const AnyMesh& mesh) {
  return std::visit(
      [](const auto& m) {
        if constexpr (std::is_same_v<std::decay_t<decltype(m)>, CurveMesh>)
          return assemble_1d(m);
        else
          return assemble_2d(m);
      },
      mesh);
}

/// Replace S by its row-sum diagonal; W untouched. Idempotent.
inline OperatorPair lump_mass(const OperatorPair& op) {
  OperatorPair out;
  out.W = op.W;
  out.lumped = true;
  Eigen::VectorXd d = op.lumped_masses();
  out.S = SpMat(op.n(), op.n());
  std::vector<Triplet> trips;
  trips.reserve(op.n());
  for (Index i = 0; i < op.n(); ++i) trips.emplace_back(int(i), int(i), d[i]);
  out.S.setFromTriplets(trips.begin(), trips.end());
  out.S.makeCompressed();
  return out;
}

} // namespace prodmap
