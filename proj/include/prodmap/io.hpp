#pragma once

#include "prodmap/evaluate.hpp"
#include "prodmap/localize.hpp"
#include "prodmap/maps.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace prodmap {

// ---------------------------------------------------------------- hashing

inline std::uint64_t fnv1a64(const void* data, size_t len,
                             std::uint64_t seed = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a64(const std::string& s) {
  return fnv1a64(s.data(), s.size());
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)h);
  return buf;
}

// ----------------------------------------------------------- basic file IO

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Write-then-rename so readers never observe a partial file.
inline void atomic_write(const std::string& path, const std::string& content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp);
    out.write(content.data(), std::streamsize(content.size()));
    if (!out) throw DataError("short write to " + tmp);
  }
  fs::rename(tmp, target);
}

inline std::string fmt_g17(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- manifests

/// Deterministic text manifest: "key: value" lines in insertion order.
/// No timestamps anywhere, so reruns are byte-identical.
inline std::string manifest_text(
    const std::vector<std::pair<std::string, std::string>>& kv) {
  std::ostringstream out;
  for (const auto& [k, v] : kv) out << k << ": " << v << "\n";
  return out.str();
}

inline void write_manifest(const std::string& path,
                           std::vector<std::pair<std::string, std::string>> kv,
                           const std::string& payload) {
  kv.emplace_back("payload-hash", hash_hex(fnv1a64(payload)));
  atomic_write(path, manifest_text(kv));
}

// ------------------------------------------------------------ sparse matrix

/// Triplet text: header "n m nnz", then "row col value" lines in
/// column-major order.
inline std::string sparse_to_text(const SpMat& A) {
  std::ostringstream out;
  out << A.rows() << " " << A.cols() << " " << A.nonZeros() << "\n";
  for (Index c = 0; c < A.outerSize(); ++c)
    for (SpMat::InnerIterator it(A, c); it; ++it)
      out << it.row() << " " << it.col() << " " << fmt_g17(it.value()) << "\n";
  return out.str();
}

inline SpMat sparse_from_text(const std::string& text) {
  std::istringstream in(text);
  Index n = 0, m = 0;
  std::size_t nnz = 0;
  if (!(in >> n >> m >> nnz)) throw DataError("bad sparse matrix header");
  std::vector<Triplet> trips;
  trips.reserve(nnz);
  for (std::size_t i = 0; i < nnz; ++i) {
    Index r, c;
    double v;
    if (!(in >> r >> c >> v)) throw DataError("truncated sparse matrix data");
    if (r < 0 || r >= n || c < 0 || c >= m)
      throw DataError("sparse matrix index out of range");
    trips.emplace_back(int(r), int(c), v);
  }
  SpMat A(n, m);
  A.setFromTriplets(trips.begin(), trips.end());
  A.makeCompressed();
  return A;
}

inline void write_operator_pair(const std::string& base, const OperatorPair& op,
                                const std::vector<std::pair<std::string, std::string>>&
                                    config = {}) {
  const std::string w = sparse_to_text(op.W);
  const std::string s = sparse_to_text(op.S);
  atomic_write(base + ".W.txt", w);
  atomic_write(base + ".S.txt", s);
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("kind", "operator-pair");
  kv.emplace_back("n", std::to_string(op.n()));
  kv.emplace_back("lumped", op.lumped ? "true" : "false");
  for (const auto& e : config) kv.push_back(e);
  write_manifest(base + ".manifest.txt", std::move(kv), w + s);
}

inline OperatorPair read_operator_pair(const std::string& base) {
  OperatorPair op;
  op.W = sparse_from_text(read_file(base + ".W.txt"));
  op.S = sparse_from_text(read_file(base + ".S.txt"));
  if (op.W.rows() != op.S.rows() || op.W.rows() != op.W.cols() ||
      op.S.rows() != op.S.cols())
    throw DataError("operator pair dimension mismatch in " + base);
  op.lumped = op.S.nonZeros() == op.S.rows();
  return op;
}

// ------------------------------------------------------------- EigenBasis

namespace detail {

template <class T>
void put_raw(std::string& out, const T& v) {
  out.append(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get_raw(const std::string& in, size_t& off) {
  if (off + sizeof(T) > in.size()) throw DataError("truncated basis file");
  T v;
  std::memcpy(&v, in.data() + off, sizeof v);
  off += sizeof v;
  return v;
}

} // namespace detail

/// Binary container: magic "PMEB", version, full_dim, k, provenance, tol,
/// support list, eigenvalues, residuals, column-major vectors (f64).
inline std::string basis_to_bytes(const EigenBasis& b) {
  std::string out;
  out += "PMEB";
  detail::put_raw<std::uint32_t>(out, 1u);
  detail::put_raw<std::int64_t>(out, b.full_dim);
  detail::put_raw<std::int64_t>(out, b.k());
  detail::put_raw<std::uint32_t>(out, std::uint32_t(b.provenance));
  detail::put_raw<double>(out, b.tol);
  detail::put_raw<std::int64_t>(out, std::int64_t(b.support.size()));
  for (Index s : b.support) detail::put_raw<std::int64_t>(out, s);
  for (Index i = 0; i < b.k(); ++i) detail::put_raw<double>(out, b.eigenvalues[i]);
  for (Index i = 0; i < b.k(); ++i) detail::put_raw<double>(out, b.residual_norms[i]);
  for (Index c = 0; c < b.vectors.cols(); ++c)
    for (Index r = 0; r < b.vectors.rows(); ++r)
      detail::put_raw<double>(out, b.vectors(r, c));
  return out;
}

inline EigenBasis basis_from_bytes(const std::string& in) {
  if (in.size() < 4 || in.compare(0, 4, "PMEB") != 0)
    throw DataError("not an eigenbasis file");
  size_t off = 4;
  const auto version = detail::get_raw<std::uint32_t>(in, off);
  if (version != 1) throw DataError("unsupported eigenbasis version");
  EigenBasis b;
  b.full_dim = detail::get_raw<std::int64_t>(in, off);
  const Index k = detail::get_raw<std::int64_t>(in, off);
  b.provenance = Provenance(detail::get_raw<std::uint32_t>(in, off));
  b.tol = detail::get_raw<double>(in, off);
  const Index nsup = detail::get_raw<std::int64_t>(in, off);
  if (k < 0 || b.full_dim < 0 || nsup < 0 || nsup > b.full_dim)
    throw DataError("corrupt eigenbasis header");
  b.support.resize(size_t(nsup));
  for (Index i = 0; i < nsup; ++i)
    b.support[size_t(i)] = detail::get_raw<std::int64_t>(in, off);
  b.eigenvalues.resize(k);
  for (Index i = 0; i < k; ++i) b.eigenvalues[i] = detail::get_raw<double>(in, off);
  b.residual_norms.resize(k);
  for (Index i = 0; i < k; ++i)
    b.residual_norms[i] = detail::get_raw<double>(in, off);
  const Index rows = nsup > 0 ? nsup : b.full_dim;
  b.vectors.resize(rows, k);
  for (Index c = 0; c < k; ++c)
    for (Index r = 0; r < rows; ++r)
      b.vectors(r, c) = detail::get_raw<double>(in, off);
  if (off != in.size()) throw DataError("trailing bytes in eigenbasis file");
  return b;
}

inline void write_basis(const std::string& path, const EigenBasis& b,
                        const std::vector<std::pair<std::string, std::string>>&
                            config = {}) {
  const std::string bytes = basis_to_bytes(b);
  atomic_write(path, bytes);
  std::vector<std::pair<std::string, std::string>> kv;
  kv.emplace_back("kind", "eigenbasis");
  kv.emplace_back("n", std::to_string(b.full_dim));
  kv.emplace_back("k", std::to_string(b.k()));
  kv.emplace_back("provenance", provenance_name(b.provenance));
  kv.emplace_back("tol", fmt_g17(b.tol));
  kv.emplace_back("support", std::to_string(b.support.size()));
  for (const auto& e : config) kv.push_back(e);
  write_manifest(path + ".manifest.txt", std::move(kv), bytes);
}

inline EigenBasis read_basis(const std::string& path) {
  return basis_from_bytes(read_file(path));
}

// --------------------------------------------------------------- PointMap

inline std::string pointmap_to_text(const PointMap& pm) {
  std::ostringstream out;
  for (Index t : pm.targets) out << t << "\n";
  return out.str();
}

inline PointMap pointmap_from_text(const std::string& text) {
  std::istringstream in(text);
  PointMap pm;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    pm.targets.push_back(std::stoll(line));
  }
  return pm;
}

inline void write_pointmap(const std::string& path, const PointMap& pm) {
  atomic_write(path, pointmap_to_text(pm));
}

inline PointMap read_pointmap(const std::string& path) {
  return pointmap_from_text(read_file(path));
}

// -------------------------------------------------------------- MapDensity

inline std::string density_to_text(const MapDensity& mu) {
  std::ostringstream out;
  out << mu.nM << " " << mu.nN << " " << mu.entries.size() << "\n";
  for (const auto& [i, p, v] : mu.entries)
    out << i << " " << p << " " << fmt_g17(v) << "\n";
  return out.str();
}

inline MapDensity density_from_text(const std::string& text) {
  std::istringstream in(text);
  MapDensity mu;
  std::size_t nnz = 0;
  if (!(in >> mu.nM >> mu.nN >> nnz)) throw DataError("bad density header");
  for (std::size_t e = 0; e < nnz; ++e) {
    Index i, p;
    double v;
    if (!(in >> i >> p >> v)) throw DataError("truncated density data");
    mu.entries.emplace_back(i, p, v);
  }
  mu.validate();
  return mu;
}

inline void write_density(const std::string& path, const MapDensity& mu) {
  atomic_write(path, density_to_text(mu));
}

inline MapDensity read_density(const std::string& path) {
  return density_from_text(read_file(path));
}

// ---------------------------------------------------- FunctionalMapMatrix

inline std::string fmap_to_text(const FunctionalMapMatrix& fm) {
  std::ostringstream out;
  out << "# basisM: " << fm.basisM_ref << "\n";
  out << "# basisN: " << fm.basisN_ref << "\n";
  out << "# truncation: " << truncation_name(fm.truncation) << "\n";
  out << fm.C.rows() << " " << fm.C.cols() << "\n";
  for (Index i = 0; i < fm.C.rows(); ++i) {
    for (Index j = 0; j < fm.C.cols(); ++j) {
      if (j) out << " ";
      out << fmt_g17(fm.C(i, j));
    }
    out << "\n";
  }
  return out.str();
}

inline FunctionalMapMatrix fmap_from_text(const std::string& text) {
  std::istringstream in(text);
  FunctionalMapMatrix fm;
  std::string line;
  Index kM = -1, kN = -1;
  while (std::getline(in, line)) {
    if (line.rfind("# basisM:", 0) == 0) {
      fm.basisM_ref = line.substr(9);
      fm.basisM_ref.erase(0, fm.basisM_ref.find_first_not_of(' '));
      continue;
    }
    if (line.rfind("# basisN:", 0) == 0) {
      fm.basisN_ref = line.substr(9);
      fm.basisN_ref.erase(0, fm.basisN_ref.find_first_not_of(' '));
      continue;
    }
    if (line.rfind("# truncation:", 0) == 0) {
      fm.truncation = line.find("product-ordered") != std::string::npos
                          ? Truncation::ProductOrdered
                          : Truncation::RectangularSection;
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    std::istringstream hs(line);
    if (!(hs >> kM >> kN)) throw DataError("bad functional map header");
    break;
  }
  if (kM < 0 || kN < 0) throw DataError("missing functional map header");
  fm.C.resize(kM, kN);
  for (Index i = 0; i < kM; ++i)
    for (Index j = 0; j < kN; ++j)
      if (!(in >> fm.C(i, j))) throw DataError("truncated functional map data");
  return fm;
}

inline void write_fmap(const std::string& path, const FunctionalMapMatrix& fm) {
  atomic_write(path, fmap_to_text(fm));
}

inline FunctionalMapMatrix read_fmap(const std::string& path) {
  return fmap_from_text(read_file(path));
}

// ------------------------------------------------------------------ Patch

inline std::string patch_to_text(const Patch& patch) {
  std::ostringstream out;
  out << patch.nM << " " << patch.nN << " " << patch.vertices.size() << "\n";
  std::unordered_set<Index> interior(patch.interior.begin(), patch.interior.end());
  for (Index l : patch.vertices)
    out << l / patch.nN << " " << l % patch.nN << " "
        << (interior.count(l) ? "interior" : "boundary") << "\n";
  return out.str();
}

/// Reads the vertex set; interior/boundary tags are recomputed against the
/// given product operator so they always match the coupling rule.
inline Patch patch_from_text(const std::string& text, const ProductOperator& prod) {
  std::istringstream in(text);
  Index nM, nN;
  std::size_t count;
  if (!(in >> nM >> nN >> count)) throw DataError("bad patch header");
  if (nM != prod.nM() || nN != prod.nN())
    throw DataError("patch grid does not match the product operator");
  std::vector<Index> verts;
  verts.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    Index i, p;
    std::string tag;
    if (!(in >> i >> p >> tag)) throw DataError("truncated patch data");
    if (i < 0 || i >= nM || p < 0 || p >= nN)
      throw DataError("patch vertex out of range");
    verts.push_back(i * nN + p);
  }
  return make_patch(prod, std::move(verts));
}

inline void write_patch(const std::string& path, const Patch& patch) {
  atomic_write(path, patch_to_text(patch));
}

// -------------------------------------------------------------- Potential

inline std::string potential_to_text(const Potential& V, Index nM, Index nN) {
  std::ostringstream out;
  std::size_t nnz = 0;
  for (Index l = 0; l < V.values.size(); ++l)
    if (V.values[l] != 0.0) ++nnz;
  out << nM << " " << nN << " " << nnz << " " << potential_kind_name(V.kind)
      << " " << fmt_g17(V.nu) << "\n";
  for (Index l = 0; l < V.values.size(); ++l)
    if (V.values[l] != 0.0)
      out << l / nN << " " << l % nN << " " << fmt_g17(V.values[l]) << "\n";
  return out.str();
}

inline Potential potential_from_text(const std::string& text, Index nM_expect,
                                     Index nN_expect) {
  std::istringstream in(text);
  Index nM, nN;
  std::size_t nnz;
  std::string kind;
  double nu;
  if (!(in >> nM >> nN >> nnz >> kind >> nu)) throw DataError("bad potential header");
  if (nM != nM_expect || nN != nN_expect)
    throw DataError("potential grid dimension mismatch");
  Potential V;
  V.kind = kind == "soft" ? PotentialKind::Soft : PotentialKind::Step;
  V.nu = nu;
  V.values = Eigen::VectorXd::Zero(nM * nN);
  for (std::size_t e = 0; e < nnz; ++e) {
    Index i, p;
    double v;
    if (!(in >> i >> p >> v)) throw DataError("truncated potential data");
    if (i < 0 || i >= nM || p < 0 || p >= nN)
      throw DataError("potential entry out of range");
    if (v < 0) throw DataError("potential must be nonnegative");
    V.values[i * nN + p] = v;
  }
  return V;
}

inline void write_potential(const std::string& path, const Potential& V, Index nM,
                            Index nN) {
  atomic_write(path, potential_to_text(V, nM, nN));
}

// ------------------------------------------------------------ mesh output

inline std::string curve_to_text(const CurveMesh& m) {
  std::ostringstream out;
  out << "# closed polyline, " << m.n() << " vertices\n";
  for (Index i = 0; i < m.n(); ++i) {
    for (Index d = 0; d < m.vertices.cols(); ++d) {
      if (d) out << " ";
      out << fmt_g17(m.vertices(i, d));
    }
    out << "\n";
  }
  return out.str();
}

inline void write_curve(const std::string& path, const CurveMesh& m) {
  atomic_write(path, curve_to_text(m));
}

inline std::string off_to_text(const TriMesh& m) {
  std::ostringstream out;
  out << "OFF\n" << m.n() << " " << m.faces.rows() << " 0\n";
  for (Index i = 0; i < m.n(); ++i)
    out << fmt_g17(m.vertices(i, 0)) << " " << fmt_g17(m.vertices(i, 1)) << " "
        << fmt_g17(m.vertices(i, 2)) << "\n";
  for (Index f = 0; f < m.faces.rows(); ++f)
    out << "3 " << m.faces(f, 0) << " " << m.faces(f, 1) << " " << m.faces(f, 2)
        << "\n";
  return out.str();
}

inline void write_off(const std::string& path, const TriMesh& m) {
  atomic_write(path, off_to_text(m));
}

// ----------------------------------------------------------------- config

/// Flat key = value file; # comments; [section] headers ignored.
inline std::map<std::string, std::string> parse_config(const std::string& text) {
  std::map<std::string, std::string> cfg;
  std::istringstream in(text);
  std::string line;
  auto trim = [](std::string s) {
    const char* ws = " \t\r";
    const auto b = s.find_first_not_of(ws);
    if (b == std::string::npos) return std::string();
    const auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
  };
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty() || line[0] == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("config line without '=': " + line);
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    if (key.empty()) throw DataError("config line with empty key");
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"')
      val = val.substr(1, val.size() - 2);
    cfg[key] = val;
  }
  return cfg;
}

// -------------------------------------------------------------------- CSV

inline std::string error_curve_csv(const ErrorCurve& curve) {
  std::ostringstream out;
  out << "threshold,fraction\n";
  for (size_t i = 0; i < curve.thresholds.size(); ++i)
    out << fmt_g17(curve.thresholds[i]) << "," << fmt_g17(curve.fractions[i])
        << "\n";
  return out.str();
}

} // namespace prodmap
