#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace prodmap {

using Index = Eigen::Index;

/// Sentinel for "no target" in point maps and assignments.
constexpr Index kUnmatched = -1;

/// Thrown on malformed input files or invalid mesh data (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Thrown when an iterative solver fails to converge (CLI exit code 3).
struct SolverError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Closed 1D contour discretized as a 2-regular cycle graph.
/// Vertex i connects to (i+1) mod n; no boundary.
struct CurveMesh {
  Eigen::MatrixXd vertices;     // n x dim, dim in {2,3}
  Eigen::VectorXd edge_lengths; // edge i joins vertex i and (i+1) mod n

  Index n() const { return vertices.rows(); }
  double length() const { return edge_lengths.sum(); }
};

/// Manifold triangle mesh. Every edge borders one (boundary) or two
/// (interior) triangles.
struct TriMesh {
  Eigen::MatrixXd vertices; // n x 3
  Eigen::MatrixXi faces;    // m x 3

  struct Edge {
    Index a, b;            // a < b
    Index face0, face1;    // face1 = -1 on boundary edges
    Index opp0, opp1;      // vertex opposite the edge in each face
  };
  std::vector<Edge> edges; // interior and boundary, sorted by (a,b)

  Index n() const { return vertices.rows(); }
  Index num_faces() const { return faces.rows(); }
  bool is_closed() const {
    return std::all_of(edges.begin(), edges.end(),
                       [](const Edge& e) { return e.face1 >= 0; });
  }

  double face_area(Index f) const {
    Eigen::Vector3d p0 = vertices.row(faces(f, 0));
    Eigen::Vector3d p1 = vertices.row(faces(f, 1));
    Eigen::Vector3d p2 = vertices.row(faces(f, 2));
    return 0.5 * (p1 - p0).cross(p2 - p0).norm();
  }
  double total_area() const {
    double a = 0;
    for (Index f = 0; f < num_faces(); ++f) a += face_area(f);
    return a;
  }
};

using AnyMesh = std::variant<CurveMesh, TriMesh>;

inline CurveMesh make_curve(Eigen::MatrixXd vertices) {
  if (vertices.rows() < 3)
    throw DataError("curve needs at least 3 points, got " +
                    std::to_string(vertices.rows()));
  if (vertices.cols() != 2 && vertices.cols() != 3)
    throw DataError("curve points must live in 2 or 3 dimensions");
  CurveMesh m;
  m.vertices = std::move(vertices);
  const Index n = m.vertices.rows();
  m.edge_lengths.resize(n);
  for (Index i = 0; i < n; ++i) {
    double len = (m.vertices.row((i + 1) % n) - m.vertices.row(i)).norm();
    if (!(len > 0.0))
      throw DataError("zero-length edge between points " + std::to_string(i) +
                      " and " + std::to_string((i + 1) % n));
    m.edge_lengths[i] = len;
  }
  return m;
}

/// Plain-text polyline: one point per line ("x y" or "x y z"), closure
/// implied from last point back to the first. '#' starts a comment.
inline CurveMesh load_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open curve file: " + path);
  std::vector<Eigen::Vector3d> pts;
  int dim = 0;
  std::string line;
  Index lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    double x, y, z;
    if (!(ls >> x)) continue; // blank line
    if (!(ls >> y))
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": expected at least 2 coordinates");
    int d = ls >> z ? 3 : 2;
    if (dim == 0) dim = d;
    if (d != dim)
      throw DataError(path + ":" + std::to_string(lineno) +
                      ": inconsistent point dimension");
    pts.emplace_back(x, y, d == 3 ? z : 0.0);
  }
  if (pts.size() < 3)
    throw DataError(path + ": fewer than 3 points");
  Eigen::MatrixXd V(pts.size(), dim);
  for (size_t i = 0; i < pts.size(); ++i)
    V.row(i) = pts[i].head(dim).transpose();
  return make_curve(std::move(V));
}

inline TriMesh make_trimesh(Eigen::MatrixXd vertices, Eigen::MatrixXi faces) {
  TriMesh m;
  m.vertices = std::move(vertices);
  m.faces = std::move(faces);
  const Index n = m.n(), nf = m.num_faces();
  if (n < 3 || nf < 1) throw DataError("triangle mesh needs vertices and faces");

  double mean_area = 0;
  for (Index f = 0; f < nf; ++f) {
    for (int c = 0; c < 3; ++c) {
      Index v = m.faces(f, c);
      if (v < 0 || v >= n)
        throw DataError("face " + std::to_string(f) +
                        " references out-of-range vertex " + std::to_string(v));
    }
    if (m.faces(f, 0) == m.faces(f, 1) || m.faces(f, 1) == m.faces(f, 2) ||
        m.faces(f, 0) == m.faces(f, 2))
      throw DataError("face " + std::to_string(f) + " repeats a vertex");
    mean_area += m.face_area(f);
  }
  mean_area /= double(nf);

  std::map<std::pair<Index, Index>, std::vector<std::pair<Index, Index>>> emap;
  std::map<std::array<Index, 3>, Index> seen_faces;
  for (Index f = 0; f < nf; ++f) {
    if (!(m.face_area(f) > 1e-12 * mean_area))
      throw DataError("degenerate (zero-area) face " + std::to_string(f));
    std::array<Index, 3> key{m.faces(f, 0), m.faces(f, 1), m.faces(f, 2)};
    std::sort(key.begin(), key.end());
    if (!seen_faces.emplace(key, f).second)
      throw DataError("duplicate face " + std::to_string(f));
    for (int c = 0; c < 3; ++c) {
      Index a = m.faces(f, c), b = m.faces(f, (c + 1) % 3);
      Index opp = m.faces(f, (c + 2) % 3);
      if (a > b) std::swap(a, b);
      emap[{a, b}].emplace_back(f, opp);
    }
  }
  m.edges.reserve(emap.size());
  for (const auto& [key, inc] : emap) {
    if (inc.size() > 2)
      throw DataError("non-manifold edge (" + std::to_string(key.first) + "," +
                      std::to_string(key.second) + ") with " +
                      std::to_string(inc.size()) + " incident faces");
    TriMesh::Edge e;
    e.a = key.first;
    e.b = key.second;
    e.face0 = inc[0].first;
    e.opp0 = inc[0].second;
    e.face1 = inc.size() == 2 ? inc[1].first : -1;
    e.opp1 = inc.size() == 2 ? inc[1].second : -1;
    m.edges.push_back(e);
  }
  return m;
}

namespace detail {

inline std::string next_data_line(std::istream& in) {
  std::string line;
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r\n") != std::string::npos) return line;
  }
  return {};
}

} // namespace detail

inline TriMesh load_off(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open OFF file: " + path);
  std::string header = detail::next_data_line(in);
  if (header.substr(0, 3) != "OFF") throw DataError(path + ": missing OFF header");
  Index nv = 0, nf = 0, ne = 0;
  {
    std::istringstream hs(header.substr(3));
    if (!(hs >> nv >> nf >> ne)) {
      std::istringstream cs(detail::next_data_line(in));
      if (!(cs >> nv >> nf >> ne)) throw DataError(path + ": malformed OFF counts");
    }
  }
  Eigen::MatrixXd V(nv, 3);
  for (Index i = 0; i < nv; ++i) {
    std::istringstream ls(detail::next_data_line(in));
    if (!(ls >> V(i, 0) >> V(i, 1) >> V(i, 2)))
      throw DataError(path + ": malformed vertex " + std::to_string(i));
  }
  Eigen::MatrixXi F(nf, 3);
  for (Index f = 0; f < nf; ++f) {
    std::istringstream ls(detail::next_data_line(in));
    Index cnt;
    if (!(ls >> cnt) || cnt != 3)
      throw DataError(path + ": face " + std::to_string(f) + " is not a triangle");
    if (!(ls >> F(f, 0) >> F(f, 1) >> F(f, 2)))
      throw DataError(path + ": malformed face " + std::to_string(f));
  }
  return make_trimesh(std::move(V), std::move(F));
}

inline TriMesh load_obj(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open OBJ file: " + path);
  std::vector<Eigen::Vector3d> verts;
  std::vector<Eigen::Vector3i> faces;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tag;
    if (!(ls >> tag)) continue;
    if (tag == "v") {
      Eigen::Vector3d p;
      if (!(ls >> p[0] >> p[1] >> p[2])) throw DataError(path + ": malformed vertex line");
      verts.push_back(p);
    } else if (tag == "f") {
      Eigen::Vector3i f;
      for (int c = 0; c < 3; ++c) {
        std::string tok;
        if (!(ls >> tok)) throw DataError(path + ": face with fewer than 3 vertices");
        f[c] = std::stol(tok.substr(0, tok.find('/'))) - 1; // OBJ is 1-based
      }
      std::string extra;
      if (ls >> extra) throw DataError(path + ": non-triangular face");
      faces.push_back(f);
    }
  }
  Eigen::MatrixXd V(verts.size(), 3);
  for (size_t i = 0; i < verts.size(); ++i) V.row(i) = verts[i];
  Eigen::MatrixXi F(faces.size(), 3);
  for (size_t i = 0; i < faces.size(); ++i) F.row(i) = faces[i];
  return make_trimesh(std::move(V), std::move(F));
}

/// Dispatch on extension: .off / .obj.
inline TriMesh load_trimesh(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  if (ext == ".off") return load_off(path);
  if (ext == ".obj") return load_obj(path);
  throw DataError("unknown triangle-mesh format: " + path);
}

/// Undirected weighted vertex adjacency used by Dijkstra and by the patch
/// boundary rules.
struct EdgeGraph {
  std::vector<std::vector<std::pair<Index, double>>> adj; // (neighbor, length)

  Index n() const { return Index(adj.size()); }
};

inline EdgeGraph edge_graph(const CurveMesh& m) {
  EdgeGraph g;
  g.adj.resize(m.n());
  for (Index i = 0; i < m.n(); ++i) {
    Index j = (i + 1) % m.n();
    g.adj[i].emplace_back(j, m.edge_lengths[i]);
    g.adj[j].emplace_back(i, m.edge_lengths[i]);
  }
  return g;
}

inline EdgeGraph edge_graph(const TriMesh& m) {
  EdgeGraph g;
  g.adj.resize(m.n());
  for (const auto& e : m.edges) {
    double len = (m.vertices.row(e.a) - m.vertices.row(e.b)).norm();
    g.adj[e.a].emplace_back(e.b, len);
    g.adj[e.b].emplace_back(e.a, len);
  }
  return g;
}

inline EdgeGraph edge_graph(const AnyMesh& m) {
  return std::visit([](const auto& mesh) { return edge_graph(mesh); }, m);
}

/// Shortest-path distances along the edge graph (Dijkstra). Unreachable
/// vertices are reported as +inf.
inline Eigen::VectorXd geodesic_distances(const EdgeGraph& g, Index source) {
  const Index n = g.n();
  if (source < 0 || source >= n) throw DataError("geodesic source out of range");
  Eigen::VectorXd dist =
      Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity());
  using Item = std::pair<double, Index>;
  std::priority_queue<Item, std::vector<Item>, std::greater<Item>> pq;
  dist[source] = 0.0;
  pq.emplace(0.0, source);
  while (!pq.empty()) {
    auto [d, u] = pq.top();
    pq.pop();
    if (d > dist[u]) continue;
    for (auto [v, len] : g.adj[u]) {
      double nd = d + len;
      if (nd < dist[v]) {
        dist[v] = nd;
        pq.emplace(nd, v);
      }
    }
  }
  return dist;
}

template <class Mesh>
Eigen::VectorXd geodesic_distances(const Mesh& m, Index source) {
  return geodesic_distances(edge_graph(m), source);
}

/// Graph diameter estimate: max distance from a fixed source and back from
/// the farthest vertex. Exact on cycles, a 2-approximation in general.
inline double approx_diameter(const EdgeGraph& g) {
  Eigen::VectorXd d0 = geodesic_distances(g, 0);
  Index far;
  d0.maxCoeff(&far);
  return geodesic_distances(g, far).maxCoeff();
}

} // namespace prodmap
