#pragma once

#include "prodmap/assignment.hpp"
#include "prodmap/localize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace prodmap {

/// Spectral heat diffusion inside a patch: u_T = sum_l exp(-T g_l) <x_l, u0>_S x_l.
/// The basis must be patch-Dirichlet; the result is supported in the patch.
inline ProductFunction heat_diffuse(const ProductOperator& prod,
                                    const EigenBasis& basis,
                                    const ProductFunction& u0, double T) {
  if (basis.provenance != Provenance::PatchDirichlet)
    throw DataError("heat diffusion requires a patch-dirichlet basis");
  if (T < 0) throw DataError("heat diffusion: negative time");
  Eigen::VectorXd Sf = prod.flat_from_grid(prod.apply_mass(u0));
  Eigen::VectorXd c = expand(basis, Sf);
  for (Index l = 0; l < c.size(); ++l) c[l] *= std::exp(-T * basis.eigenvalues[l]);
  return prod.grid_from_flat(synthesize(basis, c));
}

/// Threshold the diffused field into the next patch: keep entries at or
/// above tau times the row max, plus each nonempty row's top-q entries as a
/// floor. Interior/boundary recomputed from scratch.
inline Patch threshold_patch(const ProductFunction& u, double tau, Index q,
                             const ProductOperator& prod) {
  if (tau <= 0.0 || tau >= 1.0) throw DataError("threshold: tau must be in (0, 1)");
  if (q < 1) throw DataError("threshold: q must be >= 1");
  if (u.maxCoeff() <= 0.0)
    throw DataError("diffusion vanished; reduce T or increase k");
  std::vector<Index> verts;
  std::vector<std::pair<double, Index>> row; // (-value, col) for stable top-q
  for (Index i = 0; i < u.rows(); ++i) {
    const double rmax = u.row(i).maxCoeff();
    if (rmax <= 0.0) continue;
    for (Index p = 0; p < u.cols(); ++p)
      if (u(i, p) >= tau * rmax) verts.push_back(prod.grid_index(i, p));
    row.clear();
    for (Index p = 0; p < u.cols(); ++p) row.emplace_back(-u(i, p), p);
    const Index take = std::min<Index>(q, Index(row.size()));
    std::partial_sort(row.begin(), row.begin() + take, row.end());
    for (Index t = 0; t < take; ++t)
      verts.push_back(prod.grid_index(i, row[size_t(t)].second));
  }
  return make_patch(prod, std::move(verts));
}

/// Sharpen a diffused field into a point map by sparse linear assignment
/// over the patch entries, maximizing the summed field value. When
/// n_M > n_N the transpose problem is solved and inverted.
inline std::pair<PointMap, AssignmentResult>
sharpen_assignment(const ProductFunction& u, const Patch& patch) {
  const Index nM = u.rows(), nN = u.cols();
  const bool flip = nM > nN;
  AssignmentProblem prob;
  prob.n_rows = flip ? nN : nM;
  prob.n_cols = flip ? nM : nN;
  prob.candidates.resize(size_t(prob.n_rows));
  for (Index l : patch.vertices) {
    const Index i = l / nN, p = l % nN;
    const double v = std::max(0.0, u(i, p));
    if (flip)
      prob.candidates[size_t(p)].emplace_back(i, v);
    else
      prob.candidates[size_t(i)].emplace_back(p, v);
  }
  AssignmentResult res = auction_assign(prob);
  PointMap pm;
  pm.targets.assign(size_t(nM), kUnmatched);
  if (flip) {
    for (Index p = 0; p < nN; ++p) {
      const Index i = res.row_to_col[size_t(p)];
      if (i >= 0) pm.targets[size_t(i)] = p;
    }
  } else {
    pm.targets = res.row_to_col;
  }
  return {std::move(pm), std::move(res)};
}

struct RefineConfig {
  double t_max = -1.0;   // diffusion time, squared length; <0 = auto
  double t_min = -1.0;
  Index iterations = 6;
  Index k = 100;               // patch eigenfunctions per iteration
  double tau = 0.5;            // per-row keep fraction of row max
  Index min_candidates = 16;    // per-row floor q
  double initial_band_fraction = 0.25;
  std::optional<Patch> initial_patch;
  EigsOptions eigs;

  void validate() const {
    if (iterations < 1) throw DataError("refine: iterations must be >= 1");
    if (k < 1) throw DataError("refine: k must be >= 1");
    if (tau <= 0.0 || tau >= 1.0) throw DataError("refine: tau must be in (0, 1)");
    if (min_candidates < 1) throw DataError("refine: min_candidates must be >= 1");
    if (t_max > 0 || t_min > 0) {
      if (!(t_max >= t_min && t_min > 0))
        throw DataError("refine: need t_max >= t_min > 0");
    }
  }
};

struct RefineTraceRow {
  Index iteration = 0;
  double time = 0.0;
  double patch_fraction = 0.0;
  double objective = 0.0;
  double mean_err = std::numeric_limits<double>::quiet_NaN();
  double max_err = std::numeric_limits<double>::quiet_NaN();
  double clamped_fraction = 0.0;
  Index unmatched = 0;
};

struct RefineTrace {
  std::vector<RefineTraceRow> rows;
  std::vector<std::string> warnings;
};

namespace detail {

inline std::pair<double, double>
geodesic_error_stats(const PointMap& pm, const PointMap& gt, const EdgeGraph& gN,
                     double normalizer) {
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
  if (count == 0) return {std::numeric_limits<double>::quiet_NaN(),
                          std::numeric_limits<double>::quiet_NaN()};
  return {sum / double(count), mx};
}

} // namespace detail

/// Blur-and-sharpen refinement. Each iteration diffuses the current density
/// over the patch with a logarithmically shrinking time, thresholds that
/// field into a smaller patch, and re-sharpens by linear assignment.
inline std::pair<PointMap, RefineTrace>
refine(const MapDensity& initial, const ProductOperator& prod, const AnyMesh& meshM,
       const AnyMesh& meshN, const RefineConfig& cfg_in,
       const PointMap* ground_truth = nullptr) {
  RefineConfig cfg = cfg_in;
  cfg.validate();
  if (initial.entries.empty()) throw DataError("refine: empty initial map");
  if (initial.nM != prod.nM() || initial.nN != prod.nN())
    throw DataError("refine: initial density grid mismatch");

  const EdgeGraph gM = edge_graph(meshM);
  const EdgeGraph gN = edge_graph(meshN);
  if (cfg.t_max <= 0) {
    const double diam = std::sqrt(std::pow(approx_diameter(gM), 2) +
                                  std::pow(approx_diameter(gN), 2));
    cfg.t_max = std::pow(0.1 * diam, 2);
    cfg.t_min = std::pow(0.01 * diam, 2);
  }

  RefineTrace trace;
  ProductFunction mu = initial.grid();
  PointMap pm_prev;
  const double err_norm = std::sqrt(std::visit(
      [](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, CurveMesh>)
          return m.length();
        else
          return m.total_area();
      },
      meshN));

  // Unmatched rows inherit the target of the geodesically nearest matched
  // source, nudged to a free column so the guess stays injective. Keeping
  // the map total and duplicate-free between iterations matters: a zeroed
  // row never recovers once the diffusion time drops below the row spacing,
  // and duplicated targets make neighboring rows fight over the same column
  // at the next sharpening.
  auto fill_unmatched = [&](PointMap& map, bool injective) {
    std::vector<char> used(size_t(prod.nN()), 0);
    for (Index t : map.targets)
      if (t >= 0) used[size_t(t)] = 1;
    std::vector<Index> missing;
    for (Index i = 0; i < map.n(); ++i)
      if (map.targets[size_t(i)] < 0) missing.push_back(i);
    for (Index i : missing) {
      Eigen::VectorXd d = geodesic_distances(gM, i);
      double best = std::numeric_limits<double>::infinity();
      Index best_j = kUnmatched;
      for (Index j = 0; j < map.n(); ++j)
        if (map.targets[size_t(j)] >= 0 && d[j] < best) {
          best = d[j];
          best_j = j;
        }
      if (best_j == kUnmatched) continue;
      Index t = map.targets[size_t(best_j)];
      if (injective && used[size_t(t)]) {
        Eigen::VectorXd dn = geodesic_distances(gN, t);
        double nearest = std::numeric_limits<double>::infinity();
        Index free_c = kUnmatched;
        for (Index c = 0; c < prod.nN(); ++c)
          if (!used[size_t(c)] && dn[c] < nearest) {
            nearest = dn[c];
            free_c = c;
          }
        if (free_c != kUnmatched) t = free_c;
      }
      used[size_t(t)] = 1;
      map.targets[size_t(i)] = t;
    }
  };

  Patch patch = cfg.initial_patch
                    ? *cfg.initial_patch
                    : band_patch_fraction(prod, meshM, meshN,
                                          seeds_from_density(initial),
                                          cfg.initial_band_fraction)
                          .first;

  PointMap pm;
  for (Index it = 0; it < cfg.iterations; ++it) {
    const double T =
        cfg.iterations == 1
            ? cfg.t_max
            : cfg.t_max * std::pow(cfg.t_min / cfg.t_max,
                                   double(it) / double(cfg.iterations - 1));

    const Index ni = Index(patch.interior.size());

    // zero the density outside the current patch before the blur
    ProductFunction u0 = ProductFunction::Zero(prod.nM(), prod.nN());
    for (Index l : patch.vertices) {
      auto [i, p] = prod.grid_pair(l);
      u0(i, p) = mu(i, p);
    }
    ProductFunction uT;
    if (ni < std::max<Index>(2, prod.nM())) {
      // too thin to host a map-like ridge; a degenerate basis would wipe
      // out whole rows, so pass the density through unblurred
      trace.warnings.push_back("iteration " + std::to_string(it) +
                               ": patch interior too thin, blur skipped");
      uT = u0;
    } else {
      Index k_it = cfg.k;
      if (ni <= 2 * k_it) {
        k_it = std::max<Index>(1, ni / 2);
        trace.warnings.push_back("iteration " + std::to_string(it) +
                                 ": patch interior " + std::to_string(ni) +
                                 " too small for k, reduced to " +
                                 std::to_string(k_it));
      }
      EigenBasis basis = patch_dirichlet_basis(prod, patch, k_it, cfg.eigs);
      uT = heat_diffuse(prod, basis, u0, T);
    }

    // clamp negatives, track the clamped mass share
    const ProductFunction lumped = prod.lumped_grid();
    const double total_mass = uT.cwiseAbs().cwiseProduct(lumped).sum();
    const double neg_mass = (-uT.cwiseMin(0.0)).cwiseProduct(lumped).sum();
    const double clamped_fraction = total_mass > 0 ? neg_mass / total_mass : 0.0;
    if (clamped_fraction >= 0.05)
      trace.warnings.push_back("iteration " + std::to_string(it) +
                               ": clamped mass fraction " +
                               std::to_string(clamped_fraction));
    uT = uT.cwiseMax(0.0);

    Patch next = threshold_patch(uT, cfg.tau, cfg.min_candidates, prod);
    {
      // Enforce P^(k+1) subset of P^(k), but keep each row's q best previous
      // candidates alive: a row squeezed out of the intersection can never
      // be matched again, and the assignment needs row-perfect coverage.
      std::vector<Index> inter;
      std::set_intersection(next.vertices.begin(), next.vertices.end(),
                            patch.vertices.begin(), patch.vertices.end(),
                            std::back_inserter(inter));
      std::vector<Index> per_row(size_t(prod.nM()), 0);
      for (Index l : inter) per_row[size_t(l / prod.nN())]++;
      std::vector<std::pair<double, Index>> row; // (-value, col)
      size_t pv = 0;
      for (Index i = 0; i < prod.nM(); ++i) {
        row.clear();
        while (pv < patch.vertices.size() &&
               patch.vertices[pv] < (i + 1) * prod.nN()) {
          const Index c = patch.vertices[pv++] % prod.nN();
          row.emplace_back(-uT(i, c), c);
        }
        if (per_row[size_t(i)] >= cfg.min_candidates || row.empty()) continue;
        const Index take = std::min<Index>(cfg.min_candidates, Index(row.size()));
        std::partial_sort(row.begin(), row.begin() + take, row.end());
        for (Index t = 0; t < take; ++t)
          inter.push_back(prod.grid_index(i, row[size_t(t)].second));
      }
      next = make_patch(prod, std::move(inter));
    }

    auto [pm_it, ares] = sharpen_assignment(uT, next);
    pm = std::move(pm_it);
    if (!ares.unmatched_rows.empty())
      trace.warnings.push_back("iteration " + std::to_string(it) + ": " +
                               std::to_string(ares.unmatched_rows.size()) +
                               " rows unmatched");

    RefineTraceRow row;
    row.iteration = it;
    row.time = T;
    row.patch_fraction = patch.area_fraction;
    row.objective = ares.objective;
    row.clamped_fraction = clamped_fraction;
    row.unmatched = Index(ares.unmatched_rows.size());
    if (ground_truth) {
      auto [mean_e, max_e] =
          detail::geodesic_error_stats(pm, *ground_truth, gN, err_norm);
      row.mean_err = mean_e;
      row.max_err = max_e;
    }
    trace.rows.push_back(row);

    Eigen::VectorXd massN = prod.factor_N().lumped_masses();
    mu = density_from_pointmap(pm, massN).grid();
    patch = std::move(next);

    if (pm_prev.n() > 0 && pm_prev.targets == pm.targets) break;
    pm_prev = pm;
  }
  if (Index miss = std::count(pm.targets.begin(), pm.targets.end(), kUnmatched);
      miss > 0) {
    fill_unmatched(pm, false);
    trace.warnings.push_back(std::to_string(miss) +
                             " rows left unmatched, filled from nearest matched source");
  }
  return {std::move(pm), std::move(trace)};
}

inline std::string trace_csv(const RefineTrace& trace) {
  std::ostringstream out;
  out << "iteration,time,patch_fraction,objective,mean_err,max_err,"
         "clamped_fraction,unmatched\n";
  char buf[512];
  for (const auto& r : trace.rows) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%lld\n",
                  (long long)r.iteration, r.time, r.patch_fraction, r.objective,
                  r.mean_err, r.max_err, r.clamped_fraction,
                  (long long)r.unmatched);
    out << buf;
  }
  return out.str();
}

} // namespace prodmap
