#include "oracles.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <random>
#include <set>

using namespace prodmap;

namespace {

struct DiffusionRig {
  CurveMesh cM, cN;
  ProductOperator prod;
  Patch patch;
  EigenBasis basis;

  DiffusionRig(Index n, std::uint64_t seed)
      : cM(irregular_closed_curve(n, seed)),
        cN(irregular_closed_curve(n, seed + 9)),
        prod(product_pair(assemble_1d(cM), assemble_1d(cN), true)) {
    std::vector<std::pair<Index, Index>> seeds = {{0, 0}, {n / 2, n / 2}};
    patch = band_patch_fraction(prod, AnyMesh(cM), AnyMesh(cN), seeds, 0.5, 0.1)
                .first;
    basis = patch_dirichlet_basis(prod, patch, 10);
  }

  ProductFunction bump() const {
    ProductFunction u = ProductFunction::Zero(prod.nM(), prod.nN());
    for (Index l : patch.interior) {
      auto [i, p] = prod.grid_pair(l);
      u(i, p) = 1.0 + 0.1 * double((i * 7 + p * 3) % 5);
    }
    return u;
  }
};

/// Identity-geometry circle pair whose ground truth is a rotation by `shift`.
struct CircleRig {
  CurveMesh circle;
  ProductOperator prod;
  PointMap gt;

  explicit CircleRig(Index n, Index shift)
      : circle(uniform_circle(n)),
        prod(product_pair(assemble_1d(circle), assemble_1d(circle), true)) {
    gt.targets.resize(size_t(n));
    for (Index i = 0; i < n; ++i) gt.targets[size_t(i)] = (i + shift) % n;
  }
};

} // namespace

TEST_CASE("heat diffusion semigroup and zero-time projection") {
  DiffusionRig rig(12, 1);
  ProductFunction u0 = rig.bump();

  SECTION("u(T1+T2) composes") {
    const double t1 = 0.01, t2 = 0.035;
    ProductFunction once = heat_diffuse(rig.prod, rig.basis, u0, t1 + t2);
    ProductFunction twice = heat_diffuse(
        rig.prod, rig.basis, heat_diffuse(rig.prod, rig.basis, u0, t1), t2);
    CHECK((once - twice).cwiseAbs().maxCoeff() <= 1e-10);
  }

  SECTION("T = 0 is the basis projection") {
    Eigen::VectorXd Sf = rig.prod.flat_from_grid(rig.prod.apply_mass(u0));
    ProductFunction proj =
        rig.prod.grid_from_flat(synthesize(rig.basis, expand(rig.basis, Sf)));
    ProductFunction u = heat_diffuse(rig.prod, rig.basis, u0, 0.0);
    CHECK((u - proj).cwiseAbs().maxCoeff() <= 1e-8);
    ProductFunction almost = heat_diffuse(rig.prod, rig.basis, u0, 1e-14);
    CHECK((almost - proj).cwiseAbs().maxCoeff() <= 1e-8);
  }

  SECTION("eigenfunctions decay by their own rate") {
    const Index l = 3;
    const double T = 0.02;
    ProductFunction xi = rig.prod.grid_from_flat(rig.basis.full_vector(l));
    ProductFunction uT = heat_diffuse(rig.prod, rig.basis, xi, T);
    ProductFunction want = std::exp(-T * rig.basis.eigenvalues[l]) * xi;
    CHECK((uT - want).cwiseAbs().maxCoeff() < 1e-10);
  }

  SECTION("input validation") {
    CHECK_THROWS_AS(heat_diffuse(rig.prod, rig.basis, u0, -1.0), DataError);
    EigenBasis wrong = rig.basis;
    wrong.provenance = Provenance::GlobalFactor;
    CHECK_THROWS_AS(heat_diffuse(rig.prod, wrong, u0, 0.01), DataError);
  }
}

TEST_CASE("threshold patch keeps the row-max band plus a top-q floor") {
  OperatorPair opM = assemble_1d(uniform_circle(4));
  OperatorPair opN = assemble_1d(uniform_circle(6));
  ProductOperator prod = product_pair(opM, opN, false);

  ProductFunction u = ProductFunction::Zero(4, 6);
  u.row(0) << 1.0, 0.6, 0.4, 0.1, 0.0, 0.0;
  u.row(2) << 0.0, 0.0, 0.05, 0.9, 0.0, 0.0;

  SECTION("tau rule with q = 1") {
    Patch p = threshold_patch(u, 0.5, 1, prod);
    std::set<Index> got(p.vertices.begin(), p.vertices.end());
    std::set<Index> want = {prod.grid_index(0, 0), prod.grid_index(0, 1),
                            prod.grid_index(2, 3)};
    CHECK(got == want);
  }

  SECTION("q floor overrides a tight tau") {
    Patch p = threshold_patch(u, 0.99, 3, prod);
    std::set<Index> got(p.vertices.begin(), p.vertices.end());
    // top-3 of row 0 and row 2; zero rows contribute nothing
    std::set<Index> want = {prod.grid_index(0, 0), prod.grid_index(0, 1),
                            prod.grid_index(0, 2), prod.grid_index(2, 3),
                            prod.grid_index(2, 2), prod.grid_index(2, 0)};
    CHECK(got == want);
  }

  SECTION("larger tau never enlarges the patch") {
    Patch loose = threshold_patch(u, 0.05, 1, prod);
    Patch tight = threshold_patch(u, 0.8, 1, prod);
    CHECK(std::includes(loose.vertices.begin(), loose.vertices.end(),
                        tight.vertices.begin(), tight.vertices.end()));
  }

  SECTION("validation") {
    CHECK_THROWS_AS(threshold_patch(u, 0.0, 1, prod), DataError);
    CHECK_THROWS_AS(threshold_patch(u, 1.0, 1, prod), DataError);
    CHECK_THROWS_AS(threshold_patch(u, 0.5, 0, prod), DataError);
    CHECK_THROWS_WITH(threshold_patch(ProductFunction::Zero(4, 6), 0.5, 1, prod),
                      Catch::Matchers::ContainsSubstring("diffusion vanished"));
  }
}

TEST_CASE("sharpening recovers a planted permutation") {
  const Index n = 9;
  OperatorPair op = assemble_1d(uniform_circle(n));
  ProductOperator prod = product_pair(op, op, false);

  std::mt19937_64 rng(5);
  std::vector<Index> sigma(static_cast<size_t>(n));
  std::iota(sigma.begin(), sigma.end(), Index(0));
  std::shuffle(sigma.begin(), sigma.end(), rng);

  std::uniform_real_distribution<double> noise(0.0, 0.3);
  ProductFunction u(n, n);
  for (Index i = 0; i < n; ++i)
    for (Index p = 0; p < n; ++p) u(i, p) = noise(rng);
  for (Index i = 0; i < n; ++i) u(i, sigma[size_t(i)]) = 1.0 + noise(rng);

  std::vector<Index> all(size_t(n * n));
  std::iota(all.begin(), all.end(), Index(0));
  Patch full = make_patch(prod, all);

  auto [pm, res] = sharpen_assignment(u, full);
  CHECK(pm.targets == sigma);
  CHECK(res.unmatched_rows.empty());
  CHECK(res.objective > double(n));
}

TEST_CASE("sharpening a tall grid solves the transposed problem") {
  OperatorPair opM = assemble_1d(uniform_circle(5));
  OperatorPair opN = assemble_1d(uniform_circle(3));
  ProductOperator prod = product_pair(opM, opN, false);

  ProductFunction u = ProductFunction::Zero(5, 3);
  u(0, 1) = 5.0;
  u(2, 0) = 4.0;
  u(3, 2) = 3.0;
  u(4, 2) = 2.9; // loses column 2 to row 3
  std::vector<Index> all(15);
  std::iota(all.begin(), all.end(), Index(0));
  auto [pm, res] = sharpen_assignment(u, make_patch(prod, all));

  CHECK(pm.targets[0] == 1);
  CHECK(pm.targets[2] == 0);
  CHECK(pm.targets[3] == 2);
  CHECK(pm.targets[1] == kUnmatched);
  CHECK(pm.targets[4] == kUnmatched);
  // each target used at most once
  std::set<Index> used;
  for (Index t : pm.targets)
    if (t >= 0) CHECK(used.insert(t).second);
  CHECK(res.objective == Catch::Approx(12.0));
}

TEST_CASE("auction matches brute force on dense instances") {
  std::mt19937_64 rng(11);
  for (int inst = 0; inst < 20; ++inst) {
    const Index n = 2 + Index(rng() % 7);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    Eigen::MatrixXd values(n, n);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) values(i, j) = unif(rng);

    AssignmentProblem prob;
    prob.n_rows = n;
    prob.n_cols = n;
    prob.candidates.resize(size_t(n));
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        prob.candidates[size_t(i)].emplace_back(j, values(i, j));

    auto [best_obj, best_perm] = oracles::brute_force_assignment(values);
    AssignmentResult res = auction_assign(prob);
    INFO("instance " << inst << " n " << n);
    CHECK(res.row_to_col == best_perm);
    CHECK(res.objective == best_obj);
    CHECK(res.unmatched_rows.empty());
  }
}

TEST_CASE("auction on sparse instances with a forced chain") {
  // candidates force row k to take column k even though it prefers k+1
  AssignmentProblem prob;
  prob.n_rows = 4;
  prob.n_cols = 4;
  prob.candidates = {
      {{0, 1.0}, {1, 2.0}},
      {{1, 1.0}, {2, 2.0}},
      {{2, 1.0}, {3, 2.0}},
      {{3, 1.0}},
  };
  AssignmentResult res = auction_assign(prob);
  CHECK(res.row_to_col == std::vector<Index>{0, 1, 2, 3});
  CHECK(res.objective == 4.0);
}

TEST_CASE("infeasible contention drops the least valuable row") {
  AssignmentProblem prob;
  prob.n_rows = 3;
  prob.n_cols = 2;
  prob.candidates = {
      {{0, 3.0}},
      {{0, 2.0}},
      {{0, 1.0}, {1, 0.5}},
  };
  AssignmentResult res = auction_assign(prob);
  // column 1 only suits row 2, so a maximum matching pairs row 2 with it
  // and column 0 goes to the best bidder among rows 0 and 1
  CHECK(res.row_to_col == std::vector<Index>{0, kUnmatched, 1});
  CHECK(res.unmatched_rows == std::vector<Index>{1});
  CHECK(res.objective == 3.5);

  AssignmentProblem bad = prob;
  bad.candidates[0][0].first = 9;
  CHECK_THROWS_AS(auction_assign(bad), DataError);
}

TEST_CASE("refinement keeps an already perfect map") {
  CircleRig rig(20, 7);
  Eigen::VectorXd massN = rig.prod.factor_N().lumped_masses();
  MapDensity init = density_from_pointmap(rig.gt, massN);

  RefineConfig cfg;
  cfg.iterations = 3;
  cfg.k = 8;
  cfg.initial_patch = band_patch(rig.prod, AnyMesh(rig.circle), AnyMesh(rig.circle),
                                 seeds_from_pointmap(rig.gt), 0.8);

  auto [pm, trace] = refine(init, rig.prod, AnyMesh(rig.circle),
                            AnyMesh(rig.circle), cfg, &rig.gt);
  CHECK(pm.targets == rig.gt.targets);
  REQUIRE_FALSE(trace.rows.empty());
  CHECK(trace.rows.back().mean_err == 0.0);
  for (size_t r = 1; r < trace.rows.size(); ++r) {
    CHECK(trace.rows[r].patch_fraction <= trace.rows[r - 1].patch_fraction + 1e-12);
    CHECK(trace.rows[r].time < trace.rows[r - 1].time);
  }
  CHECK(Index(trace.rows.size()) <= cfg.iterations);
}

TEST_CASE("refinement repairs corrupted seeds") {
  CircleRig rig(24, 5);
  PointMap noisy = sparse_seeds(rig.gt, 1.0, 0.25, 3, 24);
  Eigen::VectorXd massN = rig.prod.factor_N().lumped_masses();
  MapDensity init = density_from_pointmap(noisy, massN);

  auto [in_mean, in_max] =
      geodesic_error_mean_max(noisy, rig.gt, AnyMesh(rig.circle));
  REQUIRE(in_mean > 0.0);

  RefineConfig cfg;
  cfg.iterations = 4;
  cfg.k = 10;
  cfg.initial_patch = band_patch(rig.prod, AnyMesh(rig.circle), AnyMesh(rig.circle),
                                 seeds_from_pointmap(noisy), 1.0);

  auto [pm, trace] = refine(init, rig.prod, AnyMesh(rig.circle),
                            AnyMesh(rig.circle), cfg, &rig.gt);
  auto [out_mean, out_max] =
      geodesic_error_mean_max(pm, rig.gt, AnyMesh(rig.circle));
  CHECK(pm.is_total());
  CHECK(out_mean < in_mean);
}

TEST_CASE("refinement is deterministic") {
  CircleRig rig(16, 3);
  PointMap noisy = sparse_seeds(rig.gt, 0.8, 0.2, 9, 16);
  MapDensity init =
      density_from_pointmap(noisy, rig.prod.factor_N().lumped_masses());
  RefineConfig cfg;
  cfg.iterations = 2;
  cfg.k = 6;
  cfg.initial_patch = band_patch(rig.prod, AnyMesh(rig.circle), AnyMesh(rig.circle),
                                 seeds_from_pointmap(noisy), 1.0);

  auto [pm1, tr1] = refine(init, rig.prod, AnyMesh(rig.circle),
                           AnyMesh(rig.circle), cfg, &rig.gt);
  auto [pm2, tr2] = refine(init, rig.prod, AnyMesh(rig.circle),
                           AnyMesh(rig.circle), cfg, &rig.gt);
  CHECK(pm1.targets == pm2.targets);
  CHECK(trace_csv(tr1) == trace_csv(tr2));
  CHECK(trace_csv(tr1).rfind("iteration,time,patch_fraction,objective,", 0) == 0);
}

TEST_CASE("refinement validates its inputs") {
  CircleRig rig(12, 1);
  Eigen::VectorXd massN = rig.prod.factor_N().lumped_masses();
  MapDensity init = density_from_pointmap(rig.gt, massN);
  AnyMesh m(rig.circle);

  RefineConfig cfg;
  cfg.iterations = 0;
  CHECK_THROWS_AS(refine(init, rig.prod, m, m, cfg), DataError);
  cfg = {};
  cfg.tau = 1.5;
  CHECK_THROWS_AS(refine(init, rig.prod, m, m, cfg), DataError);
  cfg = {};
  cfg.t_max = 0.1;
  cfg.t_min = 0.2;
  CHECK_THROWS_AS(refine(init, rig.prod, m, m, cfg), DataError);
  cfg = {};
  MapDensity empty;
  empty.nM = 12;
  empty.nN = 12;
  CHECK_THROWS_AS(refine(empty, rig.prod, m, m, cfg), DataError);
}
