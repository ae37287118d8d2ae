#include "prodmap/prodmap.hpp"

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <string>
#include <sys/wait.h>

using namespace prodmap;
namespace fs = std::filesystem;

namespace {

const std::string kCli = PRODMAP_CLI_PATH;

std::string scratch(const std::string& name) {
  static const fs::path dir = [] {
    fs::path d = PRODMAP_SCRATCH_DIR;
    fs::create_directories(d);
    return d;
  }();
  return (dir / name).string();
}

int run(const std::string& args) {
  const std::string cmd =
      kCli + " " + args + " >" + scratch("stdout.log") + " 2>" + scratch("stderr.log");
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

/// Shared fixture files; generated once per process.
struct Fixture {
  std::string meshM, meshN, gt;
  Index n = 24;

  Fixture() {
    CurvePair pair = near_isometric_curve_pair(n, 3);
    meshM = scratch("M.curve");
    meshN = scratch("N.curve");
    gt = scratch("gt.txt");
    write_curve(meshM, pair.M);
    write_curve(meshN, pair.N);
    write_pointmap(gt, pair.gt);
  }
};

const Fixture& fixture() {
  static Fixture f;
  return f;
}

} // namespace

TEST_CASE("cli: help and usage errors") {
  CHECK(run("--help") == 0);
  CHECK(run("eigs --help") == 0);
  CHECK(run("no-such-command") == 1);
  CHECK(run("assemble") == 1);                       // missing required options
  CHECK(run("eigs -k 4 --out x.pmeb") == 1);         // neither --mesh nor --op
  CHECK(run("band --mesh-m a --mesh-n b --seeds c --out d") == 1); // no radius
}

TEST_CASE("cli: assemble writes operators and a manifest") {
  const auto& f = fixture();
  REQUIRE(run("assemble " + f.meshM + " --out " + scratch("opM")) == 0);
  OperatorPair op = read_operator_pair(scratch("opM"));
  CHECK(op.n() == f.n);
  CHECK(op.W.nonZeros() == 3 * f.n);
  CHECK_FALSE(op.lumped);
  CHECK(read_file(scratch("opM.manifest.txt")).find("payload-hash") !=
        std::string::npos);

  REQUIRE(run("assemble " + f.meshM + " --lumped --out " + scratch("opM_l")) == 0);
  CHECK(read_operator_pair(scratch("opM_l")).lumped);

  CHECK(run("assemble " + scratch("nope.curve") + " --out " + scratch("x")) == 2);
}

TEST_CASE("cli: eigs is byte-deterministic and accepts both inputs") {
  const auto& f = fixture();
  const std::string common = " -k 5 --seed 7 --tol 1e-9 ";
  REQUIRE(run("eigs --mesh " + f.meshM + common + "--out " + scratch("e1.pmeb")) ==
          0);
  REQUIRE(run("eigs --mesh " + f.meshM + common + "--out " + scratch("e2.pmeb")) ==
          0);
  CHECK(read_file(scratch("e1.pmeb")) == read_file(scratch("e2.pmeb")));
  CHECK(read_file(scratch("e1.pmeb.manifest.txt")) ==
        read_file(scratch("e2.pmeb.manifest.txt")));

  EigenBasis b = read_basis(scratch("e1.pmeb"));
  CHECK(b.k() == 5);
  CHECK(b.full_dim == f.n);
  CHECK(b.residual_norms.maxCoeff() <= 1e-9);

  // same spectrum through a pre-assembled operator pair
  REQUIRE(run("assemble " + f.meshM + " --out " + scratch("opA")) == 0);
  REQUIRE(run("eigs --op " + scratch("opA") + common + "--out " +
              scratch("e3.pmeb")) == 0);
  EigenBasis b3 = read_basis(scratch("e3.pmeb"));
  CHECK((b3.eigenvalues - b.eigenvalues).cwiseAbs().maxCoeff() < 1e-9);

  CHECK(run("eigs --mesh " + f.meshM + " --op " + scratch("opA") + common +
            "--out " + scratch("e4.pmeb")) == 1);
  CHECK(run("eigs --mesh " + f.meshM + " -k 99 --out " + scratch("e5.pmeb")) == 2);
}

TEST_CASE("cli: eigs cache reproduces the exact bytes") {
  const auto& f = fixture();
  const std::string cache = scratch("cache");
  const std::string common = "eigs --mesh " + f.meshM + " -k 4 --seed 1 " +
                             "--eigs-cache " + cache + " --out ";
  REQUIRE(run(common + scratch("c1.pmeb")) == 0); // miss
  REQUIRE(run(common + scratch("c2.pmeb")) == 0); // hit
  CHECK(read_file(scratch("c1.pmeb")) == read_file(scratch("c2.pmeb")));
  CHECK(read_file(scratch("c1.pmeb.manifest.txt")) ==
        read_file(scratch("c2.pmeb.manifest.txt")));
  CHECK(read_file(scratch("stdout.log")).find("cache hit") != std::string::npos);
}

TEST_CASE("cli: product-eigs schemes") {
  const auto& f = fixture();
  const std::string meshes = " --mesh-m " + f.meshM + " --mesh-n " + f.meshN;

  REQUIRE(run("product-eigs" + meshes + " -k 6 --scheme separable --out " +
              scratch("sep.pmeb")) == 0);
  EigenBasis sep = read_basis(scratch("sep.pmeb"));
  CHECK(sep.provenance == Provenance::ProductSeparable);
  CHECK(sep.k() == 6);
  CHECK(sep.full_dim == f.n * f.n);

  REQUIRE(run("product-eigs" + meshes + " -k 4 --scheme full --out " +
              scratch("full.pmeb")) == 0);
  EigenBasis full = read_basis(scratch("full.pmeb"));
  CHECK(full.provenance == Provenance::PatchDirichlet);
  CHECK(full.support.empty());
  // the separable and full spectra agree on a product manifold
  for (Index j = 0; j < 4; ++j)
    CHECK(full.eigenvalues[j] == Catch::Approx(sep.eigenvalues[j]).margin(1e-6));
}

TEST_CASE("cli: band patches and localized bases") {
  const auto& f = fixture();
  const std::string meshes = " --mesh-m " + f.meshM + " --mesh-n " + f.meshN;
  REQUIRE(run("band" + meshes + " --seeds " + f.gt + " --area-fraction 0.3 --out " +
              scratch("band.patch")) == 0);

  OperatorPair opM = assemble(load_curve(f.meshM));
  OperatorPair opN = assemble(load_curve(f.meshN));
  ProductOperator prod = product_pair(opM, opN);
  Patch patch = patch_from_text(read_file(scratch("band.patch")), prod);
  CHECK(std::abs(patch.area_fraction - 0.3) <= 0.02 * 0.3);

  REQUIRE(run("product-eigs" + meshes + " -k 5 --scheme full --patch " +
              scratch("band.patch") + " --out " + scratch("dir.pmeb")) == 0);
  EigenBasis dir = read_basis(scratch("dir.pmeb"));
  CHECK(dir.provenance == Provenance::PatchDirichlet);
  CHECK(dir.support == patch.interior);
  CHECK(dir.eigenvalues[0] > 0.0);

  Potential V = step_potential(prod, patch, 100.0);
  write_potential(scratch("step.pot"), V, prod.nM(), prod.nN());
  REQUIRE(run("product-eigs" + meshes + " -k 3 --scheme full --potential " +
              scratch("step.pot") + " --out " + scratch("ham.pmeb")) == 0);
  CHECK(read_basis(scratch("ham.pmeb")).provenance == Provenance::Hamiltonian);

  CHECK(run("product-eigs" + meshes + " -k 3 --scheme full --patch " +
            scratch("band.patch") + " --potential " + scratch("step.pot") +
            " --out " + scratch("bad.pmeb")) == 1);
}

TEST_CASE("cli: map conversions") {
  const auto& f = fixture();
  const std::string meshes = " --mesh-m " + f.meshM + " --mesh-n " + f.meshN;

  REQUIRE(run("map-convert --in " + f.gt + " --to density" + meshes + " --out " +
              scratch("gt.density")) == 0);
  MapDensity mu = read_density(scratch("gt.density"));
  CHECK(mu.nM == f.n);
  CHECK(Index(mu.entries.size()) == f.n);

  REQUIRE(run("map-convert --in " + scratch("gt.density") +
              " --in-format density --to pointmap" + meshes + " --out " +
              scratch("gt_back.txt")) == 0);
  CHECK(read_pointmap(scratch("gt_back.txt")).targets ==
        read_pointmap(f.gt).targets);

  REQUIRE(run("eigs --mesh " + f.meshM + " -k 5 --out " + scratch("bm.pmeb")) == 0);
  REQUIRE(run("eigs --mesh " + f.meshN + " -k 4 --out " + scratch("bn.pmeb")) == 0);
  REQUIRE(run("map-convert --in " + f.gt + " --to fmap" + meshes + " --basis-m " +
              scratch("bm.pmeb") + " --basis-n " + scratch("bn.pmeb") + " --out " +
              scratch("gt.fmap")) == 0);
  FunctionalMapMatrix fm = read_fmap(scratch("gt.fmap"));
  CHECK(fm.C.rows() == 5);
  CHECK(fm.C.cols() == 4);
  CHECK(fm.truncation == Truncation::RectangularSection);
  CHECK(std::abs(fm.C(0, 0)) > 0.1); // constant-to-constant coupling

  REQUIRE(run("map-convert --in " + f.gt + " --to fmap" + meshes + " --basis-m " +
              scratch("bm.pmeb") + " --basis-n " + scratch("bn.pmeb") +
              " --truncation product-ordered --pairs 6 --out " +
              scratch("gt_po.fmap")) == 0);
  FunctionalMapMatrix po = read_fmap(scratch("gt_po.fmap"));
  CHECK(po.truncation == Truncation::ProductOrdered);
  Index nonzeros = 0;
  for (Index i = 0; i < po.C.rows(); ++i)
    for (Index j = 0; j < po.C.cols(); ++j)
      if (po.C(i, j) != 0.0) ++nonzeros;
  CHECK(nonzeros <= 6);

  CHECK(run("map-convert --in " + f.gt + " --to fmap" + meshes + " --out " +
            scratch("no_basis.fmap")) == 1);
}

TEST_CASE("cli: refine and eval pipeline") {
  const auto& f = fixture();
  const std::string meshes = " --mesh-m " + f.meshM + " --mesh-n " + f.meshN;
  PointMap gt = read_pointmap(f.gt);
  PointMap seeds = sparse_seeds(gt, 0.5, 0.0, 11, f.n);
  write_pointmap(scratch("seeds.txt"), seeds);

  const std::string refine_cmd =
      "refine" + meshes + " --init " + scratch("seeds.txt") +
      " --iterations 2 -k 12 --band-fraction 0.4 --seed 5 --gt " + f.gt;
  REQUIRE(run(refine_cmd + " --out " + scratch("ref1.txt") + " --trace " +
              scratch("tr1.csv")) == 0);
  REQUIRE(run(refine_cmd + " --out " + scratch("ref2.txt") + " --trace " +
              scratch("tr2.csv")) == 0);
  CHECK(read_file(scratch("ref1.txt")) == read_file(scratch("ref2.txt")));
  CHECK(read_file(scratch("tr1.csv")) == read_file(scratch("tr2.csv")));

  PointMap refined = read_pointmap(scratch("ref1.txt"));
  CHECK(refined.n() == f.n);
  CHECK(refined.is_total());
  CHECK(read_file(scratch("tr1.csv")).rfind("iteration,time,", 0) == 0);

  REQUIRE(run("eval --map " + scratch("ref1.txt") + " --gt " + f.gt + " --mesh " +
              f.meshN + " --out " + scratch("curve.csv")) == 0);
  std::string csv = read_file(scratch("curve.csv"));
  CHECK(csv.rfind("threshold,fraction\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 52); // header + 51 defaults

  REQUIRE(run("eval --map " + scratch("ref1.txt") + " --gt " + f.gt + " --mesh " +
              f.meshN + " --thresholds 0,0.1,0.5 --out " + scratch("curve3.csv")) ==
          0);
  std::string csv3 = read_file(scratch("curve3.csv"));
  CHECK(std::count(csv3.begin(), csv3.end(), '\n') == 4);
}

TEST_CASE("cli: config file supplies defaults, flags win") {
  const auto& f = fixture();
  atomic_write(scratch("cli.cfg"), "[eigs]\nk = 3\nseed = 9\n");
  REQUIRE(run("--config " + scratch("cli.cfg") + " eigs --mesh " + f.meshM +
              " --out " + scratch("cfg1.pmeb")) == 0);
  CHECK(read_basis(scratch("cfg1.pmeb")).k() == 3);

  REQUIRE(run("--config " + scratch("cli.cfg") + " eigs --mesh " + f.meshM +
              " -k 6 --out " + scratch("cfg2.pmeb")) == 0);
  CHECK(read_basis(scratch("cfg2.pmeb")).k() == 6);
}
