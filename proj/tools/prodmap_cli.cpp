// prodmap: assemble FEM operators, compute spectra on factor and product
// manifolds, convert map representations, build patches, refine maps, and
// evaluate correspondences. Exit codes: 0 ok, 1 usage, 2 data error,
// 3 solver failure.

#include "prodmap/prodmap.hpp"

#include <CLI11.hpp>

#include <Eigen/Core>

#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

namespace {

using namespace prodmap;
namespace fs = std::filesystem;

using KV = std::vector<std::pair<std::string, std::string>>;

AnyMesh load_mesh(const std::string& path, int dim_hint) {
  const std::string ext = fs::path(path).extension().string();
  const bool looks_2d = ext == ".off" || ext == ".obj";
  if (dim_hint == 2 || (dim_hint == 0 && looks_2d)) return load_trimesh(path);
  return load_curve(path);
}

OperatorPair assemble_any(const AnyMesh& mesh, bool lumped) {
  OperatorPair op = assemble(mesh);
  return lumped ? lump_mass(op) : op;
}

PointMap read_map_checked(const std::string& path, Index nM, Index nN) {
  PointMap pm = read_pointmap(path);
  if (nM > 0 && pm.n() != nM)
    throw DataError("point map has " + std::to_string(pm.n()) +
                    " rows, mesh has " + std::to_string(nM) + " vertices");
  pm.validate(nN);
  return pm;
}

MapDensity read_density_checked(const std::string& path, Index nM, Index nN) {
  MapDensity mu = read_density(path);
  if (mu.nM != nM || mu.nN != nN)
    throw DataError("density grid " + std::to_string(mu.nM) + "x" +
                    std::to_string(mu.nN) + " does not match meshes " +
                    std::to_string(nM) + "x" + std::to_string(nN));
  return mu;
}

std::string cache_key(const std::string& payload) {
  return hash_hex(fnv1a64(payload));
}

struct EigsArgs {
  std::string mesh, op_base, out, cache_dir;
  Index k = 8;
  double tol = 1e-8;
  std::uint64_t seed = 0;
  bool lumped = false;
  int dim = 0;
};

int run_eigs(const EigsArgs& a) {
  std::string content_sig;
  OperatorPair op;
  if (!a.mesh.empty()) {
    content_sig = read_file(a.mesh);
    op = assemble_any(load_mesh(a.mesh, a.dim), a.lumped);
  } else {
    content_sig = read_file(a.op_base + ".W.txt") + read_file(a.op_base + ".S.txt");
    op = read_operator_pair(a.op_base);
  }
  const std::string key =
      cache_key(content_sig + "|k=" + std::to_string(a.k) + "|tol=" + fmt_g17(a.tol) +
                "|seed=" + std::to_string(a.seed) +
                "|lumped=" + (a.lumped ? "1" : "0"));
  KV config{{"k", std::to_string(a.k)},
            {"tol", fmt_g17(a.tol)},
            {"seed", std::to_string(a.seed)},
            {"lumped", a.lumped ? "true" : "false"},
            {"input", a.mesh.empty() ? a.op_base : a.mesh},
            {"cache-key", key}};

  if (!a.cache_dir.empty()) {
    const fs::path cached = fs::path(a.cache_dir) / (key + ".pmeb");
    if (fs::exists(cached)) {
      const std::string bytes = read_file(cached.string());
      EigenBasis b = basis_from_bytes(bytes); // validates
      write_basis(a.out, b, config);
      std::cout << "eigs: cache hit " << key << " -> " << a.out << "\n";
      return 0;
    }
  }

  EigsOptions opts;
  opts.tol = a.tol;
  opts.seed = a.seed;
  EigenBasis b = eigs_smallest(op, a.k, opts);
  write_basis(a.out, b, config);
  if (!a.cache_dir.empty()) {
    fs::create_directories(a.cache_dir);
    atomic_write((fs::path(a.cache_dir) / (key + ".pmeb")).string(),
                 basis_to_bytes(b));
  }
  std::cout << "eigs: wrote " << a.out << " (k=" << b.k() << ", max residual "
            << b.residual_norms.maxCoeff() << ")\n";
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Correspondences as densities on product manifolds"};
  app.set_config("--config", "", "key = value file; flags take precedence");
  int threads = 1;
  app.add_option("--threads", threads, "worker thread cap (default 1)");

  // ------------------------------------------------------------- assemble
  auto* cmd_asm = app.add_subcommand("assemble", "Assemble FEM mass/stiffness");
  std::string asm_mesh, asm_out;
  int asm_dim = 0;
  bool asm_lumped = false;
  cmd_asm->add_option("mesh", asm_mesh, "mesh file (.off/.obj surface, else polyline)")
      ->required();
  cmd_asm->add_option("--dim", asm_dim, "force 1 (curve) or 2 (surface)")
      ->check(CLI::IsMember({0, 1, 2}));
  cmd_asm->add_flag("--lumped", asm_lumped, "diagonal (row-sum lumped) mass");
  cmd_asm->add_option("--out", asm_out, "output base path")->required();

  // ----------------------------------------------------------------- eigs
  auto* cmd_eigs = app.add_subcommand("eigs", "Smallest eigenpairs of one shape");
  EigsArgs ea;
  cmd_eigs->add_option("--mesh", ea.mesh, "mesh file");
  cmd_eigs->add_option("--op", ea.op_base, "operator base path (from assemble)");
  cmd_eigs->add_option("-k,--k", ea.k, "number of eigenpairs")->required();
  cmd_eigs->add_option("--tol", ea.tol, "relative residual tolerance (unitless)");
  cmd_eigs->add_option("--seed", ea.seed, "RNG seed for the solver start block");
  cmd_eigs->add_flag("--lumped", ea.lumped, "lump the mass matrix");
  cmd_eigs->add_option("--dim", ea.dim, "force mesh dimension")
      ->check(CLI::IsMember({0, 1, 2}));
  cmd_eigs->add_option("--eigs-cache", ea.cache_dir,
                       "cache directory keyed by content hash");
  cmd_eigs->add_option("--out", ea.out, "output basis file")->required();

  // --------------------------------------------------------- product-eigs
  auto* cmd_pe = app.add_subcommand("product-eigs", "Eigenbasis on a product grid");
  std::string pe_mesh_m, pe_mesh_n, pe_patch, pe_potential, pe_out, pe_scheme =
      "separable";
  Index pe_k = 8;
  double pe_tol = 1e-8;
  std::uint64_t pe_seed = 0;
  bool pe_lumped = false;
  cmd_pe->add_option("--mesh-m", pe_mesh_m, "source mesh M")->required();
  cmd_pe->add_option("--mesh-n", pe_mesh_n, "target mesh N")->required();
  cmd_pe->add_option("-k,--k", pe_k, "number of product eigenpairs")->required();
  cmd_pe->add_option("--scheme", pe_scheme, "separable | full")
      ->check(CLI::IsMember({"separable", "full"}));
  cmd_pe->add_option("--patch", pe_patch, "patch file: Dirichlet harmonics on it");
  cmd_pe->add_option("--potential", pe_potential,
                     "potential file: Hamiltonian eigenfunctions");
  cmd_pe->add_option("--tol", pe_tol, "relative residual tolerance (unitless)");
  cmd_pe->add_option("--seed", pe_seed, "RNG seed");
  cmd_pe->add_flag("--lumped", pe_lumped, "lump factor masses");
  cmd_pe->add_option("--out", pe_out, "output basis file")->required();

  // ---------------------------------------------------------- map-convert
  auto* cmd_mc = app.add_subcommand("map-convert", "Convert map representations");
  std::string mc_in, mc_in_format = "pointmap", mc_to, mc_mesh_m, mc_mesh_n,
              mc_basis_m, mc_basis_n, mc_out, mc_trunc = "rect";
  Index mc_pairs = 0;
  cmd_mc->add_option("--in", mc_in, "input map file")->required();
  cmd_mc->add_option("--in-format", mc_in_format, "pointmap | density")
      ->check(CLI::IsMember({"pointmap", "density"}));
  cmd_mc->add_option("--to", mc_to, "pointmap | density | fmap")
      ->required()
      ->check(CLI::IsMember({"pointmap", "density", "fmap"}));
  cmd_mc->add_option("--mesh-m", mc_mesh_m, "source mesh M")->required();
  cmd_mc->add_option("--mesh-n", mc_mesh_n, "target mesh N")->required();
  cmd_mc->add_option("--basis-m", mc_basis_m, "factor basis for M (fmap only)");
  cmd_mc->add_option("--basis-n", mc_basis_n, "factor basis for N (fmap only)");
  cmd_mc->add_option("--truncation", mc_trunc,
                     "rect | product-ordered (fmap index set)")
      ->check(CLI::IsMember({"rect", "product-ordered"}));
  cmd_mc->add_option("--pairs", mc_pairs,
                     "product-ordered pair count (default kM*kN)");
  cmd_mc->add_option("--out", mc_out, "output file")->required();

  // ----------------------------------------------------------------- band
  auto* cmd_band = app.add_subcommand("band", "Band patch around seed matches");
  std::string bd_mesh_m, bd_mesh_n, bd_seeds, bd_seeds_format = "pointmap", bd_out;
  double bd_radius = -1.0, bd_fraction = -1.0;
  cmd_band->add_option("--mesh-m", bd_mesh_m, "source mesh M")->required();
  cmd_band->add_option("--mesh-n", bd_mesh_n, "target mesh N")->required();
  cmd_band->add_option("--seeds", bd_seeds, "seed map file")->required();
  cmd_band->add_option("--seeds-format", bd_seeds_format, "pointmap | density")
      ->check(CLI::IsMember({"pointmap", "density"}));
  cmd_band->add_option("--radius", bd_radius,
                       "band radius, length units of sqrt(d_M^2 + d_N^2)");
  cmd_band->add_option("--area-fraction", bd_fraction,
                       "target covered area fraction in (0, 1]");
  cmd_band->add_option("--out", bd_out, "output patch file")->required();

  // --------------------------------------------------------------- refine
  auto* cmd_ref = app.add_subcommand("refine", "Blur-and-sharpen map refinement");
  std::string rf_mesh_m, rf_mesh_n, rf_init, rf_init_format = "pointmap", rf_gt,
              rf_out, rf_trace;
  RefineConfig rcfg;
  cmd_ref->add_option("--mesh-m", rf_mesh_m, "source mesh M")->required();
  cmd_ref->add_option("--mesh-n", rf_mesh_n, "target mesh N")->required();
  cmd_ref->add_option("--init", rf_init, "initial map file")->required();
  cmd_ref->add_option("--init-format", rf_init_format, "pointmap | density")
      ->check(CLI::IsMember({"pointmap", "density"}));
  cmd_ref->add_option("--t-max", rcfg.t_max,
                      "largest diffusion time, squared length units");
  cmd_ref->add_option("--t-min", rcfg.t_min,
                      "smallest diffusion time, squared length units");
  cmd_ref->add_option("--iterations", rcfg.iterations, "blur-sharpen iterations");
  cmd_ref->add_option("-k,--k", rcfg.k, "patch eigenfunctions per iteration");
  cmd_ref->add_option("--tau", rcfg.tau, "row-max keep fraction in (0, 1)");
  cmd_ref->add_option("--min-candidates", rcfg.min_candidates,
                      "per-row candidate floor");
  cmd_ref->add_option("--band-fraction", rcfg.initial_band_fraction,
                      "initial band area fraction in (0, 1]");
  cmd_ref->add_option("--tol", rcfg.eigs.tol, "eigensolver tolerance (unitless)");
  std::uint64_t rf_seed = 0;
  cmd_ref->add_option("--seed", rf_seed, "RNG seed");
  cmd_ref->add_option("--gt", rf_gt, "ground-truth point map for the trace");
  cmd_ref->add_option("--out", rf_out, "output point map")->required();
  cmd_ref->add_option("--trace", rf_trace, "trace CSV path");

  // ----------------------------------------------------------------- eval
  auto* cmd_eval = app.add_subcommand("eval", "Geodesic error curve of a map");
  std::string ev_map, ev_gt, ev_mesh, ev_out, ev_thresholds;
  cmd_eval->add_option("--map", ev_map, "computed point map")->required();
  cmd_eval->add_option("--gt", ev_gt, "ground-truth point map")->required();
  cmd_eval->add_option("--mesh", ev_mesh, "target mesh N")->required();
  cmd_eval->add_option("--thresholds", ev_thresholds,
                       "comma list, units of sqrt(area(N)); default 0..0.25");
  cmd_eval->add_option("--out", ev_out, "output CSV")->required();

  app.require_subcommand(0, 1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e); // --help and friends
    app.exit(e);
    return 1;
  }

  Eigen::setNbThreads(std::max(1, threads));

  try {
    if (cmd_asm->parsed()) {
      AnyMesh mesh = load_mesh(asm_mesh, asm_dim);
      OperatorPair op = assemble_any(mesh, asm_lumped);
      write_operator_pair(asm_out, op,
                          {{"input", asm_mesh},
                           {"dim", std::to_string(asm_dim)},
                           {"lumped", asm_lumped ? "true" : "false"}});
      std::cout << "assemble: wrote " << asm_out << ".{W,S}.txt (n=" << op.n()
                << ")\n";
      return 0;
    }
    if (cmd_eigs->parsed()) {
      if (ea.mesh.empty() == ea.op_base.empty())
        throw CLI::ValidationError("eigs", "need exactly one of --mesh / --op");
      return run_eigs(ea);
    }
    if (cmd_pe->parsed()) {
      if (!pe_patch.empty() && !pe_potential.empty())
        throw CLI::ValidationError("product-eigs",
                                   "--patch and --potential are exclusive");
      AnyMesh meshM = load_mesh(pe_mesh_m, 0), meshN = load_mesh(pe_mesh_n, 0);
      OperatorPair opM = assemble_any(meshM, pe_lumped);
      OperatorPair opN = assemble_any(meshN, pe_lumped);
      EigsOptions opts;
      opts.tol = pe_tol;
      opts.seed = pe_seed;
      KV config{{"k", std::to_string(pe_k)},
                {"scheme", pe_scheme},
                {"tol", fmt_g17(pe_tol)},
                {"seed", std::to_string(pe_seed)},
                {"lumped", pe_lumped ? "true" : "false"},
                {"mesh-m", pe_mesh_m},
                {"mesh-n", pe_mesh_n}};
      if (pe_scheme == "separable") {
        if (!pe_patch.empty() || !pe_potential.empty())
          throw CLI::ValidationError(
              "product-eigs", "patch/potential bases need --scheme full");
        const Index kf = std::min<Index>({pe_k, opM.n() - 1, opN.n() - 1});
        if (kf * kf < pe_k)
          throw DataError("k too large for separable scheme on these meshes");
        ProductOperator prod(opM, opN);
        EigenBasis bM = eigs_smallest(opM, kf, opts);
        EigenBasis bN = eigs_smallest(opN, kf, opts);
        SeparableBasis sep = separable_product_basis(bM, bN, pe_k);
        if (sep.tie_truncated)
          std::cout << "product-eigs: note: truncation falls inside a tie "
                       "group; consider a different k\n";
        EigenBasis b = sep.realize(prod);
        write_basis(pe_out, b, config);
        std::cout << "product-eigs: wrote " << pe_out << " (separable, k="
                  << b.k() << ")\n";
        return 0;
      }
      ProductOperator prod(opM, opN);
      if (prod.rows() <= kDefaultMaterializeCap) prod.materialize();
      EigenBasis b;
      if (!pe_potential.empty()) {
        Potential V = potential_from_text(read_file(pe_potential), prod.nM(),
                                          prod.nN());
        config.emplace_back("potential", pe_potential);
        b = hamiltonian_basis(prod, V, pe_k, opts);
      } else {
        Patch patch =
            pe_patch.empty()
                ? make_patch(prod, [&] {
                    std::vector<Index> all(size_t(prod.rows()));
                    std::iota(all.begin(), all.end(), 0);
                    return all;
                  }())
                : patch_from_text(read_file(pe_patch), prod);
        if (!pe_patch.empty()) config.emplace_back("patch", pe_patch);
        b = patch_dirichlet_basis(prod, patch, pe_k, opts);
      }
      write_basis(pe_out, b, config);
      std::cout << "product-eigs: wrote " << pe_out << " ("
                << provenance_name(b.provenance) << ", k=" << b.k() << ")\n";
      return 0;
    }
    if (cmd_mc->parsed()) {
      AnyMesh meshM = load_mesh(mc_mesh_m, 0), meshN = load_mesh(mc_mesh_n, 0);
      OperatorPair opM = assemble(meshM), opN = assemble(meshN);
      const Index nM = opM.n(), nN = opN.n();
      MapDensity mu = mc_in_format == "pointmap"
                          ? density_from_pointmap(
                                read_map_checked(mc_in, nM, nN),
                                opN.lumped_masses())
                          : read_density_checked(mc_in, nM, nN);
      if (mc_to == "density") {
        write_density(mc_out, mu);
        std::cout << "map-convert: wrote density " << mc_out << "\n";
        return 0;
      }
      if (mc_to == "pointmap") {
        PointMap pm = row_argmax_map(mu.grid());
        write_pointmap(mc_out, pm);
        std::cout << "map-convert: wrote point map " << mc_out << "\n";
        return 0;
      }
      if (mc_basis_m.empty() || mc_basis_n.empty())
        throw CLI::ValidationError("map-convert",
                                   "--to fmap needs --basis-m and --basis-n");
      EigenBasis bM = read_basis(mc_basis_m), bN = read_basis(mc_basis_n);
      FunctionalMapMatrix fm = fmap_from_density(mu, bM, opM, bN, opN);
      fm.basisM_ref = hash_hex(fnv1a64(read_file(mc_basis_m)));
      fm.basisN_ref = hash_hex(fnv1a64(read_file(mc_basis_n)));
      if (mc_trunc == "product-ordered") {
        fm.truncation = Truncation::ProductOrdered;
        const Index npairs = mc_pairs > 0 ? mc_pairs : bM.k() * bN.k();
        auto keep = truncation_index_sets(bM.eigenvalues, bN.eigenvalues,
                                          npairs, Truncation::ProductOrdered);
        Eigen::MatrixXd masked = Eigen::MatrixXd::Zero(fm.C.rows(), fm.C.cols());
        for (auto [i, j] : keep) masked(i, j) = fm.C(i, j);
        fm.C = masked;
      }
      write_fmap(mc_out, fm);
      std::cout << "map-convert: wrote functional map " << mc_out << "\n";
      return 0;
    }
    if (cmd_band->parsed()) {
      if ((bd_radius < 0) == (bd_fraction < 0))
        throw CLI::ValidationError("band",
                                   "need exactly one of --radius / --area-fraction");
      AnyMesh meshM = load_mesh(bd_mesh_m, 0), meshN = load_mesh(bd_mesh_n, 0);
      OperatorPair opM = assemble(meshM), opN = assemble(meshN);
      ProductOperator prod(opM, opN);
      std::vector<std::pair<Index, Index>> seeds;
      if (bd_seeds_format == "pointmap")
        seeds = seeds_from_pointmap(read_map_checked(bd_seeds, opM.n(), opN.n()));
      else
        seeds = seeds_from_density(read_density_checked(bd_seeds, opM.n(), opN.n()));
      Patch patch;
      double radius = bd_radius;
      if (bd_radius >= 0) {
        patch = band_patch(prod, meshM, meshN, seeds, bd_radius);
      } else {
        std::tie(patch, radius) =
            band_patch_fraction(prod, meshM, meshN, seeds, bd_fraction);
      }
      write_patch(bd_out, patch);
      std::cout << "band: wrote " << bd_out << " (" << patch.size()
                << " vertices, fraction " << patch.area_fraction << ", radius "
                << radius << ")\n";
      return 0;
    }
    if (cmd_ref->parsed()) {
      AnyMesh meshM = load_mesh(rf_mesh_m, 0), meshN = load_mesh(rf_mesh_n, 0);
      OperatorPair opM = assemble(meshM), opN = assemble(meshN);
      ProductOperator prod(opM, opN);
      rcfg.eigs.seed = rf_seed;
      MapDensity init =
          rf_init_format == "pointmap"
              ? density_from_pointmap(read_map_checked(rf_init, opM.n(), opN.n()),
                                      opN.lumped_masses())
              : read_density_checked(rf_init, opM.n(), opN.n());
      std::optional<PointMap> gt;
      if (!rf_gt.empty()) gt = read_map_checked(rf_gt, opM.n(), opN.n());
      auto [pm, trace] =
          refine(init, prod, meshM, meshN, rcfg, gt ? &*gt : nullptr);
      write_pointmap(rf_out, pm);
      if (!rf_trace.empty()) atomic_write(rf_trace, trace_csv(trace));
      for (const auto& w : trace.warnings) std::cout << "refine: " << w << "\n";
      std::cout << "refine: wrote " << rf_out << " (" << trace.rows.size()
                << " iterations)\n";
      return 0;
    }
    if (cmd_eval->parsed()) {
      AnyMesh meshN = load_mesh(ev_mesh, 0);
      const Index nN = std::visit([](const auto& m) { return m.n(); }, meshN);
      PointMap pm = read_map_checked(ev_map, 0, nN);
      PointMap gt = read_map_checked(ev_gt, 0, nN);
      std::vector<double> thresholds;
      if (ev_thresholds.empty()) {
        for (int i = 0; i <= 50; ++i) thresholds.push_back(0.25 * i / 50.0);
      } else {
        std::istringstream ss(ev_thresholds);
        std::string tok;
        while (std::getline(ss, tok, ',')) thresholds.push_back(std::stod(tok));
      }
      ErrorCurve curve = geodesic_error_curve(pm, gt, meshN, thresholds);
      atomic_write(ev_out, error_curve_csv(curve));
      std::cout << "eval: wrote " << ev_out << " (skipped " << curve.skipped
                << ")\n";
      return 0;
    }
    std::cout << app.help();
    return 0;
  } catch (const CLI::Error& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 2;
  } catch (const SolverError& e) {
    std::cerr << "solver failure: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
