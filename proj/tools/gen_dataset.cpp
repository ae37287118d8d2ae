// Regenerates the bundled synthetic dataset under a target directory.
// The shipped data/ tree was produced by this tool; rerunning it must be
// byte-identical (fixed seeds, no timestamps).

#include "prodmap/prodmap.hpp"

#include <filesystem>
#include <iostream>

int main(int argc, char** argv) {
  using namespace prodmap;
  namespace fs = std::filesystem;
  const std::string root = argc > 1 ? argv[1] : "data";

  CurvePair curves = near_isometric_curve_pair(200, 11);
  fs::create_directories(root + "/curves200");
  write_curve(root + "/curves200/M.curve", curves.M);
  write_curve(root + "/curves200/N.curve", curves.N);
  write_pointmap(root + "/curves200/gt.txt", curves.gt);

  MeshPair meshes = near_isometric_mesh_pair(3, 5);
  fs::create_directories(root + "/spheres642");
  write_off(root + "/spheres642/M.off", meshes.M);
  write_off(root + "/spheres642/N.off", meshes.N);
  write_pointmap(root + "/spheres642/gt.txt", meshes.gt);

  atomic_write(root + "/README.md",
               "# Bundled dataset\n"
               "\n"
               "Synthetic shapes with exact ground-truth correspondence, "
               "regenerable with `gen_dataset <dir>`.\n"
               "\n"
               "- `curves200/`: two near-isometric closed curves, 200 vertices "
               "each, irregular vertex spacing. `gt.txt` maps vertex i of M to "
               "its counterpart on N (a cyclic relabeling).\n"
               "- `spheres642/`: icosphere and a radially warped copy, 642 "
               "vertices, identical connectivity, identity ground truth.\n");

  std::cout << "dataset written to " << root << "\n";
  return 0;
}
