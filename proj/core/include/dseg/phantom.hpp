#pragma once

#include "dseg/patches.hpp"
#include "dseg/volume.hpp"

namespace dseg {

// Synthetic battery cross-section: two electrode slabs along the y axis with
// electrolyte between them, dendrites growing from the electrode-electrolyte
// interfaces as branching random walks rasterized as spheres. A fraction of
// interior dendrite voxels is hollowed to electrolyte intensity (pores); the
// mask keeps them, which is exactly what plain thresholding misses.
struct PhantomConfig {
  std::array<int64_t, 3> dims{16, 512, 512};  // (nz, ny, nx)
  int64_t electrode_thickness = 64;           // slab depth along y
  int64_t dendrite_count = 12;
  double branch_prob = 0.08;     // per growth step
  double step_len = 2.5;         // voxels
  double radius_min = 2.0;       // sphere radius range
  double radius_max = 4.5;
  double mu_electrolyte = 0.35;  // intensities in [0,1]
  double mu_electrode = 0.15;
  double mu_dendrite = 0.75;
  double noise_sigma = 0.05;
  double porosity = 0.5;  // hollowing probability per interior dendrite voxel
  double voxel_size_um = 1.33;
  uint64_t seed = 0;

  void check() const;
};

struct Phantom {
  VolumeGrid volume;  // f32 intensities in [0,1]
  VolumeGrid mask;    // u8 {0,1}, exact pre-noise dendrite voxels
  int64_t dendrite_voxels = 0;  // generator bookkeeping, equals mask popcount
};

// Deterministic in cfg.seed (generator mt19937_64, recorded in the headers).
Phantom generate_phantom(const PhantomConfig& cfg);

// Slices the phantom along `axis` (0=z,1=y,2=x) and tiles each slice.
std::vector<PatchSample> phantom_to_patches(const Phantom& p, int axis, int64_t stride = kPatch,
                                            const std::string& volume_id = "phantom");

}  // namespace dseg
