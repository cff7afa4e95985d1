#include "dseg/phantom.hpp"

#include <cmath>

namespace dseg {

void PhantomConfig::check() const {
  require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, "phantom dims must be positive");
  require(electrode_thickness > 0, "electrode thickness must be positive");
  // The slabs sit along y (the stack axis of the cell), so they must leave
  // electrolyte between them.
  require(2 * electrode_thickness < dims[1],
          "electrode slabs leave no electrolyte: 2*" + std::to_string(electrode_thickness) +
              " >= ny " + std::to_string(dims[1]));
  require(dendrite_count >= 0, "dendrite count must be nonnegative");
  require(branch_prob >= 0.0 && branch_prob < 1.0, "branch probability must lie in [0,1)");
  require(step_len > 0.0, "step length must be positive");
  require(radius_min > 0.0 && radius_min <= radius_max, "invalid sphere radius range");
  require(mu_electrolyte != mu_electrode && mu_electrolyte != mu_dendrite &&
              mu_electrode != mu_dendrite,
          "phantom intensities must be pairwise distinct");
  for (double mu : {mu_electrolyte, mu_electrode, mu_dendrite})
    require(mu >= 0.0 && mu <= 1.0, "phantom intensities must lie in [0,1]");
  require(noise_sigma >= 0.0, "noise sigma must be nonnegative");
  require(porosity >= 0.0 && porosity < 1.0, "porosity must lie in [0,1)");
  require(voxel_size_um > 0.0, "voxel size must be positive");
}

namespace {

struct Vec3 {
  double z, y, x;
};

Vec3 normalize(const Vec3& v) {
  const double n = std::sqrt(v.z * v.z + v.y * v.y + v.x * v.x);
  if (n < 1e-12) return {0, 1, 0};
  return {v.z / n, v.y / n, v.x / n};
}

Vec3 random_unit(Rng& rng) {
  return normalize({rng.normal(), rng.normal(), rng.normal()});
}

struct Walker {
  Vec3 pos;
  Vec3 dir;
  int64_t steps_left;
};

class Rasterizer {
 public:
  Rasterizer(VolumeGrid& mask, const PhantomConfig& cfg)
      : mask_(mask), cfg_(cfg), y_lo_(cfg.electrode_thickness),
        y_hi_(cfg.dims[1] - cfg.electrode_thickness) {}

  // Marks dendrite voxels inside the electrolyte band; returns newly set count.
  int64_t sphere(const Vec3& center, double radius) {
    int64_t added = 0;
    const int64_t r = static_cast<int64_t>(std::ceil(radius));
    const int64_t cz = static_cast<int64_t>(std::llround(center.z));
    const int64_t cy = static_cast<int64_t>(std::llround(center.y));
    const int64_t cx = static_cast<int64_t>(std::llround(center.x));
    auto& bits = mask_.as_u8();
    for (int64_t z = std::max<int64_t>(0, cz - r); z <= std::min(cfg_.dims[0] - 1, cz + r); ++z)
      for (int64_t y = std::max(y_lo_, cy - r); y <= std::min(y_hi_ - 1, cy + r); ++y)
        for (int64_t x = std::max<int64_t>(0, cx - r); x <= std::min(cfg_.dims[2] - 1, cx + r); ++x) {
          const double dz = z - center.z, dy = y - center.y, dx = x - center.x;
          if (dz * dz + dy * dy + dx * dx > radius * radius) continue;
          auto& bit = bits[mask_.index(z, y, x)];
          if (!bit) {
            bit = 1;
            ++added;
          }
        }
    return added;
  }

 private:
  VolumeGrid& mask_;
  const PhantomConfig& cfg_;
  int64_t y_lo_, y_hi_;
};

}  // namespace

Phantom generate_phantom(const PhantomConfig& cfg) {
  cfg.check();
  Rng rng(cfg.seed);

  Phantom p;
  p.volume = VolumeGrid::make(cfg.dims, VoxelType::f32, cfg.voxel_size_um);
  p.mask = VolumeGrid::make(cfg.dims, VoxelType::u8, cfg.voxel_size_um);

  const int64_t nz = cfg.dims[0], ny = cfg.dims[1], nx = cfg.dims[2];
  const int64_t th = cfg.electrode_thickness;
  auto& vol = p.volume.as_f32();
  auto& bits = p.mask.as_u8();

  // Electrolyte everywhere, slabs at both y extremes.
  std::fill(vol.begin(), vol.end(), static_cast<float>(cfg.mu_electrolyte));
  for (int64_t z = 0; z < nz; ++z)
    for (int64_t y = 0; y < ny; ++y) {
      if (y >= th && y < ny - th) continue;
      const int64_t base = p.volume.index(z, y, 0);
      std::fill(vol.begin() + base, vol.begin() + base + nx, static_cast<float>(cfg.mu_electrode));
    }

  // Dendrites: branching biased random walks from the two interfaces.
  Rasterizer raster(p.mask, cfg);
  const int64_t step_budget =
      static_cast<int64_t>(std::ceil(2.0 * static_cast<double>(ny - 2 * th) / cfg.step_len));
  constexpr int64_t kMaxWalkers = 64;

  for (int64_t d = 0; d < cfg.dendrite_count; ++d) {
    const bool top = rng.bernoulli(0.5);
    const double dir_sign = top ? 1.0 : -1.0;
    Walker root;
    root.pos = {rng.uniform(0.0, static_cast<double>(nz - 1)),
                top ? static_cast<double>(th) : static_cast<double>(ny - th - 1),
                rng.uniform(0.0, static_cast<double>(nx - 1))};
    root.dir = {0.0, dir_sign, 0.0};
    root.steps_left = step_budget;

    std::vector<Walker> stack{root};
    int64_t walkers = 1;
    while (!stack.empty()) {
      Walker w = stack.back();
      stack.pop_back();
      while (w.steps_left-- > 0) {
        if (w.pos.y < th || w.pos.y >= ny - th) break;  // reached a slab
        const double radius = rng.uniform(cfg.radius_min, cfg.radius_max);
        p.dendrite_voxels += raster.sphere(w.pos, radius);

        if (walkers < kMaxWalkers && rng.bernoulli(cfg.branch_prob)) {
          Walker b = w;
          b.dir = normalize({w.dir.z + rng.normal(), w.dir.y + rng.normal(), w.dir.x + rng.normal()});
          stack.push_back(b);
          ++walkers;
        }

        const Vec3 kick = random_unit(rng);
        w.dir = normalize({w.dir.z + 0.45 * kick.z, w.dir.y + 0.45 * kick.y + 0.18 * dir_sign,
                           w.dir.x + 0.45 * kick.x});
        w.pos.z += w.dir.z * cfg.step_len;
        w.pos.y += w.dir.y * cfg.step_len;
        w.pos.x += w.dir.x * cfg.step_len;
        // Bounce off the z/x faces so thin stacks keep their dendrites.
        if (w.pos.z < 0) { w.pos.z = -w.pos.z; w.dir.z = -w.dir.z; }
        if (w.pos.z > nz - 1) { w.pos.z = 2 * (nz - 1) - w.pos.z; w.dir.z = -w.dir.z; }
        if (w.pos.x < 0) { w.pos.x = -w.pos.x; w.dir.x = -w.dir.x; }
        if (w.pos.x > nx - 1) { w.pos.x = 2 * (nx - 1) - w.pos.x; w.dir.x = -w.dir.x; }
      }
    }
  }

  // Intensities: dendrite voxels take mu_dendrite, except hollowed interior
  // voxels (all six neighbors also dendrite) which fall back to electrolyte.
  for (int64_t z = 0; z < nz; ++z)
    for (int64_t y = 0; y < ny; ++y)
      for (int64_t x = 0; x < nx; ++x) {
        const int64_t i = p.mask.index(z, y, x);
        if (!bits[i]) continue;
        const bool interior = z > 0 && z < nz - 1 && y > 0 && y < ny - 1 && x > 0 && x < nx - 1 &&
                              bits[p.mask.index(z - 1, y, x)] && bits[p.mask.index(z + 1, y, x)] &&
                              bits[p.mask.index(z, y - 1, x)] && bits[p.mask.index(z, y + 1, x)] &&
                              bits[p.mask.index(z, y, x - 1)] && bits[p.mask.index(z, y, x + 1)];
        const bool hollow = interior && cfg.porosity > 0.0 && rng.bernoulli(cfg.porosity);
        vol[i] = static_cast<float>(hollow ? cfg.mu_electrolyte : cfg.mu_dendrite);
      }

  if (cfg.noise_sigma > 0.0) {
    for (auto& v : vol) {
      const double noisy = v + cfg.noise_sigma * rng.normal();
      v = static_cast<float>(std::min(std::max(noisy, 0.0), 1.0));
    }
  }

  const auto tag = [&](VolumeGrid& g) {
    g.extras["generator"] = "dseg-phantom-v1";
    g.extras["rng"] = "mt19937_64";
    g.extras["seed"] = std::to_string(cfg.seed);
    g.extras["dendrite_voxels"] = std::to_string(p.dendrite_voxels);
    g.extras["electrode_thickness"] = std::to_string(cfg.electrode_thickness);
  };
  tag(p.volume);
  tag(p.mask);
  return p;
}

std::vector<PatchSample> phantom_to_patches(const Phantom& p, int axis, int64_t stride,
                                            const std::string& volume_id) {
  const auto [h, w] = slice_extent(p.volume, axis);
  require(h >= kPatch && w >= kPatch, "phantom slices along axis " + std::to_string(axis) +
                                          " are smaller than a patch (" + std::to_string(h) + "x" +
                                          std::to_string(w) + ")");
  std::vector<PatchSample> out;
  for (int64_t s = 0; s < p.volume.dims[axis]; ++s) {
    Grid2d img = volume_slice(p.volume, axis, s);
    std::vector<uint8_t> mask = volume_mask_slice(p.mask, axis, s);
    PatchMeta base;
    base.volume_id = volume_id;
    base.slice = s;
    auto tiles = patchify(img, mask, stride, base);
    out.insert(out.end(), std::make_move_iterator(tiles.begin()),
               std::make_move_iterator(tiles.end()));
  }
  return out;
}

}  // namespace dseg
