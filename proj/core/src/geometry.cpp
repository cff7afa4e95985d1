#include "dseg/geometry.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

namespace dseg {

Plane plane_from_string(const std::string& s) {
  if (s == "xy") return Plane::xy;
  if (s == "xz") return Plane::xz;
  if (s == "yz") return Plane::yz;
  fail("unknown plane '" + s + "' (expected xy|xz|yz)");
}

std::string to_string(Plane p) {
  switch (p) {
    case Plane::xy: return "xy";
    case Plane::xz: return "xz";
    case Plane::yz: return "yz";
  }
  return "?";
}

std::array<double, 2> Homography::apply(double x, double y) const {
  const double u = h[0] * x + h[1] * y + h[2];
  const double v = h[3] * x + h[4] * y + h[5];
  const double w = h[6] * x + h[7] * y + h[8];
  require(std::abs(w) > 1e-300, "homography maps point to infinity");
  return {u / w, v / w};
}

double Homography::det() const {
  return h[0] * (h[4] * h[8] - h[5] * h[7]) - h[1] * (h[3] * h[8] - h[5] * h[6]) +
         h[2] * (h[3] * h[7] - h[4] * h[6]);
}

Homography Homography::inverse() const {
  const double d = det();
  require(std::abs(d) > 1e-12, "homography is singular (|det| = " + std::to_string(std::abs(d)) + ")");
  Homography inv;
  inv.h[0] = (h[4] * h[8] - h[5] * h[7]) / d;
  inv.h[1] = (h[2] * h[7] - h[1] * h[8]) / d;
  inv.h[2] = (h[1] * h[5] - h[2] * h[4]) / d;
  inv.h[3] = (h[5] * h[6] - h[3] * h[8]) / d;
  inv.h[4] = (h[0] * h[8] - h[2] * h[6]) / d;
  inv.h[5] = (h[2] * h[3] - h[0] * h[5]) / d;
  inv.h[6] = (h[3] * h[7] - h[4] * h[6]) / d;
  inv.h[7] = (h[1] * h[6] - h[0] * h[7]) / d;
  inv.h[8] = (h[0] * h[4] - h[1] * h[3]) / d;
  // Renormalize to h22 == 1 when possible.
  const double w = inv.h[8];
  if (std::abs(w) > 1e-300)
    for (double& x : inv.h) x /= w;
  return inv;
}

void CornerSet::check() const {
  require(target_w >= 2 && target_h >= 2, "target rectangle must be at least 2x2 pixels");
  // No three of the four corners may be collinear.
  for (int skip = 0; skip < 4; ++skip) {
    std::array<std::array<double, 2>, 3> p;
    int k = 0;
    for (int i = 0; i < 4; ++i)
      if (i != skip) p[k++] = src[i];
    const double cross = (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) -
                         (p[1][1] - p[0][1]) * (p[2][0] - p[0][0]);
    require(std::abs(cross) > 1e-9, "degenerate corner set: three corners are collinear");
  }
}

CornerSet read_corner_set(const std::string& path, Plane* plane_out) {
  std::ifstream f(path);
  require(f.good(), "cannot open corner set " + path);
  nlohmann::json doc;
  try {
    f >> doc;
  } catch (const nlohmann::json::exception& e) {
    fail("malformed corner set " + path + ": " + e.what());
  }
  CornerSet c;
  const auto& src = doc.at("src");
  require(src.is_array() && src.size() == 4, "corner set must list 4 source points");
  for (int i = 0; i < 4; ++i) {
    c.src[i][0] = src[i][0].get<double>();
    c.src[i][1] = src[i][1].get<double>();
  }
  c.target_w = doc.at("target")[0].get<int64_t>();
  c.target_h = doc.at("target")[1].get<int64_t>();
  if (plane_out) *plane_out = plane_from_string(doc.value("plane", "xy"));
  c.check();
  return c;
}

void write_corner_set(const CornerSet& corners, Plane plane, const std::string& path) {
  nlohmann::json doc;
  doc["plane"] = to_string(plane);
  doc["src"] = {corners.src[0], corners.src[1], corners.src[2], corners.src[3]};
  doc["target"] = {corners.target_w, corners.target_h};
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  std::ofstream f(path, std::ios::binary);
  require(f.good(), "cannot write corner set " + path);
  f << doc.dump(2) << "\n";
}

namespace {

// Gaussian elimination with partial pivoting on an n x (n+1) augmented
// system; reports the pivot ratio as a condition estimate on failure.
void solve_linear(std::vector<double>& a, int n, std::vector<double>& out) {
  const int cols = n + 1;
  double max_pivot = 0.0;
  for (int col = 0; col < n; ++col) {
    int best = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * cols + col]) > std::abs(a[best * cols + col])) best = r;
    for (int c = 0; c < cols; ++c) std::swap(a[col * cols + c], a[best * cols + c]);
    const double pivot = a[col * cols + col];
    max_pivot = std::max(max_pivot, std::abs(pivot));
    if (std::abs(pivot) < 1e-12 * std::max(1.0, max_pivot))
      fail("singular DLT system (pivot ratio " +
           std::to_string(std::abs(pivot) / std::max(1e-300, max_pivot)) + ")");
    for (int r = col + 1; r < n; ++r) {
      const double factor = a[r * cols + col] / pivot;
      for (int c = col; c < cols; ++c) a[r * cols + c] -= factor * a[col * cols + c];
    }
  }
  out.assign(n, 0.0);
  for (int r = n - 1; r >= 0; --r) {
    double acc = a[r * cols + n];
    for (int c = r + 1; c < n; ++c) acc -= a[r * cols + c] * out[c];
    out[r] = acc / a[r * cols + r];
  }
}

struct Similarity {
  double scale = 1.0, cx = 0.0, cy = 0.0;  // p' = scale * (p - c)
};

Similarity normalizer(const std::array<std::array<double, 2>, 4>& pts) {
  Similarity s;
  for (const auto& p : pts) {
    s.cx += p[0];
    s.cy += p[1];
  }
  s.cx /= 4.0;
  s.cy /= 4.0;
  double mean_dist = 0.0;
  for (const auto& p : pts)
    mean_dist += std::hypot(p[0] - s.cx, p[1] - s.cy);
  mean_dist /= 4.0;
  s.scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  return s;
}

}  // namespace

Homography estimate_homography(const CornerSet& corners) {
  corners.check();
  const std::array<std::array<double, 2>, 4> dst = {{{0.0, 0.0},
                                                     {static_cast<double>(corners.target_w - 1), 0.0},
                                                     {static_cast<double>(corners.target_w - 1),
                                                      static_cast<double>(corners.target_h - 1)},
                                                     {0.0, static_cast<double>(corners.target_h - 1)}}};
  const Similarity ns = normalizer(corners.src);
  const Similarity nt = normalizer(dst);

  // Eight equations in the eight unknowns of H with h22 fixed to 1.
  std::vector<double> a(8 * 9, 0.0);
  for (int i = 0; i < 4; ++i) {
    const double x = ns.scale * (corners.src[i][0] - ns.cx);
    const double y = ns.scale * (corners.src[i][1] - ns.cy);
    const double u = nt.scale * (dst[i][0] - nt.cx);
    const double v = nt.scale * (dst[i][1] - nt.cy);
    double* r0 = a.data() + (2 * i) * 9;
    double* r1 = a.data() + (2 * i + 1) * 9;
    r0[0] = x; r0[1] = y; r0[2] = 1; r0[6] = -x * u; r0[7] = -y * u; r0[8] = u;
    r1[3] = x; r1[4] = y; r1[5] = 1; r1[6] = -x * v; r1[7] = -y * v; r1[8] = v;
  }
  std::vector<double> hv;
  solve_linear(a, 8, hv);

  // Denormalize: H = Tt^-1 . H~ . Ts
  const std::array<double, 9> hn = {hv[0], hv[1], hv[2], hv[3], hv[4], hv[5], hv[6], hv[7], 1.0};
  const std::array<double, 9> ts = {ns.scale, 0, -ns.scale * ns.cx, 0, ns.scale, -ns.scale * ns.cy, 0, 0, 1};
  const std::array<double, 9> tt_inv = {1.0 / nt.scale, 0, nt.cx, 0, 1.0 / nt.scale, nt.cy, 0, 0, 1};
  auto matmul3 = [](const std::array<double, 9>& m, const std::array<double, 9>& n) {
    std::array<double, 9> r{};
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) r[i * 3 + j] += m[i * 3 + k] * n[k * 3 + j];
    return r;
  };
  std::array<double, 9> h = matmul3(tt_inv, matmul3(hn, ts));
  require(std::abs(h[8]) > 1e-12, "degenerate homography after denormalization");
  const double w = h[8];
  for (double& x : h) x /= w;
  Homography result;
  result.h = h;
  require(std::abs(result.det()) > 1e-12, "estimated homography is singular");
  return result;
}

namespace {

// Slice geometry for a plane: which axes form (row, col) and which axis is
// iterated. Plane xy -> (row=y, col=x) over z; xz -> (row=z, col=x) over y;
// yz -> (row=z, col=y) over x.
struct SliceAxes {
  int ortho;  // axis index into dims (0=z,1=y,2=x)
  int row;
  int col;
};

SliceAxes slice_axes(Plane p) {
  switch (p) {
    case Plane::xy: return {0, 1, 2};
    case Plane::xz: return {1, 0, 2};
    case Plane::yz: return {2, 0, 1};
  }
  return {0, 1, 2};
}

double sample_at(const VolumeGrid& v, const SliceAxes& ax, int64_t slice, int64_t row, int64_t col) {
  int64_t zyx[3];
  zyx[ax.ortho] = slice;
  zyx[ax.row] = row;
  zyx[ax.col] = col;
  return v.at(zyx[0], zyx[1], zyx[2]);
}

}  // namespace

VolumeGrid rectify_plane(const VolumeGrid& v, Plane plane, const Homography& h,
                         std::array<int64_t, 2> out_size) {
  v.check_consistent();
  require(out_size[0] > 0 && out_size[1] > 0, "rectify output size must be positive");
  const SliceAxes ax = slice_axes(plane);
  const int64_t slices = v.dims[ax.ortho];
  const int64_t src_h = v.dims[ax.row];
  const int64_t src_w = v.dims[ax.col];
  const int64_t out_w = out_size[0], out_h = out_size[1];

  const bool labels = v.dtype() == VoxelType::u8;
  std::array<int64_t, 3> out_dims{};
  out_dims[ax.ortho] = slices;
  out_dims[ax.row] = out_h;
  out_dims[ax.col] = out_w;
  VolumeGrid out = VolumeGrid::make(out_dims, labels ? VoxelType::u8 : VoxelType::f32,
                                    v.voxel_size_um);
  out.extras = v.extras;

  const Homography hinv = h.inverse();

  for (int64_t s = 0; s < slices; ++s) {
    for (int64_t r = 0; r < out_h; ++r) {
      for (int64_t c = 0; c < out_w; ++c) {
        const auto p = hinv.apply(static_cast<double>(c), static_cast<double>(r));
        const double sx = p[0], sy = p[1];
        double val = 0.0;
        if (labels) {
          const int64_t ix = static_cast<int64_t>(std::llround(sx));
          const int64_t iy = static_cast<int64_t>(std::llround(sy));
          if (ix >= 0 && ix < src_w && iy >= 0 && iy < src_h)
            val = sample_at(v, ax, s, iy, ix);
        } else if (sx >= 0 && sx <= src_w - 1 && sy >= 0 && sy <= src_h - 1) {
          const int64_t x0 = static_cast<int64_t>(std::floor(sx));
          const int64_t y0 = static_cast<int64_t>(std::floor(sy));
          const int64_t x1 = std::min(x0 + 1, src_w - 1);
          const int64_t y1 = std::min(y0 + 1, src_h - 1);
          const double fx = sx - x0, fy = sy - y0;
          const double v00 = sample_at(v, ax, s, y0, x0);
          const double v01 = sample_at(v, ax, s, y0, x1);
          const double v10 = sample_at(v, ax, s, y1, x0);
          const double v11 = sample_at(v, ax, s, y1, x1);
          val = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
        }
        int64_t zyx[3];
        zyx[ax.ortho] = s;
        zyx[ax.row] = r;
        zyx[ax.col] = c;
        const int64_t idx = out.index(zyx[0], zyx[1], zyx[2]);
        if (labels)
          out.as_u8()[idx] = static_cast<uint8_t>(val);
        else
          out.as_f32()[idx] = static_cast<float>(val);
      }
    }
  }
  return out;
}

VolumeGrid crop_roi(const VolumeGrid& v, std::array<int64_t, 3> lo, std::array<int64_t, 3> hi) {
  v.check_consistent();
  for (int d = 0; d < 3; ++d) {
    require(lo[d] >= 0 && lo[d] < hi[d] && hi[d] <= v.dims[d],
            "crop range [" + std::to_string(lo[d]) + "," + std::to_string(hi[d]) +
                ") out of bounds on axis " + std::to_string(d) + " (extent " +
                std::to_string(v.dims[d]) + ")");
  }
  VolumeGrid out = VolumeGrid::make({hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]}, v.dtype(),
                                    v.voxel_size_um);
  out.extras = v.extras;
  std::visit(
      [&](const auto& src) {
        auto& dst = std::get<std::decay_t<decltype(src)>>(out.data);
        const int64_t row = hi[2] - lo[2];
        for (int64_t z = lo[0]; z < hi[0]; ++z)
          for (int64_t y = lo[1]; y < hi[1]; ++y) {
            const int64_t si = v.index(z, y, lo[2]);
            const int64_t di = out.index(z - lo[0], y - lo[1], 0);
            std::copy(src.begin() + si, src.begin() + si + row, dst.begin() + di);
          }
      },
      v.data);
  return out;
}

VolumeGrid invert_grayscale(const VolumeGrid& v) {
  v.check_consistent();
  VolumeGrid out = v;
  switch (v.dtype()) {
    case VoxelType::u8:
      for (auto& x : out.as_u8()) x = static_cast<uint8_t>(255 - x);
      break;
    case VoxelType::u16:
      for (auto& x : out.as_u16()) x = static_cast<uint16_t>(65535 - x);
      break;
    case VoxelType::f32: {
      const auto& src = v.as_f32();
      float lo = src.empty() ? 0.f : src[0], hi = lo;
      for (float x : src) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
      }
      const float pivot = hi + lo;
      for (auto& x : out.as_f32()) x = pivot - x;
      break;
    }
  }
  return out;
}

}  // namespace dseg
