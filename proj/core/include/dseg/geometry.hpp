#pragma once

#include <array>
#include <string>

#include "dseg/volume.hpp"

namespace dseg {

enum class Plane { xy, xz, yz };

Plane plane_from_string(const std::string& s);
std::string to_string(Plane p);

// 3x3 projective transform, normalized so h[2][2] == 1.
struct Homography {
  std::array<double, 9> h{1, 0, 0, 0, 1, 0, 0, 0, 1};

  // Maps pixel (x, y) homogeneously.
  std::array<double, 2> apply(double x, double y) const;
  Homography inverse() const;
  double det() const;
};

// Four source-image corners in order top-left, top-right, bottom-right,
// bottom-left, plus the target rectangle extent in pixels. The target
// corners are the pixel centers (0,0), (w-1,0), (w-1,h-1), (0,h-1).
struct CornerSet {
  std::array<std::array<double, 2>, 4> src;
  int64_t target_w = 0;
  int64_t target_h = 0;

  void check() const;  // general position: no three collinear
};

// Text document: {"plane": "...", "src": [[x,y]*4], "target": [w,h]}.
CornerSet read_corner_set(const std::string& path, Plane* plane_out = nullptr);
void write_corner_set(const CornerSet& corners, Plane plane, const std::string& path);

// Normalized DLT from the four correspondences; rejects degenerate corner
// configurations with a condition estimate.
Homography estimate_homography(const CornerSet& corners);

// Inverse-warp resampling of every slice along the plane's orthogonal axis.
// Intensity volumes (u16/f32) sample bilinearly and produce f32; u8 label
// volumes sample nearest-neighbor and stay u8. Out-of-bounds reads are 0.
VolumeGrid rectify_plane(const VolumeGrid& v, Plane plane, const Homography& h,
                         std::array<int64_t, 2> out_size /* (w, h) */);

// Sub-volume copy, lo inclusive / hi exclusive, both (z,y,x).
VolumeGrid crop_roi(const VolumeGrid& v, std::array<int64_t, 3> lo, std::array<int64_t, 3> hi);

// Integer data: dtype_max - x (a bitwise involution). Float data:
// (global_max + global_min) - x.
VolumeGrid invert_grayscale(const VolumeGrid& v);

}  // namespace dseg
