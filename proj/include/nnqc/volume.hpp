#pragma once

#include <array>
#include <string>

#include "nnqc/grid.hpp"

namespace nnqc {

using Spacing = std::array<double, 3>;  // mm per voxel step along x, y, z

// 4x4 voxel-index -> world (mm) affine, row-major.
struct Affine {
  std::array<std::array<double, 4>, 4> m{};

  static Affine identity_scaled(const Spacing& s) {
    Affine a;
    a.m[0][0] = s[0];
    a.m[1][1] = s[1];
    a.m[2][2] = s[2];
    a.m[3][3] = 1.0;
    return a;
  }
};

// Permutation + flips taking a voxel grid to another orientation.
// dst axis i reads from src axis perm[i]; flip[i] reverses that axis first.
struct AxisTransform {
  std::array<int, 3> perm{0, 1, 2};
  std::array<bool, 3> flip{false, false, false};

  bool is_identity() const {
    return perm == std::array<int, 3>{0, 1, 2} &&
           flip == std::array<bool, 3>{false, false, false};
  }
  AxisTransform inverse() const;
};

/// Orientation code ("RAS", "LPI", ...) of an affine: one letter per voxel
/// axis naming the world direction that axis mostly points to.
std::string orientation_code(const Affine& a);

/// Transform that reorients a grid from `code` to `target` (both 3-letter
/// axis codes). Throws ConfigError on malformed codes.
AxisTransform reorient_transform(const std::string& code,
                                 const std::string& target);

template <typename T>
Grid3D<T> apply_axis_transform(const Grid3D<T>& src, const AxisTransform& t);

Spacing apply_axis_transform(const Spacing& s, const AxisTransform& t);

// One subject: image + aligned label mask, in the same voxel grid.
struct VolumePair {
  std::string subject_id;
  ImageGrid3D image;
  MaskGrid3D mask;
  Spacing spacing{1.0, 1.0, 1.0};
  std::string orientation = "RAS";

  void validate() const;
};

}  // namespace nnqc
