#include "nnqc/volume.hpp"

#include <cmath>
#include <cstdlib>

namespace nnqc {

namespace {

// World axis letters for the positive/negative direction of each world row.
constexpr char kPosLetter[3] = {'R', 'A', 'S'};
constexpr char kNegLetter[3] = {'L', 'P', 'I'};

int letter_world_axis(char c, bool& positive) {
  for (int i = 0; i < 3; ++i) {
    if (c == kPosLetter[i]) {
      positive = true;
      return i;
    }
    if (c == kNegLetter[i]) {
      positive = false;
      return i;
    }
  }
  throw ConfigError(std::string("invalid orientation letter: ") + c);
}

}  // namespace

AxisTransform AxisTransform::inverse() const {
  AxisTransform inv;
  for (int i = 0; i < 3; ++i) {
    inv.perm[perm[i]] = i;
    inv.flip[perm[i]] = flip[i];
  }
  return inv;
}

std::string orientation_code(const Affine& a) {
  // Greedy assignment of voxel axes to dominant world axes, largest
  // magnitude first, so near-oblique affines still get a unique code.
  bool row_used[3] = {false, false, false};
  bool col_used[3] = {false, false, false};
  char code[4] = "???";
  for (int step = 0; step < 3; ++step) {
    double best = -1.0;
    int bi = -1, bj = -1;
    for (int i = 0; i < 3; ++i) {
      if (row_used[i]) continue;
      for (int j = 0; j < 3; ++j) {
        if (col_used[j]) continue;
        const double v = std::abs(a.m[i][j]);
        if (v > best) {
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    row_used[bi] = true;
    col_used[bj] = true;
    code[bj] = a.m[bi][bj] >= 0 ? kPosLetter[bi] : kNegLetter[bi];
  }
  return std::string(code, 3);
}

AxisTransform reorient_transform(const std::string& code,
                                 const std::string& target) {
  if (code.size() != 3 || target.size() != 3)
    throw ConfigError("orientation codes must have 3 letters");
  // world axis -> (source voxel axis, positive?)
  int src_axis[3] = {-1, -1, -1};
  bool src_pos[3] = {false, false, false};
  for (int i = 0; i < 3; ++i) {
    bool pos;
    const int w = letter_world_axis(code[i], pos);
    if (src_axis[w] != -1) throw ConfigError("degenerate orientation: " + code);
    src_axis[w] = i;
    src_pos[w] = pos;
  }
  AxisTransform t;
  bool used[3] = {false, false, false};
  for (int i = 0; i < 3; ++i) {
    bool want_pos;
    const int w = letter_world_axis(target[i], want_pos);
    if (used[w]) throw ConfigError("degenerate orientation: " + target);
    used[w] = true;
    t.perm[i] = src_axis[w];
    t.flip[i] = src_pos[w] != want_pos;
  }
  return t;
}

template <typename T>
Grid3D<T> apply_axis_transform(const Grid3D<T>& src, const AxisTransform& t) {
  const int src_dims[3] = {src.nx, src.ny, src.nz};
  Grid3D<T> dst(src_dims[t.perm[0]], src_dims[t.perm[1]], src_dims[t.perm[2]]);
  const int dn[3] = {dst.nx, dst.ny, dst.nz};
  for (int z = 0; z < dn[2]; ++z) {
    for (int y = 0; y < dn[1]; ++y) {
      for (int x = 0; x < dn[0]; ++x) {
        const int d[3] = {x, y, z};
        int s[3];
        for (int i = 0; i < 3; ++i) {
          const int v = t.flip[i] ? dn[i] - 1 - d[i] : d[i];
          s[t.perm[i]] = v;
        }
        dst.at(x, y, z) = src.at(s[0], s[1], s[2]);
      }
    }
  }
  return dst;
}

template Grid3D<float> apply_axis_transform(const Grid3D<float>&,
                                            const AxisTransform&);
template Grid3D<int> apply_axis_transform(const Grid3D<int>&,
                                          const AxisTransform&);
template Grid3D<std::uint8_t> apply_axis_transform(const Grid3D<std::uint8_t>&,
                                                   const AxisTransform&);

Spacing apply_axis_transform(const Spacing& s, const AxisTransform& t) {
  return Spacing{s[t.perm[0]], s[t.perm[1]], s[t.perm[2]]};
}

void VolumePair::validate() const {
  if (image.size() == 0)
    throw ShapeError("VolumePair: empty image for subject " + subject_id);
  if (image.nx != mask.nx || image.ny != mask.ny || image.nz != mask.nz)
    throw ShapeError("VolumePair: image/mask shape mismatch for subject " +
                     subject_id);
  if (spacing[0] <= 0 || spacing[1] <= 0 || spacing[2] <= 0)
    throw ConfigError("VolumePair: non-positive voxel spacing");
  for (int v : mask.data)
    if (v < 0) throw ConfigError("VolumePair: negative mask label");
}

}  // namespace nnqc
