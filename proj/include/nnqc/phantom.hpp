#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnqc/volume.hpp"

namespace nnqc::phantom {

// Synthetic nested-ellipsoid dataset used for desk-scale experiments and
// CI. In-plane cross sections shrink toward the volume ends, so the axial
// position of a slice is recoverable from its content.
struct PhantomSpec {
  int n_subjects = 40;
  int grid = 64;  // in-plane size (square)
  int min_slices = 12;
  int max_slices = 20;
  int n_classes = 2;  // nested ellipsoids, innermost has the highest label
  double noise_sigma = 32.0;
  std::uint64_t seed = 7;

  void validate() const;
};

/// Deterministic, seed-parameterized volumes; subject i depends only on
/// (seed, i). Spacing is anisotropic (1 x 1 x 2 mm), orientation RAS.
std::vector<VolumePair> generate_phantoms(const PhantomSpec& spec);

/// Writes <dir>/images/<id>.nii.gz and <dir>/labels/<id>.nii.gz.
void write_phantom_dataset(const std::vector<VolumePair>& subjects,
                           const std::string& dir);

/// Reads a dataset directory in the layout written above (any NIfTI
/// pair with matching file names).
std::vector<VolumePair> load_dataset(const std::string& dir);

}  // namespace nnqc::phantom
