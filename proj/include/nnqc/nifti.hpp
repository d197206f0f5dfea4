#pragma once

#include <string>

#include "nnqc/volume.hpp"

namespace nnqc {

// One decoded NIfTI-1 volume. `data` is float regardless of on-disk dtype
// (scl_slope/scl_inter applied); callers round to labels where needed.
struct NiftiVolume {
  ImageGrid3D data;
  Spacing spacing{1.0, 1.0, 1.0};
  Affine affine;  // voxel -> world (sform preferred, then qform, then pixdim)
};

/// Reads a .nii or .nii.gz file (little-endian NIfTI-1, 3D or trailing
/// singleton 4D). Throws IoError on malformed input.
NiftiVolume read_nifti(const std::string& path);

/// Writes float32 data with an RAS diagonal sform/qform built from
/// `spacing`. Compresses when the path ends in .gz.
void write_nifti_image(const std::string& path, const ImageGrid3D& img,
                       const Spacing& spacing);

/// Writes labels as int16 with the same geometry conventions.
void write_nifti_mask(const std::string& path, const MaskGrid3D& mask,
                      const Spacing& spacing);

MaskGrid3D round_to_mask(const ImageGrid3D& img);

}  // namespace nnqc
