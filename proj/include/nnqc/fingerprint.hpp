#pragma once

#include <array>
#include <string>
#include <vector>

#include "nnqc/grid.hpp"
#include "nnqc/volume.hpp"

namespace nnqc::fingerprint {

// Dataset statistics driving self-adaptation: resampling target, intensity
// normalization window, label count and in-plane standardization size.
struct DatasetFingerprint {
  Spacing median_spacing{1.0, 1.0, 1.0};
  std::array<double, 3> median_foreground_size{0, 0, 0};  // voxels at median spacing
  std::string orientation = "RAS";
  double intensity_lo = 0.0;  // 0.5 percentile of foreground intensities
  double intensity_hi = 1.0;  // 99.5 percentile
  int num_labels = 1;
  std::array<int, 2> target_size{256, 256};  // (h, w)
  double crop_margin = 1.25;

  void validate() const;
  std::string to_json() const;
  static DatasetFingerprint from_json(const std::string& text);
  void save(const std::string& path) const;
  static DatasetFingerprint load(const std::string& path);
  /// sha256 of the canonical JSON form; embedded in checkpoint manifests.
  std::string hash() const;
};

struct FingerprintOptions {
  std::array<int, 2> target_size{256, 256};
  std::string orientation = "RAS";
  double crop_margin = 1.25;
};

// Everything needed to map per-slice outputs back to the subject's
// original grid.
struct RestoreMeta {
  std::array<int, 3> original_shape{};   // subject's native orientation
  std::array<int, 3> canonical_shape{};  // after reorientation
  Spacing canonical_spacing{1.0, 1.0, 1.0};
  AxisTransform to_canonical;
  std::array<int, 3> resampled_shape{};
  Spacing resampled_spacing{1.0, 1.0, 1.0};
  std::array<int, 2> crop_offset{};  // (x, y); negative means padding
  int crop_size = 0;
  std::array<int, 2> target_size{};

  std::string to_json() const;
  static RestoreMeta from_json(const std::string& text);
};

struct Slice {
  ImageGrid2D image;
  MaskGrid2D mask;
  double slice_ratio = 0.0;
};

struct SlicePack {
  std::vector<Slice> slices;
  RestoreMeta meta;
};

/// Component-wise medians over subjects; intensity percentiles over
/// foreground voxels only; num_labels = max label in the dataset.
/// Throws ShapeError on an empty dataset, ConfigError when no subject has
/// any foreground voxel.
DatasetFingerprint extract_fingerprint(const std::vector<VolumePair>& dataset,
                                       const FingerprintOptions& opt = {});

/// Reorient -> resample to median spacing -> clip+rescale intensities to
/// [0,1] -> in-plane center crop/pad -> resize to target -> axial slices
/// with slice_ratio = z/(N-1) (0.5 for single-slice volumes).
SlicePack preprocess(const VolumePair& pair, const DatasetFingerprint& fp);

/// Inverse of the spatial part of preprocess for a stack of label slices.
/// Output grid has the subject's original shape.
MaskGrid3D postprocess(const std::vector<MaskGrid2D>& pgt_slices,
                       const RestoreMeta& meta);

}  // namespace nnqc::fingerprint

namespace nnqc {

// Shared resampling helpers (also used by degradation and tests).
ImageGrid2D resize_bilinear(const ImageGrid2D& src, int out_h, int out_w);
MaskGrid2D resize_nearest(const MaskGrid2D& src, int out_h, int out_w);
ImageGrid3D resample_linear(const ImageGrid3D& src, const Spacing& src_spacing,
                            const std::array<int, 3>& dst_dims,
                            const Spacing& dst_spacing);
MaskGrid3D resample_nearest(const MaskGrid3D& src, const Spacing& src_spacing,
                            const std::array<int, 3>& dst_dims,
                            const Spacing& dst_spacing);

}  // namespace nnqc
