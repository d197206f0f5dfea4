#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nnqc/fingerprint.hpp"
#include "nnqc/grid.hpp"

namespace nnqc::degrade {

// One of the five DSC intervals controlling degradation severity. All
// bands are half-open [lo, hi) except the top one, which includes hi.
struct QualityBand {
  double lo = 0.0;
  double hi = 1.0;
  bool hi_inclusive = false;

  bool contains(double d) const {
    return d >= lo && (d < hi || (hi_inclusive && d <= hi));
  }
  std::string tag() const;  // e.g. "0.05-0.10"
  bool operator==(const QualityBand&) const = default;
};

/// The five corpus bands, lightest last.
std::vector<QualityBand> five_bands();

/// Inverse of QualityBand::tag(); throws ConfigError on unknown tags.
QualityBand band_from_tag(const std::string& tag);

// ---------------------------------------------------------------------------
// Mask corruption operators. All are pure, shape-preserving, deterministic
// given (input, params, seed), and never invent labels absent from the input.

/// Sets `n` disk-shaped regions per nonzero class to background. Hole
/// centres are drawn from the class's own pixels, radii from
/// [radius_lo, radius_hi].
MaskGrid2D punch_holes(const MaskGrid2D& mask, int n, double radius_lo,
                       double radius_hi, std::uint64_t seed);

/// Per-class binary erosion with a 3x3 structuring element, applied
/// `iterations` times. Out-of-bounds counts as background.
MaskGrid2D erode_iterative(const MaskGrid2D& mask, int iterations,
                           std::uint64_t seed);

/// Places `n_blobs` random disks of a randomly chosen existing class onto
/// background pixels. No-op on an all-background mask.
MaskGrid2D add_false_positives(const MaskGrid2D& mask, int n_blobs,
                               std::uint64_t seed);

/// Maps every nonzero label to the smallest label present in the mask.
MaskGrid2D collapse_classes(const MaskGrid2D& mask);

/// Applies a random permutation to the set of labels present in the mask.
MaskGrid2D swap_classes(const MaskGrid2D& mask, std::uint64_t seed);

// ---------------------------------------------------------------------------

struct DegradeParams {
  int max_retries = 50;
  double escalate = 1.4;  // severity multiplier when DSC is above the band
  double backoff = 0.7;   // severity multiplier when DSC is below the band
};

struct DegradedPair {
  std::string subject_id;
  int slice_index = 0;
  ImageGrid2D image;
  MaskGrid2D gt;
  MaskGrid2D degraded;
  double slice_ratio = 0.5;
  QualityBand band;
  double achieved_dsc = 0.0;
  std::uint64_t seed = 0;
};

/// Composes 1-3 random operators per trial with a severity controller
/// until the mean foreground DSC against `gt` lands inside `band`.
/// Throws BandUnreachable (with the closest achieved DSC) after
/// params.max_retries failed trials.
DegradedPair degrade_to_band(const ImageGrid2D& image, const MaskGrid2D& gt,
                             double slice_ratio, const QualityBand& band,
                             std::uint64_t seed,
                             const DegradeParams& params = {});

// ---------------------------------------------------------------------------
// Corpus construction and persistence

struct SubjectSlices {
  std::string subject_id;
  fingerprint::SlicePack pack;
};

struct SkippedSlice {
  std::string subject_id;
  int slice_index = 0;
  QualityBand band;
  double closest_dsc = -1.0;
  std::string reason;
};

// A degradation corpus: a flat list of pairs sharing one slice shape.
// Persisted as <dir>/index.json plus <dir>/corpus.bin (image float32,
// masks int16, little-endian, offsets recorded per index entry).
struct Corpus {
  int height = 0;
  int width = 0;
  std::uint64_t seed = 0;
  std::vector<DegradedPair> pairs;

  /// Digest over the canonical serialized form (what save() writes);
  /// independent of when or where the corpus was built.
  std::string content_digest() const;

  void save(const std::string& dir) const;
  static Corpus load(const std::string& dir);
};

struct BuildResult {
  Corpus corpus;
  std::vector<SkippedSlice> skipped;
};

/// One DegradedPair per (slice, band). Per-pair seeds are derived from
/// (seed, subject, slice, band), so the result is independent of
/// iteration order. Unreachable bands are recorded, not fatal.
BuildResult build_corpus(const std::vector<SubjectSlices>& subjects,
                         const std::vector<QualityBand>& bands,
                         std::uint64_t seed,
                         const DegradeParams& params = {});

}  // namespace nnqc::degrade
