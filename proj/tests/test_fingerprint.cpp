#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nnqc/errors.hpp"
#include "nnqc/fingerprint.hpp"
#include "nnqc/rng.hpp"

#include <nlohmann/json.hpp>

using namespace nnqc;
using namespace nnqc::fingerprint;

namespace {

// Subject with a centered box of foreground (label 1, inner core label 2).
VolumePair boxed_subject(const std::string& id, int n, int nz, int box,
                         Spacing spacing, float fg_value = 500.0f) {
  VolumePair p;
  p.subject_id = id;
  p.spacing = spacing;
  p.orientation = "RAS";
  p.image = ImageGrid3D(n, n, nz, 100.0f);
  p.mask = MaskGrid3D(n, n, nz, 0);
  const int lo = (n - box) / 2, hi = lo + box;
  for (int z = 0; z < nz; ++z)
    for (int y = lo; y < hi; ++y)
      for (int x = lo; x < hi; ++x) {
        p.mask.at(x, y, z) = 1;
        p.image.at(x, y, z) = fg_value;
      }
  const int clo = lo + box / 3, chi = hi - box / 3;
  for (int z = 0; z < nz; ++z)
    for (int y = clo; y < chi; ++y)
      for (int x = clo; x < chi; ++x) p.mask.at(x, y, z) = 2;
  return p;
}

}  // namespace

TEST_CASE("extract_fingerprint gathers dataset statistics") {
  std::vector<VolumePair> ds;
  ds.push_back(boxed_subject("a", 32, 4, 20, {1, 1, 2}));
  ds.push_back(boxed_subject("b", 32, 6, 20, {1, 1, 4}));
  ds.push_back(boxed_subject("c", 32, 5, 20, {2, 2, 4}));

  FingerprintOptions opt;
  opt.target_size = {25, 25};
  const DatasetFingerprint fp = extract_fingerprint(ds, opt);

  CHECK(fp.median_spacing[0] == doctest::Approx(1.0));
  CHECK(fp.median_spacing[1] == doctest::Approx(1.0));
  CHECK(fp.median_spacing[2] == doctest::Approx(4.0));
  CHECK(fp.num_labels == 2);
  CHECK(fp.orientation == "RAS");
  // Box extent is 20 voxels at unit spacing; subject c contributes 40mm.
  CHECK(fp.median_foreground_size[0] == doctest::Approx(20.0));
  // Flat-intensity foreground: percentiles collapse to the plateau.
  CHECK(fp.intensity_lo == doctest::Approx(500.0));
}

TEST_CASE("fingerprint JSON uses the documented field names") {
  std::vector<VolumePair> ds{boxed_subject("a", 32, 4, 20, {1, 1, 2})};
  const DatasetFingerprint fp = extract_fingerprint(ds, {});
  const nlohmann::json j = nlohmann::json::parse(fp.to_json());
  for (const char* key : {"median_spacing", "intensity_lo", "intensity_hi",
                          "orientation", "num_labels", "target_size"})
    CHECK(j.contains(key));

  const DatasetFingerprint back = DatasetFingerprint::from_json(fp.to_json());
  CHECK(back.to_json() == fp.to_json());
  CHECK(back.hash() == fp.hash());
}

TEST_CASE("extract_fingerprint rejects degenerate datasets") {
  CHECK_THROWS_AS(extract_fingerprint({}, {}), ShapeError);

  VolumePair empty;
  empty.subject_id = "e";
  empty.image = ImageGrid3D(8, 8, 2, 0.0f);
  empty.mask = MaskGrid3D(8, 8, 2, 0);
  CHECK_THROWS_AS(extract_fingerprint({empty}, {}), ConfigError);
}

TEST_CASE("preprocess produces normalized slices with ratios") {
  std::vector<VolumePair> ds{boxed_subject("a", 32, 5, 20, {1, 1, 1})};
  FingerprintOptions opt;
  opt.target_size = {25, 25};
  const DatasetFingerprint fp = extract_fingerprint(ds, opt);

  const SlicePack pack = preprocess(ds[0], fp);
  REQUIRE(pack.slices.size() == 5);
  CHECK(pack.slices[0].slice_ratio == doctest::Approx(0.0));
  CHECK(pack.slices[2].slice_ratio == doctest::Approx(0.5));
  CHECK(pack.slices[4].slice_ratio == doctest::Approx(1.0));

  for (const Slice& s : pack.slices) {
    CHECK(s.image.h == 25);
    CHECK(s.image.w == 25);
    CHECK(s.mask.h == 25);
    const auto [mn, mx] =
        std::minmax_element(s.image.data.begin(), s.image.data.end());
    CHECK(*mn >= 0.0f);
    CHECK(*mx <= 1.0f);
    CHECK(max_value(s.mask) == 2);
  }
}

TEST_CASE("preprocess then postprocess recovers the native mask") {
  // Unit spacing and a crop window that covers the foreground exactly:
  // the full chain is lossless for the mask.
  std::vector<VolumePair> ds{boxed_subject("a", 32, 4, 20, {1, 1, 1})};
  FingerprintOptions opt;
  opt.target_size = {25, 25};  // equals the computed crop side
  const DatasetFingerprint fp = extract_fingerprint(ds, opt);

  const SlicePack pack = preprocess(ds[0], fp);
  std::vector<MaskGrid2D> slices;
  for (const Slice& s : pack.slices) slices.push_back(s.mask);
  const MaskGrid3D restored = fingerprint::postprocess(slices, pack.meta);
  CHECK(restored == ds[0].mask);
}

TEST_CASE("round trip holds across orientation changes") {
  VolumePair native = boxed_subject("a", 32, 4, 20, {1, 1, 1});
  native.orientation = "LPS";  // stored axes disagree with the canonical RAS

  std::vector<VolumePair> ds{native};
  FingerprintOptions opt;
  opt.target_size = {25, 25};
  const DatasetFingerprint fp = extract_fingerprint(ds, opt);
  CHECK(fp.orientation == "RAS");

  const SlicePack pack = preprocess(native, fp);
  std::vector<MaskGrid2D> slices;
  for (const Slice& s : pack.slices) slices.push_back(s.mask);
  const MaskGrid3D restored = fingerprint::postprocess(slices, pack.meta);
  CHECK(restored == native.mask);
}

TEST_CASE("preprocess resamples anisotropic subjects to the median grid") {
  std::vector<VolumePair> ds;
  ds.push_back(boxed_subject("a", 32, 4, 20, {1, 1, 1}));
  ds.push_back(boxed_subject("b", 32, 4, 20, {1, 1, 1}));
  ds.push_back(boxed_subject("c", 16, 8, 10, {2, 2, 0.5}));

  FingerprintOptions opt;
  opt.target_size = {25, 25};
  const DatasetFingerprint fp = extract_fingerprint(ds, opt);
  CHECK(fp.median_spacing[0] == doctest::Approx(1.0));
  CHECK(fp.median_spacing[2] == doctest::Approx(1.0));

  // Subject c: 16 voxels at 2mm -> 32 at 1mm; 8 slices at 0.5mm -> 4.
  const SlicePack pack = preprocess(ds[2], fp);
  CHECK(pack.meta.resampled_shape[0] == 32);
  CHECK(pack.meta.resampled_shape[2] == 4);
  CHECK(pack.slices.size() == 4);
}

TEST_CASE("resize helpers behave at the boundaries") {
  ImageGrid2D flat(5, 5, 0.75f);
  const ImageGrid2D up = resize_bilinear(flat, 13, 9);
  for (float v : up.data) CHECK(v == doctest::Approx(0.75f));

  MaskGrid2D m(6, 6, 0);
  m.at(2, 2) = 1;
  m.at(3, 3) = 2;
  const MaskGrid2D mz = resize_nearest(m, 18, 18);
  int labels_seen = 0;
  for (int v : mz.data) labels_seen = std::max(labels_seen, v);
  CHECK(labels_seen == 2);  // nearest never invents intermediate labels
  const MaskGrid2D back = resize_nearest(mz, 6, 6);
  CHECK(back == m);
}
