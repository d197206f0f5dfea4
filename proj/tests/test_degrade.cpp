#include <doctest.h>

#include <filesystem>
#include <set>

#include "nnqc/degrade.hpp"
#include "nnqc/digest.hpp"
#include "nnqc/errors.hpp"
#include "nnqc/metrics.hpp"
#include "nnqc/rng.hpp"

using namespace nnqc;
using namespace nnqc::degrade;

namespace {

// Disk of `label` centred in an n x n grid.
MaskGrid2D disk_mask(int n, double cx, double cy, double r, int label = 1) {
  MaskGrid2D m(n, n, 0);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      if ((x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r)
        m.at(y, x) = label;
  return m;
}

MaskGrid2D two_class_mask(int n) {
  MaskGrid2D m = disk_mask(n, n * 0.5, n * 0.5, n * 0.32, 1);
  const MaskGrid2D inner = disk_mask(n, n * 0.5, n * 0.5, n * 0.15, 2);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    if (inner.data[i]) m.data[i] = 2;
  return m;
}

std::set<int> label_set(const MaskGrid2D& m) {
  std::set<int> s;
  for (int v : m.data)
    if (v > 0) s.insert(v);
  return s;
}

int count_fg(const MaskGrid2D& m) {
  int n = 0;
  for (int v : m.data)
    if (v > 0) ++n;
  return n;
}

}  // namespace

TEST_CASE("five_bands covers the documented intervals") {
  const auto bands = five_bands();
  REQUIRE(bands.size() == 5);
  CHECK(bands.front().lo == doctest::Approx(0.05));
  CHECK(bands.back().hi == doctest::Approx(0.95));
  CHECK(bands.back().hi_inclusive);
  for (std::size_t i = 1; i < bands.size(); ++i)
    CHECK(bands[i].lo == doctest::Approx(bands[i - 1].hi));
  for (const auto& b : bands) {
    CHECK(b.contains(b.lo));
    CHECK(band_from_tag(b.tag()) == b);
  }
  CHECK_FALSE(bands[0].contains(bands[0].hi));
  CHECK(bands.back().contains(0.95));
  CHECK_THROWS_AS(band_from_tag("0.40-0.60"), ConfigError);
}

TEST_CASE("punch_holes identity, saturation, determinism") {
  const MaskGrid2D m = two_class_mask(32);
  CHECK(punch_holes(m, 0, 1, 3, 9) == m);

  // Radius beyond the grid wipes every class.
  const MaskGrid2D wiped = punch_holes(m, 1, 64, 64, 9);
  CHECK(count_fg(wiped) == 0);

  CHECK(punch_holes(m, 3, 1, 4, 123) == punch_holes(m, 3, 1, 4, 123));
  CHECK(punch_holes(m, 3, 1, 4, 123) != punch_holes(m, 3, 1, 4, 124));

  // Holes only remove pixels, never add or relabel.
  const MaskGrid2D holed = punch_holes(m, 2, 1, 5, 7);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    CHECK((holed.data[i] == m.data[i] || holed.data[i] == 0));
}

TEST_CASE("erode_iterative shrinks monotonically to extinction") {
  const MaskGrid2D m = disk_mask(32, 16, 16, 10);
  CHECK(erode_iterative(m, 0, 1) == m);

  int prev = count_fg(m);
  for (int it = 1; it <= 12; ++it) {
    const int cur = count_fg(erode_iterative(m, it, 1));
    CHECK(cur <= prev);
    prev = cur;
  }
  CHECK(count_fg(erode_iterative(m, 12, 1)) == 0);

  // Erosion of nested classes erodes each class independently.
  const MaskGrid2D tm = two_class_mask(32);
  const MaskGrid2D er = erode_iterative(tm, 1, 1);
  for (std::size_t i = 0; i < tm.data.size(); ++i)
    CHECK((er.data[i] == tm.data[i] || er.data[i] == 0));
}

TEST_CASE("add_false_positives only touches background") {
  const MaskGrid2D m = two_class_mask(32);
  const MaskGrid2D fp = add_false_positives(m, 4, 99);
  for (std::size_t i = 0; i < m.data.size(); ++i)
    if (m.data[i] != 0) CHECK(fp.data[i] == m.data[i]);
  CHECK(count_fg(fp) >= count_fg(m));

  const std::set<int> before = label_set(m);
  const std::set<int> after = label_set(fp);
  for (int v : after) CHECK(before.count(v) == 1);

  const MaskGrid2D empty(16, 16, 0);
  CHECK(add_false_positives(empty, 5, 3) == empty);
}

TEST_CASE("collapse_classes maps to the smallest present label") {
  const MaskGrid2D single = disk_mask(16, 8, 8, 5, 3);
  CHECK(collapse_classes(single) == single);  // fixed point

  const MaskGrid2D tm = two_class_mask(32);
  const MaskGrid2D collapsed = collapse_classes(tm);
  CHECK(label_set(collapsed) == std::set<int>{1});
  CHECK(count_fg(collapsed) == count_fg(tm));
}

TEST_CASE("swap_classes permutes labels; hand-checked dsc") {
  // Two disjoint squares: after a swap, neither class overlaps itself.
  MaskGrid2D m(16, 16, 0);
  for (int y = 2; y < 6; ++y)
    for (int x = 2; x < 6; ++x) m.at(y, x) = 1;
  for (int y = 10; y < 13; ++y)
    for (int x = 10; x < 13; ++x) m.at(y, x) = 2;

  std::uint64_t seed = 0;
  MaskGrid2D swapped = m;
  while (swapped == m && seed < 32) swapped = swap_classes(m, ++seed);
  REQUIRE(swapped != m);  // some seed in range forces the 2-cycle
  CHECK(metrics::dsc(swapped, m) == doctest::Approx(0.0));
  CHECK(label_set(swapped) == label_set(m));

  const MaskGrid2D single = disk_mask(16, 8, 8, 4);
  CHECK(swap_classes(single, 5) == single);
}

TEST_CASE("degrade_to_band lands in every band on a phantom slice") {
  const MaskGrid2D gt = two_class_mask(64);
  ImageGrid2D img(64, 64, 0.5f);

  for (const QualityBand& band : five_bands()) {
    const DegradedPair pair = degrade_to_band(img, gt, 0.5, band, 42);
    CHECK(band.contains(pair.achieved_dsc));
    CHECK(pair.achieved_dsc ==
          doctest::Approx(metrics::dsc(pair.degraded, gt)));
    CHECK(pair.degraded.same_shape(gt));

    // Determinism: same seed gives bit-identical output.
    const DegradedPair again = degrade_to_band(img, gt, 0.5, band, 42);
    CHECK(again.degraded == pair.degraded);
    CHECK(again.achieved_dsc == pair.achieved_dsc);
  }
}

TEST_CASE("degrade_to_band reports unreachable bands") {
  ImageGrid2D img(16, 16, 0.0f);

  MaskGrid2D empty(16, 16, 0);
  CHECK_THROWS_AS(
      degrade_to_band(img, empty, 0.5, five_bands().back(), 1),
      BandUnreachable);

  // A 1-pixel mask cannot stay at DSC >= 0.75 under any operator mix.
  MaskGrid2D dot(16, 16, 0);
  dot.at(8, 8) = 1;
  try {
    degrade_to_band(img, dot, 0.5, five_bands().back(), 1);
    FAIL("expected BandUnreachable");
  } catch (const BandUnreachable& e) {
    CHECK(e.closest_dsc >= 0.0);
    CHECK(e.closest_dsc < 0.75);
  }
}

TEST_CASE("build_corpus covers slices x bands deterministically") {
  fingerprint::SlicePack pack;
  for (int i = 0; i < 3; ++i) {
    fingerprint::Slice s;
    s.image = ImageGrid2D(48, 48, 0.25f);
    s.mask = two_class_mask(48);
    s.slice_ratio = i / 2.0;
    pack.slices.push_back(s);
  }
  std::vector<SubjectSlices> subjects{{"s0", pack}, {"s1", pack}};

  const auto bands = five_bands();
  const BuildResult r1 = build_corpus(subjects, bands, 7);
  CHECK(r1.corpus.pairs.size() + r1.skipped.size() == 2 * 3 * 5);
  CHECK(r1.skipped.empty());
  for (const auto& p : r1.corpus.pairs) CHECK(p.band.contains(p.achieved_dsc));

  const BuildResult r2 = build_corpus(subjects, bands, 7);
  CHECK(r1.corpus.content_digest() == r2.corpus.content_digest());
  const BuildResult r3 = build_corpus(subjects, bands, 8);
  CHECK(r1.corpus.content_digest() != r3.corpus.content_digest());
}

TEST_CASE("corpus persists and reloads bit-identically") {
  fingerprint::SlicePack pack;
  fingerprint::Slice s;
  s.image = ImageGrid2D(48, 48, 0.1f);
  s.mask = two_class_mask(48);
  s.slice_ratio = 0.5;
  pack.slices.push_back(s);

  const BuildResult built = build_corpus({{"subj", pack}}, five_bands(), 3);
  const auto dir =
      std::filesystem::temp_directory_path() / "nnqc_corpus_roundtrip";
  std::filesystem::remove_all(dir);
  built.corpus.save(dir.string());
  CHECK(std::filesystem::exists(dir / "index.json"));
  CHECK(std::filesystem::exists(dir / "corpus.bin"));

  const Corpus loaded = Corpus::load(dir.string());
  CHECK(loaded.content_digest() == built.corpus.content_digest());
  REQUIRE(loaded.pairs.size() == built.corpus.pairs.size());
  for (std::size_t i = 0; i < loaded.pairs.size(); ++i) {
    CHECK(loaded.pairs[i].degraded == built.corpus.pairs[i].degraded);
    CHECK(loaded.pairs[i].gt == built.corpus.pairs[i].gt);
    CHECK(loaded.pairs[i].image == built.corpus.pairs[i].image);
    CHECK(loaded.pairs[i].subject_id == built.corpus.pairs[i].subject_id);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("empty-GT slices are skipped with a reason, not dropped silently") {
  fingerprint::SlicePack pack;
  fingerprint::Slice good;
  good.image = ImageGrid2D(48, 48, 0.0f);
  good.mask = two_class_mask(48);
  good.slice_ratio = 0.0;
  fingerprint::Slice blank;
  blank.image = ImageGrid2D(48, 48, 0.0f);
  blank.mask = MaskGrid2D(48, 48, 0);
  blank.slice_ratio = 1.0;
  pack.slices.push_back(good);
  pack.slices.push_back(blank);

  const BuildResult r = build_corpus({{"s", pack}}, five_bands(), 11);
  CHECK(r.corpus.pairs.size() == 5);
  CHECK(r.skipped.size() == 5);
  for (const auto& sk : r.skipped) {
    CHECK(sk.slice_index == 1);
    CHECK_FALSE(sk.reason.empty());
  }
}

TEST_CASE("distinct seeds give distinct corruption patterns") {
  const MaskGrid2D gt = two_class_mask(48);
  ImageGrid2D img(48, 48, 0.0f);
  const QualityBand band = five_bands()[2];

  std::set<std::string> digests;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const DegradedPair p = degrade_to_band(img, gt, 0.5, band, seed);
    std::string bytes(reinterpret_cast<const char*>(p.degraded.data.data()),
                      p.degraded.data.size() * sizeof(int));
    digests.insert(sha256_hex(bytes));
  }
  CHECK(digests.size() >= 99);  // collisions would mean shared randomness
}
