#include <doctest.h>

#include <filesystem>

#include "nnqc/phantom.hpp"

using namespace nnqc;
using namespace nnqc::phantom;

namespace {

int slice_fg_area(const MaskGrid3D& m, int z) {
  int n = 0;
  for (int y = 0; y < m.ny; ++y)
    for (int x = 0; x < m.nx; ++x)
      if (m.at(x, y, z) > 0) ++n;
  return n;
}

}  // namespace

TEST_CASE("generator is deterministic and respects the spec") {
  PhantomSpec spec;
  spec.n_subjects = 5;
  spec.seed = 31;

  const auto a = generate_phantoms(spec);
  const auto b = generate_phantoms(spec);
  REQUIRE(a.size() == 5);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].image == b[i].image);
    CHECK(a[i].mask == b[i].mask);
    CHECK(a[i].image.nz >= spec.min_slices);
    CHECK(a[i].image.nz <= spec.max_slices);
    CHECK(max_value(a[i].mask) <= spec.n_classes);
    CHECK(max_value(a[i].mask) >= 1);
    CHECK(a[i].spacing[2] == doctest::Approx(2.0));
  }
  CHECK(a[0].subject_id == "phantom_000");
  CHECK(a[4].subject_id == "phantom_004");
}

TEST_CASE("cross sections shrink toward the volume ends") {
  PhantomSpec spec;
  spec.n_subjects = 6;
  spec.seed = 9;
  for (const VolumePair& s : generate_phantoms(spec)) {
    const int mid = s.mask.nz / 2;
    const int mid_area = slice_fg_area(s.mask, mid);
    CHECK(mid_area > slice_fg_area(s.mask, 0));
    CHECK(mid_area > slice_fg_area(s.mask, s.mask.nz - 1));
    // Both classes show up in the central slice.
    bool has2 = false;
    for (int y = 0; y < s.mask.ny; ++y)
      for (int x = 0; x < s.mask.nx; ++x)
        if (s.mask.at(x, y, mid) == 2) has2 = true;
    CHECK(has2);
  }
}

TEST_CASE("dataset round-trips through the directory layout") {
  PhantomSpec spec;
  spec.n_subjects = 3;
  spec.seed = 17;
  const auto subjects = generate_phantoms(spec);

  const auto dir = std::filesystem::temp_directory_path() / "nnqc_phantom_ds";
  std::filesystem::remove_all(dir);
  write_phantom_dataset(subjects, dir.string());
  CHECK(std::filesystem::exists(dir / "images" / "phantom_000.nii.gz"));
  CHECK(std::filesystem::exists(dir / "labels" / "phantom_002.nii.gz"));

  const auto loaded = load_dataset(dir.string());
  REQUIRE(loaded.size() == 3);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].subject_id == subjects[i].subject_id);
    CHECK(loaded[i].mask == subjects[i].mask);
    CHECK(loaded[i].image == subjects[i].image);
    CHECK(loaded[i].orientation == "RAS");
    for (int k = 0; k < 3; ++k)
      CHECK(loaded[i].spacing[k] == doctest::Approx(subjects[i].spacing[k]));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("spec validation rejects nonsense") {
  PhantomSpec spec;
  spec.n_subjects = 0;
  CHECK_THROWS(generate_phantoms(spec));
  spec = PhantomSpec{};
  spec.min_slices = 10;
  spec.max_slices = 5;
  CHECK_THROWS(generate_phantoms(spec));
}
