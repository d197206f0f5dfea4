#include <doctest.h>

#include "nnqc/errors.hpp"
#include "nnqc/volume.hpp"

using namespace nnqc;

namespace {

MaskGrid3D numbered_grid(int nx, int ny, int nz) {
  MaskGrid3D g(nx, ny, nz);
  int v = 0;
  for (int z = 0; z < nz; ++z)
    for (int y = 0; y < ny; ++y)
      for (int x = 0; x < nx; ++x) g.at(x, y, z) = v++;
  return g;
}

}  // namespace

TEST_CASE("orientation_code reads diagonal affines") {
  CHECK(orientation_code(Affine::identity_scaled({1, 1, 1})) == "RAS");

  Affine a;  // x -> -x (L), y -> +z (S), z -> -y (P)
  a.m[0][0] = -1.0;
  a.m[2][1] = 2.0;
  a.m[1][2] = -3.0;
  a.m[3][3] = 1.0;
  CHECK(orientation_code(a) == "LSP");
}

TEST_CASE("reorient_transform identity and validation") {
  CHECK(reorient_transform("RAS", "RAS").is_identity());
  CHECK(reorient_transform("LPI", "LPI").is_identity());
  CHECK_THROWS_AS(reorient_transform("RAX", "RAS"), ConfigError);
  CHECK_THROWS_AS(reorient_transform("RRS", "RAS"), ConfigError);
  CHECK_THROWS_AS(reorient_transform("RA", "RAS"), ConfigError);
}

TEST_CASE("reorientation round-trips through the inverse") {
  const MaskGrid3D g = numbered_grid(3, 4, 5);
  for (const std::string code : {"LPI", "ASR", "PIL", "SAR", "RAS"}) {
    const AxisTransform t = reorient_transform(code, "RAS");
    const MaskGrid3D fwd = apply_axis_transform(g, t);
    const MaskGrid3D back = apply_axis_transform(fwd, t.inverse());
    CHECK(back == g);
  }
}

TEST_CASE("axis flip reverses content") {
  MaskGrid3D g(2, 1, 1);
  g.at(0, 0, 0) = 7;
  g.at(1, 0, 0) = 9;
  // L->R means the x axis points the other way: flip it.
  const AxisTransform t = reorient_transform("LAS", "RAS");
  CHECK(t.flip[0]);
  const MaskGrid3D f = apply_axis_transform(g, t);
  CHECK(f.at(0, 0, 0) == 9);
  CHECK(f.at(1, 0, 0) == 7);
}

TEST_CASE("axis permutation carries spacing along") {
  // ASR -> RAS: dst x reads src axis 2 (R), dst y src 0 (A), dst z src 1 (S).
  const AxisTransform t = reorient_transform("ASR", "RAS");
  const Spacing s = apply_axis_transform(Spacing{2.0, 3.0, 4.0}, t);
  CHECK(s[0] == doctest::Approx(4.0));
  CHECK(s[1] == doctest::Approx(2.0));
  CHECK(s[2] == doctest::Approx(3.0));

  const MaskGrid3D g = numbered_grid(2, 3, 4);
  const MaskGrid3D r = apply_axis_transform(g, t);
  CHECK(r.nx == 4);
  CHECK(r.ny == 2);
  CHECK(r.nz == 3);
}

TEST_CASE("VolumePair validation catches mismatches") {
  VolumePair p;
  p.subject_id = "s1";
  p.image = ImageGrid3D(2, 2, 2, 0.0f);
  p.mask = MaskGrid3D(2, 2, 2, 0);
  CHECK_NOTHROW(p.validate());

  p.mask = MaskGrid3D(2, 2, 3, 0);
  CHECK_THROWS_AS(p.validate(), ShapeError);

  p.mask = MaskGrid3D(2, 2, 2, 0);
  p.spacing = {1.0, 0.0, 1.0};
  CHECK_THROWS_AS(p.validate(), ConfigError);

  p.spacing = {1.0, 1.0, 1.0};
  p.mask.at(0, 0, 0) = -2;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("axial slice views match manual indexing") {
  const MaskGrid3D g = numbered_grid(3, 2, 2);
  const MaskGrid2D s = axial_slice(g, 1);
  CHECK(s.h == 2);
  CHECK(s.w == 3);
  for (int y = 0; y < 2; ++y)
    for (int x = 0; x < 3; ++x) CHECK(s.at(y, x) == g.at(x, y, 1));

  MaskGrid3D h = g;
  MaskGrid2D z(2, 3, 42);
  set_axial_slice(h, 0, z);
  CHECK(h.at(2, 1, 0) == 42);
  CHECK(h.at(2, 1, 1) == g.at(2, 1, 1));
}
