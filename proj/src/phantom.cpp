#include "nnqc/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "nnqc/errors.hpp"
#include "nnqc/nifti.hpp"
#include "nnqc/rng.hpp"

namespace fs = std::filesystem;

namespace nnqc::phantom {

void PhantomSpec::validate() const {
  if (n_subjects < 1) throw ConfigError("phantom: n_subjects must be >= 1");
  if (grid < 16) throw ConfigError("phantom: grid must be >= 16");
  if (min_slices < 3 || max_slices < min_slices)
    throw ConfigError("phantom: invalid slice count range");
  if (n_classes < 1 || n_classes > 4)
    throw ConfigError("phantom: n_classes must be in 1..4");
  if (noise_sigma < 0) throw ConfigError("phantom: noise_sigma must be >= 0");
}

namespace {

struct Ellipsoid {
  double cx, cy, cz;  // voxel coordinates
  double rx, ry, rz;

  // In-plane membership test at axial index z.
  bool contains(double x, double y, int z) const {
    const double t = (z - cz) / rz;
    const double s2 = 1.0 - t * t;
    if (s2 <= 0.0) return false;
    const double s = std::sqrt(s2);
    const double dx = (x - cx) / (rx * s);
    const double dy = (y - cy) / (ry * s);
    return dx * dx + dy * dy <= 1.0;
  }
};

}  // namespace

std::vector<VolumePair> generate_phantoms(const PhantomSpec& spec) {
  spec.validate();
  // Tissue means per label (background first); noise is added on top.
  const double tissue[5] = {120.0, 420.0, 820.0, 620.0, 1020.0};

  std::vector<VolumePair> subjects;
  for (int i = 0; i < spec.n_subjects; ++i) {
    RandomStream rs(mix64(spec.seed, static_cast<std::uint64_t>(i)));
    const int nz = rs.uniform_int(spec.min_slices, spec.max_slices);
    const double g = spec.grid;

    std::vector<Ellipsoid> shapes;
    Ellipsoid outer;
    outer.cx = g / 2.0 + rs.uniform(-4.0, 4.0);
    outer.cy = g / 2.0 + rs.uniform(-4.0, 4.0);
    outer.cz = nz / 2.0 + rs.uniform(-1.0, 1.0);
    outer.rx = g * rs.uniform(0.30, 0.38);
    outer.ry = g * rs.uniform(0.30, 0.38);
    outer.rz = nz * rs.uniform(0.38, 0.46);
    shapes.push_back(outer);
    for (int c = 1; c < spec.n_classes; ++c) {
      const Ellipsoid& parent = shapes.back();
      Ellipsoid inner;
      inner.rx = parent.rx * rs.uniform(0.40, 0.50);
      inner.ry = parent.ry * rs.uniform(0.40, 0.50);
      inner.rz = parent.rz * rs.uniform(0.70, 0.85);
      inner.cx = parent.cx + rs.uniform(-0.2, 0.2) * parent.rx;
      inner.cy = parent.cy + rs.uniform(-0.2, 0.2) * parent.ry;
      inner.cz = parent.cz;
      shapes.push_back(inner);
    }

    VolumePair pair;
    char id[32];
    std::snprintf(id, sizeof(id), "phantom_%03d", i);
    pair.subject_id = id;
    pair.spacing = {1.0, 1.0, 2.0};
    pair.orientation = "RAS";
    pair.image = ImageGrid3D(spec.grid, spec.grid, nz);
    pair.mask = MaskGrid3D(spec.grid, spec.grid, nz);

    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < spec.grid; ++y)
        for (int x = 0; x < spec.grid; ++x) {
          int label = 0;
          for (int c = 0; c < spec.n_classes; ++c)
            if (shapes[c].contains(x, y, z)) label = c + 1;  // innermost wins
          pair.mask.at(x, y, z) = label;
          const double v = tissue[label] + spec.noise_sigma * rs.normal();
          pair.image.at(x, y, z) = static_cast<float>(v);
        }
    subjects.push_back(std::move(pair));
  }
  return subjects;
}

void write_phantom_dataset(const std::vector<VolumePair>& subjects,
                           const std::string& dir) {
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "labels");
  for (const auto& s : subjects) {
    const std::string name = s.subject_id + ".nii.gz";
    write_nifti_image((fs::path(dir) / "images" / name).string(), s.image,
                      s.spacing);
    write_nifti_mask((fs::path(dir) / "labels" / name).string(), s.mask,
                     s.spacing);
  }
}

std::vector<VolumePair> load_dataset(const std::string& dir) {
  const fs::path images = fs::path(dir) / "images";
  const fs::path labels = fs::path(dir) / "labels";
  if (!fs::is_directory(images) || !fs::is_directory(labels))
    throw IoError("dataset directory must contain images/ and labels/: " +
                  dir);

  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (name.ends_with(".nii") || name.ends_with(".nii.gz"))
      names.push_back(name);
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw IoError("no volumes found in " + images.string());

  std::vector<VolumePair> subjects;
  for (const std::string& name : names) {
    const fs::path label_path = labels / name;
    if (!fs::exists(label_path))
      throw IoError("missing label volume for " + name);
    NiftiVolume img = read_nifti((images / name).string());
    NiftiVolume msk = read_nifti(label_path.string());

    VolumePair pair;
    std::string id = name;
    if (id.ends_with(".nii.gz")) id.resize(id.size() - 7);
    else if (id.ends_with(".nii")) id.resize(id.size() - 4);
    pair.subject_id = id;
    pair.spacing = img.spacing;
    pair.orientation = orientation_code(img.affine);
    pair.image = std::move(img.data);
    pair.mask = round_to_mask(msk.data);
    pair.validate();
    subjects.push_back(std::move(pair));
  }
  return subjects;
}

}  // namespace nnqc::phantom
