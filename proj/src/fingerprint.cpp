#include "nnqc/fingerprint.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "nnqc/stats.hpp"
#include "nnqc/digest.hpp"
#include <nlohmann/json.hpp>

using json = nlohmann::json;

namespace nnqc {

namespace {

inline int clampi(int v, int lo, int hi) { return std::max(lo, std::min(hi, v)); }

}  // namespace

ImageGrid2D resize_bilinear(const ImageGrid2D& src, int out_h, int out_w) {
  if (src.h == out_h && src.w == out_w) return src;
  ImageGrid2D dst(out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const double fy = (y + 0.5) * sy - 0.5;
    const int y0 = clampi(static_cast<int>(std::floor(fy)), 0, src.h - 1);
    const int y1 = clampi(y0 + 1, 0, src.h - 1);
    const double wy = std::min(1.0, std::max(0.0, fy - y0));
    for (int x = 0; x < out_w; ++x) {
      const double fx = (x + 0.5) * sx - 0.5;
      const int x0 = clampi(static_cast<int>(std::floor(fx)), 0, src.w - 1);
      const int x1 = clampi(x0 + 1, 0, src.w - 1);
      const double wx = std::min(1.0, std::max(0.0, fx - x0));
      const double v = (1 - wy) * ((1 - wx) * src.at(y0, x0) + wx * src.at(y0, x1)) +
                       wy * ((1 - wx) * src.at(y1, x0) + wx * src.at(y1, x1));
      dst.at(y, x) = static_cast<float>(v);
    }
  }
  return dst;
}

MaskGrid2D resize_nearest(const MaskGrid2D& src, int out_h, int out_w) {
  if (src.h == out_h && src.w == out_w) return src;
  MaskGrid2D dst(out_h, out_w);
  const double sy = static_cast<double>(src.h) / out_h;
  const double sx = static_cast<double>(src.w) / out_w;
  for (int y = 0; y < out_h; ++y) {
    const int yy = clampi(static_cast<int>(std::floor((y + 0.5) * sy)), 0, src.h - 1);
    for (int x = 0; x < out_w; ++x) {
      const int xx = clampi(static_cast<int>(std::floor((x + 0.5) * sx)), 0, src.w - 1);
      dst.at(y, x) = src.at(yy, xx);
    }
  }
  return dst;
}

ImageGrid3D resample_linear(const ImageGrid3D& src, const Spacing& src_spacing,
                            const std::array<int, 3>& dst_dims,
                            const Spacing& dst_spacing) {
  ImageGrid3D dst(dst_dims[0], dst_dims[1], dst_dims[2]);
  const double rx = dst_spacing[0] / src_spacing[0];
  const double ry = dst_spacing[1] / src_spacing[1];
  const double rz = dst_spacing[2] / src_spacing[2];
  for (int z = 0; z < dst.nz; ++z) {
    const double fz = z * rz;
    const int z0 = clampi(static_cast<int>(std::floor(fz)), 0, src.nz - 1);
    const int z1 = clampi(z0 + 1, 0, src.nz - 1);
    const double wz = std::min(1.0, std::max(0.0, fz - z0));
    for (int y = 0; y < dst.ny; ++y) {
      const double fy = y * ry;
      const int y0 = clampi(static_cast<int>(std::floor(fy)), 0, src.ny - 1);
      const int y1 = clampi(y0 + 1, 0, src.ny - 1);
      const double wy = std::min(1.0, std::max(0.0, fy - y0));
      for (int x = 0; x < dst.nx; ++x) {
        const double fx = x * rx;
        const int x0 = clampi(static_cast<int>(std::floor(fx)), 0, src.nx - 1);
        const int x1 = clampi(x0 + 1, 0, src.nx - 1);
        const double wx = std::min(1.0, std::max(0.0, fx - x0));
        const double c00 = (1 - wx) * src.at(x0, y0, z0) + wx * src.at(x1, y0, z0);
        const double c10 = (1 - wx) * src.at(x0, y1, z0) + wx * src.at(x1, y1, z0);
        const double c01 = (1 - wx) * src.at(x0, y0, z1) + wx * src.at(x1, y0, z1);
        const double c11 = (1 - wx) * src.at(x0, y1, z1) + wx * src.at(x1, y1, z1);
        const double c0 = (1 - wy) * c00 + wy * c10;
        const double c1 = (1 - wy) * c01 + wy * c11;
        dst.at(x, y, z) = static_cast<float>((1 - wz) * c0 + wz * c1);
      }
    }
  }
  return dst;
}

MaskGrid3D resample_nearest(const MaskGrid3D& src, const Spacing& src_spacing,
                            const std::array<int, 3>& dst_dims,
                            const Spacing& dst_spacing) {
  MaskGrid3D dst(dst_dims[0], dst_dims[1], dst_dims[2]);
  const double rx = dst_spacing[0] / src_spacing[0];
  const double ry = dst_spacing[1] / src_spacing[1];
  const double rz = dst_spacing[2] / src_spacing[2];
  for (int z = 0; z < dst.nz; ++z) {
    const int zz = clampi(static_cast<int>(std::llround(z * rz)), 0, src.nz - 1);
    for (int y = 0; y < dst.ny; ++y) {
      const int yy = clampi(static_cast<int>(std::llround(y * ry)), 0, src.ny - 1);
      for (int x = 0; x < dst.nx; ++x) {
        const int xx = clampi(static_cast<int>(std::llround(x * rx)), 0, src.nx - 1);
        dst.at(x, y, z) = src.at(xx, yy, zz);
      }
    }
  }
  return dst;
}

}  // namespace nnqc

namespace nnqc::fingerprint {

void DatasetFingerprint::validate() const {
  if (!(intensity_lo < intensity_hi))
    throw ConfigError("fingerprint: intensity_lo must be < intensity_hi");
  if (num_labels < 1) throw ConfigError("fingerprint: num_labels must be >= 1");
  if (target_size[0] <= 0 || target_size[1] <= 0)
    throw ConfigError("fingerprint: target_size must be positive");
  for (double s : median_spacing)
    if (s <= 0) throw ConfigError("fingerprint: median_spacing must be positive");
  if (orientation.size() != 3)
    throw ConfigError("fingerprint: orientation must be a 3-letter code");
}

std::string DatasetFingerprint::to_json() const {
  json j;
  j["schema_version"] = 1;
  j["median_spacing"] = median_spacing;
  j["median_foreground_size"] = median_foreground_size;
  j["orientation"] = orientation;
  j["intensity_lo"] = intensity_lo;
  j["intensity_hi"] = intensity_hi;
  j["num_labels"] = num_labels;
  j["target_size"] = target_size;
  j["crop_margin"] = crop_margin;
  return j.dump(2);
}

DatasetFingerprint DatasetFingerprint::from_json(const std::string& text) {
  json j = json::parse(text);
  DatasetFingerprint fp;
  j.at("median_spacing").get_to(fp.median_spacing);
  j.at("median_foreground_size").get_to(fp.median_foreground_size);
  j.at("orientation").get_to(fp.orientation);
  j.at("intensity_lo").get_to(fp.intensity_lo);
  j.at("intensity_hi").get_to(fp.intensity_hi);
  j.at("num_labels").get_to(fp.num_labels);
  j.at("target_size").get_to(fp.target_size);
  if (j.contains("crop_margin")) j.at("crop_margin").get_to(fp.crop_margin);
  fp.validate();
  return fp;
}

void DatasetFingerprint::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write fingerprint: " + path);
  out << to_json() << "\n";
}

DatasetFingerprint DatasetFingerprint::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read fingerprint: " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return from_json(text);
}

std::string DatasetFingerprint::hash() const { return sha256_hex(to_json()); }

std::string RestoreMeta::to_json() const {
  json j;
  j["original_shape"] = original_shape;
  j["canonical_shape"] = canonical_shape;
  j["canonical_spacing"] = canonical_spacing;
  j["perm"] = to_canonical.perm;
  j["flip"] = to_canonical.flip;
  j["resampled_shape"] = resampled_shape;
  j["resampled_spacing"] = resampled_spacing;
  j["crop_offset"] = crop_offset;
  j["crop_size"] = crop_size;
  j["target_size"] = target_size;
  return j.dump();
}

RestoreMeta RestoreMeta::from_json(const std::string& text) {
  json j = json::parse(text);
  RestoreMeta m;
  j.at("original_shape").get_to(m.original_shape);
  j.at("canonical_shape").get_to(m.canonical_shape);
  j.at("canonical_spacing").get_to(m.canonical_spacing);
  j.at("perm").get_to(m.to_canonical.perm);
  j.at("flip").get_to(m.to_canonical.flip);
  j.at("resampled_shape").get_to(m.resampled_shape);
  j.at("resampled_spacing").get_to(m.resampled_spacing);
  j.at("crop_offset").get_to(m.crop_offset);
  j.at("crop_size").get_to(m.crop_size);
  j.at("target_size").get_to(m.target_size);
  return m;
}

DatasetFingerprint extract_fingerprint(const std::vector<VolumePair>& dataset,
                                       const FingerprintOptions& opt) {
  if (dataset.empty()) throw ShapeError("extract_fingerprint: empty dataset");

  std::vector<double> sp[3];
  int max_label = 0;
  for (const auto& pair : dataset) {
    pair.validate();
    const AxisTransform t = reorient_transform(pair.orientation, opt.orientation);
    const Spacing s = apply_axis_transform(pair.spacing, t);
    for (int i = 0; i < 3; ++i) sp[i].push_back(s[i]);
    max_label = std::max(max_label, max_value(pair.mask));
  }
  if (max_label < 1)
    throw ConfigError("extract_fingerprint: no foreground voxel in any subject");

  DatasetFingerprint fp;
  fp.orientation = opt.orientation;
  fp.target_size = opt.target_size;
  fp.crop_margin = opt.crop_margin;
  fp.num_labels = max_label;
  for (int i = 0; i < 3; ++i) fp.median_spacing[i] = median_of(sp[i]);

  // Foreground bounding-box extents (median-spacing voxels) and pooled
  // foreground intensities for the percentile window.
  std::vector<double> fg_ext[3];
  std::vector<double> intensities;
  for (const auto& pair : dataset) {
    const AxisTransform t = reorient_transform(pair.orientation, opt.orientation);
    const MaskGrid3D mask = apply_axis_transform(pair.mask, t);
    const ImageGrid3D image = apply_axis_transform(pair.image, t);
    const Spacing s = apply_axis_transform(pair.spacing, t);

    int lo[3] = {mask.nx, mask.ny, mask.nz};
    int hi[3] = {-1, -1, -1};
    std::size_t n_fg = 0;
    for (int z = 0; z < mask.nz; ++z)
      for (int y = 0; y < mask.ny; ++y)
        for (int x = 0; x < mask.nx; ++x)
          if (mask.at(x, y, z) > 0) {
            const int idx[3] = {x, y, z};
            for (int i = 0; i < 3; ++i) {
              lo[i] = std::min(lo[i], idx[i]);
              hi[i] = std::max(hi[i], idx[i]);
            }
            ++n_fg;
          }
    if (hi[0] < 0) continue;  // subject without foreground
    for (int i = 0; i < 3; ++i)
      fg_ext[i].push_back((hi[i] - lo[i] + 1) * s[i] / fp.median_spacing[i]);

    // Cap the per-subject sample to bound memory on large volumes.
    const std::size_t cap = 200000;
    const std::size_t stride = std::max<std::size_t>(1, n_fg / cap);
    std::size_t k = 0;
    for (std::size_t i = 0; i < mask.data.size(); ++i)
      if (mask.data[i] > 0 && (k++ % stride) == 0)
        intensities.push_back(image.data[i]);
  }
  if (intensities.empty())
    throw ConfigError("extract_fingerprint: foreground intensity pool is empty");
  for (int i = 0; i < 3; ++i)
    fp.median_foreground_size[i] = median_of(fg_ext[i]);
  fp.intensity_lo = percentile(intensities, 0.5);
  fp.intensity_hi = percentile(intensities, 99.5);
  if (!(fp.intensity_lo < fp.intensity_hi)) {
    // Flat foreground (synthetic masks-as-images); widen to a unit window.
    fp.intensity_hi = fp.intensity_lo + 1.0;
  }
  fp.validate();
  return fp;
}

namespace {

int crop_side(const DatasetFingerprint& fp) {
  const double extent =
      std::max(fp.median_foreground_size[0], fp.median_foreground_size[1]);
  const int side = static_cast<int>(std::lround(extent * fp.crop_margin));
  return std::max(side, 8);
}

template <typename T>
Grid2D<T> crop_pad_2d(const Grid2D<T>& src, int off_x, int off_y, int side) {
  Grid2D<T> dst(side, side, T{});
  for (int y = 0; y < side; ++y) {
    const int sy = y + off_y;
    if (sy < 0 || sy >= src.h) continue;
    for (int x = 0; x < side; ++x) {
      const int sx = x + off_x;
      if (sx < 0 || sx >= src.w) continue;
      dst.at(y, x) = src.at(sy, sx);
    }
  }
  return dst;
}

}  // namespace

SlicePack preprocess(const VolumePair& pair, const DatasetFingerprint& fp) {
  pair.validate();
  fp.validate();

  RestoreMeta meta;
  meta.original_shape = {pair.image.nx, pair.image.ny, pair.image.nz};
  meta.to_canonical = reorient_transform(pair.orientation, fp.orientation);
  meta.target_size = fp.target_size;

  ImageGrid3D image = apply_axis_transform(pair.image, meta.to_canonical);
  MaskGrid3D mask = apply_axis_transform(pair.mask, meta.to_canonical);
  meta.canonical_spacing = apply_axis_transform(pair.spacing, meta.to_canonical);
  meta.canonical_shape = {image.nx, image.ny, image.nz};

  std::array<int, 3> dims;
  for (int i = 0; i < 3; ++i) {
    const double ratio = meta.canonical_spacing[i] / fp.median_spacing[i];
    if (ratio > 100.0 || ratio < 0.01)
      throw IoError("preprocess: resampling factor >100x on axis " +
                    std::to_string(i) + " (corrupt header?)");
    const int n = meta.canonical_shape[i];
    dims[i] = std::max(1, static_cast<int>(std::lround(n * ratio)));
  }
  meta.resampled_shape = dims;
  meta.resampled_spacing = fp.median_spacing;
  if (dims[2] < 1) throw ShapeError("preprocess: degenerate volume");

  image = resample_linear(image, meta.canonical_spacing, dims, fp.median_spacing);
  mask = resample_nearest(mask, meta.canonical_spacing, dims, fp.median_spacing);

  const float lo = static_cast<float>(fp.intensity_lo);
  const float hi = static_cast<float>(fp.intensity_hi);
  const float span = hi - lo;
  for (float& v : image.data)
    v = (std::min(hi, std::max(lo, v)) - lo) / span;

  const int side = crop_side(fp);
  meta.crop_size = side;
  meta.crop_offset = {(dims[0] - side) / 2, (dims[1] - side) / 2};

  SlicePack pack;
  pack.meta = meta;
  const int nz = dims[2];
  for (int z = 0; z < nz; ++z) {
    Slice s;
    ImageGrid2D img2 = axial_slice(image, z);
    MaskGrid2D msk2 = axial_slice(mask, z);
    img2 = crop_pad_2d(img2, meta.crop_offset[0], meta.crop_offset[1], side);
    msk2 = crop_pad_2d(msk2, meta.crop_offset[0], meta.crop_offset[1], side);
    s.image = resize_bilinear(img2, fp.target_size[0], fp.target_size[1]);
    for (float& v : s.image.data) v = std::min(1.0f, std::max(0.0f, v));
    s.mask = resize_nearest(msk2, fp.target_size[0], fp.target_size[1]);
    s.slice_ratio = nz > 1 ? static_cast<double>(z) / (nz - 1) : 0.5;
    pack.slices.push_back(std::move(s));
  }
  return pack;
}

MaskGrid3D postprocess(const std::vector<MaskGrid2D>& pgt_slices,
                       const RestoreMeta& meta) {
  if (static_cast<int>(pgt_slices.size()) != meta.resampled_shape[2])
    throw ShapeError("postprocess: slice count does not match restore meta");

  MaskGrid3D stack(meta.resampled_shape[0], meta.resampled_shape[1],
                   meta.resampled_shape[2]);
  for (int z = 0; z < stack.nz; ++z) {
    const MaskGrid2D& s = pgt_slices[z];
    if (s.h != meta.target_size[0] || s.w != meta.target_size[1])
      throw ShapeError("postprocess: slice shape does not match target size");
    MaskGrid2D uncropped = resize_nearest(s, meta.crop_size, meta.crop_size);
    MaskGrid2D plane(stack.ny, stack.nx, 0);
    for (int y = 0; y < meta.crop_size; ++y) {
      const int py = y + meta.crop_offset[1];
      if (py < 0 || py >= plane.h) continue;
      for (int x = 0; x < meta.crop_size; ++x) {
        const int px = x + meta.crop_offset[0];
        if (px < 0 || px >= plane.w) continue;
        plane.at(py, px) = uncropped.at(y, x);
      }
    }
    set_axial_slice(stack, z, plane);
  }

  // Back to the subject's native spacing and orientation.
  MaskGrid3D canonical = resample_nearest(stack, meta.resampled_spacing,
                                          meta.canonical_shape,
                                          meta.canonical_spacing);
  return apply_axis_transform(canonical, meta.to_canonical.inverse());
}

}  // namespace nnqc::fingerprint
