#include "nnqc/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <vector>

namespace nnqc {

namespace {

// NIfTI-1 header, 348 bytes. Field set and offsets per the standard; only
// the members we read or write are commented.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;  // must be 348
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];  // dim[0]=ndim, dim[1..]=sizes
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];  // pixdim[0]=qfac, pixdim[1..3]=spacing
  float vox_offset;
  float scl_slope, scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];  // "n+1\0" for single-file
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348");

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_INT32 = 8;
constexpr std::int16_t DT_FLOAT32 = 16;
constexpr std::int16_t DT_FLOAT64 = 64;
constexpr std::int16_t DT_INT8 = 256;
constexpr std::int16_t DT_UINT16 = 512;
constexpr std::int16_t DT_UINT32 = 768;

struct GzFile {
  gzFile f = nullptr;
  explicit GzFile(const std::string& path, const char* mode) {
    f = gzopen(path.c_str(), mode);
    if (!f) throw IoError("cannot open " + path);
  }
  ~GzFile() {
    if (f) gzclose(f);
  }
  void read(void* buf, std::size_t n, const std::string& path) {
    if (gzread(f, buf, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw IoError("truncated NIfTI file: " + path);
  }
  void write(const void* buf, std::size_t n, const std::string& path) {
    if (gzwrite(f, buf, static_cast<unsigned>(n)) != static_cast<int>(n))
      throw IoError("short write: " + path);
  }
};

bool ends_with(const std::string& s, const std::string& suf) {
  return s.size() >= suf.size() &&
         s.compare(s.size() - suf.size(), suf.size(), suf) == 0;
}

Affine affine_from_header(const Nifti1Header& h) {
  if (h.sform_code > 0) {
    Affine a;
    for (int j = 0; j < 4; ++j) {
      a.m[0][j] = h.srow_x[j];
      a.m[1][j] = h.srow_y[j];
      a.m[2][j] = h.srow_z[j];
    }
    a.m[3][3] = 1.0;
    return a;
  }
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    double a2 = 1.0 - (b * b + c * c + d * d);
    const double a = a2 > 0 ? std::sqrt(a2) : 0.0;
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    const double sx = h.pixdim[1], sy = h.pixdim[2], sz = h.pixdim[3] * qfac;
    Affine m;
    m.m[0][0] = (a * a + b * b - c * c - d * d) * sx;
    m.m[0][1] = 2 * (b * c - a * d) * sy;
    m.m[0][2] = 2 * (b * d + a * c) * sz;
    m.m[1][0] = 2 * (b * c + a * d) * sx;
    m.m[1][1] = (a * a + c * c - b * b - d * d) * sy;
    m.m[1][2] = 2 * (c * d - a * b) * sz;
    m.m[2][0] = 2 * (b * d - a * c) * sx;
    m.m[2][1] = 2 * (c * d + a * b) * sy;
    m.m[2][2] = (a * a + d * d - b * b - c * c) * sz;
    m.m[0][3] = h.qoffset_x;
    m.m[1][3] = h.qoffset_y;
    m.m[2][3] = h.qoffset_z;
    m.m[3][3] = 1.0;
    return m;
  }
  return Affine::identity_scaled(
      {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]), std::abs(h.pixdim[3])});
}

template <typename T>
void decode_into(const std::vector<char>& raw, std::vector<float>& out) {
  const T* p = reinterpret_cast<const T*>(raw.data());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = static_cast<float>(p[i]);
}

Nifti1Header blank_header(int nx, int ny, int nz, const Spacing& sp,
                          std::int16_t dtype, std::int16_t bitpix) {
  Nifti1Header h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(nx);
  h.dim[2] = static_cast<std::int16_t>(ny);
  h.dim[3] = static_cast<std::int16_t>(nz);
  h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
  h.datatype = dtype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(sp[0]);
  h.pixdim[2] = static_cast<float>(sp[1]);
  h.pixdim[3] = static_cast<float>(sp[2]);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.xyzt_units = 2;  // mm
  // RAS diagonal geometry: identity quaternion qform plus matching sform.
  h.qform_code = 1;
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(sp[0]);
  h.srow_y[1] = static_cast<float>(sp[1]);
  h.srow_z[2] = static_cast<float>(sp[2]);
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

void write_volume(const std::string& path, const Nifti1Header& h,
                  const void* payload, std::size_t nbytes) {
  // 'T' = transparent (uncompressed) output for plain .nii.
  const char* mode = ends_with(path, ".gz") ? "wb6" : "wbT";
  GzFile gz(path, mode);
  gz.write(&h, sizeof(h), path);
  const char pad[4] = {0, 0, 0, 0};
  gz.write(pad, 4, path);  // header extension flag
  gz.write(payload, nbytes, path);
}

}  // namespace

NiftiVolume read_nifti(const std::string& path) {
  GzFile gz(path, "rb");
  Nifti1Header h;
  gz.read(&h, sizeof(h), path);
  if (h.sizeof_hdr != 348) {
    if (h.sizeof_hdr == 1543569408)  // 348 byte-swapped
      throw IoError("big-endian NIfTI not supported: " + path);
    throw IoError("not a NIfTI-1 file: " + path);
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0)
    throw IoError("two-file NIfTI (.hdr/.img) not supported: " + path);
  const int ndim = h.dim[0];
  if (ndim < 3 || ndim > 7) throw IoError("unsupported dim[0] in " + path);
  for (int i = 4; i <= ndim; ++i)
    if (h.dim[i] > 1)
      throw IoError("multi-channel/time NIfTI not supported: " + path);
  const int nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
  if (nx < 1 || ny < 1 || nz < 1) throw IoError("degenerate dims in " + path);

  const std::size_t nvox =
      static_cast<std::size_t>(nx) * ny * nz;
  const std::size_t elem = static_cast<std::size_t>(h.bitpix) / 8;
  // Skip to the data offset (header extensions live in between).
  const long off = static_cast<long>(h.vox_offset);
  if (off < 348) throw IoError("bad vox_offset in " + path);
  std::vector<char> skip(static_cast<std::size_t>(off) - sizeof(h));
  if (!skip.empty()) gz.read(skip.data(), skip.size(), path);

  std::vector<char> raw(nvox * elem);
  gz.read(raw.data(), raw.size(), path);

  NiftiVolume vol;
  vol.data = ImageGrid3D(nx, ny, nz);
  switch (h.datatype) {
    case DT_UINT8: decode_into<std::uint8_t>(raw, vol.data.data); break;
    case DT_INT8: decode_into<std::int8_t>(raw, vol.data.data); break;
    case DT_INT16: decode_into<std::int16_t>(raw, vol.data.data); break;
    case DT_UINT16: decode_into<std::uint16_t>(raw, vol.data.data); break;
    case DT_INT32: decode_into<std::int32_t>(raw, vol.data.data); break;
    case DT_UINT32: decode_into<std::uint32_t>(raw, vol.data.data); break;
    case DT_FLOAT32: decode_into<float>(raw, vol.data.data); break;
    case DT_FLOAT64: decode_into<double>(raw, vol.data.data); break;
    default:
      throw IoError("unsupported NIfTI datatype " +
                    std::to_string(h.datatype) + " in " + path);
  }
  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    for (float& v : vol.data.data) v = v * h.scl_slope + h.scl_inter;
  }
  vol.affine = affine_from_header(h);
  for (int i = 0; i < 3; ++i) {
    double n2 = 0;
    for (int r = 0; r < 3; ++r) n2 += vol.affine.m[r][i] * vol.affine.m[r][i];
    vol.spacing[i] = n2 > 0 ? std::sqrt(n2) : std::abs(h.pixdim[i + 1]);
    if (vol.spacing[i] <= 0) vol.spacing[i] = 1.0;
  }
  return vol;
}

void write_nifti_image(const std::string& path, const ImageGrid3D& img,
                       const Spacing& spacing) {
  Nifti1Header h = blank_header(img.nx, img.ny, img.nz, spacing, DT_FLOAT32, 32);
  write_volume(path, h, img.data.data(), img.data.size() * sizeof(float));
}

void write_nifti_mask(const std::string& path, const MaskGrid3D& mask,
                      const Spacing& spacing) {
  Nifti1Header h = blank_header(mask.nx, mask.ny, mask.nz, spacing, DT_INT16, 16);
  std::vector<std::int16_t> buf(mask.data.size());
  for (std::size_t i = 0; i < buf.size(); ++i)
    buf[i] = static_cast<std::int16_t>(mask.data[i]);
  write_volume(path, h, buf.data(), buf.size() * sizeof(std::int16_t));
}

MaskGrid3D round_to_mask(const ImageGrid3D& img) {
  MaskGrid3D m(img.nx, img.ny, img.nz);
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    const long v = std::lround(img.data[i]);
    m.data[i] = v < 0 ? 0 : static_cast<int>(v);
  }
  return m;
}

}  // namespace nnqc
