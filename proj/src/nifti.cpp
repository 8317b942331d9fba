#include "bayeseg/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>

#include "bayeseg/errors.hpp"

namespace bayeseg {

namespace {

// Fixed 348-byte NIfTI-1 header.
#pragma pack(push, 1)
struct NiftiHeader {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
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
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(NiftiHeader) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtInt32 = 8;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;
constexpr std::int16_t kDtInt8 = 256;
constexpr std::int16_t kDtUint16 = 512;
constexpr std::int16_t kDtUint32 = 768;

template <typename T>
void swap_bytes(T* v) {
  auto* p = reinterpret_cast<unsigned char*>(v);
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) {
    std::swap(p[i], p[sizeof(T) - 1 - i]);
  }
}

void swap_header(NiftiHeader& h) {
  swap_bytes(&h.sizeof_hdr);
  for (auto& d : h.dim) swap_bytes(&d);
  swap_bytes(&h.datatype);
  swap_bytes(&h.bitpix);
  for (auto& p : h.pixdim) swap_bytes(&p);
  swap_bytes(&h.vox_offset);
  swap_bytes(&h.scl_slope);
  swap_bytes(&h.scl_inter);
}

class GzFile {
 public:
  GzFile(const std::string& path, const char* mode) {
    f_ = gzopen(path.c_str(), mode);
    if (!f_) throw IoError("cannot open " + path);
  }
  ~GzFile() {
    if (f_) gzclose(f_);
  }
  GzFile(const GzFile&) = delete;
  GzFile& operator=(const GzFile&) = delete;

  void read(void* buf, std::size_t n, const std::string& path) {
    if (gzread(f_, buf, static_cast<unsigned>(n)) !=
        static_cast<int>(n)) {
      throw IoError("short read from " + path);
    }
  }
  void write(const void* buf, std::size_t n, const std::string& path) {
    if (gzwrite(f_, buf, static_cast<unsigned>(n)) !=
        static_cast<int>(n)) {
      throw IoError("short write to " + path);
    }
  }

 private:
  gzFile f_ = nullptr;
};

bool wants_gzip(const std::string& path) {
  return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

template <typename T>
std::vector<double> decode(const std::vector<char>& raw, std::size_t n,
                           bool swap) {
  std::vector<double> out(n);
  const T* src = reinterpret_cast<const T*>(raw.data());
  for (std::size_t i = 0; i < n; ++i) {
    T v = src[i];
    if (swap) swap_bytes(&v);
    out[i] = static_cast<double>(v);
  }
  return out;
}

NiftiHeader make_header(const GridShape& shape, const Spacing& spacing,
                        std::int16_t datatype, std::int16_t bitpix) {
  NiftiHeader h;
  std::memset(&h, 0, sizeof(h));
  h.sizeof_hdr = 348;
  h.regular = 'r';
  h.dim[0] = 3;
  h.dim[1] = static_cast<std::int16_t>(shape.nx);
  h.dim[2] = static_cast<std::int16_t>(shape.ny);
  h.dim[3] = static_cast<std::int16_t>(shape.nz);
  for (int i = 4; i < 8; ++i) h.dim[i] = 1;
  h.datatype = datatype;
  h.bitpix = bitpix;
  h.pixdim[0] = 1.0f;
  h.pixdim[1] = static_cast<float>(spacing.dx);
  h.pixdim[2] = static_cast<float>(spacing.dy);
  h.pixdim[3] = static_cast<float>(spacing.dz);
  h.vox_offset = 352.0f;
  h.scl_slope = 1.0f;
  h.scl_inter = 0.0f;
  h.xyzt_units = 2;  // mm
  h.sform_code = 1;
  h.srow_x[0] = static_cast<float>(spacing.dx);
  h.srow_y[1] = static_cast<float>(spacing.dy);
  h.srow_z[2] = static_cast<float>(spacing.dz);
  std::memcpy(h.magic, "n+1", 4);
  return h;
}

void write_volume(const std::string& path, const NiftiHeader& h,
                  const void* payload, std::size_t bytes) {
  // gzopen mode "wT" stores without gzip framing for plain .nii output.
  GzFile f(path, wants_gzip(path) ? "wb" : "wbT");
  f.write(&h, sizeof(h), path);
  const char pad[4] = {0, 0, 0, 0};
  f.write(pad, 4, path);
  f.write(payload, bytes, path);
}

}  // namespace

NiftiVolume read_nifti(const std::string& path) {
  GzFile f(path, "rb");
  NiftiHeader h;
  f.read(&h, sizeof(h), path);
  bool swap = false;
  if (h.sizeof_hdr != 348) {
    swap_header(h);
    swap = true;
    if (h.sizeof_hdr != 348) throw IoError(path + ": not a NIfTI-1 file");
  }
  if (std::strncmp(h.magic, "n+1", 3) != 0) {
    throw IoError(path + ": only single-file NIfTI-1 (magic n+1) supported");
  }
  if (h.dim[0] < 3) throw IoError(path + ": expected a 3D volume");
  for (int d = 4; d <= h.dim[0]; ++d) {
    if (h.dim[d] > 1) throw IoError(path + ": higher-dimensional volume");
  }

  NiftiVolume v;
  v.shape = GridShape(h.dim[1], h.dim[2], h.dim[3]);
  v.spacing = {h.pixdim[1] > 0 ? h.pixdim[1] : 1.0,
               h.pixdim[2] > 0 ? h.pixdim[2] : 1.0,
               h.pixdim[3] > 0 ? h.pixdim[3] : 1.0};
  v.datatype = h.datatype;

  const std::size_t n = v.shape.voxels();
  const std::size_t bytes = n * static_cast<std::size_t>(h.bitpix / 8);
  const long offset = static_cast<long>(h.vox_offset);
  if (offset > static_cast<long>(sizeof(h))) {
    std::vector<char> skip(offset - sizeof(h));
    f.read(skip.data(), skip.size(), path);
  }
  std::vector<char> raw(bytes);
  f.read(raw.data(), bytes, path);

  switch (h.datatype) {
    case kDtUint8: v.data = decode<std::uint8_t>(raw, n, false); break;
    case kDtInt8: v.data = decode<std::int8_t>(raw, n, false); break;
    case kDtInt16: v.data = decode<std::int16_t>(raw, n, swap); break;
    case kDtUint16: v.data = decode<std::uint16_t>(raw, n, swap); break;
    case kDtInt32: v.data = decode<std::int32_t>(raw, n, swap); break;
    case kDtUint32: v.data = decode<std::uint32_t>(raw, n, swap); break;
    case kDtFloat32: v.data = decode<float>(raw, n, swap); break;
    case kDtFloat64: v.data = decode<double>(raw, n, swap); break;
    default:
      throw IoError(path + ": unsupported datatype " +
                    std::to_string(h.datatype));
  }

  const double slope = (h.scl_slope == 0.0f) ? 1.0 : h.scl_slope;
  const double inter = h.scl_inter;
  if (slope != 1.0 || inter != 0.0) {
    for (double& x : v.data) x = x * slope + inter;
  }
  return v;
}

void write_nifti_f64(const std::string& path, const GridShape& shape,
                     const Spacing& spacing, const std::vector<double>& data) {
  if (data.size() != shape.voxels()) {
    throw std::invalid_argument("write_nifti_f64: size mismatch");
  }
  const NiftiHeader h = make_header(shape, spacing, kDtFloat64, 64);
  write_volume(path, h, data.data(), data.size() * sizeof(double));
}

void write_nifti_f32(const std::string& path, const GridShape& shape,
                     const Spacing& spacing, const std::vector<double>& data) {
  if (data.size() != shape.voxels()) {
    throw std::invalid_argument("write_nifti_f32: size mismatch");
  }
  std::vector<float> f(data.begin(), data.end());
  const NiftiHeader h = make_header(shape, spacing, kDtFloat32, 32);
  write_volume(path, h, f.data(), f.size() * sizeof(float));
}

void write_nifti_u8(const std::string& path, const GridShape& shape,
                    const Spacing& spacing,
                    const std::vector<std::uint8_t>& data) {
  if (data.size() != shape.voxels()) {
    throw std::invalid_argument("write_nifti_u8: size mismatch");
  }
  const NiftiHeader h = make_header(shape, spacing, kDtUint8, 8);
  write_volume(path, h, data.data(), data.size());
}

Volume<double> read_volume(const std::string& path,
                           const GridShape& expected) {
  NiftiVolume v = read_nifti(path);
  if (v.shape != expected) {
    throw IoError(path + ": shape " + v.shape.str() + " does not match " +
                  expected.str());
  }
  return Volume<double>(v.shape, std::move(v.data));
}

BinaryMap read_binary_map(const std::string& path, const GridShape& expected) {
  NiftiVolume v = read_nifti(path);
  if (v.shape != expected) {
    throw IoError(path + ": shape " + v.shape.str() + " does not match " +
                  expected.str());
  }
  BinaryMap m(v.shape);
  for (std::size_t i = 0; i < v.data.size(); ++i) {
    if (v.data[i] != 0.0 && v.data[i] != 1.0) {
      throw IoError(path + ": non-binary value at voxel " + std::to_string(i));
    }
    m.set(i, v.data[i] != 0.0);
  }
  return m;
}

}  // namespace bayeseg
