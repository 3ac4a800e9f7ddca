#include "meshseg/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <string>

#include "meshseg/error.hpp"

namespace meshseg::nifti {

namespace {

// Field offsets within the 348-byte NIfTI-1 header.
namespace off {
constexpr std::size_t sizeof_hdr = 0;
constexpr std::size_t dim = 40;
constexpr std::size_t datatype = 70;
constexpr std::size_t bitpix = 72;
constexpr std::size_t pixdim = 76;
constexpr std::size_t vox_offset = 108;
constexpr std::size_t scl_slope = 112;
constexpr std::size_t scl_inter = 116;
constexpr std::size_t xyzt_units = 123;
constexpr std::size_t descrip = 148;
constexpr std::size_t qform_code = 252;
constexpr std::size_t sform_code = 254;
constexpr std::size_t quatern_b = 256;
constexpr std::size_t srow_x = 280;
constexpr std::size_t srow_y = 296;
constexpr std::size_t srow_z = 312;
constexpr std::size_t magic = 344;
}  // namespace off

template <typename T>
T load(std::span<const std::byte> bytes, std::size_t offset, Endianness e) {
  std::array<std::byte, sizeof(T)> raw;
  std::memcpy(raw.data(), bytes.data() + offset, sizeof(T));
  const bool native_little = std::endian::native == std::endian::little;
  if ((e == Endianness::Little) != native_little) std::reverse(raw.begin(), raw.end());
  return std::bit_cast<T>(raw);
}

template <typename T>
void store(std::span<std::byte> bytes, std::size_t offset, T value, Endianness e) {
  auto raw = std::bit_cast<std::array<std::byte, sizeof(T)>>(value);
  const bool native_little = std::endian::native == std::endian::little;
  if ((e == Endianness::Little) != native_little) std::reverse(raw.begin(), raw.end());
  std::memcpy(bytes.data() + offset, raw.data(), sizeof(T));
}

bool legal_magic(const std::array<char, 4>& m) {
  return (m[0] == 'n' && (m[1] == '+' || m[1] == 'i') && m[2] == '1' && m[3] == '\0');
}

Datatype checked_datatype(int code) {
  if (!is_supported_datatype(code)) {
    fail(ErrorKind::UnsupportedDatatype, "datatype code " + std::to_string(code) + " is not supported");
  }
  return static_cast<Datatype>(code);
}

}  // namespace

bool is_supported_datatype(int code) noexcept {
  return code == 2 || code == 4 || code == 8 || code == 16 || code == 64;
}

int bytes_per_voxel(Datatype dt) noexcept {
  switch (dt) {
    case Datatype::UInt8: return 1;
    case Datatype::Int16: return 2;
    case Datatype::Int32: return 4;
    case Datatype::Float32: return 4;
    case Datatype::Float64: return 8;
  }
  return 0;
}

bool is_gzip(std::span<const std::byte> bytes) noexcept {
  return bytes.size() >= 2 && bytes[0] == std::byte{0x1F} && bytes[1] == std::byte{0x8B};
}

std::vector<std::byte> gunzip(std::span<const std::byte> bytes) {
  std::vector<std::byte> out;
  z_stream zs{};
  if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) fail(ErrorKind::GzipError, "inflateInit2 failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<std::byte*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  std::array<std::byte, 1 << 16> chunk;
  int rc = Z_OK;
  while (true) {
    zs.next_out = reinterpret_cast<Bytef*>(chunk.data());
    zs.avail_out = static_cast<uInt>(chunk.size());
    rc = inflate(&zs, Z_NO_FLUSH);
    out.insert(out.end(), chunk.begin(), chunk.begin() + static_cast<std::ptrdiff_t>(chunk.size() - zs.avail_out));
    if (rc == Z_STREAM_END) {
      // concatenated gzip members
      if (zs.avail_in > 0 && is_gzip({reinterpret_cast<const std::byte*>(zs.next_in), zs.avail_in})) {
        inflateReset(&zs);
        continue;
      }
      break;
    }
    if (rc != Z_OK) {
      inflateEnd(&zs);
      fail(ErrorKind::GzipError, rc == Z_BUF_ERROR ? "truncated gzip stream" : "corrupt gzip stream");
    }
  }
  inflateEnd(&zs);
  return out;
}

std::vector<std::byte> gzip(std::span<const std::byte> bytes) {
  z_stream zs{};
  if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
    fail(ErrorKind::GzipError, "deflateInit2 failed");
  }
  std::vector<std::byte> out(deflateBound(&zs, static_cast<uLong>(bytes.size())) + 32);
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<std::byte*>(bytes.data()));
  zs.avail_in = static_cast<uInt>(bytes.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = deflate(&zs, Z_FINISH);
  const auto written = out.size() - zs.avail_out;
  deflateEnd(&zs);
  if (rc != Z_STREAM_END) fail(ErrorKind::GzipError, "deflate did not finish");
  out.resize(written);
  return out;
}

ParsedHeader parse_header(std::span<const std::byte> bytes) {
  std::vector<std::byte> inflated;
  if (is_gzip(bytes)) {
    inflated = gunzip(bytes);
    bytes = inflated;
  }
  if (bytes.size() < kHeaderSize) {
    fail(ErrorKind::TooShort, "need 348 header bytes, got " + std::to_string(bytes.size()));
  }

  ParsedHeader parsed;
  if (load<std::int32_t>(bytes, off::sizeof_hdr, Endianness::Little) == 348) {
    parsed.endianness = Endianness::Little;
  } else if (load<std::int32_t>(bytes, off::sizeof_hdr, Endianness::Big) == 348) {
    parsed.endianness = Endianness::Big;
  } else {
    fail(ErrorKind::BadMagic, "sizeof_hdr is not 348 in either byte order");
  }
  const Endianness e = parsed.endianness;
  Header& h = parsed.header;
  h.sizeof_hdr = 348;

  std::memcpy(h.magic.data(), bytes.data() + off::magic, 4);
  if (!legal_magic(h.magic)) fail(ErrorKind::BadMagic, "magic is neither \"n+1\" nor \"ni1\"");

  h.datatype = checked_datatype(load<std::int16_t>(bytes, off::datatype, e));
  h.bitpix = load<std::int16_t>(bytes, off::bitpix, e);

  for (std::size_t i = 0; i < 8; ++i) {
    h.dim[i] = load<std::int16_t>(bytes, off::dim + 2 * i, e);
    h.pixdim[i] = load<float>(bytes, off::pixdim + 4 * i, e);
  }
  const int rank = h.dim[0];
  if (rank < 1 || rank > 7) fail(ErrorKind::BadDims, "dim[0] must be in 1..7, got " + std::to_string(rank));
  for (int i = rank + 1; i < 8; ++i) h.dim[static_cast<std::size_t>(i)] = 1;
  for (std::size_t i = 1; i <= 3; ++i) {
    if (h.dim[i] < 1) fail(ErrorKind::BadDims, "spatial extent dim[" + std::to_string(i) + "] < 1");
  }
  for (std::size_t i = 4; i < 8; ++i) {
    if (h.dim[i] != 1) {
      fail(ErrorKind::BadDims, "only single 3D volumes are supported (dim[" + std::to_string(i) + "] = " +
                                   std::to_string(h.dim[i]) + ")");
    }
  }

  h.vox_offset = load<float>(bytes, off::vox_offset, e);
  h.scl_slope = load<float>(bytes, off::scl_slope, e);
  h.scl_inter = load<float>(bytes, off::scl_inter, e);
  h.xyzt_units = std::to_integer<std::uint8_t>(bytes[off::xyzt_units]);
  std::memcpy(h.descrip.data(), bytes.data() + off::descrip, h.descrip.size());
  h.qform_code = load<std::int16_t>(bytes, off::qform_code, e);
  h.sform_code = load<std::int16_t>(bytes, off::sform_code, e);
  h.quatern_b = load<float>(bytes, off::quatern_b, e);
  h.quatern_c = load<float>(bytes, off::quatern_b + 4, e);
  h.quatern_d = load<float>(bytes, off::quatern_b + 8, e);
  h.qoffset_x = load<float>(bytes, off::quatern_b + 12, e);
  h.qoffset_y = load<float>(bytes, off::quatern_b + 16, e);
  h.qoffset_z = load<float>(bytes, off::quatern_b + 20, e);
  for (std::size_t i = 0; i < 4; ++i) {
    h.srow_x[i] = load<float>(bytes, off::srow_x + 4 * i, e);
    h.srow_y[i] = load<float>(bytes, off::srow_y + 4 * i, e);
    h.srow_z[i] = load<float>(bytes, off::srow_z + 4 * i, e);
  }
  if (h.single_file() && !(h.vox_offset >= static_cast<float>(kSingleFileDataOffset))) {
    fail(ErrorKind::BadHeader, "vox_offset must be at least 352 for single-file NIfTI");
  }
  return parsed;
}

Affine header_affine(const Header& h) {
  Affine a = Affine::identity();
  if (h.sform_code > 0) {
    for (int c = 0; c < 4; ++c) {
      a(0, c) = h.srow_x[static_cast<std::size_t>(c)];
      a(1, c) = h.srow_y[static_cast<std::size_t>(c)];
      a(2, c) = h.srow_z[static_cast<std::size_t>(c)];
    }
    return a;
  }
  const double dx = h.pixdim[1] > 0 ? h.pixdim[1] : 1.0;
  const double dy = h.pixdim[2] > 0 ? h.pixdim[2] : 1.0;
  const double dz = h.pixdim[3] > 0 ? h.pixdim[3] : 1.0;
  if (h.qform_code > 0) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a2 = 1.0 - (b * b + c * c + d * d);
    const double qa = a2 > 1e-7 ? std::sqrt(a2) : 0.0;
    const double qfac = h.pixdim[0] < 0 ? -1.0 : 1.0;
    const double r[3][3] = {
        {qa * qa + b * b - c * c - d * d, 2 * (b * c - qa * d), 2 * (b * d + qa * c)},
        {2 * (b * c + qa * d), qa * qa + c * c - b * b - d * d, 2 * (c * d - qa * b)},
        {2 * (b * d - qa * c), 2 * (c * d + qa * b), qa * qa + d * d - c * c - b * b},
    };
    const double s[3] = {dx, dy, qfac * dz};
    for (int row = 0; row < 3; ++row)
      for (int col = 0; col < 3; ++col) a(row, col) = r[row][col] * s[col];
    a(0, 3) = h.qoffset_x;
    a(1, 3) = h.qoffset_y;
    a(2, 3) = h.qoffset_z;
    return a;
  }
  return Affine::diagonal(dx, dy, dz);
}

Volume3D read_volume(std::span<const std::byte> bytes) {
  std::vector<std::byte> inflated;
  if (is_gzip(bytes)) {
    inflated = gunzip(bytes);
    bytes = inflated;
  }
  const auto [h, e] = parse_header(bytes);
  if (!h.single_file()) {
    fail(ErrorKind::UnsupportedFormat, "paired .hdr/.img NIfTI is not supported; use single-file .nii");
  }
  const Extents ext = h.extents();
  const auto count = static_cast<std::size_t>(ext.product());
  const auto width = static_cast<std::size_t>(bytes_per_voxel(h.datatype));
  const auto start = static_cast<std::size_t>(h.vox_offset);
  if (bytes.size() < start || (bytes.size() - start) / width < count) {
    fail(ErrorKind::TruncatedData, "expected " + std::to_string(count) + " voxels after offset " +
                                       std::to_string(start));
  }

  std::vector<float> data(count);
  const std::byte* p = bytes.data() + start;
  for (std::size_t i = 0; i < count; ++i, p += width) {
    const std::span<const std::byte> v(p, width);
    switch (h.datatype) {
      case Datatype::UInt8: data[i] = static_cast<float>(std::to_integer<std::uint8_t>(v[0])); break;
      case Datatype::Int16: data[i] = static_cast<float>(load<std::int16_t>(v, 0, e)); break;
      case Datatype::Int32: data[i] = static_cast<float>(load<std::int32_t>(v, 0, e)); break;
      case Datatype::Float32: data[i] = load<float>(v, 0, e); break;
      case Datatype::Float64: data[i] = static_cast<float>(load<double>(v, 0, e)); break;
    }
  }
  if (h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f)) {
    const double slope = h.scl_slope, inter = h.scl_inter;
    for (float& v : data) v = static_cast<float>(v * slope + inter);
  }

  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  for (std::size_t i = 0; i < 3; ++i) {
    const float d = std::abs(h.pixdim[i + 1]);
    if (d > 0 && std::isfinite(d)) spacing[i] = d;
  }
  return Volume3D(ext, spacing, header_affine(h), std::move(data));
}

Volume3D read_volume(std::istream& in) {
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return read_volume(std::as_bytes(std::span<const char>(raw)));
}

Volume3D read_volume_file(const std::filesystem::path& path) { return read_volume(read_file_bytes(path)); }

namespace {

template <typename Int>
Int narrow(float v) {
  const double r = std::round(static_cast<double>(v));
  if (!std::isfinite(r) || r < static_cast<double>(std::numeric_limits<Int>::min()) ||
      r > static_cast<double>(std::numeric_limits<Int>::max())) {
    fail(ErrorKind::ValueOutOfRange, "value " + std::to_string(v) + " does not fit the output datatype");
  }
  return static_cast<Int>(r);
}

}  // namespace

std::vector<std::byte> encode_volume(const Volume3D& vol, Datatype datatype, Endianness e) {
  const auto width = static_cast<std::size_t>(bytes_per_voxel(datatype));
  std::vector<std::byte> out(kSingleFileDataOffset + vol.size() * width, std::byte{0});
  std::span<std::byte> bytes(out);

  const Extents ext = vol.extents();
  if (ext.x > 32767 || ext.y > 32767 || ext.z > 32767) {
    fail(ErrorKind::BadDims, "extent exceeds NIfTI-1 16-bit dim field");
  }
  store<std::int32_t>(bytes, off::sizeof_hdr, 348, e);
  const std::int16_t dims[8] = {3, static_cast<std::int16_t>(ext.x), static_cast<std::int16_t>(ext.y),
                                static_cast<std::int16_t>(ext.z), 1, 1, 1, 1};
  const float pix[8] = {1.0f, static_cast<float>(vol.spacing()[0]), static_cast<float>(vol.spacing()[1]),
                        static_cast<float>(vol.spacing()[2]), 0.0f, 0.0f, 0.0f, 0.0f};
  for (std::size_t i = 0; i < 8; ++i) {
    store<std::int16_t>(bytes, off::dim + 2 * i, dims[i], e);
    store<float>(bytes, off::pixdim + 4 * i, pix[i], e);
  }
  store<std::int16_t>(bytes, off::datatype, static_cast<std::int16_t>(datatype), e);
  store<std::int16_t>(bytes, off::bitpix, static_cast<std::int16_t>(8 * width), e);
  store<float>(bytes, off::vox_offset, static_cast<float>(kSingleFileDataOffset), e);
  store<float>(bytes, off::scl_slope, 1.0f, e);
  store<float>(bytes, off::scl_inter, 0.0f, e);
  bytes[off::xyzt_units] = std::byte{2};  // millimetres
  store<std::int16_t>(bytes, off::qform_code, 0, e);
  store<std::int16_t>(bytes, off::sform_code, 1, e);
  const Affine& a = vol.affine();
  for (std::size_t c = 0; c < 4; ++c) {
    const int col = static_cast<int>(c);
    store<float>(bytes, off::srow_x + 4 * c, static_cast<float>(a(0, col)), e);
    store<float>(bytes, off::srow_y + 4 * c, static_cast<float>(a(1, col)), e);
    store<float>(bytes, off::srow_z + 4 * c, static_cast<float>(a(2, col)), e);
  }
  std::memcpy(out.data() + off::magic, "n+1\0", 4);

  std::byte* p = out.data() + kSingleFileDataOffset;
  for (float v : vol.data()) {
    std::span<std::byte> slot(p, width);
    switch (datatype) {
      case Datatype::UInt8: slot[0] = static_cast<std::byte>(narrow<std::uint8_t>(v)); break;
      case Datatype::Int16: store<std::int16_t>(slot, 0, narrow<std::int16_t>(v), e); break;
      case Datatype::Int32: store<std::int32_t>(slot, 0, narrow<std::int32_t>(v), e); break;
      case Datatype::Float32: store<float>(slot, 0, v, e); break;
      case Datatype::Float64: store<double>(slot, 0, static_cast<double>(v), e); break;
    }
    p += width;
  }
  return out;
}

void write_volume(const Volume3D& vol, Datatype datatype, std::ostream& out) {
  const auto bytes = encode_volume(vol, datatype);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoError, "stream write failed");
}

void write_volume_file(const Volume3D& vol, Datatype datatype, const std::filesystem::path& path) {
  auto bytes = encode_volume(vol, datatype);
  if (path.extension() == ".gz") bytes = gzip(bytes);
  write_file_bytes(path, bytes);
}

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
  std::vector<char> raw{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  std::vector<std::byte> out(raw.size());
  std::memcpy(out.data(), raw.data(), raw.size());
  return out;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorKind::IoError, "write failed for " + path.string());
}

}  // namespace meshseg::nifti
