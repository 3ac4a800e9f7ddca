#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "meshseg/volume.hpp"

namespace meshseg::nifti {

enum class Endianness { Little, Big };

/// Voxel storage types accepted by the reader and writer.
enum class Datatype : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

bool is_supported_datatype(int code) noexcept;
int bytes_per_voxel(Datatype dt) noexcept;

/// The subset of the 348-byte NIfTI-1 header this library interprets. Fields
/// not listed here are written as zero and ignored on read.
struct Header {
  std::int32_t sizeof_hdr = 348;
  std::array<std::int16_t, 8> dim{};
  Datatype datatype = Datatype::Float32;
  std::int16_t bitpix = 32;
  std::array<float, 8> pixdim{};
  float vox_offset = 352.0f;
  float scl_slope = 1.0f;
  float scl_inter = 0.0f;
  std::uint8_t xyzt_units = 0;
  std::int16_t qform_code = 0;
  std::int16_t sform_code = 0;
  float quatern_b = 0.0f;
  float quatern_c = 0.0f;
  float quatern_d = 0.0f;
  float qoffset_x = 0.0f;
  float qoffset_y = 0.0f;
  float qoffset_z = 0.0f;
  std::array<float, 4> srow_x{};
  std::array<float, 4> srow_y{};
  std::array<float, 4> srow_z{};
  std::array<char, 80> descrip{};
  std::array<char, 4> magic{'n', '+', '1', '\0'};

  Extents extents() const noexcept { return {dim[1], dim[2], dim[3]}; }
  bool single_file() const noexcept { return magic[0] == 'n' && magic[1] == '+'; }
};

struct ParsedHeader {
  Header header;
  Endianness endianness = Endianness::Little;
};

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kSingleFileDataOffset = 352;

/// True when the buffer starts with the gzip magic bytes 0x1F 0x8B.
bool is_gzip(std::span<const std::byte> bytes) noexcept;
std::vector<std::byte> gunzip(std::span<const std::byte> bytes);
/// Deterministic gzip stream (mtime 0), so identical input gives identical bytes.
std::vector<std::byte> gzip(std::span<const std::byte> bytes);

/// Validate and decode a header; gzip input is decompressed first.
/// Errors: TooShort, BadMagic (also a sizeof_hdr other than 348), BadHeader
/// (vox_offset below 352), UnsupportedDatatype, BadDims.
ParsedHeader parse_header(std::span<const std::byte> bytes);

/// Affine chosen as sform (code > 0), else qform (code > 0), else diag(pixdim).
Affine header_affine(const Header& header);

Volume3D read_volume(std::span<const std::byte> bytes);
Volume3D read_volume(std::istream& in);
Volume3D read_volume_file(const std::filesystem::path& path);

/// Serialise as single-file NIfTI-1: vox_offset 352, unit scaling, sform_code 1.
/// Throws ValueOutOfRange when a value cannot be stored in `datatype`.
std::vector<std::byte> encode_volume(const Volume3D& vol, Datatype datatype,
                                     Endianness endianness = Endianness::Little);
void write_volume(const Volume3D& vol, Datatype datatype, std::ostream& out);
/// Gzips when the path ends in ".gz".
void write_volume_file(const Volume3D& vol, Datatype datatype, const std::filesystem::path& path);

std::vector<std::byte> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::byte> bytes);

}  // namespace meshseg::nifti
