#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "meshseg/volume.hpp"

namespace meshseg {

enum class LayerKind { Conv3d, BatchNorm3d, ReLU, Dropout3d };

std::string_view to_string(LayerKind kind) noexcept;

/// One layer of a stride-1 feed-forward volumetric network. Offsets are byte
/// offsets into the model's little-endian float32 weight blob.
struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  int in_channels = 1;
  int out_channels = 1;
  Vec3i kernel{1, 1, 1};
  Vec3i dilation{1, 1, 1};
  Vec3i padding{0, 0, 0};
  double dropout_p = 0.1;
  double epsilon = 1e-5;

  // conv3d: weight [out][in][kz][ky][kx], bias [out]
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  // batchnorm3d: four [out] vectors
  std::size_t scale_offset = 0;
  std::size_t shift_offset = 0;
  std::size_t mean_offset = 0;
  std::size_t var_offset = 0;

  bool has_parameters() const noexcept {
    return kind == LayerKind::Conv3d || kind == LayerKind::BatchNorm3d;
  }
  std::size_t kernel_volume() const noexcept {
    return static_cast<std::size_t>(kernel.product());
  }
  std::size_t weight_count() const noexcept {
    return static_cast<std::size_t>(in_channels) * static_cast<std::size_t>(out_channels) * kernel_volume();
  }
  /// n + 2p - d(k-1) per axis; conv only, identity for the other kinds.
  Extents output_extents(Extents in) const noexcept;
};

struct ModelSpec {
  std::string name;
  std::vector<LayerSpec> layers;
  std::vector<std::string> labels;
  std::vector<float> weights;

  std::span<const float> params(std::size_t byte_offset, std::size_t count) const {
    return std::span<const float>(weights).subspan(byte_offset / sizeof(float), count);
  }
  std::span<float> params(std::size_t byte_offset, std::size_t count) {
    return std::span<float>(weights).subspan(byte_offset / sizeof(float), count);
  }
  std::size_t weight_bytes() const noexcept { return weights.size() * sizeof(float); }
};

/// Eagerly checks every structural invariant. Throws ChannelMismatch,
/// OffsetOutOfRange, BlobSizeMismatch, ShapeMismatch or SchemaError.
void validate(const ModelSpec& model);

/// Parse a JSON manifest plus its weight blob; the blob's SHA-256 must match
/// `weights_checksum`.
ModelSpec load_model(std::string_view manifest, std::span<const std::byte> weights);
/// Reads `<dir>/model.json` and the weights file it names.
ModelSpec load_model_dir(const std::filesystem::path& dir);

std::string manifest_json(const ModelSpec& model, const std::string& weights_file = "weights.bin");
std::vector<std::byte> weight_blob(const ModelSpec& model);
void save_model_dir(const ModelSpec& model, const std::filesystem::path& dir);

std::string sha256_hex(std::span<const std::byte> bytes);

/// Learnable parameters: conv weights and biases plus batchnorm scale and
/// shift. Running statistics are stored in the blob but not counted.
std::int64_t count_parameters(const ModelSpec& model);

/// 1 + sum over convs of dilation * (kernel - 1), per axis.
Vec3i receptive_field(const ModelSpec& model);

/// Smallest tile halo that makes tiled inference exact: (RF - 1) / 2 on the widest axis.
int exactness_halo(const ModelSpec& model);

struct MeshNetConfig {
  std::string name = "meshnet";
  int channels = 5;
  std::vector<int> dilations{1, 2, 4, 8, 16, 8, 4, 2, 1};
  std::vector<std::string> labels{"background", "gray_matter", "white_matter"};
  double dropout_p = 0.1;
  double epsilon = 1e-5;
  bool batchnorm = true;
};

/// The 10-conv gray/white-matter MeshNet: nine 3^3 blocks of
/// conv-batchnorm-relu-dropout with padding == dilation, then a 1^3 classifier.
MeshNetConfig gwm_meshnet_config();

/// Lays out the layer stack and a zero blob. Offsets are assigned in layer order.
ModelSpec build_meshnet(const MeshNetConfig& config);

/// He-uniform conv weights, zero biases, unit batchnorm scale and variance.
void initialize_weights(ModelSpec& model, std::uint64_t seed);

}  // namespace meshseg
