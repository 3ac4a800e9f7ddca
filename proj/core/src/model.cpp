#include "meshseg/model.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <random>
#include <sstream>
#include <utility>

#include <nlohmann/json.hpp>

#include "meshseg/error.hpp"
#include "meshseg/nifti.hpp"

namespace meshseg {

using nlohmann::json;

std::string_view to_string(LayerKind kind) noexcept {
  switch (kind) {
    case LayerKind::Conv3d: return "conv3d";
    case LayerKind::BatchNorm3d: return "batchnorm3d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::Dropout3d: return "dropout3d";
  }
  return "unknown";
}

Extents LayerSpec::output_extents(Extents in) const noexcept {
  if (kind != LayerKind::Conv3d) return in;
  Extents out;
  for (int a = 0; a < 3; ++a) out[a] = in[a] + 2 * padding[a] - dilation[a] * (kernel[a] - 1);
  return out;
}

namespace {

struct Extent {
  std::size_t offset;
  std::size_t count;
  int layer;
};

std::vector<Extent> parameter_extents(const ModelSpec& model) {
  std::vector<Extent> out;
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    const int idx = static_cast<int>(i);
    const auto oc = static_cast<std::size_t>(l.out_channels);
    if (l.kind == LayerKind::Conv3d) {
      out.push_back({l.weight_offset, l.weight_count(), idx});
      out.push_back({l.bias_offset, oc, idx});
    } else if (l.kind == LayerKind::BatchNorm3d) {
      out.push_back({l.scale_offset, oc, idx});
      out.push_back({l.shift_offset, oc, idx});
      out.push_back({l.mean_offset, oc, idx});
      out.push_back({l.var_offset, oc, idx});
    }
  }
  return out;
}

std::string layer_tag(std::size_t i) { return "layer " + std::to_string(i); }

}  // namespace

void validate(const ModelSpec& model) {
  if (model.layers.empty()) fail(ErrorKind::SchemaError, "model has no layers");
  if (model.labels.empty()) fail(ErrorKind::SchemaError, "model has no labels");

  int channels = 1;
  int last_conv_out = -1;
  Extents probe{256, 256, 256};
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const LayerSpec& l = model.layers[i];
    if (l.in_channels < 1 || l.out_channels < 1) {
      fail(ErrorKind::SchemaError, layer_tag(i) + ": channel counts must be positive");
    }
    if (l.in_channels != channels) {
      fail(ErrorKind::ChannelMismatch, layer_tag(i) + ": in_channels " + std::to_string(l.in_channels) +
                                           " but previous layer produces " + std::to_string(channels));
    }
    if (l.kind == LayerKind::Conv3d) {
      for (int a = 0; a < 3; ++a) {
        if (l.kernel[a] < 1 || l.dilation[a] < 1 || l.padding[a] < 0) {
          fail(ErrorKind::SchemaError, layer_tag(i) + ": kernel/dilation must be >= 1, padding >= 0");
        }
      }
      probe = l.output_extents(probe);
      if (probe.x < 1 || probe.y < 1 || probe.z < 1) {
        fail(ErrorKind::ShapeMismatch, layer_tag(i) + ": output extent collapses on a 256^3 input");
      }
      channels = l.out_channels;
      last_conv_out = l.out_channels;
    } else {
      if (l.out_channels != l.in_channels) {
        fail(ErrorKind::ChannelMismatch, layer_tag(i) + ": " + std::string(to_string(l.kind)) +
                                             " must preserve the channel count");
      }
      if (l.kind == LayerKind::Dropout3d && !(l.dropout_p >= 0.0 && l.dropout_p < 1.0)) {
        fail(ErrorKind::SchemaError, layer_tag(i) + ": dropout_p must lie in [0, 1)");
      }
      if (l.kind == LayerKind::BatchNorm3d && !(l.epsilon >= 0.0)) {
        fail(ErrorKind::SchemaError, layer_tag(i) + ": epsilon must be non-negative");
      }
    }
  }
  if (last_conv_out < 0) fail(ErrorKind::SchemaError, "model has no conv3d layer");
  if (channels != static_cast<int>(model.labels.size())) {
    fail(ErrorKind::ChannelMismatch, "final layer emits " + std::to_string(channels) + " channels for " +
                                         std::to_string(model.labels.size()) + " labels");
  }

  auto extents = parameter_extents(model);
  std::size_t total = 0;
  for (const auto& e : extents) total += e.count;
  if (model.weights.size() != total) {
    fail(ErrorKind::BlobSizeMismatch, "weight blob holds " + std::to_string(model.weights.size()) +
                                          " floats, layers require " + std::to_string(total));
  }
  const std::size_t blob_bytes = model.weight_bytes();
  for (const auto& e : extents) {
    if (e.offset % sizeof(float) != 0 || e.offset > blob_bytes ||
        e.count > (blob_bytes - e.offset) / sizeof(float)) {
      fail(ErrorKind::OffsetOutOfRange, layer_tag(static_cast<std::size_t>(e.layer)) + ": offset " +
                                            std::to_string(e.offset) + " out of range");
    }
  }
  std::sort(extents.begin(), extents.end(), [](const Extent& a, const Extent& b) { return a.offset < b.offset; });
  for (std::size_t i = 1; i < extents.size(); ++i) {
    const auto& prev = extents[i - 1];
    if (prev.offset + prev.count * sizeof(float) > extents[i].offset) {
      fail(ErrorKind::OffsetOutOfRange, layer_tag(static_cast<std::size_t>(extents[i].layer)) +
                                            ": parameter ranges overlap");
    }
  }
}

namespace {

Vec3i triple(const json& j, const char* field, Vec3i fallback) {
  if (!j.contains(field) || j.at(field).is_null()) return fallback;
  const json& v = j.at(field);
  if (v.is_number_integer()) {
    const int n = v.get<int>();
    return {n, n, n};
  }
  if (v.is_array() && v.size() == 3) return {v[0].get<int>(), v[1].get<int>(), v[2].get<int>()};
  fail(ErrorKind::SchemaError, std::string("field '") + field + "' must be an integer or a 3-array");
}

LayerKind parse_kind(const std::string& s) {
  if (s == "conv3d") return LayerKind::Conv3d;
  if (s == "batchnorm3d") return LayerKind::BatchNorm3d;
  if (s == "relu") return LayerKind::ReLU;
  if (s == "dropout3d") return LayerKind::Dropout3d;
  fail(ErrorKind::SchemaError, "unknown layer kind '" + s + "'");
}

LayerSpec parse_layer(const json& j) {
  LayerSpec l;
  l.kind = parse_kind(j.at("kind").get<std::string>());
  l.in_channels = j.at("in").get<int>();
  l.out_channels = j.at("out").get<int>();
  const json none = json::object();
  const json& offsets = j.contains("offsets") ? j.at("offsets") : none;
  switch (l.kind) {
    case LayerKind::Conv3d:
      l.kernel = triple(j, "kernel", {1, 1, 1});
      l.dilation = triple(j, "dilation", {1, 1, 1});
      l.padding = triple(j, "padding", {0, 0, 0});
      l.weight_offset = offsets.at("weight").get<std::size_t>();
      l.bias_offset = offsets.at("bias").get<std::size_t>();
      break;
    case LayerKind::BatchNorm3d:
      l.epsilon = j.value("epsilon", 1e-5);
      l.scale_offset = offsets.at("scale").get<std::size_t>();
      l.shift_offset = offsets.at("shift").get<std::size_t>();
      l.mean_offset = offsets.at("running_mean").get<std::size_t>();
      l.var_offset = offsets.at("running_var").get<std::size_t>();
      break;
    case LayerKind::Dropout3d:
      l.dropout_p = j.value("dropout_p", 0.1);
      break;
    case LayerKind::ReLU:
      break;
  }
  return l;
}

json layer_json(const LayerSpec& l) {
  json j;
  j["kind"] = to_string(l.kind);
  j["in"] = l.in_channels;
  j["out"] = l.out_channels;
  switch (l.kind) {
    case LayerKind::Conv3d:
      j["kernel"] = {l.kernel.x, l.kernel.y, l.kernel.z};
      j["dilation"] = {l.dilation.x, l.dilation.y, l.dilation.z};
      j["padding"] = {l.padding.x, l.padding.y, l.padding.z};
      j["offsets"] = {{"weight", l.weight_offset}, {"bias", l.bias_offset}};
      break;
    case LayerKind::BatchNorm3d:
      j["epsilon"] = l.epsilon;
      j["offsets"] = {{"scale", l.scale_offset},
                      {"shift", l.shift_offset},
                      {"running_mean", l.mean_offset},
                      {"running_var", l.var_offset}};
      break;
    case LayerKind::Dropout3d:
      j["dropout_p"] = l.dropout_p;
      break;
    case LayerKind::ReLU:
      break;
  }
  return j;
}

std::vector<float> decode_blob(std::span<const std::byte> bytes) {
  if (bytes.size() % sizeof(float) != 0) {
    fail(ErrorKind::BlobSizeMismatch, "weight blob length is not a multiple of 4 bytes");
  }
  std::vector<float> out(bytes.size() / sizeof(float));
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::array<std::byte, 4> raw;
    std::memcpy(raw.data(), bytes.data() + 4 * i, 4);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    out[i] = std::bit_cast<float>(raw);
  }
  return out;
}

}  // namespace

std::string sha256_hex(std::span<const std::byte> bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    fail(ErrorKind::IoError, "SHA-256 computation failed");
  }
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int{digest[i]};
  return hex.str();
}

ModelSpec load_model(std::string_view manifest, std::span<const std::byte> weights) {
  ModelSpec model;
  std::string checksum;
  try {
    const json j = json::parse(manifest);
    model.name = j.at("name").get<std::string>();
    model.labels = j.at("labels").get<std::vector<std::string>>();
    for (const json& lj : j.at("layers")) model.layers.push_back(parse_layer(lj));
    checksum = j.value("weights_checksum", std::string{});
  } catch (const json::exception& e) {
    fail(ErrorKind::SchemaError, std::string("manifest: ") + e.what());
  }
  if (!checksum.empty() && sha256_hex(weights) != checksum) {
    fail(ErrorKind::ChecksumMismatch, "weight blob does not match weights_checksum");
  }
  model.weights = decode_blob(weights);
  validate(model);
  return model;
}

ModelSpec load_model_dir(const std::filesystem::path& dir) {
  const auto manifest_bytes = nifti::read_file_bytes(dir / "model.json");
  const std::string manifest(reinterpret_cast<const char*>(manifest_bytes.data()), manifest_bytes.size());
  std::string weights_file = "weights.bin";
  try {
    weights_file = json::parse(manifest).value("weights_file", weights_file);
  } catch (const json::exception& e) {
    fail(ErrorKind::SchemaError, std::string("manifest: ") + e.what());
  }
  return load_model(manifest, nifti::read_file_bytes(dir / weights_file));
}

std::vector<std::byte> weight_blob(const ModelSpec& model) {
  std::vector<std::byte> out(model.weights.size() * sizeof(float));
  for (std::size_t i = 0; i < model.weights.size(); ++i) {
    auto raw = std::bit_cast<std::array<std::byte, 4>>(model.weights[i]);
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw.begin(), raw.end());
    std::memcpy(out.data() + 4 * i, raw.data(), 4);
  }
  return out;
}

std::string manifest_json(const ModelSpec& model, const std::string& weights_file) {
  json j;
  j["format"] = "meshseg-model/1";
  j["name"] = model.name;
  j["labels"] = model.labels;
  j["layers"] = json::array();
  for (const auto& l : model.layers) j["layers"].push_back(layer_json(l));
  j["weights_file"] = weights_file;
  j["weights_checksum"] = sha256_hex(weight_blob(model));
  return j.dump(2) + "\n";
}

void save_model_dir(const ModelSpec& model, const std::filesystem::path& dir) {
  validate(model);
  std::filesystem::create_directories(dir);
  const std::string manifest = manifest_json(model);
  nifti::write_file_bytes(dir / "weights.bin", weight_blob(model));
  nifti::write_file_bytes(dir / "model.json", std::as_bytes(std::span(manifest.data(), manifest.size())));
}

std::int64_t count_parameters(const ModelSpec& model) {
  std::int64_t total = 0;
  for (const auto& l : model.layers) {
    if (l.kind == LayerKind::Conv3d) {
      total += static_cast<std::int64_t>(l.weight_count()) + l.out_channels;
    } else if (l.kind == LayerKind::BatchNorm3d) {
      total += 2 * std::int64_t{l.out_channels};
    }
  }
  return total;
}

Vec3i receptive_field(const ModelSpec& model) {
  Vec3i rf{1, 1, 1};
  for (const auto& l : model.layers) {
    if (l.kind != LayerKind::Conv3d) continue;
    for (int a = 0; a < 3; ++a) rf[a] += l.dilation[a] * (l.kernel[a] - 1);
  }
  return rf;
}

int exactness_halo(const ModelSpec& model) {
  const Vec3i rf = receptive_field(model);
  return (std::max({rf.x, rf.y, rf.z}) - 1) / 2;
}

MeshNetConfig gwm_meshnet_config() {
  MeshNetConfig c;
  c.name = "meshnet-gwm";
  return c;
}

ModelSpec build_meshnet(const MeshNetConfig& config) {
  ModelSpec m;
  m.name = config.name;
  m.labels = config.labels;
  std::size_t cursor = 0;
  auto take = [&cursor](std::size_t floats) {
    const std::size_t at = cursor;
    cursor += floats * sizeof(float);
    return at;
  };

  int in = 1;
  for (int d : config.dilations) {
    LayerSpec conv;
    conv.kind = LayerKind::Conv3d;
    conv.in_channels = in;
    conv.out_channels = config.channels;
    conv.kernel = {3, 3, 3};
    conv.dilation = {d, d, d};
    conv.padding = {d, d, d};
    conv.weight_offset = take(conv.weight_count());
    conv.bias_offset = take(static_cast<std::size_t>(conv.out_channels));
    m.layers.push_back(conv);

    if (config.batchnorm) {
      LayerSpec bn;
      bn.kind = LayerKind::BatchNorm3d;
      bn.in_channels = bn.out_channels = config.channels;
      bn.epsilon = config.epsilon;
      const auto c = static_cast<std::size_t>(config.channels);
      bn.scale_offset = take(c);
      bn.shift_offset = take(c);
      bn.mean_offset = take(c);
      bn.var_offset = take(c);
      m.layers.push_back(bn);
    }
    LayerSpec relu;
    relu.kind = LayerKind::ReLU;
    relu.in_channels = relu.out_channels = config.channels;
    m.layers.push_back(relu);

    LayerSpec drop;
    drop.kind = LayerKind::Dropout3d;
    drop.in_channels = drop.out_channels = config.channels;
    drop.dropout_p = config.dropout_p;
    m.layers.push_back(drop);
    in = config.channels;
  }

  LayerSpec head;
  head.kind = LayerKind::Conv3d;
  head.in_channels = in;
  head.out_channels = static_cast<int>(config.labels.size());
  head.weight_offset = take(head.weight_count());
  head.bias_offset = take(static_cast<std::size_t>(head.out_channels));
  m.layers.push_back(head);

  m.weights.assign(cursor / sizeof(float), 0.0f);
  for (const auto& l : m.layers) {
    if (l.kind == LayerKind::BatchNorm3d) {
      auto scale = m.params(l.scale_offset, static_cast<std::size_t>(l.out_channels));
      auto var = m.params(l.var_offset, static_cast<std::size_t>(l.out_channels));
      std::fill(scale.begin(), scale.end(), 1.0f);
      std::fill(var.begin(), var.end(), 1.0f);
    }
  }
  validate(m);
  return m;
}

void initialize_weights(ModelSpec& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto uniform = [&rng] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  for (const auto& l : model.layers) {
    const auto oc = static_cast<std::size_t>(l.out_channels);
    if (l.kind == LayerKind::Conv3d) {
      const double fan_in = static_cast<double>(l.in_channels) * static_cast<double>(l.kernel_volume());
      const double bound = std::sqrt(6.0 / fan_in);
      for (float& w : model.params(l.weight_offset, l.weight_count())) {
        w = static_cast<float>((2.0 * uniform() - 1.0) * bound);
      }
      for (float& b : model.params(l.bias_offset, oc)) b = 0.0f;
    } else if (l.kind == LayerKind::BatchNorm3d) {
      for (float& v : model.params(l.scale_offset, oc)) v = 1.0f;
      for (float& v : model.params(l.shift_offset, oc)) v = 0.0f;
      for (float& v : model.params(l.mean_offset, oc)) v = 0.0f;
      for (float& v : model.params(l.var_offset, oc)) v = 1.0f;
    }
  }
}

}  // namespace meshseg
