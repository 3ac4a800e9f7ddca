#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>

#include "meshseg/engine.hpp"
#include "meshseg/model.hpp"
#include "meshseg/postprocess.hpp"
#include "meshseg/telemetry.hpp"
#include "meshseg/volume.hpp"

namespace meshseg {

struct SegmentOptions {
  bool conform = true;
  RescaleOptions rescale;
  bool crop = false;
  int crop_margin = 8;
  bool tile = false;
  int cube = 64;
  int halo = 0;
  std::size_t budget_bytes = MemoryBudget::kUnlimited;
  bool failsafe = false;
  Connectivity connectivity = Connectivity::TwentySix;
  bool per_class_filter = false;
};

struct SegmentResult {
  std::optional<Volume3D> labels;  // empty when the run failed
  TelemetryRecord record;
};

/// The in-memory pipeline: conform, scale to [0,1], optional mask-guided crop,
/// full-volume or tiled inference, argmax, embed, largest-component filter.
/// Never throws for module errors; they become a Fail record. When
/// `mask_model` is absent, cropping uses conformed intensities above 10% of
/// full scale as the mask.
SegmentResult segment_volume(const Volume3D& input, const ModelSpec& model, const ModelSpec* mask_model,
                             const SegmentOptions& options);

struct PipelineConfig {
  std::filesystem::path input;
  std::filesystem::path model_dir;
  std::filesystem::path output;
  /// Defaults to `<model_dir>/mask` when that directory exists.
  std::optional<std::filesystem::path> mask_model_dir;
  std::optional<std::filesystem::path> telemetry;
  SegmentOptions options;
};

/// File-based run. The output is written to a temporary sibling and renamed
/// only on success, so a failed run leaves no output file.
SegmentResult run_pipeline(const PipelineConfig& config);

}  // namespace meshseg
