#include "meshseg/pipeline.hpp"

#include <chrono>
#include <string>
#include <utility>
#include <vector>

#include "meshseg/error.hpp"
#include "meshseg/nifti.hpp"
#include "meshseg/tiling.hpp"

namespace meshseg {

namespace {

class PhaseTimer {
 public:
  PhaseTimer(TelemetryRecord& record, const char* phase)
      : slot_(record.phase_seconds[phase]), start_(std::chrono::steady_clock::now()) {}
  ~PhaseTimer() { stop(); }
  void stop() {
    if (stopped_) return;
    slot_ += std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    stopped_ = true;
  }

 private:
  double& slot_;
  std::chrono::steady_clock::time_point start_;
  bool stopped_ = false;
};

Volume3D full_volume_labels(const ModelSpec& model, const FeatureMap& input, MemoryBudget& budget) {
  return argmax_labels(run_model(model, input, budget));
}

// Tiled inference that keeps per-tile core labels and assembles them in a
// separate merging step.
std::vector<std::pair<BoundingBox, Volume3D>> tiled_core_labels(const ModelSpec& model, const FeatureMap& input,
                                                                const SubvolumeGrid& grid, MemoryBudget& budget) {
  std::vector<std::pair<BoundingBox, Volume3D>> out;
  out.reserve(grid.tiles.size());
  for (std::size_t i = 0; i < grid.tiles.size(); ++i) {
    const Tile& t = grid.tiles[i];
    Volume3D labels;
    try {
      labels = argmax_labels(run_model(model, extract_region(input, t.padded_box()), budget));
    } catch (const Error& e) {
      throw Error(e.kind(), "tile " + std::to_string(i) + ": " + e.what());
    }
    const BoundingBox core{{t.core_origin.x - t.padded_origin.x, t.core_origin.y - t.padded_origin.y,
                            t.core_origin.z - t.padded_origin.z},
                           {t.core_origin.x - t.padded_origin.x + t.core_extents.x - 1,
                            t.core_origin.y - t.padded_origin.y + t.core_extents.y - 1,
                            t.core_origin.z - t.padded_origin.z + t.core_extents.z - 1}};
    out.emplace_back(t.core_box(), crop(labels, core));
  }
  return out;
}

}  // namespace

SegmentResult segment_volume(const Volume3D& input, const ModelSpec& model, const ModelSpec* mask_model,
                             const SegmentOptions& options) {
  SegmentResult result;
  TelemetryRecord& rec = result.record;
  rec.timestamp = utc_timestamp();
  rec.model_name = model.name;
  rec.input_shape = input.extents();
  MemoryBudget budget(options.budget_bytes);

  try {
    Volume3D conformed;
    {
      PhaseTimer t(rec, "preprocessing");
      conformed = options.conform ? conform(input, options.rescale) : input;
    }
    Volume3D normalized = conformed;
    for (float& v : normalized.data()) v /= 255.0f;

    std::optional<BoundingBox> box;
    Volume3D working = normalized;
    if (options.crop) {
      PhaseTimer t(rec, "cropping");
      Volume3D mask;
      if (mask_model) {
        MemoryBudget mask_budget(options.budget_bytes);
        mask = keep_largest(full_volume_labels(*mask_model, to_feature_map(normalized), mask_budget),
                            options.connectivity);
      } else {
        mask = Volume3D(conformed.extents(), conformed.spacing(), conformed.affine());
        for (std::size_t i = 0; i < mask.size(); ++i) mask.data()[i] = conformed.data()[i] > 25.5f ? 1.0f : 0.0f;
      }
      box = mask_bbox(mask, options.crop_margin);
      working = crop(normalized, *box);
      rec.cropped = true;
    }
    rec.input_shape = working.extents();

    const FeatureMap features = to_feature_map(working);
    Volume3D labels;
    std::vector<std::pair<BoundingBox, Volume3D>> tiles;
    bool tiled = options.tile;
    {
      PhaseTimer t(rec, "inference");
      if (!tiled) {
        try {
          labels = full_volume_labels(model, features, budget);
        } catch (const Error& e) {
          if (e.kind() != ErrorKind::BudgetExceeded || !options.failsafe) throw;
          tiled = true;  // single failsafe retry
        }
      }
      if (tiled) {
        const SubvolumeGrid grid = divide(features.extents, options.cube, options.halo);
        rec.tiled = true;
        rec.cube = options.cube;
        rec.halo = options.halo;
        tiles = tiled_core_labels(model, features, grid, budget);
      }
    }
    if (tiled) {
      PhaseTimer t(rec, "merging");
      labels = merge_labels(tiles, features.extents);
    }
    {
      PhaseTimer t(rec, "postprocessing");
      labels.set_affine(working.affine());
      if (box) labels = embed(labels, *box, conformed.extents());
      labels = Volume3D(labels.extents(), conformed.spacing(), conformed.affine(), std::move(labels.storage()));
      labels = options.per_class_filter ? keep_largest_per_class(labels, options.connectivity)
                                        : keep_largest(labels, options.connectivity);
    }
    rec.status = RunStatus::OK;
    rec.peak_bytes = budget.high_water();
    result.labels = std::move(labels);
  } catch (const Error& e) {
    rec.status = RunStatus::Fail;
    rec.error_kind = std::string(to_string(e.kind()));
    rec.peak_bytes = budget.high_water();
  }
  return result;
}

SegmentResult run_pipeline(const PipelineConfig& config) {
  SegmentResult result;
  try {
    const ModelSpec model = load_model_dir(config.model_dir);
    std::optional<ModelSpec> mask_model;
    std::optional<std::filesystem::path> mask_dir = config.mask_model_dir;
    if (!mask_dir && std::filesystem::is_directory(config.model_dir / "mask")) mask_dir = config.model_dir / "mask";
    if (config.options.crop && mask_dir) mask_model = load_model_dir(*mask_dir);

    TelemetryRecord read_timing;
    Volume3D input;
    {
      PhaseTimer t(read_timing, "preprocessing");
      input = nifti::read_volume_file(config.input);
    }
    result = segment_volume(input, model, mask_model ? &*mask_model : nullptr, config.options);
    result.record.phase_seconds["preprocessing"] += read_timing.phase_seconds["preprocessing"];

    if (result.labels) {
      PhaseTimer t(result.record, "postprocessing");
      const auto dtype = model.labels.size() <= 256 ? nifti::Datatype::UInt8 : nifti::Datatype::Int16;
      auto tmp = config.output;
      tmp += ".partial";
      nifti::write_volume_file(*result.labels, dtype, tmp);
      std::filesystem::rename(tmp, config.output);
    }
  } catch (const Error& e) {
    result.labels.reset();
    result.record.status = RunStatus::Fail;
    result.record.error_kind = std::string(to_string(e.kind()));
  } catch (const std::filesystem::filesystem_error&) {
    result.labels.reset();
    result.record.status = RunStatus::Fail;
    result.record.error_kind = std::string(to_string(ErrorKind::IoError));
  }
  if (result.record.timestamp.empty()) result.record.timestamp = utc_timestamp();
  if (config.telemetry) append_telemetry(result.record, *config.telemetry);
  return result;
}

}  // namespace meshseg
