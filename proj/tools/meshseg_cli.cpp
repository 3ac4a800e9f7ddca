// meshseg: command line front end for the segmentation pipeline.
//
//   meshseg conform <in> <out>
//   meshseg segment --model DIR --input IN --output OUT [options]
//   meshseg dice <a> <b> [--ignore-background]
//   meshseg stats <telemetry> --by model|cropped|tiled [--yates]
//   meshseg info --model DIR
//   meshseg train --out DIR [--arch gwm|reduced] [--steps N]
//   meshseg phantom <image-out> <labels-out>

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "meshseg/error.hpp"
#include "meshseg/model.hpp"
#include "meshseg/nifti.hpp"
#include "meshseg/phantom.hpp"
#include "meshseg/pipeline.hpp"
#include "meshseg/telemetry.hpp"
#include "meshseg/training.hpp"
#include "meshseg/volume.hpp"

using namespace meshseg;

namespace {

int max_label(const Volume3D& v) {
  float m = 0.0f;
  for (float x : v.data()) m = std::max(m, x);
  return static_cast<int>(std::lround(m));
}

int cmd_conform(const std::string& in, const std::string& out) {
  const Volume3D vol = nifti::read_volume_file(in);
  nifti::write_volume_file(conform(vol), nifti::Datatype::UInt8, out);
  return 0;
}

int cmd_segment(const PipelineConfig& config) {
  const SegmentResult result = run_pipeline(config);
  const auto& r = result.record;
  if (r.status == RunStatus::Fail) {
    std::cerr << "segment: failed (" << r.error_kind << ")\n";
    return 1;
  }
  std::printf("status OK  model %s  shape %dx%dx%d  cropped %s  tiled %s\n", r.model_name.c_str(), r.input_shape.x,
              r.input_shape.y, r.input_shape.z, r.cropped ? "yes" : "no", r.tiled ? "yes" : "no");
  for (auto phase : kPhases) {
    std::printf("  %-15s %8.3f s\n", std::string(phase).c_str(), r.phase_seconds.at(std::string(phase)));
  }
  std::printf("  peak_bytes      %llu\n", static_cast<unsigned long long>(r.peak_bytes));
  return 0;
}

int cmd_dice(const std::string& a, const std::string& b, bool ignore_background) {
  const Volume3D va = nifti::read_volume_file(a);
  const Volume3D vb = nifti::read_volume_file(b);
  if (va.extents() != vb.extents()) fail(ErrorKind::ShapeMismatch, "label volumes differ in extents");
  const int classes = std::max(max_label(va), max_label(vb)) + 1;
  std::printf("%.6f\n", macro_dice(va, vb, classes, ignore_background));
  return 0;
}

int cmd_stats(const std::string& path, const std::string& by, const std::vector<std::string>& where, bool yates) {
  auto records = read_telemetry(path);
  for (const auto& clause : where) {
    const auto eq = clause.find('=');
    if (eq == std::string::npos) fail(ErrorKind::InvalidArgument, "--where expects field=value, got " + clause);
    records = filter_records(records, clause.substr(0, eq), clause.substr(eq + 1));
  }
  const auto rows = success_rates(records, by);
  std::printf("%-40s %8s %8s %8s %9s\n", by.c_str(), "Fail", "OK", "Total", "Rate");
  for (const auto& row : rows) {
    std::printf("%-40s %8lld %8lld %8lld %8.2f%%\n", row.group.c_str(), static_cast<long long>(row.fail),
                static_cast<long long>(row.ok), static_cast<long long>(row.fail + row.ok), 100.0 * row.rate);
  }
  std::vector<RateRow> groups(rows.begin(), rows.end() - 1);
  if (groups.size() < 2) {
    std::printf("chi-square: needs at least two groups\n");
    return 0;
  }
  try {
    const auto test = chi_square(contingency_from_rates(groups), yates);
    std::printf("chi-square%s: statistic %.4f  df %d  p %.4g\n", yates ? " (Yates)" : "", test.statistic, test.df,
                test.p);
  } catch (const Error& e) {
    std::printf("chi-square: %s\n", e.what());
  }
  return 0;
}

int cmd_info(const std::string& dir) {
  const ModelSpec m = load_model_dir(dir);
  std::printf("model %s\n", m.name.c_str());
  std::printf("labels");
  for (const auto& l : m.labels) std::printf(" %s", l.c_str());
  std::printf("\n\n%-4s %-12s %4s %4s %-8s %-9s %-8s\n", "#", "kind", "in", "out", "kernel", "dilation", "padding");
  int index = 0;
  for (const auto& l : m.layers) {
    ++index;
    std::printf("%-4d %-12s", index, std::string(to_string(l.kind)).c_str());
    if (l.kind == LayerKind::Conv3d) {
      std::printf(" %4d %4d %dx%dx%d    %-9d %-8d", l.in_channels, l.out_channels, l.kernel.x, l.kernel.y, l.kernel.z,
                  l.dilation.x, l.padding.x);
    } else if (l.kind == LayerKind::BatchNorm3d) {
      std::printf(" %4d %4d", l.in_channels, l.out_channels);
    } else if (l.kind == LayerKind::Dropout3d) {
      std::printf("           p=%.2f", l.dropout_p);
    }
    std::printf("\n");
  }
  const Vec3i rf = receptive_field(m);
  std::printf("\nlayers            %zu\n", m.layers.size());
  std::printf("parameters        %lld\n", static_cast<long long>(count_parameters(m)));
  std::printf("blob floats       %zu\n", m.weights.size());
  std::printf("receptive field   %d x %d x %d\n", rf.x, rf.y, rf.z);
  std::printf("exactness halo    %d\n", exactness_halo(m));
  return 0;
}

int cmd_train(const std::string& out, const std::string& arch, std::int64_t steps, double lr, double dropout,
              std::uint64_t seed) {
  MeshNetConfig cfg = gwm_meshnet_config();
  if (arch == "reduced") {
    cfg.name = "meshnet-reduced";
    cfg.dilations = {1, 2, 4, 2, 1};
  } else if (arch != "gwm") {
    fail(ErrorKind::InvalidArgument, "unknown architecture " + arch);
  }
  ModelSpec model = build_meshnet(cfg);
  initialize_weights(model, seed);
  if (steps > 0) {
    const auto suite = make_phantom_suite(PhantomOptions{}, 8, seed);
    const auto batches = make_batches(suite, 32, 2, static_cast<int>(cfg.labels.size()), seed);
    Hyperparams hp;
    hp.learning_rate = lr;
    hp.dropout_p = dropout;
    FitOptions fo;
    fo.on_log = [](const FitLogEntry& e) {
      std::printf("step %6lld  loss %.5f  dice %.4f\n", static_cast<long long>(e.step), e.loss, e.macro_dice);
      std::fflush(stdout);
    };
    model = fit(TrainState(std::move(model), seed, hp), batches, steps, fo).model;
  }
  save_model_dir(model, out);
  std::printf("wrote %s (%lld parameters)\n", out.c_str(), static_cast<long long>(count_parameters(model)));
  return 0;
}

int cmd_phantom(const std::string& image, const std::string& labels, int size, std::uint64_t seed) {
  PhantomOptions o;
  o.extents = {size, size, size};
  o.intensity_scale = 255.0;  // the pipeline scales its input by 1/255
  const LabelledVolume p = make_phantom(o, seed);
  nifti::write_volume_file(p.image, nifti::Datatype::Float32, image);
  nifti::write_volume_file(p.labels, nifti::Datatype::UInt8, labels);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"meshseg: volumetric MRI segmentation with dilated 3D convolutions"};
  app.require_subcommand(1);

  std::string conform_in, conform_out;
  auto* conform_cmd = app.add_subcommand("conform", "Resample to 256^3 at 1 mm and rescale to 0..255");
  conform_cmd->add_option("in", conform_in, "Input NIfTI")->required();
  conform_cmd->add_option("out", conform_out, "Output NIfTI")->required();

  PipelineConfig seg;
  std::string seg_model, seg_input, seg_output, seg_mask, seg_telemetry;
  std::size_t budget = 0;
  int connectivity = 26;
  bool no_conform = false;
  auto* seg_cmd = app.add_subcommand("segment", "Run the full segmentation pipeline");
  seg_cmd->add_option("--model", seg_model, "Model directory")->required();
  seg_cmd->add_option("--input", seg_input, "Input .nii or .nii.gz")->required();
  seg_cmd->add_option("--output", seg_output, "Output label volume")->required();
  seg_cmd->add_flag("--crop", seg.options.crop, "Crop to the brain mask before inference");
  seg_cmd->add_option("--crop-margin", seg.options.crop_margin, "Voxels added around the mask box")
      ->capture_default_str();
  seg_cmd->add_option("--mask-model", seg_mask, "Model producing the crop mask (default <model>/mask)");
  seg_cmd->add_flag("--tile", seg.options.tile, "Sub-volume inference");
  seg_cmd->add_option("--cube", seg.options.cube, "Sub-volume edge length")->capture_default_str();
  seg_cmd->add_option("--halo", seg.options.halo, "Context voxels around each sub-volume")->capture_default_str();
  seg_cmd->add_option("--budget", budget, "Peak allocation budget in bytes (0 = unlimited)");
  seg_cmd->add_flag("--failsafe", seg.options.failsafe, "Retry tiled once when the budget is exceeded");
  seg_cmd->add_option("--connectivity", connectivity, "Component adjacency")
      ->check(CLI::IsMember({6, 26}))
      ->capture_default_str();
  seg_cmd->add_flag("--per-class", seg.options.per_class_filter, "Keep the largest component of each class");
  seg_cmd->add_flag("--no-conform", no_conform, "Skip resampling; input is already on the model grid");
  seg_cmd->add_option("--telemetry", seg_telemetry, "Append a telemetry record to this file");

  std::string dice_a, dice_b;
  bool ignore_background = false;
  auto* dice_cmd = app.add_subcommand("dice", "Macro Dice between two label volumes");
  dice_cmd->add_option("a", dice_a)->required();
  dice_cmd->add_option("b", dice_b)->required();
  dice_cmd->add_flag("--ignore-background", ignore_background);

  std::string stats_file, stats_by;
  std::vector<std::string> stats_where;
  bool yates = false;
  auto* stats_cmd = app.add_subcommand("stats", "Success rates and chi-square test over telemetry");
  stats_cmd->add_option("telemetry", stats_file)->required();
  stats_cmd->add_option("--by", stats_by, "Grouping field")->required()->check(
      CLI::IsMember({"model", "model_name", "cropped", "tiled"}));
  stats_cmd->add_option("--where", stats_where, "Keep records with field=value (repeatable)");
  stats_cmd->add_flag("--yates", yates, "Apply the continuity correction");

  std::string info_model;
  auto* info_cmd = app.add_subcommand("info", "Describe a model directory");
  info_cmd->add_option("--model", info_model)->required();

  std::string train_out, arch = "reduced";
  std::int64_t steps = 1000;
  double lr = 0.05, dropout = 0.0;
  std::uint64_t seed = 1;
  auto* train_cmd = app.add_subcommand("train", "Train on synthetic phantoms and export a checkpoint");
  train_cmd->add_option("--out", train_out)->required();
  train_cmd->add_option("--arch", arch)->check(CLI::IsMember({"gwm", "reduced"}))->capture_default_str();
  train_cmd->add_option("--steps", steps, "0 writes the initialised model")->capture_default_str();
  train_cmd->add_option("--lr", lr)->capture_default_str();
  train_cmd->add_option("--dropout", dropout, "Negative keeps the manifest value")->capture_default_str();
  train_cmd->add_option("--seed", seed)->capture_default_str();

  std::string ph_image, ph_labels;
  int ph_size = 64;
  auto* phantom_cmd = app.add_subcommand("phantom", "Write a synthetic three-class phantom");
  phantom_cmd->add_option("image", ph_image)->required();
  phantom_cmd->add_option("labels", ph_labels)->required();
  phantom_cmd->add_option("--size", ph_size)->capture_default_str();
  phantom_cmd->add_option("--seed", seed)->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*conform_cmd) return cmd_conform(conform_in, conform_out);
    if (*seg_cmd) {
      seg.model_dir = seg_model;
      seg.input = seg_input;
      seg.output = seg_output;
      if (!seg_mask.empty()) seg.mask_model_dir = seg_mask;
      if (!seg_telemetry.empty()) seg.telemetry = seg_telemetry;
      if (budget > 0) seg.options.budget_bytes = budget;
      seg.options.connectivity = connectivity_from_int(connectivity);
      seg.options.conform = !no_conform;
      return cmd_segment(seg);
    }
    if (*dice_cmd) return cmd_dice(dice_a, dice_b, ignore_background);
    if (*stats_cmd) return cmd_stats(stats_file, stats_by, stats_where, yates);
    if (*info_cmd) return cmd_info(info_model);
    if (*train_cmd) return cmd_train(train_out, arch, steps, lr, dropout, seed);
    if (*phantom_cmd) return cmd_phantom(ph_image, ph_labels, ph_size, seed);
  } catch (const Error& e) {
    std::cerr << "meshseg: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "meshseg: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
