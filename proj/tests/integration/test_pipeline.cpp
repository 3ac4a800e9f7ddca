#include <gtest/gtest.h>

#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "meshseg/error.hpp"
#include "meshseg/model.hpp"
#include "meshseg/nifti.hpp"
#include "meshseg/phantom.hpp"
#include "meshseg/pipeline.hpp"
#include "meshseg/training.hpp"
#include "oracles.hpp"

using namespace meshseg;
namespace fs = std::filesystem;

namespace {

// 1x1x1 classifier on intensity x in [0,1]: scores (0, 10x - 3, 20x - 10)
// give class 0 below 0.3, class 1 in (0.3, 0.7), class 2 above 0.7.
ModelSpec threshold_model() {
  ModelSpec m = oracle::assemble("threshold", {oracle::conv(1, 3, 1, 1, 0)}, {"background", "gray", "white"});
  const auto& l = m.layers[0];
  auto w = m.params(l.weight_offset, 3);
  auto b = m.params(l.bias_offset, 3);
  w[0] = 0, w[1] = 10, w[2] = 20;
  b[0] = 0, b[1] = -3, b[2] = -10;
  return m;
}

// receptive field 7: conv d1, relu, conv d2, relu, 1x1 classifier
ModelSpec context_model() {
  ModelSpec m = oracle::assemble("context",
                                 {oracle::conv(1, 3, 3, 1, 1), oracle::simple(LayerKind::ReLU, 3), oracle::conv(3, 3, 3, 2, 2),
                                  oracle::simple(LayerKind::ReLU, 3), oracle::conv(3, 3, 1, 1, 0)},
                                 {"a", "b", "c"});
  std::mt19937_64 rng(17);
  oracle::randomize(m, rng);
  return m;
}

LabelledVolume phantom(Extents e, std::uint64_t seed, double background = 0.1, double noise = 0.04) {
  PhantomOptions o;
  o.background = background;
  o.noise_sigma = noise;
  o.extents = e;
  o.intensity_scale = 255.0;
  return make_phantom(o, seed);
}

SegmentOptions native() {
  SegmentOptions o;
  o.conform = false;
  return o;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("meshseg_it_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

struct Run {
  int code;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(MESHSEG_CLI) + " " + args + " 2>&1";
  FILE* p = ::popen(cmd.c_str(), "r");
  std::string out;
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), p)) out += buf.data();
  const int status = ::pclose(p);
  return {WEXITSTATUS(status), out};
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<float> values(const Volume3D& v) { return {v.data().begin(), v.data().end()}; }

}  // namespace

TEST(SegmentVolume, FullRunRecordsEveryPhase) {
  const auto ph = phantom({32, 32, 32}, 1);
  const auto r = segment_volume(ph.image, threshold_model(), nullptr, native());
  ASSERT_EQ(r.record.status, RunStatus::OK) << r.record.error_kind;
  ASSERT_TRUE(r.labels);
  EXPECT_EQ(r.labels->extents(), ph.image.extents());
  EXPECT_FALSE(r.record.tiled);
  EXPECT_FALSE(r.record.cropped);
  ASSERT_EQ(r.record.phase_seconds.size(), kPhases.size());
  for (auto phase : kPhases) EXPECT_TRUE(r.record.phase_seconds.count(std::string(phase)));
  EXPECT_EQ(r.record.phase_seconds.at("merging"), 0.0);
  EXPECT_EQ(r.record.phase_seconds.at("cropping"), 0.0);
  EXPECT_GT(r.record.peak_bytes, 0u);
  EXPECT_GE(macro_dice(*r.labels, ph.labels, 3), 0.99);
}

TEST(SegmentVolume, CropMatchesUncroppedForPointwiseModel) {
  const auto ph = phantom({40, 36, 32}, 2, 0.0, 0.0);
  SegmentOptions o = native();
  const auto full = segment_volume(ph.image, threshold_model(), nullptr, o);
  o.crop = true;
  const auto cropped = segment_volume(ph.image, threshold_model(), nullptr, o);
  ASSERT_TRUE(full.labels && cropped.labels);
  EXPECT_TRUE(cropped.record.cropped);
  EXPECT_LT(cropped.record.input_shape.product(), ph.image.extents().product());
  EXPECT_EQ(cropped.labels->extents(), ph.image.extents());
  EXPECT_EQ(values(*cropped.labels), values(*full.labels));
}

TEST(SegmentVolume, BudgetFailureAndFailsafeRetry) {
  const auto ph = phantom({32, 32, 32}, 3);
  const ModelSpec m = context_model();
  SegmentOptions o = native();
  const auto reference = segment_volume(ph.image, m, nullptr, o);
  ASSERT_TRUE(reference.labels);

  // below one full-volume activation, above a 16^3 tile with halo
  o.budget_bytes = m.weights.size() * 4 + 3 * 32 * 32 * 32 * 4 / 2;
  const auto failed = segment_volume(ph.image, m, nullptr, o);
  EXPECT_EQ(failed.record.status, RunStatus::Fail);
  EXPECT_EQ(failed.record.error_kind, "BudgetExceeded");
  EXPECT_FALSE(failed.labels);

  o.failsafe = true;
  o.cube = 16;
  o.halo = 3;
  const auto retried = segment_volume(ph.image, m, nullptr, o);
  ASSERT_EQ(retried.record.status, RunStatus::OK) << retried.record.error_kind;
  EXPECT_TRUE(retried.record.tiled);
  EXPECT_EQ(retried.record.cube, std::optional<int>(16));
  EXPECT_GT(retried.record.phase_seconds.at("merging"), 0.0);
  EXPECT_LE(retried.record.peak_bytes, o.budget_bytes);
  EXPECT_EQ(values(*retried.labels), values(*reference.labels));
}

TEST(RunPipeline, BadMagicLeavesNoOutputAndLogsFailure) {
  TempDir dir("badmagic");
  save_model_dir(threshold_model(), dir.path / "model");
  {
    std::ofstream f(dir.path / "bad.nii", std::ios::binary);
    f << std::string(400, '\0');
  }
  PipelineConfig c;
  c.input = dir.path / "bad.nii";
  c.model_dir = dir.path / "model";
  c.output = dir.path / "out.nii.gz";
  c.telemetry = dir.path / "t.jsonl";
  c.options = native();
  const auto r = run_pipeline(c);
  EXPECT_EQ(r.record.status, RunStatus::Fail);
  EXPECT_EQ(r.record.error_kind, "BadMagic");
  EXPECT_FALSE(fs::exists(c.output));
  EXPECT_FALSE(fs::exists(dir.path / "out.nii.gz.partial"));
  const auto lines = read_telemetry(*c.telemetry);
  ASSERT_EQ(lines.size(), 1u);
  EXPECT_EQ(lines[0].at("status"), "Fail");
  EXPECT_EQ(lines[0].at("error_kind"), "BadMagic");
}

TEST(RunPipeline, RepeatedRunsAreByteIdentical) {
  TempDir dir("repeat");
  save_model_dir(context_model(), dir.path / "model");
  const auto ph = phantom({24, 20, 16}, 4);
  nifti::write_volume_file(ph.image, nifti::Datatype::Float32, dir.path / "in.nii.gz");
  PipelineConfig c;
  c.input = dir.path / "in.nii.gz";
  c.model_dir = dir.path / "model";
  c.options = native();
  c.options.tile = true;
  c.options.cube = 8;
  c.options.halo = 3;
  c.output = dir.path / "a.nii.gz";
  ASSERT_EQ(run_pipeline(c).record.status, RunStatus::OK);
  c.output = dir.path / "b.nii.gz";
  ASSERT_EQ(run_pipeline(c).record.status, RunStatus::OK);
  EXPECT_EQ(file_bytes(dir.path / "a.nii.gz"), file_bytes(dir.path / "b.nii.gz"));
  const Volume3D back = nifti::read_volume_file(dir.path / "a.nii.gz");
  EXPECT_EQ(back.extents(), ph.image.extents());
}

TEST(RunPipeline, MissingModelIsFailRecord) {
  TempDir dir("nomodel");
  PipelineConfig c;
  c.input = dir.path / "in.nii";
  c.model_dir = dir.path / "absent";
  c.output = dir.path / "o.nii.gz";
  const auto r = run_pipeline(c);
  EXPECT_EQ(r.record.status, RunStatus::Fail);
  EXPECT_FALSE(r.record.error_kind.empty());
}

TEST(Cli, InfoDescribesGwmLightModel) {
  const auto r = cli("info --model " + std::string(MESHSEG_FIXTURE_DIR) + "/gwm_light");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("5688"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("93"), std::string::npos);
  EXPECT_NE(r.out.find("46"), std::string::npos);
}

TEST(Cli, StatsOnBundledTelemetry) {
  const std::string data = std::string(MESHSEG_DATA_DIR) + "/telemetry_synthetic_reconstructed.jsonl";
  auto r = cli("stats " + data + " --by tiled");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("81.08%"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("87.30%"), std::string::npos);
  EXPECT_NE(r.out.find("1095"), std::string::npos);
  r = cli("stats " + data + " --by cropped --where tiled=false --yates");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("p 1.997e-09"), std::string::npos) << r.out;
  EXPECT_NE(cli("stats " + data + " --by texture").code, 0);
}

TEST(Cli, ConformSegmentDiceAndExitCodes) {
  TempDir dir("cli");
  save_model_dir(threshold_model(), dir.path / "model");
  const auto img = (dir.path / "img.nii.gz").string();
  const auto lab = (dir.path / "lab.nii.gz").string();
  ASSERT_EQ(cli("phantom " + img + " " + lab + " --size 48 --seed 5").code, 0);

  const auto conformed = (dir.path / "conf.nii.gz").string();
  ASSERT_EQ(cli("conform " + img + " " + conformed).code, 0);
  const Volume3D cv = nifti::read_volume_file(conformed);
  EXPECT_EQ(cv.extents(), (Extents{256, 256, 256}));

  const auto seg = (dir.path / "seg.nii.gz").string();
  const auto tel = (dir.path / "t.jsonl").string();
  auto r = cli("segment --model " + (dir.path / "model").string() + " --input " + img + " --output " + seg +
               " --crop --telemetry " + tel);
  ASSERT_EQ(r.code, 0) << r.out;
  ASSERT_TRUE(fs::exists(seg));
  EXPECT_EQ(nifti::read_volume_file(seg).extents(), (Extents{256, 256, 256}));

  r = cli("dice " + seg + " " + seg);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("1"), std::string::npos);

  const auto bad = (dir.path / "bad.nii").string();
  {
    std::ofstream f(bad, std::ios::binary);
    f << std::string(400, 'x');
  }
  r = cli("segment --model " + (dir.path / "model").string() + " --input " + bad + " --output " +
          (dir.path / "never.nii.gz").string() + " --telemetry " + tel);
  EXPECT_NE(r.code, 0);
  EXPECT_FALSE(fs::exists(dir.path / "never.nii.gz"));
  const auto records = read_telemetry(tel);
  ASSERT_EQ(records.size(), 2u);
  EXPECT_EQ(records[0].at("status"), "OK");
  EXPECT_EQ(records[0].at("cropped"), true);
  EXPECT_EQ(records[1].at("status"), "Fail");

  EXPECT_NE(cli("segment --model x --input y --output z --connectivity 7").code, 0);
}
