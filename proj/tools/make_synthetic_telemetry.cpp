// Writes the bundled synthetic-reconstructed telemetry dataset.
//
// The records are not observed runs. Per-model Fail/OK counts, fail types and
// mean phase timings are fixed to target aggregates so that the `stats`
// subcommand can be checked against them; everything else (timestamps, crop
// shapes) is filler generated from a fixed seed.
//
//   make_synthetic_telemetry <out.jsonl>

#include <algorithm>
#include <cstdio>
#include <ctime>
#include <random>
#include <string>
#include <vector>

#include "meshseg/telemetry.hpp"

using namespace meshseg;

namespace {

struct ModelGroup {
  const char* name;
  bool cropped;
  bool tiled;
  int fail;
  int ok;
  // preprocessing, cropping, inference, merging, postprocessing
  double seconds[5];
};

constexpr ModelGroup kGroups[] = {
    {"Full Brain GWM (light)", false, false, 135, 644, {2.624046, 0.0, 9.935594, 0.0, 14.732657}},
    {"Full Brain GWM (large)", false, false, 78, 115, {1.647580, 0.0, 14.011876, 0.0, 13.194727}},
    {"Cortical Atlas 50", true, false, 3, 168, {1.596227, 27.202827, 8.525125, 0.0, 11.803998}},
    {"FS aparc+aseg Atlas 104", true, false, 1, 3, {1.340567, 21.924533, 13.652400, 0.0, 11.471533}},
    {"Subvolume GWM (failsafe)", false, true, 7, 148, {2.697981, 0.0, 39.773656, 1.991998, 12.707437}},
    {"FS aparc+aseg Atlas 104 (failsafe)", true, true, 17, 17, {1.710471, 29.035294, 37.802824, 16.573937, 19.328529}},
};

constexpr const char* kShader = "Failed to compile fragment shader";
constexpr const char* kLink = "Failed to link vertex and fragment shaders";
constexpr const char* kTexture = "Unable to create WebGL Texture";

// Fail types per group, summing to 174/33/10 over full-volume groups and
// 19/5/0 over sub-volume groups.
constexpr int kFailTypes[][3] = {
    {108, 20, 7}, {62, 13, 3}, {3, 0, 0}, {1, 0, 0}, {5, 2, 0}, {14, 3, 0},
};

}  // namespace

int main(int argc, char** argv) {
  if (argc != 2) {
    std::fprintf(stderr, "usage: %s <out.jsonl>\n", argv[0]);
    return 2;
  }
  std::mt19937_64 rng(20230531);
  const long long start = 1651363200;  // 2022-05-01T00:00:00Z
  const long long span = 34185600;     // through 2023-05-31

  std::vector<TelemetryRecord> records;
  for (std::size_t g = 0; g < std::size(kGroups); ++g) {
    const ModelGroup& mg = kGroups[g];
    std::vector<std::string> kinds;
    kinds.insert(kinds.end(), static_cast<std::size_t>(kFailTypes[g][0]), kShader);
    kinds.insert(kinds.end(), static_cast<std::size_t>(kFailTypes[g][1]), kLink);
    kinds.insert(kinds.end(), static_cast<std::size_t>(kFailTypes[g][2]), kTexture);
    if (static_cast<int>(kinds.size()) != mg.fail) {
      std::fprintf(stderr, "fail types do not add up for %s\n", mg.name);
      return 1;
    }
    for (int i = 0; i < mg.fail + mg.ok; ++i) {
      TelemetryRecord r;
      const long long t = start + static_cast<long long>(rng() % static_cast<unsigned long long>(span));
      char ts[32];
      const std::time_t tt = static_cast<std::time_t>(t);
      std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
      r.timestamp = ts;
      r.model_name = mg.name;
      r.input_shape = mg.cropped ? Extents{140 + static_cast<int>(rng() % 40), 170 + static_cast<int>(rng() % 40),
                                           150 + static_cast<int>(rng() % 40)}
                                 : Extents{256, 256, 256};
      r.cropped = mg.cropped;
      r.tiled = mg.tiled;
      if (mg.tiled) {
        r.cube = 64;
        r.halo = 0;
      }
      for (std::size_t p = 0; p < kPhases.size(); ++p) r.phase_seconds[std::string(kPhases[p])] = mg.seconds[p];
      r.peak_bytes = 0;
      if (i < mg.fail) {
        r.status = RunStatus::Fail;
        r.error_kind = kinds[static_cast<std::size_t>(i)];
      }
      records.push_back(std::move(r));
    }
  }
  std::stable_sort(records.begin(), records.end(),
            [](const TelemetryRecord& a, const TelemetryRecord& b) { return a.timestamp < b.timestamp; });

  std::FILE* f = std::fopen(argv[1], "w");
  if (!f) {
    std::perror(argv[1]);
    return 1;
  }
  for (const auto& r : records) std::fprintf(f, "%s\n", to_json(r).dump().c_str());
  std::fclose(f);
  std::printf("wrote %zu records to %s\n", records.size(), argv[1]);
  return 0;
}
