#pragma once

// FPM array container (little-endian):
//   magic "FPM1" | u8 dtype (0 = f32, 1 = u8) | u32 height | u32 width |
//   row-major payload.
// A dataset directory holds paired "<id>_phase.fpm" / "<id>_order.fpm"
// files plus manifest.txt with one "<id> <split>" line per sample.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hformer/fringe.hpp"

namespace hformer {

enum class FpmDtype : uint8_t { kF32 = 0, kU8 = 1 };

struct FpmArray {
    FpmDtype dtype = FpmDtype::kF32;
    int height = 0, width = 0;
    std::vector<float> f32;   // filled when dtype == kF32
    std::vector<uint8_t> u8;  // filled when dtype == kU8
};

void write_fpm(const std::filesystem::path& path, int height, int width, const std::vector<float>& data);
void write_fpm(const std::filesystem::path& path, int height, int width, const std::vector<uint8_t>& data);
FpmArray read_fpm(const std::filesystem::path& path);
FpmArray read_fpm_expect(const std::filesystem::path& path, FpmDtype expect);

// One training/eval sample as stored on disk.
struct Sample {
    int height = 0, width = 0;
    std::vector<float> phase;    // wrapped phase
    std::vector<uint8_t> order;  // fringe-order labels
};

struct ManifestEntry {
    std::string id;
    std::string split;  // train | val | test
};

void write_manifest(const std::filesystem::path& dir, const std::vector<ManifestEntry>& entries);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir);

void write_sample(const std::filesystem::path& dir, const std::string& id, const WrappedPhaseMap& phase,
                  const FringeOrderMap& order);
Sample read_sample(const std::filesystem::path& dir, const std::string& id);

// All samples of one split, in manifest order.
std::vector<Sample> load_split(const std::filesystem::path& dir, const std::string& split);

}  // namespace hformer
