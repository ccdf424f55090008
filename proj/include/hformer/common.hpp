#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace hformer {

// Thrown for bad user input (CLI args, config files, malformed data files).
// Everything else (shape bugs, internal contract violations) uses
// std::runtime_error and maps to a different exit code in the CLI.
struct UserError : std::runtime_error {
    explicit UserError(const std::string& msg) : std::runtime_error(msg) {}
};

// splitmix64, used to derive independent rng streams from (seed, index)
// so parallel sample preparation cannot change results.
inline uint64_t mix64(uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline uint64_t mix64(uint64_t a, uint64_t b) { return mix64(a ^ mix64(b)); }
inline uint64_t mix64(uint64_t a, uint64_t b, uint64_t c) { return mix64(mix64(a, b) ^ mix64(c)); }

// Worker cap from HFORMER_THREADS; 0 means "no cap set".
int env_thread_cap();

// Applies the HFORMER_THREADS cap to the OpenMP runtime (no-op without OpenMP).
void apply_thread_cap();

}  // namespace hformer
