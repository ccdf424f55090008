#pragma once

// Synthetic fringe-projection scenes: absolute-phase generation, N-step
// phase-shifted intensity rendering, arctangent wrapped-phase extraction,
// and the wrap/unwrap relation between absolute phase, wrapped phase and
// fringe order.

#include <cstdint>
#include <vector>

#include "hformer/common.hpp"

namespace hformer {

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kTwoPi = 2.0 * kPi;
inline constexpr int kMaxFringeOrder = 33;

struct AbsolutePhaseMap {
    int height = 0, width = 0;
    std::vector<double> values;  // radians
    double at(int y, int x) const { return values[(size_t)y * width + x]; }
};

struct WrappedPhaseMap {
    int height = 0, width = 0;
    std::vector<double> values;  // radians, each in (-pi, pi]
    double at(int y, int x) const { return values[(size_t)y * width + x]; }
};

struct FringeOrderMap {
    int height = 0, width = 0;
    std::vector<uint8_t> values;  // k(x,y), 0..num_classes-1
    int at(int y, int x) const { return values[(size_t)y * width + x]; }
};

struct IntensityImage {
    int height = 0, width = 0;
    std::vector<double> values;
};

struct SceneConfig {
    int height = 64;
    int width = 64;
    double carrier_slope = 0.5;   // radians per pixel along x, before rescaling
    int blob_count_min = 1;
    int blob_count_max = 4;
    double blob_amp_min = 2.0;    // radians, before rescaling
    double blob_amp_max = 10.0;
    double blob_sigma_min = 4.0;  // pixels
    double blob_sigma_max = 16.0;
    double tilt_max = 0.1;        // radians per pixel along y, uniform in [-tilt_max, tilt_max]
    int order_min = 4;            // per-scene top fringe order is drawn from
    int order_max = 7;            // [order_min, order_max]; must stay <= 33
    double intensity_bias = 128.0;    // A
    double modulation_depth = 100.0;  // B
    int phase_steps = 3;              // N
    double noise_sigma = 0.0;
    uint64_t seed = 0;
};

void validate(const SceneConfig& cfg);

struct WrapResult {
    WrappedPhaseMap phase;
    FringeOrderMap order;
};

struct ExtractResult {
    WrappedPhaseMap phase;
    std::vector<uint8_t> valid;  // 0 where modulation vanished
    bool all_valid = true;
};

// Carrier + Gaussian bumps + tilt, affinely rescaled so the induced fringe
// order spans [0, k_hi] with k_hi drawn from [order_min, order_max].
// Deterministic given cfg.seed.
AbsolutePhaseMap generate_scene(const SceneConfig& cfg);

// I_n(x,y) = A + B*cos(Phi - 2*pi*n/N) + noise, n = 0..N-1.
std::vector<IntensityImage> render_fringes(const AbsolutePhaseMap& phi, const SceneConfig& cfg);

// phi = atan2(sum I_n sin(2 pi n / N), sum I_n cos(2 pi n / N)), in (-pi, pi].
ExtractResult extract_wrapped_phase(const std::vector<IntensityImage>& images);

// Splits Phi into wrapped phase in (-pi, pi] and the integer fringe order.
// Throws if any induced order falls outside [0, num_classes-1].
WrapResult wrap(const AbsolutePhaseMap& phi_abs, int num_classes = kMaxFringeOrder + 1);

// Phi = phi + 2*pi*k.
AbsolutePhaseMap unwrap(const WrappedPhaseMap& phi, const FringeOrderMap& order);

}  // namespace hformer
