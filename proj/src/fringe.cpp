#include "hformer/fringe.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace hformer {

void validate(const SceneConfig& cfg) {
    if (cfg.height < 1 || cfg.width < 1) throw UserError("scene: height/width must be positive");
    if (cfg.phase_steps < 3) throw UserError("scene: phase_steps must be >= 3");
    if (cfg.modulation_depth <= 0) throw UserError("scene: modulation_depth must be positive");
    if (cfg.noise_sigma < 0) throw UserError("scene: noise_sigma must be >= 0");
    if (cfg.blob_count_min < 0 || cfg.blob_count_max < cfg.blob_count_min)
        throw UserError("scene: bad blob count range");
    if (cfg.blob_sigma_min <= 0 || cfg.blob_sigma_max < cfg.blob_sigma_min)
        throw UserError("scene: bad blob width range");
    if (cfg.order_min < 0 || cfg.order_max < cfg.order_min || cfg.order_max > kMaxFringeOrder)
        throw UserError("scene: order range must satisfy 0 <= order_min <= order_max <= 33");
}

AbsolutePhaseMap generate_scene(const SceneConfig& cfg) {
    validate(cfg);
    std::mt19937_64 rng(mix64(cfg.seed, 0x5ce5eull));
    const int h = cfg.height, w = cfg.width;

    std::uniform_int_distribution<int> blob_count(cfg.blob_count_min, cfg.blob_count_max);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    struct Blob {
        double cx, cy, amp, sigma;
    };
    std::vector<Blob> blobs(blob_count(rng));
    for (auto& b : blobs) {
        b.cx = unit(rng) * (w - 1);
        b.cy = unit(rng) * (h - 1);
        b.amp = cfg.blob_amp_min + unit(rng) * (cfg.blob_amp_max - cfg.blob_amp_min);
        if (unit(rng) < 0.5) b.amp = -b.amp;
        b.sigma = cfg.blob_sigma_min + unit(rng) * (cfg.blob_sigma_max - cfg.blob_sigma_min);
    }
    const double tilt = (2.0 * unit(rng) - 1.0) * cfg.tilt_max;
    std::uniform_int_distribution<int> top_order(cfg.order_min, cfg.order_max);
    const int k_hi = top_order(rng);

    AbsolutePhaseMap phi;
    phi.height = h;
    phi.width = w;
    phi.values.resize((size_t)h * w);
    double lo = 1e300, hi = -1e300;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            double v = cfg.carrier_slope * x + tilt * y;
            for (const auto& b : blobs) {
                const double dx = x - b.cx, dy = y - b.cy;
                v += b.amp * std::exp(-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma));
            }
            phi.values[(size_t)y * w + x] = v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    }

    // Affine rescale into (-pi, -pi + 2*pi*(k_hi+1)), keeping a margin off
    // both wrap boundaries so the induced orders are exactly 0..k_hi.
    const double span = hi - lo;
    if (!(span > 0.0))
        throw UserError("scene: degenerate config (constant phase) cannot satisfy the order range");
    const double margin = 0.05 * kTwoPi;
    const double target_lo = -kPi + margin;
    const double target_hi = -kPi + kTwoPi * (k_hi + 1) - margin;
    const double a = (target_hi - target_lo) / span;
    const double b = target_lo - a * lo;
    for (auto& v : phi.values) v = a * v + b;
    return phi;
}

std::vector<IntensityImage> render_fringes(const AbsolutePhaseMap& phi, const SceneConfig& cfg) {
    if (cfg.phase_steps < 3) throw UserError("render_fringes: phase_steps must be >= 3");
    std::mt19937_64 rng(mix64(cfg.seed, 0xf21e5ull));
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    std::vector<IntensityImage> images(cfg.phase_steps);
    for (int n = 0; n < cfg.phase_steps; ++n) {
        const double shift = kTwoPi * n / cfg.phase_steps;
        auto& img = images[n];
        img.height = phi.height;
        img.width = phi.width;
        img.values.resize(phi.values.size());
        for (size_t i = 0; i < phi.values.size(); ++i) {
            double v = cfg.intensity_bias + cfg.modulation_depth * std::cos(phi.values[i] - shift);
            if (cfg.noise_sigma > 0) v += noise(rng);
            img.values[i] = v;
        }
    }
    return images;
}

ExtractResult extract_wrapped_phase(const std::vector<IntensityImage>& images) {
    const int n_steps = (int)images.size();
    if (n_steps < 3) throw std::runtime_error("extract_wrapped_phase: need at least 3 phase steps");
    const int h = images[0].height, w = images[0].width;
    for (const auto& img : images)
        if (img.height != h || img.width != w)
            throw std::runtime_error("extract_wrapped_phase: image sizes differ");

    std::vector<double> sins(n_steps), coss(n_steps);
    for (int n = 0; n < n_steps; ++n) {
        sins[n] = std::sin(kTwoPi * n / n_steps);
        coss[n] = std::cos(kTwoPi * n / n_steps);
    }

    ExtractResult res;
    res.phase.height = h;
    res.phase.width = w;
    res.phase.values.resize((size_t)h * w);
    res.valid.assign((size_t)h * w, 1);

    // Scale-aware threshold for "both sums vanished".
    double max_intensity = 0.0;
    for (const auto& img : images)
        for (double v : img.values) max_intensity = std::max(max_intensity, std::abs(v));
    const double eps = 1e-12 * std::max(1.0, max_intensity) * n_steps;

    for (size_t i = 0; i < res.phase.values.size(); ++i) {
        double s = 0.0, c = 0.0;
        for (int n = 0; n < n_steps; ++n) {
            s += images[n].values[i] * sins[n];
            c += images[n].values[i] * coss[n];
        }
        if (std::abs(s) < eps && std::abs(c) < eps) {
            res.valid[i] = 0;
            res.all_valid = false;
            res.phase.values[i] = 0.0;
            continue;
        }
        double p = std::atan2(s, c);
        if (p <= -kPi) p = kPi;  // fold the -pi boundary onto +pi
        res.phase.values[i] = p;
    }
    return res;
}

WrapResult wrap(const AbsolutePhaseMap& phi_abs, int num_classes) {
    WrapResult res;
    res.phase.height = res.order.height = phi_abs.height;
    res.phase.width = res.order.width = phi_abs.width;
    res.phase.values.resize(phi_abs.values.size());
    res.order.values.resize(phi_abs.values.size());
    for (size_t i = 0; i < phi_abs.values.size(); ++i) {
        const double v = phi_abs.values[i];
        long k = (long)std::floor((v + kPi) / kTwoPi);
        double p = v - kTwoPi * k;
        if (p > kPi) {  // division rounded down across the boundary
            k += 1;
            p = v - kTwoPi * k;
        }
        if (p <= -kPi) {  // exact boundary maps to +pi with k one lower
            k -= 1;
            p = v - kTwoPi * k;
        }
        if (k < 0 || k >= num_classes)
            throw std::runtime_error("wrap: fringe order " + std::to_string(k) + " outside [0," +
                                     std::to_string(num_classes - 1) + "]");
        res.phase.values[i] = p;
        res.order.values[i] = (uint8_t)k;
    }
    return res;
}

AbsolutePhaseMap unwrap(const WrappedPhaseMap& phi, const FringeOrderMap& order) {
    if (phi.height != order.height || phi.width != order.width)
        throw std::runtime_error("unwrap: shape mismatch");
    AbsolutePhaseMap out;
    out.height = phi.height;
    out.width = phi.width;
    out.values.resize(phi.values.size());
    for (size_t i = 0; i < phi.values.size(); ++i)
        out.values[i] = phi.values[i] + kTwoPi * order.values[i];
    return out;
}

}  // namespace hformer
