#pragma once

// Central finite-difference gradient checking, always in 64-bit.

#include <functional>
#include <span>

#include "hformer/tensor.hpp"

namespace hformer {

// f builds a scalar loss from the current contents of x (it must read x
// through the same shared buffers, i.e. hold a handle copy). Returns the
// max relative error between the tape gradient and central differences
// over the given flat coordinates of x (all coordinates when empty).
// Relative error uses denominator max(|a|, |n|, 1e-8).
inline double grad_check(const std::function<Tensor<double>()>& f, Tensor<double> x,
                         std::span<const int64_t> coords = {}, double eps = 1e-5) {
    x.enable_grad();
    x.zero_grad();
    std::vector<double> analytic;
    {
        GradTape<double> tape;
        Tensor<double> y = f();
        if (y.numel() != 1) throw std::runtime_error("grad_check: f must be scalar-valued");
        tape.backward(y);
        analytic = x.gradvec();
    }
    std::vector<int64_t> all;
    if (coords.empty()) {
        all.resize(x.numel());
        std::iota(all.begin(), all.end(), 0);
        coords = all;
    }
    double max_rel = 0.0;
    for (int64_t c : coords) {
        const double old = (*x.data)[c];
        (*x.data)[c] = old + eps;
        const double yp = f().value();
        (*x.data)[c] = old - eps;
        const double ym = f().value();
        (*x.data)[c] = old;
        const double numeric = (yp - ym) / (2.0 * eps);
        const double a = analytic[c];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
        max_rel = std::max(max_rel, rel);
    }
    return max_rel;
}

}  // namespace hformer
