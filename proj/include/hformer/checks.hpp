#pragma once

// Gradient-check suites over the differentiable primitives, the CAT block,
// and the assembled model, all in 64-bit. Parameters are moved to a generic
// random point first: at tiny init scales the deep paths are nearly flat and
// finite differences cannot resolve their gradients at any step size.

#include <string>
#include <vector>

namespace hformer {

struct CheckResult {
    std::string name;
    double max_rel_err = 0.0;
};

// One entry per primitive op (matmul, bmm, softmax, layer_norm, gelu,
// conv2d, bilinear_resize, take, concat, cross_entropy, ...).
std::vector<CheckResult> primitive_grad_checks();

// Full CAT block at C=4, H=W=4, p=2: input and every parameter tensor.
CheckResult cat_block_grad_check();

// Tiny end-to-end model (32x32 input, C=4, K=4): `samples` random
// (parameter, coordinate) draws against central differences.
CheckResult model_grad_check(int samples = 50, uint64_t seed = 2024);

}  // namespace hformer
