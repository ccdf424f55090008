#pragma once

// Full-image prediction: sliding-window tiling with probability-mean overlap
// fusion, flip test-time augmentation with inverse flips on the outputs,
// argmax fringe-order maps, and unwrapping with predicted orders.

#include <functional>

#include "hformer/config.hpp"
#include "hformer/fringe.hpp"
#include "hformer/model.hpp"
#include "hformer/tiles.hpp"

namespace hformer {

// Maps a [1,1,w,w] wrapped-phase window to [1,K,w,w] logits.
using WindowModel = std::function<Tensor<float>(const Tensor<float>&)>;

// Adapter over a frozen model; the model must outlive the returned callable.
WindowModel model_window_fn(const Model<float>& model);

struct FlipMember {
    bool hflip = false;
    bool vflip = false;
};

// Ensemble members in fixed order: identity, then H, V, HV as configured.
std::vector<FlipMember> tta_members(const EvalConfig& cfg);

// Class-major [K, H, W] probabilities for one image: per TTA member, run
// tiled inference on the flipped image and un-flip the probability map;
// members are averaged in double so identical members reproduce their
// common value exactly.
std::vector<float> tta_predict(const WindowModel& model, int num_classes, const std::vector<float>& image,
                               int h, int w, const EvalConfig& cfg);

// Tiled-only path (identity member), exposed for the fusion property tests.
std::vector<float> tiled_probabilities(const WindowModel& model, int num_classes,
                                       const std::vector<float>& image, int h, int w,
                                       const EvalConfig& cfg);

// Argmax over TTA-averaged probabilities; ties break toward the smaller
// class index.
FringeOrderMap predict_fringe_order(const WindowModel& model, int num_classes,
                                    const std::vector<float>& image, int h, int w, const EvalConfig& cfg);

// Phi = phi + 2*pi*k with the predicted order map.
AbsolutePhaseMap unwrap_with_prediction(const WrappedPhaseMap& phase, const FringeOrderMap& order);

// 8-bit binary PGM (P5) with value k * 255 / (K - 1), rounded.
void write_pgm(const std::filesystem::path& path, const FringeOrderMap& order, int num_classes);

}  // namespace hformer
