#pragma once

// Training loop: cross-entropy over fringe-order labels, SGD with momentum
// and coupled L2 weight decay (norm/bias/table parameters exempt),
// polynomial learning-rate decay, paired flip/crop augmentation, CSV metric
// logging and HFCK checkpointing with bitwise-reproducible resume.

#include <filesystem>
#include <optional>

#include "hformer/checkpoint.hpp"
#include "hformer/config.hpp"
#include "hformer/fpm.hpp"
#include "hformer/model.hpp"

namespace hformer {

// lr(t) = initial_lr * (1 - t/max_iters)^power
double poly_lr(int64_t iter, const TrainConfig& cfg);

class SgdOptimizer {
  public:
    SgdOptimizer(ParamStore<float>& params, const TrainConfig& cfg);

    // g = grad + weight_decay * param (decayed parameters only);
    // v = momentum * v + g; param -= lr * v. Throws naming the parameter on
    // a non-finite gradient.
    void step(double lr);

    std::vector<Tensor<float>>& momentum() { return momentum_; }
    const std::vector<Tensor<float>>& momentum() const { return momentum_; }

  private:
    ParamStore<float>* params_;
    TrainConfig cfg_;
    std::vector<Tensor<float>> momentum_;
};

// Horizontal/vertical flip with probability 1/2 each (as enabled), applied
// identically to phase and labels, then a random crop to cfg.crop.
Sample augment_sample(const Sample& s, const TrainConfig& cfg, std::mt19937_64& rng);

// Overlapped corner crops of a full image (the 4-crop training protocol;
// fewer when an axis equals the window).
std::vector<Sample> four_crops(const Sample& s, int window);

struct TrainLogRow {
    int64_t iter = 0;
    double lr = 0.0;
    double loss = 0.0;
    bool has_val = false;
    double val_miou = 0.0, val_mse = 0.0, val_mae = 0.0;
};

std::string log_csv_header();
std::string log_csv_row(const TrainLogRow& row);

struct TrainResult {
    uint64_t iterations = 0;
    std::vector<TrainLogRow> log;
    std::filesystem::path final_checkpoint;
    bool diverged = false;
    std::string divergence_message;
};

class Trainer {
  public:
    Trainer(const HformerConfig& model_cfg, const TrainConfig& train_cfg, const EvalConfig& eval_cfg);

    // Fresh model + optimizer at iteration 0, or state restored from a
    // checkpoint (architecture text must match exactly).
    void initialize();
    void restore(const std::filesystem::path& checkpoint);

    // Runs until max_iters (or divergence), checkpointing into out_dir and
    // appending to the in-memory log. Deterministic given the seed.
    // stop_after, when >= 0, pauses the run at that iteration without
    // touching the schedule (split-run resume keeps the same lr curve).
    TrainResult run(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                    const std::filesystem::path& out_dir, int64_t stop_after = -1);

    Model<float>& model() { return *model_; }
    SgdOptimizer& optimizer() { return *opt_; }
    uint64_t iteration() const { return iter_; }

    Checkpoint make_checkpoint() const;

  private:
    TrainLogRow validate_row(const std::vector<Sample>& val_set) const;

    HformerConfig model_cfg_;
    TrainConfig train_cfg_;
    EvalConfig eval_cfg_;
    std::optional<Model<float>> model_;
    std::optional<SgdOptimizer> opt_;
    uint64_t iter_ = 0;
};

// Per-pixel training accuracy of argmax(model(x)) against labels over a
// sample set (full-image forward, no tiling).
double pixel_accuracy(const Model<float>& model, const std::vector<Sample>& samples);

}  // namespace hformer
