#pragma once

// Run configuration: a flat registry of dotted keys with line-based
// `key = value` files, flag overrides, and per-key provenance
// (default | file | flag). Unknown keys are a hard error.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hformer/fringe.hpp"
#include "hformer/model.hpp"

namespace hformer {

struct TrainConfig {
    double lr = 5e-4;
    double momentum = 0.9;
    double weight_decay = 0.01;
    double poly_power = 0.9;
    int64_t max_iters = 40000;
    int batch_size = 4;
    int crop = 64;
    bool hflip = true;
    bool vflip = true;
    bool four_crop = false;
    uint64_t seed = 1;
    int64_t checkpoint_interval = 500;
    int64_t log_interval = 10;
    int64_t val_interval = 0;  // 0 = no validation during training
    std::string dataset;

    void validate() const {
        if (momentum < 0 || momentum >= 1) throw UserError("train: momentum must be in [0,1)");
        if (poly_power <= 0) throw UserError("train: poly_power must be positive");
        if (max_iters < 0) throw UserError("train: max_iters must be >= 0");
        if (batch_size < 1) throw UserError("train: batch_size must be >= 1");
        if (crop < 1) throw UserError("train: crop must be >= 1");
        if (lr < 0 || weight_decay < 0) throw UserError("train: lr/weight_decay must be >= 0");
    }
};

struct EvalConfig {
    int window = 64;
    int stride_y = 32;
    int stride_x = 32;
    bool hflip = true;
    bool vflip = true;
    bool closure = false;  // adds the combined flip so the ensemble is a group
};

class RunConfig {
  public:
    enum class Source { kDefault, kFile, kFlag };

    RunConfig();

    // Preset bundles applied below file/flag precedence.
    void apply_preset(const std::string& name);
    void apply_file(const std::filesystem::path& path);
    void set(const std::string& key, const std::string& value, Source source = Source::kFlag);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    std::string get_string(const std::string& key) const;
    int64_t get_int(const std::string& key) const;
    double get_double(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<int> get_int_list(const std::string& key) const;
    Source source(const std::string& key) const;

    // Full resolved dump, one `key = value  # source` line per key.
    std::string serialize(bool with_provenance = true) const;

    const std::vector<std::string>& keys() const { return order_; }

  private:
    struct Value {
        std::string raw;
        Source source = Source::kDefault;
    };
    void require_known(const std::string& key) const;

    std::vector<std::string> order_;
    std::map<std::string, Value> values_;
};

SceneConfig scene_config_from(const RunConfig& rc);
HformerConfig model_config_from(const RunConfig& rc);
TrainConfig train_config_from(const RunConfig& rc);
EvalConfig eval_config_from(const RunConfig& rc);

// Canonical `model.* = ...` lines describing an architecture; embedded in
// checkpoints and compared verbatim when resuming.
std::string model_config_text(const HformerConfig& cfg);
HformerConfig parse_model_config_text(const std::string& text);

}  // namespace hformer
