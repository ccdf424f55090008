#include "hformer/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace hformer {

namespace {

struct KeySpec {
    const char* key;
    const char* def;
};

// The full key registry with base defaults. Values are kept as strings and
// parsed on access.
const std::vector<KeySpec>& registry() {
    static const std::vector<KeySpec> kKeys = {
        {"scene.height", "64"},
        {"scene.width", "64"},
        {"scene.carrier_slope", "0.5"},
        {"scene.blob_count_min", "1"},
        {"scene.blob_count_max", "4"},
        {"scene.blob_amp_min", "2"},
        {"scene.blob_amp_max", "10"},
        {"scene.blob_sigma_min", "4"},
        {"scene.blob_sigma_max", "16"},
        {"scene.tilt_max", "0.1"},
        {"scene.order_min", "4"},
        {"scene.order_max", "7"},
        {"scene.intensity_bias", "128"},
        {"scene.modulation", "100"},
        {"scene.phase_steps", "3"},
        {"scene.noise_sigma", "0"},
        {"scene.seed", "1"},

        {"model.height", "64"},
        {"model.width", "64"},
        {"model.base_channels", "8"},
        {"model.stage_multiplier", "4"},
        {"model.blocks_per_stage", "1"},
        {"model.patch_sizes", "4,4,4,4"},
        {"model.num_classes", "34"},
        {"model.num_heads", "1"},
        {"model.mlp_ratio", "4"},
        {"model.mlp_layers", "2"},
        {"model.head_mode", "improved_fpn"},
        {"model.pos_encoding", "sinusoidal"},
        {"model.pos_every_stage", "true"},
        {"model.backbone_gelu", "true"},
        {"model.projection_layernorm", "true"},

        {"train.lr", "0.0005"},
        {"train.momentum", "0.9"},
        {"train.weight_decay", "0.01"},
        {"train.poly_power", "0.9"},
        {"train.max_iters", "40000"},
        {"train.batch_size", "4"},
        {"train.crop", "64"},
        {"train.hflip", "true"},
        {"train.vflip", "true"},
        {"train.four_crop", "false"},
        {"train.seed", "1"},
        {"train.checkpoint_interval", "500"},
        {"train.log_interval", "10"},
        {"train.val_interval", "0"},
        {"train.dataset", ""},

        {"eval.window", "64"},
        {"eval.stride_y", "32"},
        {"eval.stride_x", "32"},
        {"eval.hflip", "true"},
        {"eval.vflip", "true"},
        {"eval.closure", "false"},
    };
    return kKeys;
}

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

const char* source_name(RunConfig::Source s) {
    switch (s) {
        case RunConfig::Source::kDefault: return "default";
        case RunConfig::Source::kFile: return "file";
        default: return "flag";
    }
}

}  // namespace

RunConfig::RunConfig() {
    for (const auto& spec : registry()) {
        order_.emplace_back(spec.key);
        values_[spec.key] = {spec.def, Source::kDefault};
    }
}

void RunConfig::require_known(const std::string& key) const {
    if (!values_.count(key)) throw UserError("unknown config key: " + key);
}

void RunConfig::apply_preset(const std::string& name) {
    auto put = [&](const char* k, const char* v) { values_[k] = {v, Source::kDefault}; };
    if (name == "toy") {
        // desk-scale preset used by the acceptance overfit run
        put("scene.height", "64");
        put("scene.width", "64");
        put("scene.order_min", "4");
        put("scene.order_max", "7");
        put("model.height", "64");
        put("model.width", "64");
        put("model.base_channels", "8");
        put("model.stage_multiplier", "4");
        put("model.blocks_per_stage", "1");
        put("model.num_classes", "8");
        put("train.lr", "0.02");
        put("train.max_iters", "2000");
        put("train.batch_size", "2");
        put("train.crop", "64");
        put("train.hflip", "false");
        put("train.vflip", "false");
        put("train.checkpoint_interval", "1000");
        put("eval.window", "64");
        put("eval.stride_y", "32");
        put("eval.stride_x", "32");
    } else if (name == "paper") {
        // full-scale settings; not expected to converge on a desktop CPU
        put("scene.height", "480");
        put("scene.width", "640");
        put("scene.order_min", "20");
        put("scene.order_max", "33");
        put("model.height", "384");
        put("model.width", "384");
        put("model.base_channels", "32");
        put("model.num_classes", "34");
        put("train.max_iters", "40000");
        put("train.batch_size", "4");
        put("train.crop", "384");
        put("train.four_crop", "true");
        put("train.hflip", "true");
        put("train.vflip", "true");
        put("eval.window", "384");
        put("eval.stride_y", "96");
        put("eval.stride_x", "256");
    } else {
        throw UserError("unknown preset: " + name + " (expected toy or paper)");
    }
}

void RunConfig::apply_file(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw UserError("cannot open config file " + path.string());
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos)
            throw UserError(path.string() + ":" + std::to_string(lineno) + ": expected `key = value`");
        set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), Source::kFile);
    }
}

void RunConfig::set(const std::string& key, const std::string& value, Source source) {
    require_known(key);
    values_[key] = {value, source};
}

std::string RunConfig::get_string(const std::string& key) const {
    require_known(key);
    return values_.at(key).raw;
}

int64_t RunConfig::get_int(const std::string& key) const {
    const std::string raw = get_string(key);
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw UserError("config key " + key + ": expected integer, got '" + raw + "'");
    }
}

double RunConfig::get_double(const std::string& key) const {
    const std::string raw = get_string(key);
    try {
        size_t pos = 0;
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument(raw);
        return v;
    } catch (const std::exception&) {
        throw UserError("config key " + key + ": expected number, got '" + raw + "'");
    }
}

bool RunConfig::get_bool(const std::string& key) const {
    const std::string raw = get_string(key);
    if (raw == "true" || raw == "1" || raw == "yes") return true;
    if (raw == "false" || raw == "0" || raw == "no") return false;
    throw UserError("config key " + key + ": expected boolean, got '" + raw + "'");
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
    const std::string raw = get_string(key);
    std::vector<int> out;
    std::stringstream ss(raw);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (item.empty()) continue;
        try {
            out.push_back(std::stoi(item));
        } catch (const std::exception&) {
            throw UserError("config key " + key + ": expected comma-separated integers, got '" + raw + "'");
        }
    }
    return out;
}

RunConfig::Source RunConfig::source(const std::string& key) const {
    require_known(key);
    return values_.at(key).source;
}

std::string RunConfig::serialize(bool with_provenance) const {
    std::ostringstream os;
    for (const auto& key : order_) {
        const auto& v = values_.at(key);
        os << key << " = " << v.raw;
        if (with_provenance) os << "  # " << source_name(v.source);
        os << "\n";
    }
    return os.str();
}

SceneConfig scene_config_from(const RunConfig& rc) {
    SceneConfig cfg;
    cfg.height = (int)rc.get_int("scene.height");
    cfg.width = (int)rc.get_int("scene.width");
    cfg.carrier_slope = rc.get_double("scene.carrier_slope");
    cfg.blob_count_min = (int)rc.get_int("scene.blob_count_min");
    cfg.blob_count_max = (int)rc.get_int("scene.blob_count_max");
    cfg.blob_amp_min = rc.get_double("scene.blob_amp_min");
    cfg.blob_amp_max = rc.get_double("scene.blob_amp_max");
    cfg.blob_sigma_min = rc.get_double("scene.blob_sigma_min");
    cfg.blob_sigma_max = rc.get_double("scene.blob_sigma_max");
    cfg.tilt_max = rc.get_double("scene.tilt_max");
    cfg.order_min = (int)rc.get_int("scene.order_min");
    cfg.order_max = (int)rc.get_int("scene.order_max");
    cfg.intensity_bias = rc.get_double("scene.intensity_bias");
    cfg.modulation_depth = rc.get_double("scene.modulation");
    cfg.phase_steps = (int)rc.get_int("scene.phase_steps");
    cfg.noise_sigma = rc.get_double("scene.noise_sigma");
    cfg.seed = (uint64_t)rc.get_int("scene.seed");
    return cfg;
}

HformerConfig model_config_from(const RunConfig& rc) {
    HformerConfig cfg;
    cfg.height = (int)rc.get_int("model.height");
    cfg.width = (int)rc.get_int("model.width");
    cfg.base_channels = (int)rc.get_int("model.base_channels");
    cfg.stage_multiplier = (int)rc.get_int("model.stage_multiplier");
    cfg.blocks_per_stage = (int)rc.get_int("model.blocks_per_stage");
    const auto patches = rc.get_int_list("model.patch_sizes");
    if (patches.size() != 4) throw UserError("model.patch_sizes: expected 4 comma-separated values");
    std::copy(patches.begin(), patches.end(), cfg.patch_sizes.begin());
    cfg.num_classes = (int)rc.get_int("model.num_classes");
    cfg.num_heads = (int)rc.get_int("model.num_heads");
    cfg.mlp_ratio = rc.get_double("model.mlp_ratio");
    cfg.mlp_layers = (int)rc.get_int("model.mlp_layers");
    const std::string head = rc.get_string("model.head_mode");
    if (head == "improved_fpn")
        cfg.head_mode = HformerConfig::HeadMode::kImprovedFpn;
    else if (head == "single")
        cfg.head_mode = HformerConfig::HeadMode::kSingle;
    else
        throw UserError("model.head_mode: expected improved_fpn or single, got '" + head + "'");
    const std::string pos = rc.get_string("model.pos_encoding");
    if (pos == "sinusoidal")
        cfg.pos_encoding = HformerConfig::PosKind::kSinusoidal;
    else if (pos == "none")
        cfg.pos_encoding = HformerConfig::PosKind::kNone;
    else
        throw UserError("model.pos_encoding: expected sinusoidal or none, got '" + pos + "'");
    cfg.pos_every_stage = rc.get_bool("model.pos_every_stage");
    cfg.backbone_gelu = rc.get_bool("model.backbone_gelu");
    cfg.projection_layernorm = rc.get_bool("model.projection_layernorm");
    return cfg;
}

TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig cfg;
    cfg.lr = rc.get_double("train.lr");
    cfg.momentum = rc.get_double("train.momentum");
    cfg.weight_decay = rc.get_double("train.weight_decay");
    cfg.poly_power = rc.get_double("train.poly_power");
    cfg.max_iters = rc.get_int("train.max_iters");
    cfg.batch_size = (int)rc.get_int("train.batch_size");
    cfg.crop = (int)rc.get_int("train.crop");
    cfg.hflip = rc.get_bool("train.hflip");
    cfg.vflip = rc.get_bool("train.vflip");
    cfg.four_crop = rc.get_bool("train.four_crop");
    cfg.seed = (uint64_t)rc.get_int("train.seed");
    cfg.checkpoint_interval = rc.get_int("train.checkpoint_interval");
    cfg.log_interval = rc.get_int("train.log_interval");
    cfg.val_interval = rc.get_int("train.val_interval");
    cfg.dataset = rc.get_string("train.dataset");
    return cfg;
}

EvalConfig eval_config_from(const RunConfig& rc) {
    EvalConfig cfg;
    cfg.window = (int)rc.get_int("eval.window");
    cfg.stride_y = (int)rc.get_int("eval.stride_y");
    cfg.stride_x = (int)rc.get_int("eval.stride_x");
    cfg.hflip = rc.get_bool("eval.hflip");
    cfg.vflip = rc.get_bool("eval.vflip");
    cfg.closure = rc.get_bool("eval.closure");
    return cfg;
}

std::string model_config_text(const HformerConfig& cfg) {
    std::ostringstream os;
    os << "model.height = " << cfg.height << "\n";
    os << "model.width = " << cfg.width << "\n";
    os << "model.base_channels = " << cfg.base_channels << "\n";
    os << "model.stage_multiplier = " << cfg.stage_multiplier << "\n";
    os << "model.blocks_per_stage = " << cfg.blocks_per_stage << "\n";
    os << "model.patch_sizes = " << cfg.patch_sizes[0] << "," << cfg.patch_sizes[1] << ","
       << cfg.patch_sizes[2] << "," << cfg.patch_sizes[3] << "\n";
    os << "model.num_classes = " << cfg.num_classes << "\n";
    os << "model.num_heads = " << cfg.num_heads << "\n";
    os << "model.mlp_ratio = " << cfg.mlp_ratio << "\n";
    os << "model.mlp_layers = " << cfg.mlp_layers << "\n";
    os << "model.head_mode = "
       << (cfg.head_mode == HformerConfig::HeadMode::kImprovedFpn ? "improved_fpn" : "single") << "\n";
    os << "model.pos_encoding = "
       << (cfg.pos_encoding == HformerConfig::PosKind::kSinusoidal ? "sinusoidal" : "none") << "\n";
    os << "model.pos_every_stage = " << (cfg.pos_every_stage ? "true" : "false") << "\n";
    os << "model.backbone_gelu = " << (cfg.backbone_gelu ? "true" : "false") << "\n";
    os << "model.projection_layernorm = " << (cfg.projection_layernorm ? "true" : "false") << "\n";
    return os.str();
}

HformerConfig parse_model_config_text(const std::string& text) {
    RunConfig rc;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) throw UserError("bad model config line: " + line);
        rc.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)), RunConfig::Source::kFile);
    }
    return model_config_from(rc);
}

}  // namespace hformer
