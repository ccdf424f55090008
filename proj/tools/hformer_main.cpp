// hformer: fringe-order prediction for phase unwrapping.
//
// Commands:
//   gen-data    synthesize a wrapped-phase / fringe-order dataset
//   train       train a model on a dataset directory
//   eval        tiled + flip-TTA evaluation of a checkpoint on a split
//   predict     full-image fringe-order + unwrapped-phase prediction
//   grad-check  run the numeric gradient check suites
//
// Any registered config key can be set with `--section.key value`; values
// also come from `--config FILE` (key = value lines) and `--preset`.
// Exit codes: 0 success, 1 user error, 2 internal error.

#include <cinttypes>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "hformer/checkpoint.hpp"
#include "hformer/checks.hpp"
#include "hformer/config.hpp"
#include "hformer/fpm.hpp"
#include "hformer/infer.hpp"
#include "hformer/metrics.hpp"
#include "hformer/train.hpp"

namespace fs = std::filesystem;
using namespace hformer;

namespace {

const char* kUsage = R"(usage: hformer <command> [options]

commands:
  gen-data   --out DIR [--count N] [--split A/B/C] [--seed S] [--force]
  train      --data DIR --out DIR [--resume CKPT] [--max-iters N] [--seed S]
  eval       --checkpoint CKPT --data DIR --out DIR [--split val|test]
             [--hflip [BOOL]] [--vflip [BOOL]] [--closure [BOOL]] [--no-tta]
  predict    --checkpoint CKPT --input PHASE.fpm --out PREFIX
  grad-check [--samples N]

common options:
  --preset toy|paper    preset defaults (applied before file and flags)
  --config FILE         key = value configuration file
  --KEY VALUE           override any config key, e.g. --train.lr 0.001

HFORMER_THREADS caps worker parallelism.
)";

struct Args {
    RunConfig config;
    std::map<std::string, std::string> opts;  // command-specific options
};

bool is_config_key(const std::string& name) {
    return name.rfind("scene.", 0) == 0 || name.rfind("model.", 0) == 0 || name.rfind("train.", 0) == 0 ||
           name.rfind("eval.", 0) == 0;
}

// Options that take no value (or an optional boolean).
bool is_switch(const std::string& name) {
    return name == "force" || name == "no-tta" || name == "hflip" || name == "vflip" || name == "closure";
}

Args parse_args(int argc, char** argv, int first) {
    Args args;
    std::string preset, config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    for (int i = first; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg.rfind("--", 0) != 0) throw UserError("unexpected argument: " + arg);
        arg = arg.substr(2);
        std::string value;
        bool has_value = false;
        if (auto eq = arg.find('='); eq != std::string::npos) {
            value = arg.substr(eq + 1);
            arg = arg.substr(0, eq);
            has_value = true;
        } else if (i + 1 < argc && (argv[i + 1][0] != '-' ||
                                    (argv[i + 1][1] && (isdigit((unsigned char)argv[i + 1][1]) || argv[i + 1][1] == '.')))) {
            if (!is_switch(arg) || std::string(argv[i + 1]) == "true" || std::string(argv[i + 1]) == "false") {
                value = argv[++i];
                has_value = true;
            }
        }
        if (arg == "preset") {
            preset = value;
        } else if (arg == "config") {
            config_file = value;
        } else if (is_config_key(arg)) {
            if (!has_value) throw UserError("--" + arg + " needs a value");
            overrides.emplace_back(arg, value);
        } else if (arg == "seed") {
            overrides.emplace_back("train.seed", value);
            overrides.emplace_back("scene.seed", value);
        } else if (arg == "max-iters") {
            overrides.emplace_back("train.max_iters", value);
        } else if (arg == "hflip" || arg == "vflip" || arg == "closure") {
            overrides.emplace_back("eval." + arg, has_value ? value : "true");
        } else if (arg == "no-tta") {
            overrides.emplace_back("eval.hflip", "false");
            overrides.emplace_back("eval.vflip", "false");
            overrides.emplace_back("eval.closure", "false");
        } else {
            args.opts[arg] = has_value ? value : "true";
        }
    }
    if (!preset.empty()) args.config.apply_preset(preset);
    if (!config_file.empty()) args.config.apply_file(config_file);
    for (const auto& [k, v] : overrides) args.config.set(k, v, RunConfig::Source::kFlag);
    if (!preset.empty()) args.opts["preset"] = preset;
    return args;
}

void require_opts_subset(const Args& args, std::initializer_list<const char*> allowed) {
    for (const auto& [k, v] : args.opts) {
        bool ok = false;
        for (const char* a : allowed)
            if (k == a) ok = true;
        if (!ok) throw UserError("unknown option --" + k);
    }
}

std::string require_opt(const Args& args, const std::string& name) {
    auto it = args.opts.find(name);
    if (it == args.opts.end()) throw UserError("missing required option --" + name);
    return it->second;
}

int cmd_gen_data(const Args& args) {
    require_opts_subset(args, {"out", "count", "split", "force", "preset"});
    const fs::path out = require_opt(args, "out");
    const int count = args.opts.count("count") ? std::stoi(args.opts.at("count")) : 100;
    if (count < 1) throw UserError("--count must be positive");
    std::string split = args.opts.count("split") ? args.opts.at("split") : "80/10/10";
    int pa = 0, pb = 0, pc = 0;
    if (std::sscanf(split.c_str(), "%d/%d/%d", &pa, &pb, &pc) != 3 || pa + pb + pc != 100)
        throw UserError("--split expects train/val/test percentages summing to 100, e.g. 80/10/10");

    if (fs::exists(out) && !fs::is_empty(out) && !args.opts.count("force"))
        throw UserError(out.string() + " exists and is not empty (use --force to overwrite)");
    fs::create_directories(out);

    SceneConfig scene = scene_config_from(args.config);
    validate(scene);
    const uint64_t base_seed = scene.seed;
    const int n_train = count * pa / 100;
    const int n_val = count * pb / 100;

    std::vector<ManifestEntry> manifest;
    std::vector<int64_t> histogram(kMaxFringeOrder + 1, 0);
    for (int i = 0; i < count; ++i) {
        SceneConfig sc = scene;
        sc.seed = mix64(base_seed, (uint64_t)i);
        AbsolutePhaseMap phi = generate_scene(sc);
        WrapResult gt = wrap(phi, sc.order_max + 1);
        ExtractResult measured = extract_wrapped_phase(render_fringes(phi, sc));

        char id[16];
        std::snprintf(id, sizeof(id), "%05d", i);
        write_sample(out, id, measured.phase, gt.order);
        const char* which = i < n_train ? "train" : (i < n_train + n_val ? "val" : "test");
        manifest.push_back({id, which});
        for (uint8_t k : gt.order.values) ++histogram[k];
    }
    write_manifest(out, manifest);
    std::ofstream cfg_os(out / "gen_config.cfg");
    cfg_os << args.config.serialize();

    std::cout << "wrote " << count << " samples to " << out.string() << " (train " << n_train << ", val "
              << n_val << ", test " << (count - n_train - n_val) << ")\n";
    std::cout << "label histogram:";
    for (int k = 0; k <= kMaxFringeOrder; ++k)
        if (histogram[(size_t)k] > 0) std::cout << " " << k << ":" << histogram[(size_t)k];
    std::cout << std::endl;
    return 0;
}

int cmd_train(const Args& args) {
    require_opts_subset(args, {"out", "data", "resume", "preset"});
    const fs::path out = require_opt(args, "out");
    RunConfig rc = args.config;
    if (args.opts.count("data")) rc.set("train.dataset", args.opts.at("data"), RunConfig::Source::kFlag);
    TrainConfig tcfg = train_config_from(rc);
    tcfg.validate();
    if (tcfg.dataset.empty()) throw UserError("missing dataset: pass --data DIR or set train.dataset");
    HformerConfig mcfg = model_config_from(rc);
    EvalConfig ecfg = eval_config_from(rc);

    auto train_set = load_split(tcfg.dataset, "train");
    auto val_set = tcfg.val_interval > 0 ? load_split(tcfg.dataset, "val") : std::vector<Sample>{};
    if (train_set.empty()) throw UserError("no training samples found in " + tcfg.dataset);

    fs::create_directories(out);
    std::ofstream cfg_os(out / "resolved.cfg");
    if (args.opts.count("preset")) cfg_os << "# preset: " << args.opts.at("preset") << "\n";
    cfg_os << rc.serialize();
    cfg_os.close();

    Trainer trainer(mcfg, tcfg, ecfg);
    if (args.opts.count("resume"))
        trainer.restore(args.opts.at("resume"));
    else
        trainer.initialize();

    std::cout << "training: " << train_set.size() << " samples, " << tcfg.max_iters << " iterations, lr "
              << tcfg.lr << ", momentum " << tcfg.momentum << ", weight decay " << tcfg.weight_decay
              << ", poly power " << tcfg.poly_power << "\n";
    TrainResult result = trainer.run(train_set, val_set, out);
    for (const auto& row : result.log)
        if (row.iter % std::max<int64_t>(tcfg.log_interval * 10, 1) == 0 || row.has_val)
            std::cout << "iter " << row.iter << " lr " << row.lr << " loss " << row.loss
                      << (row.has_val ? " val_miou " + std::to_string(row.val_miou) : "") << "\n";
    if (result.diverged) throw UserError(result.divergence_message);
    std::cout << "done: " << result.iterations << " iterations, final checkpoint "
              << result.final_checkpoint.string() << std::endl;
    return 0;
}

// Builds the model recorded in a checkpoint and restores its parameters.
std::unique_ptr<Model<float>> model_from_checkpoint(const Checkpoint& ckpt) {
    HformerConfig mcfg = parse_model_config_text(ckpt.config_text);
    auto model = std::make_unique<Model<float>>(mcfg, 0);
    size_t loaded = 0;
    for (const auto& [name, tensor] : ckpt.tensors) {
        if (name.rfind("momentum:", 0) == 0) continue;
        if (!model->params().contains(name)) throw UserError("checkpoint tensor " + name + " is unknown");
        auto& p = model->params().get(name);
        if (tensor.shape != p.shape) throw UserError("checkpoint tensor " + name + " has mismatched shape");
        *p.data = *tensor.data;
        ++loaded;
    }
    if (loaded != model->params().size())
        throw UserError("checkpoint is missing " + std::to_string(model->params().size() - loaded) +
                        " parameter tensors");
    return model;
}

int cmd_eval(const Args& args) {
    require_opts_subset(args, {"checkpoint", "data", "out", "split", "preset"});
    const fs::path ckpt_path = require_opt(args, "checkpoint");
    const fs::path data = require_opt(args, "data");
    const fs::path out = require_opt(args, "out");
    const std::string split = args.opts.count("split") ? args.opts.at("split") : "test";

    Checkpoint ckpt = load_checkpoint(ckpt_path);
    auto model = model_from_checkpoint(ckpt);
    EvalConfig ecfg = eval_config_from(args.config);
    if (ecfg.window != model->config().height || ecfg.window != model->config().width)
        throw UserError("eval.window " + std::to_string(ecfg.window) + " does not match the checkpoint model (" +
                        std::to_string(model->config().height) + ")");

    auto samples = load_split(data, split);
    if (samples.empty()) throw UserError("no samples in split '" + split + "' of " + data.string());

    const int k = model->config().num_classes;
    WindowModel fn = model_window_fn(*model);
    MetricAccumulator acc(k);
    for (const Sample& s : samples) {
        FringeOrderMap pred = predict_fringe_order(fn, k, s.phase, s.height, s.width, ecfg);
        FringeOrderMap gt;
        gt.height = s.height;
        gt.width = s.width;
        gt.values = s.order;
        acc.add(pred, gt);
    }
    EvalReport report = acc.report();

    fs::create_directories(out);
    const std::string model_name = ckpt_path.stem().string();
    write_report_csv(out / "report.csv", model_name, report);
    const std::string text = report_text(model_name, report);
    std::ofstream(out / "report.txt") << text;
    std::cout << "split " << split << ", " << samples.size() << " samples, TTA ensemble size "
              << tta_members(ecfg).size() << "\n"
              << text;
    return 0;
}

int cmd_predict(const Args& args) {
    require_opts_subset(args, {"checkpoint", "input", "out", "preset"});
    const fs::path ckpt_path = require_opt(args, "checkpoint");
    const fs::path input = require_opt(args, "input");
    const std::string out_prefix = require_opt(args, "out");

    Checkpoint ckpt = load_checkpoint(ckpt_path);
    auto model = model_from_checkpoint(ckpt);
    EvalConfig ecfg = eval_config_from(args.config);
    if (ecfg.window != model->config().height || ecfg.window != model->config().width)
        throw UserError("eval.window does not match the checkpoint model input size");

    FpmArray phase = read_fpm_expect(input, FpmDtype::kF32);
    const int k = model->config().num_classes;
    WindowModel fn = model_window_fn(*model);
    FringeOrderMap order = predict_fringe_order(fn, k, phase.f32, phase.height, phase.width, ecfg);

    WrappedPhaseMap wrapped;
    wrapped.height = phase.height;
    wrapped.width = phase.width;
    wrapped.values.assign(phase.f32.begin(), phase.f32.end());
    AbsolutePhaseMap unwrapped = unwrap_with_prediction(wrapped, order);

    write_fpm(out_prefix + "_order.fpm", order.height, order.width, order.values);
    std::vector<float> unwrapped_f(unwrapped.values.begin(), unwrapped.values.end());
    write_fpm(out_prefix + "_unwrapped.fpm", unwrapped.height, unwrapped.width, unwrapped_f);
    write_pgm(out_prefix + "_order.pgm", order, k);
    std::cout << "wrote " << out_prefix << "_order.fpm, _unwrapped.fpm, _order.pgm" << std::endl;
    return 0;
}

int cmd_grad_check(const Args& args) {
    require_opts_subset(args, {"samples", "preset"});
    const int samples = args.opts.count("samples") ? std::stoi(args.opts.at("samples")) : 50;
    bool ok = true;
    auto report = [&](const CheckResult& r) {
        const bool pass = r.max_rel_err < 1e-4;
        ok = ok && pass;
        std::printf("%-22s max rel err %.3e  %s\n", r.name.c_str(), r.max_rel_err, pass ? "ok" : "FAIL");
    };
    for (const auto& r : primitive_grad_checks()) report(r);
    report(cat_block_grad_check());
    report(model_grad_check(samples));
    if (!ok) throw UserError("gradient checks failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    apply_thread_cap();
    if (argc < 2) {
        std::cerr << kUsage;
        return 1;
    }
    const std::string cmd = argv[1];
    try {
        Args args = parse_args(argc, argv, 2);
        if (cmd == "gen-data") return cmd_gen_data(args);
        if (cmd == "train") return cmd_train(args);
        if (cmd == "eval") return cmd_eval(args);
        if (cmd == "predict") return cmd_predict(args);
        if (cmd == "grad-check") return cmd_grad_check(args);
        std::cerr << "unknown command: " << cmd << "\n" << kUsage;
        return 1;
    } catch (const UserError& err) {
        std::cerr << "error: " << err.what() << std::endl;
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "internal error: " << err.what() << std::endl;
        return 2;
    }
}
