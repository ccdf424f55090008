#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "hformer/config.hpp"

using namespace hformer;
namespace fs = std::filesystem;

namespace {

fs::path work_dir() {
    static fs::path p = [] {
        fs::path d = fs::temp_directory_path() / ("hformer_cli_" + std::to_string(::getpid()));
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return p;
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(HFORMER_CLI_PATH) + " " + args + " >" +
                            (work_dir() / "stdout.txt").string() + " 2>" + (work_dir() / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("run config: precedence, provenance, unknown keys") {
    RunConfig rc;
    CHECK(rc.get_double("train.lr") == 0.0005);
    CHECK(rc.get_double("train.momentum") == 0.9);
    CHECK(rc.get_double("train.weight_decay") == 0.01);
    CHECK(rc.get_double("train.poly_power") == 0.9);
    CHECK(rc.source("train.lr") == RunConfig::Source::kDefault);

    auto file = work_dir() / "cfg.cfg";
    std::ofstream(file) << "# comment line\ntrain.lr = 0.002\nmodel.base_channels = 4  # trailing\n";
    rc.apply_file(file);
    CHECK(rc.get_double("train.lr") == 0.002);
    CHECK(rc.source("train.lr") == RunConfig::Source::kFile);

    rc.set("train.lr", "0.01", RunConfig::Source::kFlag);
    CHECK(rc.get_double("train.lr") == 0.01);
    CHECK(rc.source("train.lr") == RunConfig::Source::kFlag);

    CHECK_THROWS_AS(rc.set("train.typo", "1"), UserError);
    std::ofstream(file) << "bogus.key = 1\n";
    RunConfig rc2;
    CHECK_THROWS_AS(rc2.apply_file(file), UserError);

    const std::string dump = RunConfig().serialize();
    CHECK(dump.find("train.lr = 0.0005  # default") != std::string::npos);
    CHECK(dump.find("train.momentum = 0.9") != std::string::npos);

    // a serialized config parses back (provenance comments stripped)
    auto round = work_dir() / "round.cfg";
    std::ofstream(round) << dump;
    RunConfig rc3;
    CHECK_NOTHROW(rc3.apply_file(round));
}

TEST_CASE("model config text round trip") {
    HformerConfig cfg;
    cfg.base_channels = 3;
    cfg.num_classes = 9;
    cfg.head_mode = HformerConfig::HeadMode::kSingle;
    cfg.patch_sizes = {4, 2, 2, 1};
    cfg.pos_every_stage = false;
    HformerConfig back = parse_model_config_text(model_config_text(cfg));
    CHECK(model_config_text(back) == model_config_text(cfg));
    CHECK(back.num_classes == 9);
    CHECK(back.patch_sizes == std::array<int, 4>{4, 2, 2, 1});
}

TEST_CASE("cli: no arguments and unknown commands fail with exit 1") {
    CHECK(run_cli("") == 1);
    CHECK(run_cli("frobnicate") == 1);
    CHECK(run_cli("gen-data --bogus-flag 3 --out x") == 1);
    CHECK(run_cli("train --train.bogus 1 --out x") == 1);
}

TEST_CASE("cli: gen-data determinism, splits, force") {
    auto d1 = work_dir() / "data1";
    auto d2 = work_dir() / "data2";
    const std::string common = "gen-data --preset toy --count 20 --split 80/10/10 --seed 5 --out ";
    REQUIRE(run_cli(common + d1.string()) == 0);
    REQUIRE(run_cli(common + d2.string()) == 0);

    int n_train = 0, n_val = 0, n_test = 0;
    std::ifstream mf(d1 / "manifest.txt");
    std::string id, split;
    while (mf >> id >> split) {
        if (split == "train") ++n_train;
        if (split == "val") ++n_val;
        if (split == "test") ++n_test;
    }
    CHECK(n_train == 16);
    CHECK(n_val == 2);
    CHECK(n_test == 2);

    CHECK(read_file(d1 / "00000_phase.fpm") == read_file(d2 / "00000_phase.fpm"));  // same seed
    CHECK(read_file(d1 / "00007_order.fpm") == read_file(d2 / "00007_order.fpm"));

    CHECK(run_cli(common + d1.string()) == 1);           // refuses to overwrite
    CHECK(run_cli(common + d1.string() + " --force") == 0);
}

TEST_CASE("cli: train echoes the recipe defaults and writes checkpoints") {
    auto data = work_dir() / "data_train";
    REQUIRE(run_cli("gen-data --preset toy --count 4 --split 50/25/25 --seed 3 --out " + data.string()) == 0);

    // defaults (no preset): optimizer keys echo into the resolved config
    auto run0 = work_dir() / "run0";
    REQUIRE(run_cli("train --data " + data.string() + " --out " + run0.string() + " --max-iters 0") == 0);
    const std::string resolved = read_file(run0 / "resolved.cfg");
    CHECK(resolved.find("train.lr = 0.0005") != std::string::npos);
    CHECK(resolved.find("train.momentum = 0.9") != std::string::npos);
    CHECK(resolved.find("train.weight_decay = 0.01") != std::string::npos);
    CHECK(resolved.find("train.poly_power = 0.9") != std::string::npos);
    CHECK(resolved.find("train.max_iters = 0  # flag") != std::string::npos);
    CHECK(fs::exists(run0 / "ckpt_000000.hfck"));  // initialization checkpoint only
    CHECK(!fs::exists(run0 / "ckpt_000001.hfck"));

    // a short toy run trains, then resumes with a continued counter
    auto run1 = work_dir() / "run1";
    REQUIRE(run_cli("train --preset toy --data " + data.string() + " --out " + run1.string() +
                    " --max-iters 4 --train.checkpoint_interval 2 --train.log_interval 1") == 0);
    CHECK(fs::exists(run1 / "ckpt_000004.hfck"));
    CHECK(fs::exists(run1 / "metrics.csv"));
    const std::string csv = read_file(run1 / "metrics.csv");
    CHECK(csv.rfind("iter,lr,loss,val_miou,val_mse,val_mae\n", 0) == 0);

    auto run2 = work_dir() / "run2";
    REQUIRE(run_cli("train --preset toy --data " + data.string() + " --out " + run2.string() +
                    " --max-iters 6 --train.checkpoint_interval 2 --train.log_interval 1 --resume " +
                    (run1 / "ckpt_000004.hfck").string()) == 0);
    CHECK(fs::exists(run2 / "ckpt_000006.hfck"));
    fs::remove_all(run0);
}

TEST_CASE("cli: eval and predict produce reports and deterministic artifacts") {
    auto data = work_dir() / "data_eval";
    REQUIRE(run_cli("gen-data --preset toy --count 4 --split 50/25/25 --seed 11 --out " + data.string()) == 0);
    auto run = work_dir() / "run_eval";
    REQUIRE(run_cli("train --preset toy --data " + data.string() + " --out " + run.string() +
                    " --max-iters 2") == 0);
    const std::string ckpt = (run / "ckpt_000002.hfck").string();

    auto evaldir = work_dir() / "eval_out";
    REQUIRE(run_cli("eval --preset toy --checkpoint " + ckpt + " --data " + data.string() + " --out " +
                    evaldir.string() + " --split val") == 0);
    const std::string report = read_file(evaldir / "report.csv");
    CHECK(report.rfind("model,miou,mse,mae\n", 0) == 0);
    CHECK(fs::exists(evaldir / "report.txt"));

    // --no-tta changes only the logged ensemble size
    REQUIRE(run_cli("eval --preset toy --checkpoint " + ckpt + " --data " + data.string() + " --out " +
                    evaldir.string() + " --split val --no-tta") == 0);
    const std::string out_txt = read_file(work_dir() / "stdout.txt");
    CHECK(out_txt.find("TTA ensemble size 1") != std::string::npos);

    const std::string prefix1 = (work_dir() / "pred1").string();
    const std::string prefix2 = (work_dir() / "pred2").string();
    REQUIRE(run_cli("predict --preset toy --checkpoint " + ckpt + " --input " +
                    (data / "00003_phase.fpm").string() + " --out " + prefix1) == 0);
    REQUIRE(run_cli("predict --preset toy --checkpoint " + ckpt + " --input " +
                    (data / "00003_phase.fpm").string() + " --out " + prefix2) == 0);
    for (const char* suffix : {"_order.fpm", "_unwrapped.fpm", "_order.pgm"}) {
        CHECK(fs::exists(prefix1 + suffix));
        CHECK(read_file(prefix1 + suffix) == read_file(prefix2 + suffix));  // rerun byte-identical
    }
    const std::string pgm = read_file(prefix1 + std::string("_order.pgm"));
    CHECK(pgm.rfind("P5\n64 64\n255\n", 0) == 0);

    // missing input file is a user error
    CHECK(run_cli("predict --preset toy --checkpoint " + ckpt + " --input missing.fpm --out x") == 1);
    fs::remove_all(work_dir());
}
