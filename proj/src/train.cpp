#include "hformer/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "hformer/infer.hpp"
#include "hformer/loss.hpp"
#include "hformer/metrics.hpp"
#include "hformer/tiles.hpp"

namespace hformer {

double poly_lr(int64_t iter, const TrainConfig& cfg) {
    if (iter < 0 || iter > cfg.max_iters)
        throw std::runtime_error("poly_lr: iteration " + std::to_string(iter) + " outside [0," +
                                 std::to_string(cfg.max_iters) + "]");
    return cfg.lr * std::pow(1.0 - double(iter) / double(cfg.max_iters), cfg.poly_power);
}

SgdOptimizer::SgdOptimizer(ParamStore<float>& params, const TrainConfig& cfg) : params_(&params), cfg_(cfg) {
    momentum_.reserve(params.size());
    for (const auto& e : params.entries()) momentum_.push_back(Tensor<float>::zeros(e.tensor.shape));
}

void SgdOptimizer::step(double lr) {
    const float mu = (float)cfg_.momentum;
    const float wd = (float)cfg_.weight_decay;
    const float flr = (float)lr;
    for (size_t pi = 0; pi < params_->size(); ++pi) {
        auto& e = params_->entries()[pi];
        float* p = e.tensor.ptr();
        const float* g = e.tensor.gptr();
        float* v = momentum_[pi].ptr();
        const int64_t n = e.tensor.numel();
        const bool decay = !e.no_decay && wd != 0.0f;
        for (int64_t i = 0; i < n; ++i) {
            if (!std::isfinite(g[i]))
                throw std::runtime_error("sgd_step: non-finite gradient in parameter " + e.name);
            const float grad = decay ? g[i] + wd * p[i] : g[i];
            v[i] = mu * v[i] + grad;
            p[i] -= flr * v[i];
        }
    }
}

Sample augment_sample(const Sample& s, const TrainConfig& cfg, std::mt19937_64& rng) {
    if (cfg.crop > s.height || cfg.crop > s.width)
        throw std::runtime_error("augment: crop " + std::to_string(cfg.crop) + " larger than sample " +
                                 std::to_string(s.height) + "x" + std::to_string(s.width));
    // fixed draw order: hflip, vflip, crop offsets
    std::uniform_int_distribution<int> coin(0, 1);
    const bool fh = cfg.hflip && coin(rng) == 1;
    const bool fv = cfg.vflip && coin(rng) == 1;
    std::uniform_int_distribution<int> offy_d(0, s.height - cfg.crop);
    std::uniform_int_distribution<int> offx_d(0, s.width - cfg.crop);
    const int offy = offy_d(rng), offx = offx_d(rng);

    Sample out;
    out.height = out.width = cfg.crop;
    out.phase.resize((size_t)cfg.crop * cfg.crop);
    out.order.resize((size_t)cfg.crop * cfg.crop);
    for (int y = 0; y < cfg.crop; ++y)
        for (int x = 0; x < cfg.crop; ++x) {
            int sy = offy + y, sx = offx + x;
            if (fv) sy = offy + cfg.crop - 1 - y;
            if (fh) sx = offx + cfg.crop - 1 - x;
            out.phase[(size_t)y * cfg.crop + x] = s.phase[(size_t)sy * s.width + sx];
            out.order[(size_t)y * cfg.crop + x] = s.order[(size_t)sy * s.width + sx];
        }
    return out;
}

std::vector<Sample> four_crops(const Sample& s, int window) {
    const TileGrid grid = plan_tiles(s.height, s.width, window, std::max(1, s.height - window),
                                     std::max(1, s.width - window));
    std::vector<Sample> crops;
    for (int ry : grid.row_origins)
        for (int cx : grid.col_origins) {
            Sample c;
            c.height = c.width = window;
            c.phase.resize((size_t)window * window);
            c.order.resize((size_t)window * window);
            for (int y = 0; y < window; ++y)
                for (int x = 0; x < window; ++x) {
                    c.phase[(size_t)y * window + x] = s.phase[(size_t)(ry + y) * s.width + (cx + x)];
                    c.order[(size_t)y * window + x] = s.order[(size_t)(ry + y) * s.width + (cx + x)];
                }
            crops.push_back(std::move(c));
        }
    return crops;
}

std::string log_csv_header() { return "iter,lr,loss,val_miou,val_mse,val_mae\n"; }

std::string log_csv_row(const TrainLogRow& row) {
    std::ostringstream os;
    os.precision(9);
    os << row.iter << "," << row.lr << "," << row.loss << ",";
    if (row.has_val)
        os << row.val_miou << "," << row.val_mse << "," << row.val_mae;
    else
        os << ",,";
    os << "\n";
    return os.str();
}

Trainer::Trainer(const HformerConfig& model_cfg, const TrainConfig& train_cfg, const EvalConfig& eval_cfg)
    : model_cfg_(model_cfg), train_cfg_(train_cfg), eval_cfg_(eval_cfg) {
    train_cfg_.validate();
}

void Trainer::initialize() {
    model_.emplace(model_cfg_, train_cfg_.seed);
    opt_.emplace(model_->params(), train_cfg_);
    iter_ = 0;
}

void Trainer::restore(const std::filesystem::path& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.config_text != model_config_text(model_cfg_))
        throw UserError(path.string() + ": checkpoint architecture does not match the configured model");
    initialize();
    auto& params = model_->params();
    size_t loaded = 0;
    for (auto& [name, tensor] : ckpt.tensors) {
        const bool is_momentum = name.rfind("momentum:", 0) == 0;
        const std::string base = is_momentum ? name.substr(9) : name;
        if (!params.contains(base)) throw UserError("checkpoint tensor " + name + " has no matching parameter");
        if (is_momentum) {
            for (size_t pi = 0; pi < params.size(); ++pi)
                if (params.entries()[pi].name == base) {
                    if (tensor.shape != opt_->momentum()[pi].shape)
                        throw UserError("checkpoint tensor " + name + " has mismatched shape");
                    *opt_->momentum()[pi].data = *tensor.data;
                }
        } else {
            auto& p = params.get(base);
            if (tensor.shape != p.shape) throw UserError("checkpoint tensor " + name + " has mismatched shape");
            *p.data = *tensor.data;
        }
        ++loaded;
    }
    if (loaded != 2 * params.size())
        throw UserError(path.string() + ": expected " + std::to_string(2 * params.size()) +
                        " tensors, found " + std::to_string(loaded));
    iter_ = ckpt.iteration;
}

Checkpoint Trainer::make_checkpoint() const {
    Checkpoint ckpt;
    ckpt.config_text = model_config_text(model_cfg_);
    for (const auto& e : model_->params().entries()) ckpt.tensors.emplace_back(e.name, e.tensor);
    for (size_t pi = 0; pi < model_->params().size(); ++pi)
        ckpt.tensors.emplace_back("momentum:" + model_->params().entries()[pi].name, opt_->momentum()[pi]);
    ckpt.iteration = iter_;
    // The data pipeline is a pure function of (seed, iteration), so the rng
    // blob records the derived stream state for the checkpointed iteration.
    std::mt19937_64 rng(mix64(train_cfg_.seed, iter_));
    std::ostringstream os;
    os << rng;
    ckpt.rng_state = os.str();
    return ckpt;
}

TrainLogRow Trainer::validate_row(const std::vector<Sample>& val_set) const {
    TrainLogRow row;
    const int k = model_cfg_.num_classes;
    WindowModel fn = model_window_fn(*model_);
    MetricAccumulator acc(k);
    for (const Sample& s : val_set) {
        FringeOrderMap pred = predict_fringe_order(fn, k, s.phase, s.height, s.width, eval_cfg_);
        FringeOrderMap gt;
        gt.height = s.height;
        gt.width = s.width;
        gt.values = s.order;
        acc.add(pred, gt);
    }
    const EvalReport rep = acc.report();
    row.has_val = true;
    row.val_miou = rep.miou;
    row.val_mse = rep.mse;
    row.val_mae = rep.mae;
    return row;
}

TrainResult Trainer::run(const std::vector<Sample>& train_set, const std::vector<Sample>& val_set,
                         const std::filesystem::path& out_dir, int64_t stop_after) {
    if (!model_) throw std::runtime_error("Trainer::run: call initialize() or restore() first");
    if (train_set.empty()) throw UserError("train: dataset is empty");
    std::filesystem::create_directories(out_dir);

    // 4-crop expansion of oversized samples happens before batching.
    std::vector<Sample> samples;
    if (train_cfg_.four_crop) {
        for (const Sample& s : train_set)
            for (Sample& c : four_crops(s, train_cfg_.crop)) samples.push_back(std::move(c));
    } else {
        samples = train_set;
    }
    const int64_t n_samples = (int64_t)samples.size();
    const int bs = train_cfg_.batch_size;
    const int crop = train_cfg_.crop;

    // epoch permutation derived statelessly from (seed, epoch)
    auto sample_at = [&](int64_t global_index) -> const Sample& {
        const int64_t epoch = global_index / n_samples;
        const int64_t pos = global_index % n_samples;
        std::vector<int64_t> perm(n_samples);
        std::iota(perm.begin(), perm.end(), 0);
        std::mt19937_64 erng(mix64(train_cfg_.seed, 0xe90c4ull, (uint64_t)epoch));
        std::shuffle(perm.begin(), perm.end(), erng);
        return samples[(size_t)perm[(size_t)pos]];
    };

    TrainResult result;
    std::ofstream log_os;
    const auto csv_path = out_dir / "metrics.csv";
    const bool fresh_log = iter_ == 0;
    log_os.open(csv_path, fresh_log ? std::ios::trunc : std::ios::app);
    if (!log_os) throw UserError("cannot open " + csv_path.string());
    if (fresh_log) log_os << log_csv_header();

    auto save_at = [&](uint64_t it) {
        char name[32];
        std::snprintf(name, sizeof(name), "ckpt_%06llu.hfck", (unsigned long long)it);
        const auto path = out_dir / name;
        save_checkpoint(path, make_checkpoint());
        return path;
    };

    std::filesystem::path last_ckpt = save_at(iter_);  // initialization (or resume point)

    const int64_t stop = stop_after >= 0 ? std::min(stop_after, train_cfg_.max_iters) : train_cfg_.max_iters;
    while ((int64_t)iter_ < stop) {
        const double lr = poly_lr((int64_t)iter_, train_cfg_);
        double loss_value = 0.0;
        try {
            // assemble the batch for iteration iter_
            Tensor<float> input = Tensor<float>::zeros({bs, 1, crop, crop});
            std::vector<int> labels((size_t)bs * crop * crop);
            for (int j = 0; j < bs; ++j) {
                const int64_t gi = (int64_t)iter_ * bs + j;
                std::mt19937_64 arng(mix64(train_cfg_.seed, (uint64_t)iter_, (uint64_t)j));
                Sample s = augment_sample(sample_at(gi), train_cfg_, arng);
                std::copy(s.phase.begin(), s.phase.end(), input.ptr() + (size_t)j * crop * crop);
                for (size_t i = 0; i < s.order.size(); ++i) labels[(size_t)j * crop * crop + i] = s.order[i];
            }

            model_->params().zero_grads();
            GradTape<float> tape;
            Tensor<float> loss = cross_entropy(model_->forward(input), labels);
            loss_value = loss.value();
            if (!std::isfinite(loss_value)) throw std::runtime_error("loss is non-finite");
            tape.backward(loss);
            opt_->step(lr);
        } catch (const std::runtime_error& err) {
            result.diverged = true;
            result.divergence_message = std::string("training diverged at iteration ") +
                                        std::to_string(iter_ + 1) + ": " + err.what() +
                                        " (last good checkpoint: " + last_ckpt.string() + ")";
            result.final_checkpoint = last_ckpt;
            result.iterations = iter_;
            return result;
        }
        ++iter_;

        const bool last = (int64_t)iter_ == stop;
        if (train_cfg_.log_interval > 0 && ((int64_t)iter_ % train_cfg_.log_interval == 0 || last)) {
            TrainLogRow row;
            if (!val_set.empty() && train_cfg_.val_interval > 0 &&
                ((int64_t)iter_ % train_cfg_.val_interval == 0 || last))
                row = validate_row(val_set);
            row.iter = (int64_t)iter_;
            row.lr = lr;
            row.loss = loss_value;
            result.log.push_back(row);
            log_os << log_csv_row(row);
            log_os.flush();
        }
        if ((train_cfg_.checkpoint_interval > 0 && (int64_t)iter_ % train_cfg_.checkpoint_interval == 0) ||
            last)
            last_ckpt = save_at(iter_);
    }
    result.iterations = iter_;
    result.final_checkpoint = last_ckpt;
    return result;
}

double pixel_accuracy(const Model<float>& model, const std::vector<Sample>& samples) {
    int64_t correct = 0, total = 0;
    const int k = model.config().num_classes;
    for (const Sample& s : samples) {
        Tensor<float> input = Tensor<float>::zeros({1, 1, s.height, s.width});
        std::copy(s.phase.begin(), s.phase.end(), input.ptr());
        Tensor<float> logits = model.forward(input);
        const float* p = logits.ptr();
        const int64_t hw = (int64_t)s.height * s.width;
        for (int64_t i = 0; i < hw; ++i) {
            int best = 0;
            float best_v = p[i];
            for (int c = 1; c < k; ++c)
                if (p[c * hw + i] > best_v) {
                    best_v = p[c * hw + i];
                    best = c;
                }
            if (best == s.order[(size_t)i]) ++correct;
            ++total;
        }
    }
    return double(correct) / double(total);
}

}  // namespace hformer
