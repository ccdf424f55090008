#include "hformer/metrics.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace hformer {

MetricAccumulator::MetricAccumulator(int num_classes) : k_(num_classes) {
    if (num_classes < 2) throw std::runtime_error("metrics: need at least 2 classes");
    intersection_.assign(k_, 0);
    pred_count_.assign(k_, 0);
    gt_count_.assign(k_, 0);
}

void MetricAccumulator::add(const FringeOrderMap& pred, const FringeOrderMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::runtime_error("metrics: pred/gt shape mismatch");
    for (size_t i = 0; i < pred.values.size(); ++i) {
        const int p = pred.values[i], g = gt.values[i];
        if (p >= k_ || g >= k_) throw std::runtime_error("metrics: label outside [0,K-1]");
        ++pred_count_[p];
        ++gt_count_[g];
        if (p == g) ++intersection_[p];
        const double d = double(p) - double(g);
        se_sum_ += d * d;
        ae_sum_ += std::abs(d);
    }
    pixels_ += (int64_t)pred.values.size();
    ++samples_;
}

EvalReport MetricAccumulator::report() const {
    if (pixels_ == 0) throw std::runtime_error("metrics: empty input");
    EvalReport r;
    r.pixel_count = pixels_;
    r.sample_count = samples_;
    r.per_class_iou.assign(k_, -1.0);
    double iou_sum = 0.0;
    int present = 0;
    for (int c = 0; c < k_; ++c) {
        const int64_t uni = pred_count_[c] + gt_count_[c] - intersection_[c];
        if (uni == 0) continue;  // class absent from both sides: skipped
        r.per_class_iou[c] = double(intersection_[c]) / double(uni);
        iou_sum += r.per_class_iou[c];
        ++present;
    }
    r.miou = present > 0 ? iou_sum / present : 0.0;
    r.mse = se_sum_ / double(pixels_);
    r.mae = ae_sum_ / double(pixels_);
    return r;
}

EvalReport evaluate(const std::vector<FringeOrderMap>& pred, const std::vector<FringeOrderMap>& gt,
                    int num_classes) {
    if (pred.size() != gt.size() || pred.empty()) throw std::runtime_error("metrics: empty or mismatched sets");
    MetricAccumulator acc(num_classes);
    for (size_t i = 0; i < pred.size(); ++i) acc.add(pred[i], gt[i]);
    return acc.report();
}

double miou(const std::vector<FringeOrderMap>& pred, const std::vector<FringeOrderMap>& gt, int num_classes) {
    return evaluate(pred, gt, num_classes).miou;
}

double mse(const FringeOrderMap& pred, const FringeOrderMap& gt) {
    return evaluate({pred}, {gt}, 256).mse;
}

double mae(const FringeOrderMap& pred, const FringeOrderMap& gt) {
    return evaluate({pred}, {gt}, 256).mae;
}

void write_report_csv(const std::filesystem::path& path, const std::string& model_name, const EvalReport& r) {
    std::ofstream os(path);
    if (!os) throw UserError("cannot write " + path.string());
    os << "model,miou,mse,mae\n";
    os << model_name << "," << r.miou << "," << r.mse << "," << r.mae << "\n";
}

std::string report_text(const std::string& model_name, const EvalReport& r) {
    std::ostringstream ss;
    ss << "Model\tmIoU\tMSE\tMAE\n";
    ss << model_name << "\t" << r.miou << "\t" << r.mse << "\t" << r.mae << "\n";
    ss << "\npixels: " << r.pixel_count << "  samples: " << r.sample_count << "\nper-class IoU:";
    for (size_t c = 0; c < r.per_class_iou.size(); ++c) {
        if (r.per_class_iou[c] < 0) continue;
        ss << " " << c << ":" << r.per_class_iou[c];
    }
    ss << "\n";
    return ss.str();
}

}  // namespace hformer
