#pragma once

// Fringe-order evaluation criteria: mIoU, MSE, MAE over predicted vs
// ground-truth label maps.

#include <filesystem>
#include <string>
#include <vector>

#include "hformer/fringe.hpp"

namespace hformer {

struct EvalReport {
    double miou = 0.0;
    double mse = 0.0;
    double mae = 0.0;
    std::vector<double> per_class_iou;  // -1 for classes absent from both sides
    int64_t pixel_count = 0;
    int64_t sample_count = 0;
};

class MetricAccumulator {
  public:
    explicit MetricAccumulator(int num_classes);
    void add(const FringeOrderMap& pred, const FringeOrderMap& gt);
    EvalReport report() const;

  private:
    int k_;
    std::vector<int64_t> intersection_, pred_count_, gt_count_;
    double se_sum_ = 0.0, ae_sum_ = 0.0;
    int64_t pixels_ = 0, samples_ = 0;
};

// Dataset-aggregated metrics over paired map sets. Classes with zero union
// are skipped from the mIoU mean.
EvalReport evaluate(const std::vector<FringeOrderMap>& pred, const std::vector<FringeOrderMap>& gt,
                    int num_classes);

double miou(const std::vector<FringeOrderMap>& pred, const std::vector<FringeOrderMap>& gt, int num_classes);
double mse(const FringeOrderMap& pred, const FringeOrderMap& gt);
double mae(const FringeOrderMap& pred, const FringeOrderMap& gt);

void write_report_csv(const std::filesystem::path& path, const std::string& model_name, const EvalReport& r);
std::string report_text(const std::string& model_name, const EvalReport& r);

}  // namespace hformer
