#pragma once

#include <optional>
#include <string>
#include <vector>

#include "minidetr/data.hpp"

namespace minidetr {

struct EvalOptions {
    // mAP averages over these IoU thresholds; mAP50 always uses 0.50
    std::vector<double> iou_thresholds = {0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95};
    bool apply_low_overlap_filter = false;  // drop detections overlapping no gt by >= 50%
    double low_overlap_threshold = 0.5;
};

struct ClassAp {
    int class_id = 0;
    std::string class_name;                    // empty when unknown
    std::optional<double> ap;                  // mean over thresholds; nullopt = no gts
    std::optional<double> ap50;
    int gt_count = 0;
    int detection_count = 0;
};

struct MetricReport {
    std::optional<double> map;    // nullopt when no ground truth at all
    std::optional<double> map50;
    std::vector<ClassAp> per_class;
    int detection_count = 0;
    int gt_count = 0;
    bool low_overlap_filter_applied = false;
    std::string tie_break = "stable-input-order";
};

// Detections whose best IoU against every same-image gt (any class) falls
// below the threshold are dropped; with no gts on an image everything drops.
std::vector<Detection> filter_low_overlap(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruth>& gts, double threshold = 0.5);

// Greedy highest-score-first matching (each gt used once, IoU tie -> lowest
// gt index), then 101-point interpolated AP. nullopt when the class has no
// ground truth.
std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruth>& gts, int class_id,
                                        double iou_threshold);

MetricReport evaluate(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                      const EvalOptions& options = {},
                      const std::vector<std::string>& class_names = {});

std::string metric_report_to_json(const MetricReport& r);
std::string metric_report_to_csv(const MetricReport& r);

}  // namespace minidetr
