#pragma once

#include <utility>
#include <vector>

#include "minidetr/eval.hpp"
#include "minidetr/model.hpp"

namespace minidetr {

// One detection per query: best real class under the (C+1)-way softmax, with
// that class's probability as the confidence and the query index attached.
std::vector<Detection> detections_from_output(const DetectorOutput& out, int image_id);

struct QueryStats {
    double confidence_threshold = 0.8;
    std::vector<long long> freq;  // per query id; sums to `total`
    long long total = 0;
    int main_query_id = 0;  // argmax freq, smallest id on ties
    double main_share = 0.0;
};

// counts detections with score > threshold per query id; every detection must
// carry a query id. `num_queries` < 0 sizes freq from the largest id seen.
QueryStats query_frequency(const std::vector<Detection>& dets, double threshold,
                           int num_queries = -1);

struct ClassContributionEntry {
    int class_id = 0;
    long long total = 0;      // above-threshold detections of this class
    long long from_main = 0;  // of those, produced by the main query
    double share = 0.0;       // from_main / total
};

// per-class main-query share over the same thresholded detections as `stats`;
// classes with zero detections are omitted, rows sorted by class id
std::vector<ClassContributionEntry> class_contribution(const std::vector<Detection>& dets,
                                                       const QueryStats& stats);

struct ScatterPoint {
    double cx = 0.0, cy = 0.0, area = 0.0;
};

// one (center, area) point per above-threshold detection of the query
std::vector<ScatterPoint> box_scatter(const std::vector<Detection>& dets, int query_id,
                                      double threshold);

// evaluates the thresholded detections with and without the masked query;
// both runs share identical evaluator options
std::pair<MetricReport, MetricReport> mask_query_eval(const std::vector<Detection>& dets,
                                                      const std::vector<GroundTruth>& gts,
                                                      int query_id, double threshold,
                                                      const EvalOptions& options = {});

struct GradientFlowRecord {
    std::vector<double> mean_norm;  // per query id, averaged over steps
    long long steps = 0;
};

// accumulates the L2 norm of each query embedding row's gradient, one call
// per optimizer step; finalize() averages over the recorded steps
class QueryGradientRecorder {
public:
    explicit QueryGradientRecorder(int num_queries) : sum_(num_queries, 0.0) {}

    void record(const Tensor& query_embeddings);
    GradientFlowRecord finalize() const;  // throws before any recorded step

private:
    std::vector<double> sum_;
    long long steps_ = 0;
};

}  // namespace minidetr
