#include "minidetr/analytics.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "minidetr/errors.hpp"

namespace minidetr {

std::vector<Detection> detections_from_output(const DetectorOutput& out, int image_id) {
    int q_count = out.class_logits.dim(0);
    int classes = out.class_logits.dim(1) - 1;
    std::vector<Detection> dets;
    dets.reserve(q_count);
    for (int q = 0; q < q_count; ++q) {
        double mx = out.class_logits(q, 0);
        for (int c = 1; c <= classes; ++c) mx = std::max(mx, out.class_logits(q, c));
        double denom = 0.0;
        for (int c = 0; c <= classes; ++c) denom += std::exp(out.class_logits(q, c) - mx);
        int best = 0;
        double best_p = -1.0;
        for (int c = 0; c < classes; ++c) {
            double p = std::exp(out.class_logits(q, c) - mx) / denom;
            if (p > best_p) {
                best_p = p;
                best = c;
            }
        }
        Detection d;
        d.image_id = image_id;
        d.class_id = best;
        d.score = best_p;
        d.box = Box{out.boxes(q, 0), out.boxes(q, 1), out.boxes(q, 2), out.boxes(q, 3)};
        d.query_id = q;
        dets.push_back(d);
    }
    return dets;
}

QueryStats query_frequency(const std::vector<Detection>& dets, double threshold, int num_queries) {
    QueryStats stats;
    stats.confidence_threshold = threshold;
    int size = num_queries;
    if (size < 0) {
        size = 1;
        for (const Detection& d : dets) size = std::max(size, d.query_id + 1);
    }
    stats.freq.assign(size, 0);
    for (size_t i = 0; i < dets.size(); ++i) {
        const Detection& d = dets[i];
        if (d.query_id < 0) {
            throw ValidationError("query_frequency: detection " + std::to_string(i) + " has no query id");
        }
        if (d.query_id >= size) {
            throw ValidationError("query_frequency: query id " + std::to_string(d.query_id) +
                                  " outside 0.." + std::to_string(size - 1));
        }
        if (d.score > threshold) {
            ++stats.freq[d.query_id];
            ++stats.total;
        }
    }
    stats.main_query_id = 0;
    for (int q = 1; q < size; ++q)
        if (stats.freq[q] > stats.freq[stats.main_query_id]) stats.main_query_id = q;
    stats.main_share =
        stats.total > 0 ? static_cast<double>(stats.freq[stats.main_query_id]) / stats.total : 0.0;
    return stats;
}

std::vector<ClassContributionEntry> class_contribution(const std::vector<Detection>& dets,
                                                       const QueryStats& stats) {
    std::map<int, ClassContributionEntry> rows;
    for (const Detection& d : dets) {
        if (d.score <= stats.confidence_threshold) continue;
        ClassContributionEntry& row = rows[d.class_id];
        row.class_id = d.class_id;
        ++row.total;
        if (d.query_id == stats.main_query_id) ++row.from_main;
    }
    std::vector<ClassContributionEntry> out;
    out.reserve(rows.size());
    for (auto& [cls, row] : rows) {
        row.share = static_cast<double>(row.from_main) / row.total;
        out.push_back(row);
    }
    return out;
}

std::vector<ScatterPoint> box_scatter(const std::vector<Detection>& dets, int query_id,
                                      double threshold) {
    std::vector<ScatterPoint> points;
    for (const Detection& d : dets) {
        if (d.query_id != query_id || d.score <= threshold) continue;
        points.push_back({d.box.cx, d.box.cy, d.box.w * d.box.h});
    }
    return points;
}

std::pair<MetricReport, MetricReport> mask_query_eval(const std::vector<Detection>& dets,
                                                      const std::vector<GroundTruth>& gts,
                                                      int query_id, double threshold,
                                                      const EvalOptions& options) {
    std::vector<Detection> kept, masked;
    for (const Detection& d : dets) {
        if (d.query_id < 0) throw ValidationError("mask_query_eval: detection without query id");
        if (d.score <= threshold) continue;
        kept.push_back(d);
        if (d.query_id != query_id) masked.push_back(d);
    }
    return {evaluate(kept, gts, options), evaluate(masked, gts, options)};
}

void QueryGradientRecorder::record(const Tensor& query_embeddings) {
    if (!query_embeddings.defined() || query_embeddings.ndim() != 2 ||
        query_embeddings.dim(0) != static_cast<int>(sum_.size())) {
        throw ValidationError("gradient recorder: embedding shape does not match query count");
    }
    int d = query_embeddings.dim(1);
    const std::vector<double>& grad = query_embeddings.impl()->grad;
    for (size_t q = 0; q < sum_.size(); ++q) {
        double sq = 0.0;
        for (int c = 0; c < d; ++c) {
            double g = grad[q * d + c];
            sq += g * g;
        }
        sum_[q] += std::sqrt(sq);
    }
    ++steps_;
}

GradientFlowRecord QueryGradientRecorder::finalize() const {
    if (steps_ == 0) throw ValidationError("gradient recorder: no steps recorded");
    GradientFlowRecord rec;
    rec.steps = steps_;
    rec.mean_norm.resize(sum_.size());
    for (size_t q = 0; q < sum_.size(); ++q) rec.mean_norm[q] = sum_[q] / steps_;
    return rec;
}

}  // namespace minidetr
