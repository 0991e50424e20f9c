#include "minidetr/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "minidetr/errors.hpp"

namespace minidetr {

double iou(const Box& a, const Box& b) {
    double ix0 = std::max(a.x0(), b.x0());
    double iy0 = std::max(a.y0(), b.y0());
    double ix1 = std::min(a.x1(), b.x1());
    double iy1 = std::min(a.y1(), b.y1());
    double iw = std::max(0.0, ix1 - ix0);
    double ih = std::max(0.0, iy1 - iy0);
    double inter = iw * ih;
    // areas from the same corner arithmetic as the intersection, so identical
    // boxes yield exactly 1
    double area_a = (a.x1() - a.x0()) * (a.y1() - a.y0());
    double area_b = (b.x1() - b.x0()) * (b.y1() - b.y0());
    double uni = area_a + area_b - inter;
    return uni > 0.0 ? inter / uni : 0.0;
}

bool box_in_unit_square(const Box& b, double tol) {
    return b.x0() >= -tol && b.y0() >= -tol && b.x1() <= 1.0 + tol && b.y1() <= 1.0 + tol && b.w >= 0.0 &&
           b.h >= 0.0;
}

std::vector<Detection> filter_low_overlap(const std::vector<Detection>& dets,
                                          const std::vector<GroundTruth>& gts, double threshold) {
    if (threshold <= 0.0 || threshold > 1.0) {
        throw ValidationError("filter_low_overlap: threshold must be in (0,1]");
    }
    std::vector<Detection> kept;
    kept.reserve(dets.size());
    for (const Detection& d : dets) {
        double best = 0.0;
        bool any_gt = false;
        for (const GroundTruth& g : gts) {
            if (g.image_id != d.image_id) continue;
            any_gt = true;
            best = std::max(best, iou(d.box, g.box));
        }
        if (any_gt && best >= threshold) kept.push_back(d);
    }
    return kept;
}

namespace {

// Ranked TP/FP flags for one class at one threshold: sort by descending
// score (stable, so ties keep insertion order), greedily match each
// detection to its best-IoU unmatched gt on the same image.
struct RankedFlags {
    std::vector<bool> tp;
    int total_gt = 0;
};

RankedFlags rank_and_match(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                           int class_id, double iou_threshold) {
    RankedFlags rf;
    std::vector<int> gt_idx;
    for (size_t i = 0; i < gts.size(); ++i)
        if (gts[i].class_id == class_id) gt_idx.push_back(static_cast<int>(i));
    rf.total_gt = static_cast<int>(gt_idx.size());

    std::vector<int> order;
    for (size_t i = 0; i < dets.size(); ++i)
        if (dets[i].class_id == class_id) order.push_back(static_cast<int>(i));
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return dets[a].score > dets[b].score; });

    std::vector<bool> used(gt_idx.size(), false);
    rf.tp.reserve(order.size());
    for (int di : order) {
        const Detection& d = dets[di];
        int best_g = -1;
        double best_iou = 0.0;
        for (size_t k = 0; k < gt_idx.size(); ++k) {
            if (used[k]) continue;
            const GroundTruth& g = gts[gt_idx[k]];
            if (g.image_id != d.image_id) continue;
            double v = iou(d.box, g.box);
            if (v > best_iou) {  // strict: IoU ties keep the lowest gt index
                best_iou = v;
                best_g = static_cast<int>(k);
            }
        }
        if (best_g >= 0 && best_iou >= iou_threshold) {
            used[best_g] = true;
            rf.tp.push_back(true);
        } else {
            rf.tp.push_back(false);
        }
    }
    return rf;
}

double interpolated_ap(const RankedFlags& rf) {
    if (rf.total_gt == 0) return 0.0;
    // precision/recall after each rank
    size_t n = rf.tp.size();
    std::vector<double> prec(n), rec(n);
    int tp = 0;
    for (size_t i = 0; i < n; ++i) {
        if (rf.tp[i]) ++tp;
        prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
        rec[i] = static_cast<double>(tp) / rf.total_gt;
    }
    // running max of precision from the right: the interpolated envelope
    std::vector<double> env(n);
    double run = 0.0;
    for (size_t i = n; i-- > 0;) {
        run = std::max(run, prec[i]);
        env[i] = run;
    }
    double ap = 0.0;
    for (int r = 0; r <= 100; ++r) {
        double target = r / 100.0;
        // first rank reaching the target recall
        size_t lo = 0, hi = n;
        while (lo < hi) {
            size_t mid = (lo + hi) / 2;
            if (rec[mid] >= target) hi = mid;
            else lo = mid + 1;
        }
        ap += lo < n ? env[lo] : 0.0;
    }
    return ap / 101.0;
}

}  // namespace

std::optional<double> average_precision(const std::vector<Detection>& dets,
                                        const std::vector<GroundTruth>& gts, int class_id,
                                        double iou_threshold) {
    RankedFlags rf = rank_and_match(dets, gts, class_id, iou_threshold);
    if (rf.total_gt == 0) return std::nullopt;
    return interpolated_ap(rf);
}

MetricReport evaluate(const std::vector<Detection>& dets_in, const std::vector<GroundTruth>& gts,
                      const EvalOptions& options, const std::vector<std::string>& class_names) {
    if (options.iou_thresholds.empty()) throw ValidationError("evaluate: no IoU thresholds");
    std::vector<Detection> dets = dets_in;
    MetricReport rep;
    if (options.apply_low_overlap_filter) {
        dets = filter_low_overlap(dets, gts, options.low_overlap_threshold);
        rep.low_overlap_filter_applied = true;
    }
    rep.detection_count = static_cast<int>(dets.size());
    rep.gt_count = static_cast<int>(gts.size());

    std::set<int> classes;
    for (const GroundTruth& g : gts) classes.insert(g.class_id);
    for (const Detection& d : dets) classes.insert(d.class_id);

    double sum_map = 0.0, sum_map50 = 0.0;
    int counted = 0;
    for (int cls : classes) {
        ClassAp ca;
        ca.class_id = cls;
        if (cls >= 0 && cls < static_cast<int>(class_names.size())) ca.class_name = class_names[cls];
        for (const GroundTruth& g : gts)
            if (g.class_id == cls) ++ca.gt_count;
        for (const Detection& d : dets)
            if (d.class_id == cls) ++ca.detection_count;
        if (ca.gt_count > 0) {
            double acc = 0.0;
            for (double thr : options.iou_thresholds) acc += *average_precision(dets, gts, cls, thr);
            ca.ap = acc / static_cast<double>(options.iou_thresholds.size());
            ca.ap50 = *average_precision(dets, gts, cls, 0.50);
            sum_map += *ca.ap;
            sum_map50 += *ca.ap50;
            ++counted;
        }
        rep.per_class.push_back(std::move(ca));
    }
    if (counted > 0) {
        rep.map = sum_map / counted;
        rep.map50 = sum_map50 / counted;
    }
    return rep;
}

std::string metric_report_to_json(const MetricReport& r) {
    nlohmann::json j;
    j["map"] = r.map.has_value() ? nlohmann::json(*r.map) : nlohmann::json(nullptr);
    j["map50"] = r.map50.has_value() ? nlohmann::json(*r.map50) : nlohmann::json(nullptr);
    j["detection_count"] = r.detection_count;
    j["gt_count"] = r.gt_count;
    j["low_overlap_filter_applied"] = r.low_overlap_filter_applied;
    j["tie_break"] = r.tie_break;
    j["per_class"] = nlohmann::json::array();
    for (const ClassAp& c : r.per_class) {
        nlohmann::json e;
        e["class_id"] = c.class_id;
        e["class_name"] = c.class_name;
        e["ap"] = c.ap.has_value() ? nlohmann::json(*c.ap) : nlohmann::json(nullptr);
        e["ap50"] = c.ap50.has_value() ? nlohmann::json(*c.ap50) : nlohmann::json(nullptr);
        e["gt_count"] = c.gt_count;
        e["detection_count"] = c.detection_count;
        j["per_class"].push_back(std::move(e));
    }
    return j.dump(2);
}

namespace {

std::string num_or_empty(const std::optional<double>& v) {
    if (!v) return "";
    std::ostringstream os;
    os.precision(17);
    os << *v;
    return os.str();
}

}  // namespace

std::string metric_report_to_csv(const MetricReport& r) {
    std::ostringstream os;
    os << "class_id,class_name,ap,ap50,gt_count,detection_count\n";
    for (const ClassAp& c : r.per_class) {
        os << c.class_id << "," << c.class_name << "," << num_or_empty(c.ap) << "," << num_or_empty(c.ap50)
           << "," << c.gt_count << "," << c.detection_count << "\n";
    }
    os << "all,," << num_or_empty(r.map) << "," << num_or_empty(r.map50) << "," << r.gt_count << ","
       << r.detection_count << "\n";
    return os.str();
}

}  // namespace minidetr
