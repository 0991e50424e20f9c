#include "minidetr/matching.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "minidetr/errors.hpp"
#include "minidetr/eval.hpp"

namespace minidetr {

CostMatrix match_cost(const Tensor& class_logits, const Tensor& boxes,
                      const std::vector<GroundTruth>& gts, const MatchWeights& weights) {
    if (class_logits.ndim() != 2 || boxes.ndim() != 2 || boxes.dim(1) != 4 ||
        class_logits.dim(0) != boxes.dim(0)) {
        throw ValidationError("match_cost: expected class_logits [Q,C+1] and boxes [Q,4], got " +
                              shape_str(class_logits.shape()) + " and " + shape_str(boxes.shape()));
    }
    if (gts.empty()) throw ValidationError("match_cost: empty ground truth (handle upstream)");
    int q = class_logits.dim(0), ncls = class_logits.dim(1);
    for (const GroundTruth& g : gts) {
        if (g.class_id < 0 || g.class_id >= ncls - 1) {
            throw ValidationError("match_cost: gt class " + std::to_string(g.class_id) +
                                  " out of range for " + std::to_string(ncls - 1) + " classes");
        }
    }
    CostMatrix cm;
    cm.q = q;
    cm.g = static_cast<int>(gts.size());
    size_t cells = static_cast<size_t>(q) * cm.g;
    cm.total.resize(cells);
    cm.class_cost.resize(cells);
    cm.l1_cost.resize(cells);
    cm.iou_cost.resize(cells);

    for (int qi = 0; qi < q; ++qi) {
        // softmax of the row, detached, max-subtracted
        double mx = class_logits(qi, 0);
        for (int c = 1; c < ncls; ++c) mx = std::max(mx, class_logits(qi, c));
        double denom = 0.0;
        for (int c = 0; c < ncls; ++c) denom += std::exp(class_logits(qi, c) - mx);
        Box pb{boxes(qi, 0), boxes(qi, 1), boxes(qi, 2), boxes(qi, 3)};
        for (int gi = 0; gi < cm.g; ++gi) {
            const GroundTruth& gt = gts[gi];
            double p = std::exp(class_logits(qi, gt.class_id) - mx) / denom;
            double l1 = std::fabs(pb.cx - gt.box.cx) + std::fabs(pb.cy - gt.box.cy) +
                        std::fabs(pb.w - gt.box.w) + std::fabs(pb.h - gt.box.h);
            size_t idx = static_cast<size_t>(qi) * cm.g + gi;
            cm.class_cost[idx] = weights.w_class * (1.0 - p);
            cm.l1_cost[idx] = weights.w_l1 * l1;
            cm.iou_cost[idx] = weights.w_iou * (1.0 - iou(pb, gt.box));
            cm.total[idx] = cm.class_cost[idx] + cm.l1_cost[idx] + cm.iou_cost[idx];
        }
    }
    return cm;
}

namespace {

// pair costs summed in ascending query order — the canonical total used for
// comparing assignments and reported in Assignment::total_cost
double canonical_total(const CostMatrix& cost, const std::vector<std::pair<int, int>>& pairs) {
    double t = 0.0;
    for (const auto& [qi, gi] : pairs) t += cost.at(qi, gi);
    return t;
}

// Exhaustive canonical argmin over all injective assignments; pair lists are
// generated in lexicographic order, so the first minimum found is canonical.
struct ExhaustiveSearch {
    const CostMatrix& cost;
    int q, g, depth;
    std::vector<bool> gt_used;
    std::vector<std::pair<int, int>> current, best;
    double best_total = std::numeric_limits<double>::infinity();
    bool have_best = false;

    explicit ExhaustiveSearch(const CostMatrix& c)
        : cost(c), q(c.q), g(c.g), depth(std::min(c.q, c.g)), gt_used(c.g, false) {}

    void run(int next_query, double running) {
        if (static_cast<int>(current.size()) == depth) {
            if (!have_best || running < best_total) {
                best_total = running;
                best = current;
                have_best = true;
            }
            return;
        }
        int remaining = depth - static_cast<int>(current.size());
        // queries ascending; leave enough queries for the remaining slots
        for (int qi = next_query; qi <= q - remaining; ++qi) {
            for (int gi = 0; gi < g; ++gi) {
                if (gt_used[gi]) continue;
                gt_used[gi] = true;
                current.emplace_back(qi, gi);
                run(qi + 1, running + cost.at(qi, gi));
                current.pop_back();
                gt_used[gi] = false;
            }
        }
    }
};

// O(n^3) shortest-augmenting-path assignment on a square matrix (1-indexed
// internals); returns row match for each column
std::vector<int> square_assignment(const std::vector<std::vector<double>>& a) {
    int n = static_cast<int>(a.size());
    const double INF = std::numeric_limits<double>::infinity();
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, INF);
        std::vector<bool> used(n + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = 0;
            double delta = INF;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                double cur = a[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> col_to_row(n);
    for (int j = 1; j <= n; ++j) col_to_row[j - 1] = p[j] - 1;
    return col_to_row;
}

// Optimal total for a subproblem over the given query/gt index subsets,
// matching min(|queries|,|gts|) pairs (zero-padded square)
double subproblem_optimum(const CostMatrix& cost, const std::vector<int>& queries,
                          const std::vector<int>& gts) {
    int nq = static_cast<int>(queries.size()), ng = static_cast<int>(gts.size());
    if (nq == 0 || ng == 0) return 0.0;
    int n = std::max(nq, ng);
    std::vector<std::vector<double>> a(n, std::vector<double>(n, 0.0));
    for (int i = 0; i < nq; ++i)
        for (int j = 0; j < ng; ++j) a[i][j] = cost.at(queries[i], gts[j]);
    auto col_to_row = square_assignment(a);
    // padded rows/columns carry zero cost; sum real cells only
    double t = 0.0;
    for (int j = 0; j < ng; ++j) {
        int i = col_to_row[j];
        if (i < nq) t += a[i][j];
    }
    return t;
}

// For inputs too large to enumerate: optimal value from the O(n^3) solver,
// then sequential fixing picks the lexicographically smallest optimal pair
// list (equality of totals checked to a tight relative tolerance)
std::vector<std::pair<int, int>> sequential_fixing(const CostMatrix& cost) {
    int q = cost.q, g = cost.g, depth = std::min(q, g);
    std::vector<int> all_q(q), all_g(g);
    for (int i = 0; i < q; ++i) all_q[i] = i;
    for (int j = 0; j < g; ++j) all_g[j] = j;
    double t_star = subproblem_optimum(cost, all_q, all_g);
    double tol = 1e-9 * std::max(1.0, std::fabs(t_star));

    std::vector<std::pair<int, int>> fixed;
    std::vector<bool> g_used(g, false);
    double c_fixed = 0.0;
    int next_q = 0;
    for (int pos = 0; pos < depth; ++pos) {
        int remaining = depth - pos;
        bool placed = false;
        for (int qi = next_q; qi <= q - remaining && !placed; ++qi) {
            for (int gi = 0; gi < g && !placed; ++gi) {
                if (g_used[gi]) continue;
                std::vector<int> rest_q, rest_g;
                for (int k = qi + 1; k < q; ++k) rest_q.push_back(k);
                for (int k = 0; k < g; ++k)
                    if (!g_used[k] && k != gi) rest_g.push_back(k);
                double rest = subproblem_optimum(cost, rest_q, rest_g);
                if (std::fabs(c_fixed + cost.at(qi, gi) + rest - t_star) <= tol) {
                    fixed.emplace_back(qi, gi);
                    g_used[gi] = true;
                    c_fixed += cost.at(qi, gi);
                    next_q = qi + 1;
                    placed = true;
                }
            }
        }
        if (!placed) throw RuntimeFailure("hungarian: sequential fixing failed to extend the assignment");
    }
    return fixed;
}

}  // namespace

Assignment hungarian(const CostMatrix& cost) {
    if (cost.q <= 0 || cost.g <= 0) throw ValidationError("hungarian: empty cost matrix");
    if (cost.total.size() != static_cast<size_t>(cost.q) * cost.g) {
        throw ValidationError("hungarian: cost matrix size does not match dimensions");
    }
    for (double v : cost.total) {
        if (!std::isfinite(v)) throw ValidationError("hungarian: non-finite cost entry");
    }
    Assignment out;
    // count candidate pair lists: choose(min) slots — queries increasing, gts
    // injective — bounded by P(max, min) * C(q, depth); enumerate exactly when
    // small (covers training shapes and the oracle suite), else O(n^3) path
    double combos = 1.0;
    int depth = std::min(cost.q, cost.g);
    for (int k = 0; k < depth; ++k) combos *= static_cast<double>(cost.g - k);
    double qchoose = 1.0;
    for (int k = 0; k < depth; ++k) qchoose = qchoose * (cost.q - k) / (k + 1);
    bool small = combos * qchoose <= 200000.0;

    if (small) {
        ExhaustiveSearch search(cost);
        search.run(0, 0.0);
        out.pairs = search.best;
    } else {
        out.pairs = sequential_fixing(cost);
    }
    out.total_cost = canonical_total(cost, out.pairs);
    std::vector<bool> q_used(cost.q, false);
    for (const auto& [qi, gi] : out.pairs) q_used[qi] = true;
    for (int qi = 0; qi < cost.q; ++qi)
        if (!q_used[qi]) out.unmatched_queries.push_back(qi);
    return out;
}

Tensor set_loss(const Tensor& class_logits, const Tensor& boxes, const std::vector<GroundTruth>& gts,
                const Assignment& assignment, const MatchWeights& weights) {
    if (class_logits.ndim() != 2 || boxes.ndim() != 2 || boxes.dim(1) != 4 ||
        class_logits.dim(0) != boxes.dim(0)) {
        throw ValidationError("set_loss: expected class_logits [Q,C+1] and boxes [Q,4], got " +
                              shape_str(class_logits.shape()) + " and " + shape_str(boxes.shape()));
    }
    int q = class_logits.dim(0), ncls = class_logits.dim(1);
    int noobj = ncls - 1;
    std::vector<int> target(q, noobj);
    std::vector<bool> q_seen(q, false), g_seen(gts.size(), false);
    for (const auto& [qi, gi] : assignment.pairs) {
        if (qi < 0 || qi >= q || gi < 0 || gi >= static_cast<int>(gts.size()) || q_seen[qi] || g_seen[gi]) {
            throw ValidationError("set_loss: assignment inconsistent with outputs/ground truth");
        }
        q_seen[qi] = true;
        g_seen[gi] = true;
        target[qi] = gts[gi].class_id;
    }

    // weighted cross-entropy: pick each row's target log-prob with a weight
    // mask, normalize by the total weight
    Tensor lsm = log_softmax(class_logits, 1);
    Tensor pick = Tensor::zeros({q, ncls});
    double weight_sum = 0.0;
    for (int qi = 0; qi < q; ++qi) {
        double w = target[qi] == noobj ? weights.lambda_noobj : 1.0;
        pick(qi, target[qi]) = w;
        weight_sum += w;
    }
    Tensor ce = scale(sum(mul(lsm, pick)), -1.0 / weight_sum);

    if (assignment.pairs.empty()) return ce;

    std::vector<int> mq;
    std::vector<double> gt_vals;
    for (const auto& [qi, gi] : assignment.pairs) {
        mq.push_back(qi);
        const Box& b = gts[gi].box;
        gt_vals.insert(gt_vals.end(), {b.cx, b.cy, b.w, b.h});
    }
    int m = static_cast<int>(mq.size());
    Tensor pred = gather_rows(boxes, mq);
    Tensor gt_t = Tensor::from({m, 4}, gt_vals);

    Tensor l1 = sum(abs(sub(pred, gt_t)));

    // differentiable IoU per pair from corner arithmetic
    Tensor pcx = slice_cols(pred, 0, 1), pcy = slice_cols(pred, 1, 2);
    Tensor pw = slice_cols(pred, 2, 3), ph = slice_cols(pred, 3, 4);
    Tensor gcx = slice_cols(gt_t, 0, 1), gcy = slice_cols(gt_t, 1, 2);
    Tensor gw = slice_cols(gt_t, 2, 3), gh = slice_cols(gt_t, 3, 4);
    auto half = [](const Tensor& t) { return scale(t, 0.5); };
    Tensor px0 = sub(pcx, half(pw)), px1 = add(pcx, half(pw));
    Tensor py0 = sub(pcy, half(ph)), py1 = add(pcy, half(ph));
    Tensor gx0 = sub(gcx, half(gw)), gx1 = add(gcx, half(gw));
    Tensor gy0 = sub(gcy, half(gh)), gy1 = add(gcy, half(gh));
    Tensor iw = relu(sub(minimum(px1, gx1), maximum(px0, gx0)));
    Tensor ih = relu(sub(minimum(py1, gy1), maximum(py0, gy0)));
    Tensor inter = mul(iw, ih);
    Tensor uni = shift(sub(add(mul(pw, ph), mul(gw, gh)), inter), 1e-9);
    Tensor iou_col = div(inter, uni);
    Tensor iou_loss = sum(shift(neg(iou_col), 1.0));

    double norm = 1.0 / std::max<double>(1.0, static_cast<double>(gts.size()));
    Tensor box_terms = scale(add(scale(l1, weights.w_l1), scale(iou_loss, weights.w_iou)), norm);
    return add(ce, box_terms);
}

}  // namespace minidetr
