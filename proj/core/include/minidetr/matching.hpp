#pragma once

#include <utility>
#include <vector>

#include "minidetr/data.hpp"
#include "minidetr/tensor.hpp"

namespace minidetr {

struct MatchWeights {
    double w_class = 1.0;
    double w_l1 = 5.0;
    double w_iou = 2.0;
    double lambda_noobj = 0.1;  // no-object class weight in the classification term
};

// [Q, G] cost matrix with the per-cell breakdown, row-major
struct CostMatrix {
    int q = 0, g = 0;
    std::vector<double> total;
    std::vector<double> class_cost;
    std::vector<double> l1_cost;
    std::vector<double> iou_cost;

    double at(int qi, int gi) const { return total[static_cast<size_t>(qi) * g + gi]; }
};

// pairs sorted by query id; injective both ways; |pairs| = min(Q, G)
struct Assignment {
    std::vector<std::pair<int, int>> pairs;
    std::vector<int> unmatched_queries;
    double total_cost = 0.0;  // pair costs summed in ascending query order
};

// cost = w_class*(1 - p(class)) + w_l1*||box - gt||_1 + w_iou*(1 - IoU),
// computed on detached values (matching is not differentiated through)
CostMatrix match_cost(const Tensor& class_logits, const Tensor& boxes,
                      const std::vector<GroundTruth>& gts, const MatchWeights& weights = {});

// Minimum-total-cost injective assignment; among minimizers returns the
// lexicographically smallest pair list. Throws on non-finite entries.
Assignment hungarian(const CostMatrix& cost);

// Differentiable set loss: weighted cross-entropy over all queries (matched
// -> gt class, unmatched -> no-object with weight lambda_noobj, normalized by
// total weight) plus (w_l1*L1 + w_iou*(1-IoU)) over matched pairs normalized
// by max(1, G). class_logits: [Q, C+1]; boxes: [Q, 4] in (cx,cy,w,h).
Tensor set_loss(const Tensor& class_logits, const Tensor& boxes, const std::vector<GroundTruth>& gts,
                const Assignment& assignment, const MatchWeights& weights = {});

}  // namespace minidetr
