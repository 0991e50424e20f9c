#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "minidetr/errors.hpp"
#include "minidetr/eval.hpp"
#include "minidetr/matching.hpp"
#include "minidetr/rng.hpp"

using namespace minidetr;
using minidetr::testing::fd_check;

namespace {

CostMatrix raw_cost(int q, int g, std::vector<double> vals) {
    CostMatrix cm;
    cm.q = q;
    cm.g = g;
    cm.total = std::move(vals);
    cm.class_cost.assign(cm.total.size(), 0.0);
    cm.l1_cost.assign(cm.total.size(), 0.0);
    cm.iou_cost.assign(cm.total.size(), 0.0);
    return cm;
}

// Brute force over every injective assignment, generated in lexicographic
// pair-list order; keeps the first strict minimum (canonical total summed in
// ascending query order).
struct BruteForce {
    const CostMatrix& cm;
    std::vector<std::pair<int, int>> best;
    double best_total = 0.0;
    bool found = false;

    explicit BruteForce(const CostMatrix& c) : cm(c) {}

    void recurse(int start_q, std::vector<std::pair<int, int>>& cur, std::vector<bool>& used) {
        int depth = std::min(cm.q, cm.g);
        if (static_cast<int>(cur.size()) == depth) {
            double t = 0.0;
            for (auto& [qi, gi] : cur) t += cm.at(qi, gi);
            if (!found || t < best_total) {
                best = cur;
                best_total = t;
                found = true;
            }
            return;
        }
        int need = depth - static_cast<int>(cur.size());
        for (int qi = start_q; qi <= cm.q - need; ++qi) {
            for (int gi = 0; gi < cm.g; ++gi) {
                if (used[gi]) continue;
                used[gi] = true;
                cur.emplace_back(qi, gi);
                recurse(qi + 1, cur, used);
                cur.pop_back();
                used[gi] = false;
            }
        }
    }

    void run() {
        std::vector<std::pair<int, int>> cur;
        std::vector<bool> used(cm.g, false);
        recurse(0, cur, used);
    }
};

GroundTruth gt(int cls, Box b) {
    GroundTruth g;
    g.image_id = 0;
    g.class_id = cls;
    g.box = b;
    return g;
}

}  // namespace

TEST_CASE("hungarian hand cases") {
    // zero diagonal, large off-diagonal -> identity
    auto a = hungarian(raw_cost(3, 3, {0, 9, 9, 9, 0, 9, 9, 9, 0}));
    REQUIRE(a.pairs.size() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(a.pairs[i].first == i);
        CHECK(a.pairs[i].second == i);
    }
    CHECK(a.total_cost == 0.0);
    CHECK(a.unmatched_queries.empty());

    auto b = hungarian(raw_cost(2, 2, {1, 2, 2, 1}));
    CHECK(b.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});
    CHECK(b.total_cost == 2.0);

    // rectangular: 3 queries, 1 gt -> lexicographically the earliest query
    // among minimizers
    auto c = hungarian(raw_cost(3, 1, {5, 5, 5}));
    REQUIRE(c.pairs.size() == 1);
    CHECK(c.pairs[0] == std::pair<int, int>{0, 0});
    CHECK(c.unmatched_queries == std::vector<int>{1, 2});

    // all-equal matrix: canonical identity on the leading block
    auto d = hungarian(raw_cost(2, 3, {7, 7, 7, 7, 7, 7}));
    CHECK(d.pairs == std::vector<std::pair<int, int>>{{0, 0}, {1, 1}});

    CHECK_THROWS_AS(hungarian(raw_cost(2, 2, {1, 2, 3, std::nan("")})), ValidationError);
    CHECK_THROWS_AS(hungarian(raw_cost(0, 0, {})), ValidationError);
}

TEST_CASE("hungarian equals brute force exactly on 1000 random matrices") {
    for (int seed = 0; seed < 1000; ++seed) {
        Rng rng(20000 + seed);
        int q = 1 + static_cast<int>(rng.uniform_index(7));
        int g = 1 + static_cast<int>(rng.uniform_index(7));
        std::vector<double> vals(static_cast<size_t>(q) * g);
        for (double& v : vals) v = rng.uniform(0.0, 10.0);
        CostMatrix cm = raw_cost(q, g, std::move(vals));
        Assignment got = hungarian(cm);
        BruteForce bf(cm);
        bf.run();
        REQUIRE(got.pairs == bf.best);          // canonical assignment identical
        CHECK(got.total_cost == bf.best_total);  // hence bitwise-equal totals
    }
}

TEST_CASE("hungarian large path agrees with enumeration") {
    // 9x9 exceeds the exhaustive cutoff inside hungarian; cross-check a few
    // seeds against direct enumeration
    for (int seed = 0; seed < 12; ++seed) {
        Rng rng(31000 + seed);
        std::vector<double> vals(81);
        for (double& v : vals) v = rng.uniform(0.0, 10.0);
        CostMatrix cm = raw_cost(9, 9, std::move(vals));
        Assignment got = hungarian(cm);
        BruteForce bf(cm);
        bf.run();
        CHECK(got.pairs == bf.best);
        CHECK(got.total_cost == bf.best_total);
    }
}

TEST_CASE("hungarian properties: shift and gt-permutation equivariance") {
    for (int seed = 0; seed < 50; ++seed) {
        Rng rng(40000 + seed);
        int q = 2 + static_cast<int>(rng.uniform_index(5));
        int g = 2 + static_cast<int>(rng.uniform_index(5));
        std::vector<double> vals(static_cast<size_t>(q) * g);
        for (double& v : vals) v = rng.uniform(0.0, 10.0);
        CostMatrix cm = raw_cost(q, g, vals);
        Assignment base = hungarian(cm);

        // adding a constant to every entry keeps the argmin assignment
        std::vector<double> shifted = vals;
        for (double& v : shifted) v += 3.25;
        Assignment sh = hungarian(raw_cost(q, g, std::move(shifted)));
        CHECK(sh.pairs == base.pairs);

        // permuting gt columns permutes the assignment consistently
        auto perm = rng.permutation(g);  // column j of new matrix = old column perm[j]
        std::vector<double> permuted(vals.size());
        for (int qi = 0; qi < q; ++qi)
            for (int gi = 0; gi < g; ++gi)
                permuted[static_cast<size_t>(qi) * g + gi] = vals[static_cast<size_t>(qi) * g + perm[gi]];
        Assignment pm = hungarian(raw_cost(q, g, std::move(permuted)));
        std::vector<std::pair<int, int>> mapped;
        std::vector<int> inv(g);
        for (int j = 0; j < g; ++j) inv[perm[j]] = j;
        for (auto [qi, gi] : base.pairs) mapped.emplace_back(qi, inv[gi]);
        std::sort(mapped.begin(), mapped.end());
        CHECK(pm.pairs == mapped);
    }
}

TEST_CASE("match_cost structure and oracle") {
    // two perfect predictions: diagonal ~0, off-diagonal strictly larger
    Box b0{0.3, 0.3, 0.2, 0.2}, b1{0.7, 0.7, 0.25, 0.25};
    Tensor logits = Tensor::from({2, 3}, {30, 0, 0, 0, 30, 0});  // classes 0,1 + no-object
    Tensor boxes = Tensor::from({2, 4}, {b0.cx, b0.cy, b0.w, b0.h, b1.cx, b1.cy, b1.w, b1.h});
    std::vector<GroundTruth> gts = {gt(0, b0), gt(1, b1)};
    MatchWeights w;
    w.w_class = 1.0;
    w.w_l1 = 1.0;
    w.w_iou = 1.0;
    CostMatrix cm = match_cost(logits, boxes, gts, w);
    REQUIRE(cm.q == 2);
    REQUIRE(cm.g == 2);
    CHECK(cm.at(0, 0) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(cm.at(1, 1) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(cm.at(0, 1) > cm.at(0, 0));
    CHECK(cm.at(1, 0) > cm.at(1, 1));

    // random case cross-checked against independent per-cell arithmetic
    Rng rng(55);
    Tensor rl = Tensor::zeros({4, 4});
    Tensor rb = Tensor::zeros({4, 4});
    for (double& v : rl.value()) v = rng.uniform(-2, 2);
    for (int i = 0; i < 4; ++i) {
        rb(i, 0) = rng.uniform(0.2, 0.8);
        rb(i, 1) = rng.uniform(0.2, 0.8);
        rb(i, 2) = rng.uniform(0.05, 0.3);
        rb(i, 3) = rng.uniform(0.05, 0.3);
    }
    std::vector<GroundTruth> rgts = {gt(1, Box{0.4, 0.4, 0.2, 0.3}), gt(2, Box{0.6, 0.5, 0.3, 0.2})};
    MatchWeights rw;  // defaults 1/5/2
    CostMatrix rcm = match_cost(rl, rb, rgts, rw);
    for (int qi = 0; qi < 4; ++qi) {
        double mx = std::max({rl(qi, 0), rl(qi, 1), rl(qi, 2), rl(qi, 3)});
        double z = 0.0;
        for (int c = 0; c < 4; ++c) z += std::exp(rl(qi, c) - mx);
        for (int gi = 0; gi < 2; ++gi) {
            const GroundTruth& g = rgts[gi];
            double p = std::exp(rl(qi, g.class_id) - mx) / z;
            Box pb{rb(qi, 0), rb(qi, 1), rb(qi, 2), rb(qi, 3)};
            double l1 = std::fabs(pb.cx - g.box.cx) + std::fabs(pb.cy - g.box.cy) +
                        std::fabs(pb.w - g.box.w) + std::fabs(pb.h - g.box.h);
            double expect = 1.0 * (1.0 - p) + 5.0 * l1 + 2.0 * (1.0 - iou(pb, g.box));
            CHECK(rcm.at(qi, gi) == doctest::Approx(expect).epsilon(1e-12));
            CHECK(std::isfinite(rcm.at(qi, gi)));
        }
    }
    CHECK_THROWS_AS(match_cost(rl, rb, {}, rw), ValidationError);
    CHECK_THROWS_AS(match_cost(rl, rb, {gt(3, Box{0.5, 0.5, 0.1, 0.1})}, rw), ValidationError);
}

TEST_CASE("set_loss limits and empty-gt case") {
    Box b0{0.3, 0.3, 0.2, 0.2};
    std::vector<GroundTruth> gts = {gt(0, b0)};
    // near-perfect prediction: strong logit, exact box
    Tensor logits = Tensor::from({2, 2}, {40, 0, 0, 40});  // q0 -> class 0, q1 -> no-object
    Tensor boxes = Tensor::from({2, 4}, {0.3, 0.3, 0.2, 0.2, 0.5, 0.5, 0.1, 0.1});
    CostMatrix cm = match_cost(logits, boxes, gts);
    Assignment a = hungarian(cm);
    REQUIRE(a.pairs == std::vector<std::pair<int, int>>{{0, 0}});
    Tensor loss = set_loss(logits, boxes, gts, a);
    CHECK(loss.item() >= 0.0);
    CHECK(loss.item() < 1e-6);  // -> 0 in the perfect limit

    // G = 0: pure no-object classification over all queries
    Assignment empty;
    Tensor loss0 = set_loss(logits, boxes, {}, empty);
    // hand value: mean over rows of -log softmax(no-object)
    double expect = 0.0;
    for (int i = 0; i < 2; ++i) {
        double l0 = logits(i, 0), l1 = logits(i, 1);
        double mx = std::max(l0, l1);
        double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
        expect += -(l1 - lse);
    }
    expect /= 2.0;
    CHECK(loss0.item() == doctest::Approx(expect).epsilon(1e-12));

    // imperfect predictions -> strictly positive
    Tensor boxes2 = Tensor::from({2, 4}, {0.35, 0.3, 0.2, 0.2, 0.5, 0.5, 0.1, 0.1});
    Tensor loss2 = set_loss(logits, boxes2, gts, a);
    CHECK(loss2.item() > 0.0);
}

TEST_CASE("set_loss gradient matches finite differences on a 2-query toy") {
    for (int seed = 0; seed < 30; ++seed) {
        Rng rng(60000 + seed);
        Tensor logits = Tensor::zeros({2, 3}, true);
        Tensor boxes_raw = Tensor::zeros({2, 4}, true);  // pre-sigmoid
        for (double& v : logits.value()) v = rng.uniform(-1.5, 1.5);
        for (double& v : boxes_raw.value()) v = rng.uniform(-1.0, 1.0);
        std::vector<GroundTruth> gts = {gt(0, Box{0.4, 0.45, 0.25, 0.3}),
                                        gt(1, Box{0.65, 0.55, 0.2, 0.15})};
        // freeze the assignment outside the loss (matching is not
        // differentiated through)
        Assignment a;
        {
            Tensor sb = sigmoid(boxes_raw);
            a = hungarian(match_cost(logits, sb, gts));
        }
        auto rep = fd_check({logits, boxes_raw}, [&]() {
            return set_loss(logits, sigmoid(boxes_raw), gts, a);
        });
        CHECK(rep.max_rel_err < 1e-3);
    }
}
