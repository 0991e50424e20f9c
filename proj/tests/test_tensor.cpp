#include <cmath>

#include "doctest.h"
#include "fd_oracle.hpp"
#include "minidetr/errors.hpp"
#include "minidetr/rng.hpp"
#include "minidetr/tensor.hpp"

using namespace minidetr;
using minidetr::testing::fd_check;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(shape, true);
    for (double& v : t.value()) v = rng.uniform(lo, hi);
    return t;
}

// Fixed random weights (no grad) so the scalar reduction has non-uniform
// sensitivity to every output element.
Tensor random_weights(const Shape& shape, Rng& rng) {
    Tensor t = Tensor::zeros(shape, false);
    for (double& v : t.value()) v = rng.uniform(-1.0, 1.0);
    return t;
}

Tensor weighted_sum(const Tensor& out, const Tensor& w) { return sum(mul(out, w)); }

}  // namespace

TEST_CASE("tensor basics and invariants") {
    Tensor t = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    CHECK(t.size() == 6);
    CHECK(t(1, 2) == 6.0);
    for (double g : t.grad()) CHECK(g == 0.0);
    t.impl()->grad[0] = 5.0;
    t.zero_grad();
    for (double g : t.grad()) CHECK(g == 0.0);
    CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ValidationError);
    CHECK_THROWS_AS(t.item(), ValidationError);
    CHECK(Tensor::scalar(3.5).item() == 3.5);
}

TEST_CASE("relu and add identities") {
    Tensor x = Tensor::from({3}, {-1, 0, 2});
    Tensor y = relu(x);
    CHECK(y.value() == std::vector<double>{0, 0, 2});
    Tensor z = add(x, Tensor::zeros({3}));
    CHECK(z.value() == x.value());
}

TEST_CASE("mul gradient matches hand values") {
    Tensor a = Tensor::from({2}, {2, 3}, true);
    Tensor b = Tensor::from({2}, {5, 7}, true);
    Tape tape;
    {
        Tape::Scope scope(tape);
        tape.backward(sum(mul(a, b)));
    }
    CHECK(a.grad() == std::vector<double>{5, 7});
    CHECK(b.grad() == std::vector<double>{2, 3});
}

TEST_CASE("matmul values") {
    Tensor eye = Tensor::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    Rng rng(7);
    Tensor m = random_tensor({3, 3}, rng);
    CHECK(matmul(eye, m).value() == m.value());
    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor v = Tensor::from({2, 1}, {1, 1});
    Tensor p = matmul(a, v);
    CHECK(p.value() == std::vector<double>{3, 7});
    CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), ValidationError);
}

TEST_CASE("shape mismatch names both shapes") {
    try {
        add(Tensor::zeros({2, 3}), Tensor::zeros({4, 5}));
        FAIL("expected throw");
    } catch (const ValidationError& e) {
        std::string msg = e.what();
        CHECK(msg.find("[2, 3]") != std::string::npos);
        CHECK(msg.find("[4, 5]") != std::string::npos);
    }
}

TEST_CASE("broadcast add with row vector reduces grads over rows") {
    Tensor x = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6}, true);
    Tensor bias = Tensor::from({3}, {10, 20, 30}, true);
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor y = add(x, bias);
        CHECK(y(1, 2) == 36.0);
        tape.backward(sum(y));
    }
    CHECK(bias.grad() == std::vector<double>{2, 2, 2});
    CHECK(x.grad() == std::vector<double>{1, 1, 1, 1, 1, 1});
}

TEST_CASE("softmax contracts") {
    Tensor s = softmax(Tensor::from({2}, {0, 0}), 0);
    CHECK(s.value()[0] == doctest::Approx(0.5).epsilon(1e-12));
    Rng rng(11);
    Tensor x = random_tensor({4, 6}, rng, -30.0, 30.0);
    Tensor sm = softmax(x, 1);
    for (int i = 0; i < 4; ++i) {
        double row = 0.0;
        for (int j = 0; j < 6; ++j) {
            CHECK(sm(i, j) > 0.0);
            row += sm(i, j);
        }
        CHECK(std::fabs(row - 1.0) <= 1e-12);
    }
    // shift invariance
    Tensor shifted = softmax(shift(x, 123.25), 1);
    for (size_t i = 0; i < sm.size(); ++i)
        CHECK(shifted.value()[i] == doctest::Approx(sm.value()[i]).epsilon(1e-12));
    Tensor bad = Tensor::from({2}, {1.0, std::nan("")});
    CHECK_THROWS_AS(softmax(bad, 0), ValidationError);
    CHECK_THROWS_AS(log_softmax(bad, 0), ValidationError);
}

TEST_CASE("layernorm normalizes rows") {
    Tensor gamma = Tensor::full({2}, 1.0);
    Tensor beta = Tensor::zeros({2});
    Tensor row = Tensor::from({1, 2}, {1, 3});
    Tensor out = layernorm(row, gamma, beta, 1e-9);
    CHECK(out(0, 0) == doctest::Approx(-1.0).epsilon(1e-4));
    CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-4));
    Tensor constant = Tensor::full({1, 4}, 2.5);
    Tensor out2 = layernorm(constant, Tensor::full({4}, 1.0), Tensor::zeros({4}), 1e-5);
    for (double v : out2.value()) CHECK(std::fabs(v) < 1e-6);
    // per-row zero mean / unit variance before affine
    Rng rng(3);
    Tensor x = random_tensor({5, 8}, rng);
    Tensor norm = layernorm(x, Tensor::full({8}, 1.0), Tensor::zeros({8}), 1e-12);
    for (int i = 0; i < 5; ++i) {
        double m = 0.0, v = 0.0;
        for (int j = 0; j < 8; ++j) m += norm(i, j);
        m /= 8;
        for (int j = 0; j < 8; ++j) v += (norm(i, j) - m) * (norm(i, j) - m);
        v /= 8;
        CHECK(std::fabs(m) < 1e-9);
        CHECK(std::fabs(v - 1.0) < 1e-9);
    }
}

TEST_CASE("backward basics") {
    Tensor x = Tensor::from({3}, {1, 2, 3}, true);
    Tape tape;
    {
        Tape::Scope scope(tape);
        tape.backward(sum(x));
    }
    CHECK(x.grad() == std::vector<double>{1, 1, 1});
    CHECK_THROWS_AS(
        [&] {
            Tape t2;
            Tape::Scope scope(t2);
            t2.backward(mul(x, x));
        }(),
        ValidationError);
}

TEST_CASE("repeated backward accumulates leaf grads") {
    Tensor x = Tensor::scalar(5.0);
    x.impl()->requires_grad = true;
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor y = scale(x, 2.0);
        Tensor loss = scale(y, 3.0);
        tape.backward(loss);
        CHECK(x.grad()[0] == 6.0);
        tape.backward(loss);
        CHECK(x.grad()[0] == 12.0);  // accumulates, intermediates do not double-count
    }
}

TEST_CASE("tape replay is deterministic") {
    Rng rng(17);
    Tensor x = random_tensor({4, 4}, rng);
    Tensor w = random_tensor({4, 4}, rng);
    auto run = [&]() {
        x.zero_grad();
        w.zero_grad();
        Tape tape;
        Tape::Scope scope(tape);
        Tensor y = matmul(x, w);
        tape.backward(sum(mul(y, y)));
        return std::make_pair(x.grad(), w.grad());
    };
    auto g1 = run();
    auto g2 = run();
    CHECK(g1.first == g2.first);  // bitwise
    CHECK(g1.second == g2.second);
}

TEST_CASE("conv2d trivial kernels") {
    Rng rng(5);
    Tensor img = random_tensor({1, 4, 4}, rng);
    Tensor ident = Tensor::from({1, 1, 1, 1}, {1.0});
    Tensor out = conv2d(img, ident, 1, 0);
    CHECK(out.value() == img.value());
    Tensor ones_in = Tensor::full({1, 5, 5}, 1.0);
    Tensor ones_k = Tensor::full({1, 1, 3, 3}, 1.0);
    Tensor counted = conv2d(ones_in, ones_k, 1, 0);
    CHECK(counted.shape() == Shape{1, 3, 3});
    for (double v : counted.value()) CHECK(v == 9.0);
    CHECK_THROWS_AS(conv2d(img, Tensor::full({1, 1, 9, 9}, 1.0), 1, 0), ValidationError);
    CHECK_THROWS_AS(conv2d(img, Tensor::full({1, 2, 3, 3}, 1.0), 1, 1), ValidationError);
}

TEST_CASE("conv2d equals nested-loop oracle exactly") {
    Rng rng(123);
    for (int trial = 0; trial < 20; ++trial) {
        int cin = 1 + static_cast<int>(rng.uniform_index(3));
        int cout = 1 + static_cast<int>(rng.uniform_index(3));
        int h = 5 + static_cast<int>(rng.uniform_index(4));
        int w = 5 + static_cast<int>(rng.uniform_index(4));
        int k = 1 + 2 * static_cast<int>(rng.uniform_index(2));  // 1 or 3
        int stride = 1 + static_cast<int>(rng.uniform_index(2));
        int pad = static_cast<int>(rng.uniform_index(2));
        Tensor x = random_tensor({cin, h, w}, rng);
        Tensor kern = random_tensor({cout, cin, k, k}, rng);
        Tensor y = conv2d(x, kern, stride, pad);
        int oh = (h + 2 * pad - k) / stride + 1;
        int ow = (w + 2 * pad - k) / stride + 1;
        REQUIRE(y.shape() == Shape{cout, oh, ow});
        // independent direct convolution, same (channel, kernel-row, kernel-col)
        // accumulation order as the library for bitwise comparison
        for (int oc = 0; oc < cout; ++oc) {
            for (int oy = 0; oy < oh; ++oy) {
                for (int ox = 0; ox < ow; ++ox) {
                    double acc = 0.0;
                    for (int ic = 0; ic < cin; ++ic)
                        for (int ky = 0; ky < k; ++ky)
                            for (int kx = 0; kx < k; ++kx) {
                                int iy = oy * stride + ky - pad;
                                int ix = ox * stride + kx - pad;
                                if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                                acc += x(ic, iy, ix) * kern(oc, ic, ky, kx);
                            }
                    CHECK(y(oc, oy, ox) == acc);  // exact
                }
            }
        }
    }
}

TEST_CASE("matmul equals triple-loop oracle") {
    Rng rng(99);
    Tensor a = random_tensor({4, 5}, rng);
    Tensor b = random_tensor({5, 3}, rng);
    Tensor c = matmul(a, b);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 3; ++j) {
            double acc = 0.0;
            for (int k = 0; k < 5; ++k) acc += a(i, k) * b(k, j);
            CHECK(c(i, j) == doctest::Approx(acc).epsilon(1e-12));
        }
}

TEST_CASE("structural ops round-trip values and grads") {
    Rng rng(21);
    Tensor x = random_tensor({3, 6}, rng);
    Tensor left = slice_cols(x, 0, 2);
    Tensor mid = slice_cols(x, 2, 5);
    Tensor right = slice_cols(x, 5, 6);
    Tensor back = concat_cols({left, mid, right});
    CHECK(back.value() == x.value());
    CHECK_THROWS_AS(slice_cols(x, 4, 4), ValidationError);
    CHECK_THROWS_AS(slice_cols(x, -1, 2), ValidationError);
    Tensor g = gather_rows(x, {2, 0, 2});
    for (int j = 0; j < 6; ++j) {
        CHECK(g(0, j) == x(2, j));
        CHECK(g(1, j) == x(0, j));
        CHECK(g(2, j) == x(2, j));
    }
    CHECK_THROWS_AS(gather_rows(x, {3}), ValidationError);
    Tensor t = transpose(x);
    CHECK(t.shape() == Shape{6, 3});
    CHECK(t(4, 1) == x(1, 4));
    Tensor r = reshape(x, {2, 9});
    CHECK(r.value() == x.value());
    CHECK_THROWS_AS(reshape(x, {5, 5}), ValidationError);
}

// -------------------------------------------------------------------------
// finite-difference oracle over randomized inputs, 100 seeds per op
// -------------------------------------------------------------------------

namespace {
constexpr int kSeeds = 100;
constexpr double kTol = 1e-3;
}  // namespace

TEST_CASE("fd: binary elementwise ops") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(1000 + seed);
        Tensor a = random_tensor({3, 4}, rng);
        Tensor b = random_tensor({3, 4}, rng);
        // keep away from max/min ties and div-by-tiny
        for (size_t i = 0; i < b.size(); ++i) {
            double d = b.value()[i] - a.value()[i];
            if (std::fabs(d) < 0.05) b.value()[i] = a.value()[i] + (d >= 0 ? 0.05 : -0.05);
            if (std::fabs(b.value()[i]) < 0.2) b.value()[i] += b.value()[i] >= 0 ? 0.3 : -0.3;
        }
        Tensor w = random_weights({3, 4}, rng);
        auto check = [&](const char* name, Tensor (*op)(const Tensor&, const Tensor&)) {
            auto rep = fd_check({a, b}, [&]() { return weighted_sum(op(a, b), w); });
            INFO(name << " seed " << seed);
            CHECK(rep.max_rel_err < kTol);
        };
        check("add", add);
        check("sub", sub);
        check("mul", mul);
        check("div", div);
        check("maximum", maximum);
        check("minimum", minimum);
    }
}

TEST_CASE("fd: broadcast binary ops") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(2000 + seed);
        Tensor a = random_tensor({4, 3}, rng);
        Tensor b = random_tensor({3}, rng, 0.5, 1.5);  // positive, off-tie
        Tensor w = random_weights({4, 3}, rng);
        auto rep = fd_check({a, b}, [&]() { return weighted_sum(mul(a, b), w); });
        CHECK(rep.max_rel_err < kTol);
        auto rep2 = fd_check({a, b}, [&]() { return weighted_sum(div(a, b), w); });
        CHECK(rep2.max_rel_err < kTol);
        Tensor col = random_tensor({4, 1}, rng);
        auto rep3 = fd_check({a, col}, [&]() { return weighted_sum(add(a, col), w); });
        CHECK(rep3.max_rel_err < kTol);
    }
}

TEST_CASE("fd: unary ops") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(3000 + seed);
        Tensor x = random_tensor({2, 5}, rng);
        // keep clear of relu/abs kinks
        for (double& v : x.value())
            if (std::fabs(v) < 0.05) v += v >= 0 ? 0.1 : -0.1;
        Tensor pos = random_tensor({2, 5}, rng, 0.2, 2.0);
        Tensor w = random_weights({2, 5}, rng);
        auto check1 = [&](const char* name, const Tensor& in, Tensor (*op)(const Tensor&)) {
            auto rep = fd_check({in}, [&]() { return weighted_sum(op(in), w); });
            INFO(name << " seed " << seed);
            CHECK(rep.max_rel_err < kTol);
        };
        check1("relu", x, relu);
        check1("sigmoid", x, sigmoid);
        check1("exp", x, exp);
        check1("log", pos, log);
        check1("abs", x, abs);
        check1("neg", x, neg);
        auto rep = fd_check({x}, [&]() { return weighted_sum(scale(x, -1.7), w); });
        CHECK(rep.max_rel_err < kTol);
        rep = fd_check({x}, [&]() { return weighted_sum(shift(x, 0.4), w); });
        CHECK(rep.max_rel_err < kTol);
    }
}

TEST_CASE("fd: matmul and structural ops") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(4000 + seed);
        Tensor a = random_tensor({4, 5}, rng);
        Tensor b = random_tensor({5, 3}, rng);
        Tensor w = random_weights({4, 3}, rng);
        auto rep = fd_check({a, b}, [&]() { return weighted_sum(matmul(a, b), w); });
        CHECK(rep.max_rel_err < kTol);
        Tensor wt = random_weights({5, 4}, rng);
        rep = fd_check({a}, [&]() { return weighted_sum(transpose(a), wt); });
        CHECK(rep.max_rel_err < kTol);
        Tensor wr = random_weights({2, 10}, rng);
        rep = fd_check({a}, [&]() { return weighted_sum(reshape(a, {2, 10}), wr); });
        CHECK(rep.max_rel_err < kTol);
        Tensor ws = random_weights({4, 2}, rng);
        rep = fd_check({a}, [&]() { return weighted_sum(slice_cols(a, 1, 3), ws); });
        CHECK(rep.max_rel_err < kTol);
        Tensor c = random_tensor({4, 2}, rng);
        Tensor wc = random_weights({4, 12}, rng);
        rep = fd_check({a, c}, [&]() { return weighted_sum(concat_cols({a, c, a}), wc); });
        CHECK(rep.max_rel_err < kTol);
        Tensor wg = random_weights({3, 5}, rng);
        rep = fd_check({a}, [&]() { return weighted_sum(gather_rows(a, {0, 2, 0}), wg); });
        CHECK(rep.max_rel_err < kTol);
    }
}

TEST_CASE("fd: softmax, log_softmax, layernorm, reductions") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(5000 + seed);
        Tensor x = random_tensor({3, 6}, rng, -2.0, 2.0);
        Tensor w = random_weights({3, 6}, rng);
        auto rep = fd_check({x}, [&]() { return weighted_sum(softmax(x, 1), w); });
        CHECK(rep.max_rel_err < kTol);
        rep = fd_check({x}, [&]() { return weighted_sum(softmax(x, 0), w); });
        CHECK(rep.max_rel_err < kTol);
        rep = fd_check({x}, [&]() { return weighted_sum(log_softmax(x, 1), w); });
        CHECK(rep.max_rel_err < kTol);
        Tensor gamma = random_tensor({6}, rng, 0.5, 1.5);
        Tensor beta = random_tensor({6}, rng);
        rep = fd_check({x, gamma, beta}, [&]() { return weighted_sum(layernorm(x, gamma, beta, 1e-5), w); });
        CHECK(rep.max_rel_err < kTol);
        rep = fd_check({x}, [&]() { return sum(x); });
        CHECK(rep.max_rel_err < kTol);
        rep = fd_check({x}, [&]() { return mean(x); });
        CHECK(rep.max_rel_err < kTol);
    }
}

TEST_CASE("fd: conv2d") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(6000 + seed);
        Tensor x = random_tensor({2, 6, 6}, rng);
        Tensor k = random_tensor({3, 2, 3, 3}, rng);
        int stride = 1 + static_cast<int>(rng.uniform_index(2));
        int pad = static_cast<int>(rng.uniform_index(2));
        int oh = (6 + 2 * pad - 3) / stride + 1;
        Tensor w = random_weights({3, oh, oh}, rng);
        auto rep = fd_check({x, k}, [&]() { return weighted_sum(conv2d(x, k, stride, pad), w); });
        CHECK(rep.max_rel_err < kTol);
    }
}

TEST_CASE("fd: composite softmax cross-entropy chain") {
    for (int seed = 0; seed < kSeeds; ++seed) {
        Rng rng(7000 + seed);
        Tensor logits = random_tensor({4, 5}, rng, -2.0, 2.0);
        std::vector<int> labels;
        for (int i = 0; i < 4; ++i) labels.push_back(static_cast<int>(rng.uniform_index(5)));
        auto rep = fd_check({logits}, [&]() {
            Tensor lsm = log_softmax(logits, 1);
            Tensor picked = Tensor::zeros({4, 5});
            for (int i = 0; i < 4; ++i) picked(i, labels[i]) = 1.0;
            return scale(sum(mul(lsm, picked)), -0.25);
        });
        CHECK(rep.max_rel_err < kTol);
    }
}

// -------------------------------------------------------------------------
// rng
// -------------------------------------------------------------------------

TEST_CASE("rng determinism and ranges") {
    Rng a(42), b(42), c(43);
    bool all_same = true, any_diff = false;
    for (int i = 0; i < 100; ++i) {
        double ua = a.uniform(), ub = b.uniform(), uc = c.uniform();
        CHECK(ua >= 0.0);
        CHECK(ua < 1.0);
        all_same = all_same && (ua == ub);
        any_diff = any_diff || (ua != uc);
    }
    CHECK(all_same);
    CHECK(any_diff);
}

TEST_CASE("rng permutation is a permutation") {
    Rng rng(9);
    auto p = rng.permutation(50);
    std::vector<bool> seen(50, false);
    for (int v : p) {
        REQUIRE(v >= 0);
        REQUIRE(v < 50);
        CHECK(!seen[v]);
        seen[v] = true;
    }
}

TEST_CASE("rng moments are sane") {
    Rng rng(1234);
    double s = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double v = rng.normal();
        s += v;
        s2 += v * v;
    }
    CHECK(std::fabs(s / n) < 0.05);
    CHECK(std::fabs(s2 / n - 1.0) < 0.05);
    double ps = 0.0;
    for (int i = 0; i < n; ++i) ps += static_cast<double>(rng.poisson(12.0));
    CHECK(std::fabs(ps / n - 12.0) < 0.2);
}
