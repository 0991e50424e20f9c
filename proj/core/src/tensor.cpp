#include "minidetr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "minidetr/errors.hpp"

namespace minidetr {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ", ";
        os << s[i];
    }
    os << "]";
    return os.str();
}

size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

namespace {

void check_shape(const Shape& s, const char* who) {
    for (int d : s) {
        if (d <= 0) throw ValidationError(std::string(who) + ": non-positive extent in shape " + shape_str(s));
    }
}

thread_local Tape* g_active_tape = nullptr;

bool recording(const Tensor& out) { return g_active_tape != nullptr && out.requires_grad(); }

}  // namespace

Tensor make_tensor(Shape shape, bool requires_grad) {
    check_shape(shape, "tensor");
    auto impl = std::make_shared<TensorImpl>();
    size_t n = shape_numel(shape);
    impl->shape = std::move(shape);
    impl->value.assign(n, 0.0);
    impl->grad.assign(n, 0.0);
    impl->requires_grad = requires_grad;
    return Tensor(std::move(impl));
}

Tensor Tensor::zeros(const Shape& shape, bool requires_grad) { return make_tensor(shape, requires_grad); }

Tensor Tensor::full(const Shape& shape, double v, bool requires_grad) {
    Tensor t = make_tensor(shape, requires_grad);
    std::fill(t.value().begin(), t.value().end(), v);
    return t;
}

Tensor Tensor::from(const Shape& shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ValidationError("tensor: shape " + shape_str(shape) + " does not match " +
                              std::to_string(data.size()) + " values");
    }
    Tensor t = make_tensor(shape, requires_grad);
    t.value() = std::move(data);
    return t;
}

Tensor Tensor::scalar(double v) { return from({1}, {v}); }

double Tensor::item() const {
    if (size() != 1) throw ValidationError("item(): tensor has " + std::to_string(size()) + " elements, expected 1");
    return impl_->value[0];
}

double& Tensor::operator()(int i, int j) {
    return impl_->value[static_cast<size_t>(i) * dim(1) + j];
}
double Tensor::operator()(int i, int j) const {
    return impl_->value[static_cast<size_t>(i) * dim(1) + j];
}
double& Tensor::operator()(int i, int j, int k) {
    return impl_->value[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
}
double Tensor::operator()(int i, int j, int k) const {
    return impl_->value[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
}
double& Tensor::operator()(int i, int j, int k, int l) {
    return impl_->value[((static_cast<size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
}
double Tensor::operator()(int i, int j, int k, int l) const {
    return impl_->value[((static_cast<size_t>(i) * dim(1) + j) * dim(2) + k) * dim(3) + l];
}

void Tensor::zero_grad() const { std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0); }

// ---------------------------------------------------------------- tape

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }
Tape::Suspend::Suspend() : prev_(g_active_tape) { g_active_tape = nullptr; }
Tape::Suspend::~Suspend() { g_active_tape = prev_; }
Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ValidationError("backward: loss must be a scalar tensor");
    }
    // Zero every op output so a replay computes this pass alone; leaves are
    // never op outputs, so their grads keep accumulating across calls.
    for (auto& e : entries_) {
        std::fill(e.out->grad.begin(), e.out->grad.end(), 0.0);
    }
    loss.impl()->grad[0] = 1.0;
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
        it->backprop();
    }
}

void backward(const Tensor& loss) {
    Tape* t = Tape::active();
    if (t == nullptr) throw ValidationError("backward: no active tape");
    t->backward(loss);
}

// ------------------------------------------------------ broadcast helpers

namespace {

struct BroadcastPlan {
    Shape out_shape;
    std::vector<size_t> stride_a, stride_b;  // per out axis, 0 where stretched
    size_t out_size = 0;
    bool same_shape = false;
};

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
    BroadcastPlan p;
    if (a == b) {
        p.out_shape = a;
        p.out_size = shape_numel(a);
        p.same_shape = true;
        return p;
    }
    size_t nd = std::max(a.size(), b.size());
    p.out_shape.resize(nd);
    p.stride_a.resize(nd);
    p.stride_b.resize(nd);
    // trailing-axis alignment
    std::vector<int> ea(nd, 1), eb(nd, 1);
    for (size_t i = 0; i < a.size(); ++i) ea[nd - a.size() + i] = a[i];
    for (size_t i = 0; i < b.size(); ++i) eb[nd - b.size() + i] = b[i];
    for (size_t i = 0; i < nd; ++i) {
        if (ea[i] == eb[i] || ea[i] == 1 || eb[i] == 1) {
            p.out_shape[i] = std::max(ea[i], eb[i]);
        } else {
            throw ValidationError(std::string(op) + ": shapes " + shape_str(a) + " and " + shape_str(b) +
                                  " are not broadcast-compatible");
        }
    }
    // row-major strides within each padded view, 0 on stretched axes
    size_t sa = 1, sb = 1;
    for (size_t i = nd; i-- > 0;) {
        p.stride_a[i] = (ea[i] == 1 && p.out_shape[i] != 1) ? 0 : sa;
        p.stride_b[i] = (eb[i] == 1 && p.out_shape[i] != 1) ? 0 : sb;
        sa *= static_cast<size_t>(ea[i]);
        sb *= static_cast<size_t>(eb[i]);
    }
    p.out_size = shape_numel(p.out_shape);
    return p;
}

// Calls f(out_index, a_offset, b_offset) for every output element, odometer
// style so there is no div/mod per element.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    if (p.same_shape) {
        for (size_t i = 0; i < p.out_size; ++i) f(i, i, i);
        return;
    }
    size_t nd = p.out_shape.size();
    std::vector<int> idx(nd, 0);
    size_t oa = 0, ob = 0;
    for (size_t o = 0; o < p.out_size; ++o) {
        f(o, oa, ob);
        for (size_t i = nd; i-- > 0;) {
            ++idx[i];
            oa += p.stride_a[i];
            ob += p.stride_b[i];
            if (idx[i] < p.out_shape[i]) break;
            oa -= static_cast<size_t>(p.out_shape[i]) * p.stride_a[i];
            ob -= static_cast<size_t>(p.out_shape[i]) * p.stride_b[i];
            idx[i] = 0;
        }
    }
}

// Generic binary elementwise op. Value computes v(a,b); GradA/GradB compute
// the local partials from (a, b, out) and are skipped entirely for inputs
// that do not require gradients.
template <class V, class GA, class GB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, V v, GA ga, GB gb) {
    BroadcastPlan p = broadcast_plan(a.shape(), b.shape(), name);
    Tensor out = make_tensor(p.out_shape, a.requires_grad() || b.requires_grad());
    const double* av = a.value().data();
    const double* bv = b.value().data();
    double* ov = out.value().data();
    for_each_broadcast(p, [&](size_t o, size_t ia, size_t ib) { ov[o] = v(av[ia], bv[ib]); });
    if (recording(out)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, bi, oi, p, v, ga, gb]() {
            const double* av2 = ai->value.data();
            const double* bv2 = bi->value.data();
            const double* og = oi->grad.data();
            const double* ov2 = oi->value.data();
            double* agr = ai->grad.data();
            double* bgr = bi->grad.data();
            bool need_a = ai->requires_grad, need_b = bi->requires_grad;
            for_each_broadcast(p, [&](size_t o, size_t ia, size_t ib) {
                double g = og[o];
                if (need_a) agr[ia] += g * ga(av2[ia], bv2[ib], ov2[o]);
                if (need_b) bgr[ib] += g * gb(av2[ia], bv2[ib], ov2[o]);
            });
        });
    }
    return out;
}

template <class V, class G>
Tensor unary_op(const Tensor& a, V v, G g) {
    Tensor out = make_tensor(a.shape(), a.requires_grad());
    const double* av = a.value().data();
    double* ov = out.value().data();
    size_t n = a.size();
    for (size_t i = 0; i < n; ++i) ov[i] = v(av[i]);
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi, g]() {
            const double* av2 = ai->value.data();
            const double* ov2 = oi->value.data();
            const double* og = oi->grad.data();
            double* agr = ai->grad.data();
            size_t n2 = ai->value.size();
            for (size_t i = 0; i < n2; ++i) agr[i] += og[i] * g(av2[i], ov2[i]);
        });
    }
    return out;
}

}  // namespace

// ------------------------------------------------------------- elementwise

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        "add", a, b, [](double x, double y) { return x + y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        "sub", a, b, [](double x, double y) { return x - y; },
        [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        "mul", a, b, [](double x, double y) { return x * y; },
        [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
    return binary_op(
        "div", a, b, [](double x, double y) { return x / y; },
        [](double, double y, double) { return 1.0 / y; },
        [](double x, double y, double) { return -x / (y * y); });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
    return binary_op(
        "maximum", a, b, [](double x, double y) { return x >= y ? x : y; },
        [](double x, double y, double) { return x >= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x >= y ? 0.0 : 1.0; });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
    return binary_op(
        "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
        [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
        [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

Tensor relu(const Tensor& a) {
    return unary_op(
        a, [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& a) {
    return unary_op(
        a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor exp(const Tensor& a) {
    return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
    return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor abs(const Tensor& a) {
    return unary_op(
        a, [](double x) { return std::fabs(x); },
        [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor neg(const Tensor& a) {
    return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x * c; }, [c](double, double) { return c; });
}

Tensor shift(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------- matmul

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() != 2 || b.ndim() != 2) {
        throw ValidationError("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " +
                              shape_str(b.shape()));
    }
    if (a.dim(1) != b.dim(0)) {
        throw ValidationError("matmul: inner extents differ, " + shape_str(a.shape()) + " x " +
                              shape_str(b.shape()));
    }
    int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = make_tensor({m, n}, a.requires_grad() || b.requires_grad());
    const double* A = a.value().data();
    const double* B = b.value().data();
    double* C = out.value().data();
    for (int i = 0; i < m; ++i) {
        double* crow = C + static_cast<size_t>(i) * n;
        const double* arow = A + static_cast<size_t>(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            double av = arow[kk];
            const double* brow = B + static_cast<size_t>(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    if (recording(out)) {
        auto ai = a.impl(), bi = b.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, bi, oi, m, k, n]() {
            const double* A2 = ai->value.data();
            const double* B2 = bi->value.data();
            const double* G = oi->grad.data();
            if (ai->requires_grad) {
                double* dA = ai->grad.data();
                // dA = G * B^T
                for (int i = 0; i < m; ++i) {
                    const double* grow = G + static_cast<size_t>(i) * n;
                    double* darow = dA + static_cast<size_t>(i) * k;
                    for (int kk = 0; kk < k; ++kk) {
                        const double* brow = B2 + static_cast<size_t>(kk) * n;
                        double acc = 0.0;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        darow[kk] += acc;
                    }
                }
            }
            if (bi->requires_grad) {
                double* dB = bi->grad.data();
                // dB = A^T * G
                for (int i = 0; i < m; ++i) {
                    const double* arow = A2 + static_cast<size_t>(i) * k;
                    const double* grow = G + static_cast<size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        double av = arow[kk];
                        double* dbrow = dB + static_cast<size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dbrow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    if (a.ndim() != 2) throw ValidationError("transpose: expected 2-D, got " + shape_str(a.shape()));
    int m = a.dim(0), n = a.dim(1);
    Tensor out = make_tensor({n, m}, a.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) out(j, i) = a(i, j);
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi, m, n]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    ai->grad[static_cast<size_t>(i) * n + j] += oi->grad[static_cast<size_t>(j) * m + i];
        });
    }
    return out;
}

Tensor reshape(const Tensor& a, const Shape& shape) {
    if (shape_numel(shape) != a.size()) {
        throw ValidationError("reshape: " + shape_str(a.shape()) + " has " + std::to_string(a.size()) +
                              " elements, target " + shape_str(shape) + " needs " +
                              std::to_string(shape_numel(shape)));
    }
    Tensor out = make_tensor(shape, a.requires_grad());
    out.value() = a.value();
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi]() {
            for (size_t i = 0; i < ai->grad.size(); ++i) ai->grad[i] += oi->grad[i];
        });
    }
    return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    if (a.ndim() != 2) throw ValidationError("slice_cols: expected 2-D, got " + shape_str(a.shape()));
    if (c0 < 0 || c1 > a.dim(1) || c0 >= c1) {
        throw ValidationError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                              ") invalid for shape " + shape_str(a.shape()));
    }
    int m = a.dim(0), n = a.dim(1), w = c1 - c0;
    Tensor out = make_tensor({m, w}, a.requires_grad());
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < w; ++j) out(i, j) = a(i, c0 + j);
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi, m, n, w, c0]() {
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < w; ++j)
                    ai->grad[static_cast<size_t>(i) * n + c0 + j] += oi->grad[static_cast<size_t>(i) * w + j];
        });
    }
    return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ValidationError("concat_cols: no parts");
    int m = parts[0].dim(0), total = 0;
    bool rg = false;
    for (const Tensor& t : parts) {
        if (t.ndim() != 2 || t.dim(0) != m) {
            throw ValidationError("concat_cols: row counts differ, " + shape_str(parts[0].shape()) + " vs " +
                                  shape_str(t.shape()));
        }
        total += t.dim(1);
        rg = rg || t.requires_grad();
    }
    Tensor out = make_tensor({m, total}, rg);
    int off = 0;
    for (const Tensor& t : parts) {
        int w = t.dim(1);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < w; ++j) out(i, off + j) = t(i, j);
        off += w;
    }
    if (recording(out)) {
        std::vector<std::shared_ptr<TensorImpl>> impls;
        impls.reserve(parts.size());
        for (const Tensor& t : parts) impls.push_back(t.impl());
        auto oi = out.impl();
        Tape::active()->record(oi, [impls, oi, m, total]() {
            int off2 = 0;
            for (auto& pi : impls) {
                int w = pi->shape[1];
                if (pi->requires_grad) {
                    for (int i = 0; i < m; ++i)
                        for (int j = 0; j < w; ++j)
                            pi->grad[static_cast<size_t>(i) * w + j] +=
                                oi->grad[static_cast<size_t>(i) * total + off2 + j];
                }
                off2 += w;
            }
        });
    }
    return out;
}

Tensor gather_rows(const Tensor& a, const std::vector<int>& rows) {
    if (a.ndim() != 2) throw ValidationError("gather_rows: expected 2-D, got " + shape_str(a.shape()));
    int n = a.dim(1);
    for (int r : rows) {
        if (r < 0 || r >= a.dim(0)) {
            throw ValidationError("gather_rows: row " + std::to_string(r) + " out of range for " +
                                  shape_str(a.shape()));
        }
    }
    Tensor out = make_tensor({static_cast<int>(rows.size()), n}, a.requires_grad());
    for (size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < n; ++j) out(static_cast<int>(i), j) = a(rows[i], j);
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi, rows, n]() {
            for (size_t i = 0; i < rows.size(); ++i)
                for (int j = 0; j < n; ++j)
                    ai->grad[static_cast<size_t>(rows[i]) * n + j] += oi->grad[i * n + j];
        });
    }
    return out;
}

// ------------------------------------------------ softmax and layernorm

namespace {

// Decomposes shape into (outer, axis_len, inner) around `axis` and validates it.
void axis_split(const Shape& s, int axis, const char* op, size_t& outer, size_t& len, size_t& inner) {
    int nd = static_cast<int>(s.size());
    if (axis < 0) axis += nd;
    if (axis < 0 || axis >= nd) throw ValidationError(std::string(op) + ": axis out of range for " + shape_str(s));
    outer = 1;
    inner = 1;
    for (int i = 0; i < axis; ++i) outer *= static_cast<size_t>(s[i]);
    len = static_cast<size_t>(s[axis]);
    for (int i = axis + 1; i < nd; ++i) inner *= static_cast<size_t>(s[i]);
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    size_t outer, len, inner;
    axis_split(a.shape(), axis, "softmax", outer, len, inner);
    for (double v : a.value()) {
        if (!std::isfinite(v)) throw ValidationError("softmax: non-finite input");
    }
    Tensor out = make_tensor(a.shape(), a.requires_grad());
    const double* x = a.value().data();
    double* y = out.value().data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            size_t base = o * len * inner + in;
            double mx = x[base];
            for (size_t t = 1; t < len; ++t) mx = std::max(mx, x[base + t * inner]);
            double s = 0.0;
            for (size_t t = 0; t < len; ++t) {
                double e = std::exp(x[base + t * inner] - mx);
                y[base + t * inner] = e;
                s += e;
            }
            for (size_t t = 0; t < len; ++t) y[base + t * inner] /= s;
        }
    }
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi, outer, len, inner]() {
            const double* y2 = oi->value.data();
            const double* g = oi->grad.data();
            double* dx = ai->grad.data();
            for (size_t o = 0; o < outer; ++o) {
                for (size_t in = 0; in < inner; ++in) {
                    size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (size_t t = 0; t < len; ++t) dot += g[base + t * inner] * y2[base + t * inner];
                    for (size_t t = 0; t < len; ++t) {
                        size_t idx = base + t * inner;
                        dx[idx] += y2[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor masked_softmax(const Tensor& a, const std::vector<char>& keep, int axis) {
    size_t outer, len, inner;
    axis_split(a.shape(), axis, "masked_softmax", outer, len, inner);
    if (keep.size() != a.size()) {
        throw ValidationError("masked_softmax: mask size " + std::to_string(keep.size()) +
                              " does not match tensor " + shape_str(a.shape()));
    }
    Tensor out = make_tensor(a.shape(), a.requires_grad());
    const double* x = a.value().data();
    double* y = out.value().data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            size_t base = o * len * inner + in;
            double mx = -std::numeric_limits<double>::infinity();
            for (size_t t = 0; t < len; ++t) {
                size_t idx = base + t * inner;
                if (!keep[idx]) continue;
                if (!std::isfinite(x[idx])) throw ValidationError("masked_softmax: non-finite admitted input");
                mx = std::max(mx, x[idx]);
            }
            if (mx == -std::numeric_limits<double>::infinity()) {
                throw ValidationError("masked_softmax: a slice admits no entries");
            }
            double s = 0.0;
            for (size_t t = 0; t < len; ++t) {
                size_t idx = base + t * inner;
                if (keep[idx]) {
                    double e = std::exp(x[idx] - mx);
                    y[idx] = e;
                    s += e;
                } else {
                    y[idx] = 0.0;
                }
            }
            for (size_t t = 0; t < len; ++t) {
                size_t idx = base + t * inner;
                if (keep[idx]) y[idx] /= s;
            }
        }
    }
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        // same formula as softmax: masked entries have y = 0, hence no grad
        Tape::active()->record(oi, [ai, oi, outer, len, inner]() {
            const double* y2 = oi->value.data();
            const double* g = oi->grad.data();
            double* dx = ai->grad.data();
            for (size_t o = 0; o < outer; ++o) {
                for (size_t in = 0; in < inner; ++in) {
                    size_t base = o * len * inner + in;
                    double dot = 0.0;
                    for (size_t t = 0; t < len; ++t) dot += g[base + t * inner] * y2[base + t * inner];
                    for (size_t t = 0; t < len; ++t) {
                        size_t idx = base + t * inner;
                        dx[idx] += y2[idx] * (g[idx] - dot);
                    }
                }
            }
        });
    }
    return out;
}

Tensor log_softmax(const Tensor& a, int axis) {
    size_t outer, len, inner;
    axis_split(a.shape(), axis, "log_softmax", outer, len, inner);
    for (double v : a.value()) {
        if (!std::isfinite(v)) throw ValidationError("log_softmax: non-finite input");
    }
    Tensor out = make_tensor(a.shape(), a.requires_grad());
    const double* x = a.value().data();
    double* y = out.value().data();
    for (size_t o = 0; o < outer; ++o) {
        for (size_t in = 0; in < inner; ++in) {
            size_t base = o * len * inner + in;
            double mx = x[base];
            for (size_t t = 1; t < len; ++t) mx = std::max(mx, x[base + t * inner]);
            double s = 0.0;
            for (size_t t = 0; t < len; ++t) s += std::exp(x[base + t * inner] - mx);
            double lse = mx + std::log(s);
            for (size_t t = 0; t < len; ++t) y[base + t * inner] = x[base + t * inner] - lse;
        }
    }
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi, outer, len, inner]() {
            const double* y2 = oi->value.data();
            const double* g = oi->grad.data();
            double* dx = ai->grad.data();
            for (size_t o = 0; o < outer; ++o) {
                for (size_t in = 0; in < inner; ++in) {
                    size_t base = o * len * inner + in;
                    double gsum = 0.0;
                    for (size_t t = 0; t < len; ++t) gsum += g[base + t * inner];
                    for (size_t t = 0; t < len; ++t) {
                        size_t idx = base + t * inner;
                        dx[idx] += g[idx] - std::exp(y2[idx]) * gsum;
                    }
                }
            }
        });
    }
    return out;
}

Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps) {
    if (a.ndim() < 1) throw ValidationError("layernorm: scalar input");
    int n = a.dim(a.ndim() - 1);
    if (gamma.size() != static_cast<size_t>(n) || beta.size() != static_cast<size_t>(n)) {
        throw ValidationError("layernorm: gamma/beta must match last axis " + std::to_string(n) + ", got " +
                              shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
    }
    if (eps <= 0.0) throw ValidationError("layernorm: eps must be > 0");
    size_t rows = a.size() / static_cast<size_t>(n);
    Tensor out = make_tensor(a.shape(), a.requires_grad() || gamma.requires_grad() || beta.requires_grad());
    const double* x = a.value().data();
    const double* gm = gamma.value().data();
    const double* bt = beta.value().data();
    double* y = out.value().data();
    std::vector<double> mu(rows), istd(rows);
    for (size_t r = 0; r < rows; ++r) {
        const double* xr = x + r * n;
        double m = 0.0;
        for (int j = 0; j < n; ++j) m += xr[j];
        m /= n;
        double v = 0.0;
        for (int j = 0; j < n; ++j) v += (xr[j] - m) * (xr[j] - m);
        v /= n;
        mu[r] = m;
        istd[r] = 1.0 / std::sqrt(v + eps);
        double* yr = y + r * n;
        for (int j = 0; j < n; ++j) yr[j] = gm[j] * (xr[j] - m) * istd[r] + bt[j];
    }
    if (recording(out)) {
        auto ai = a.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, gi, bi, oi, rows, n, mu, istd]() {
            const double* x2 = ai->value.data();
            const double* gm2 = gi->value.data();
            const double* og = oi->grad.data();
            for (size_t r = 0; r < rows; ++r) {
                const double* xr = x2 + r * n;
                const double* gr = og + r * n;
                double is = istd[r], m = mu[r];
                if (gi->requires_grad || bi->requires_grad) {
                    for (int j = 0; j < n; ++j) {
                        if (gi->requires_grad) gi->grad[j] += gr[j] * (xr[j] - m) * is;
                        if (bi->requires_grad) bi->grad[j] += gr[j];
                    }
                }
                if (ai->requires_grad) {
                    double sum_dxh = 0.0, sum_dxh_xh = 0.0;
                    for (int j = 0; j < n; ++j) {
                        double dxh = gr[j] * gm2[j];
                        double xh = (xr[j] - m) * is;
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh;
                    }
                    double* dx = ai->grad.data() + r * n;
                    for (int j = 0; j < n; ++j) {
                        double dxh = gr[j] * gm2[j];
                        double xh = (xr[j] - m) * is;
                        dx[j] += is * (dxh - sum_dxh / n - xh * sum_dxh_xh / n);
                    }
                }
            }
        });
    }
    return out;
}

Tensor sum(const Tensor& a) {
    Tensor out = make_tensor({1}, a.requires_grad());
    double s = 0.0;
    for (double v : a.value()) s += v;
    out.value()[0] = s;
    if (recording(out)) {
        auto ai = a.impl(), oi = out.impl();
        Tape::active()->record(oi, [ai, oi]() {
            double g = oi->grad[0];
            for (double& d : ai->grad) d += g;
        });
    }
    return out;
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// ---------------------------------------------------------------- conv2d

Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding) {
    if (input.ndim() != 3 || kernels.ndim() != 4) {
        throw ValidationError("conv2d: expected input [C,H,W] and kernels [O,C,kh,kw], got " +
                              shape_str(input.shape()) + " and " + shape_str(kernels.shape()));
    }
    int cin = input.dim(0), h = input.dim(1), w = input.dim(2);
    int cout = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
    if (kernels.dim(1) != cin) {
        throw ValidationError("conv2d: kernel channels " + std::to_string(kernels.dim(1)) +
                              " do not match input channels " + std::to_string(cin));
    }
    if (stride < 1) throw ValidationError("conv2d: stride must be >= 1");
    if (padding < 0) throw ValidationError("conv2d: padding must be >= 0");
    if (kh > h + 2 * padding || kw > w + 2 * padding) {
        throw ValidationError("conv2d: kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                              " larger than padded input " + std::to_string(h + 2 * padding) + "x" +
                              std::to_string(w + 2 * padding));
    }
    int oh = (h + 2 * padding - kh) / stride + 1;
    int ow = (w + 2 * padding - kw) / stride + 1;
    Tensor out = make_tensor({cout, oh, ow}, input.requires_grad() || kernels.requires_grad());
    const double* X = input.value().data();
    const double* K = kernels.value().data();
    double* Y = out.value().data();
    for (int oc = 0; oc < cout; ++oc) {
        const double* koc = K + static_cast<size_t>(oc) * cin * kh * kw;
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int ic = 0; ic < cin; ++ic) {
                    const double* xc = X + static_cast<size_t>(ic) * h * w;
                    const double* kc = koc + static_cast<size_t>(ic) * kh * kw;
                    for (int ky = 0; ky < kh; ++ky) {
                        int iy = oy * stride + ky - padding;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xc + static_cast<size_t>(iy) * w;
                        const double* krow = kc + static_cast<size_t>(ky) * kw;
                        for (int kx = 0; kx < kw; ++kx) {
                            int ix = ox * stride + kx - padding;
                            if (ix < 0 || ix >= w) continue;
                            acc += xrow[ix] * krow[kx];
                        }
                    }
                }
                Y[(static_cast<size_t>(oc) * oh + oy) * ow + ox] = acc;
            }
        }
    }
    if (recording(out)) {
        auto xi = input.impl(), ki = kernels.impl(), oi = out.impl();
        Tape::active()->record(oi, [xi, ki, oi, cin, h, w, cout, kh, kw, oh, ow, stride, padding]() {
            const double* X2 = xi->value.data();
            const double* K2 = ki->value.data();
            const double* G = oi->grad.data();
            bool need_x = xi->requires_grad, need_k = ki->requires_grad;
            for (int oc = 0; oc < cout; ++oc) {
                const double* koc = K2 + static_cast<size_t>(oc) * cin * kh * kw;
                double* dkoc = ki->grad.data() + static_cast<size_t>(oc) * cin * kh * kw;
                for (int oy = 0; oy < oh; ++oy) {
                    for (int ox = 0; ox < ow; ++ox) {
                        double g = G[(static_cast<size_t>(oc) * oh + oy) * ow + ox];
                        if (g == 0.0) continue;
                        for (int ic = 0; ic < cin; ++ic) {
                            const double* xc = X2 + static_cast<size_t>(ic) * h * w;
                            double* dxc = xi->grad.data() + static_cast<size_t>(ic) * h * w;
                            const double* kc = koc + static_cast<size_t>(ic) * kh * kw;
                            double* dkc = dkoc + static_cast<size_t>(ic) * kh * kw;
                            for (int ky = 0; ky < kh; ++ky) {
                                int iy = oy * stride + ky - padding;
                                if (iy < 0 || iy >= h) continue;
                                for (int kx = 0; kx < kw; ++kx) {
                                    int ix = ox * stride + kx - padding;
                                    if (ix < 0 || ix >= w) continue;
                                    size_t xoff = static_cast<size_t>(iy) * w + ix;
                                    size_t koff = static_cast<size_t>(ky) * kw + kx;
                                    if (need_x) dxc[xoff] += g * kc[koff];
                                    if (need_k) dkc[koff] += g * xc[xoff];
                                }
                            }
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace minidetr
