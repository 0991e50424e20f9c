#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace minidetr {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
size_t shape_numel(const Shape& s);

struct TensorImpl {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // same length as value, zero until backward
    bool requires_grad = false;
};

// Dense row-major tensor handle. Copying a Tensor copies the handle, not the
// storage; forward results are treated as immutable once produced, gradients
// accumulate in place.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(const Shape& shape, bool requires_grad = false);
    static Tensor full(const Shape& shape, double v, bool requires_grad = false);
    static Tensor from(const Shape& shape, std::vector<double> data, bool requires_grad = false);
    static Tensor scalar(double v);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const { return impl_->shape; }
    int ndim() const { return static_cast<int>(impl_->shape.size()); }
    int dim(int i) const { return impl_->shape[static_cast<size_t>(i)]; }
    size_t size() const { return impl_->value.size(); }

    std::vector<double>& value() { return impl_->value; }
    const std::vector<double>& value() const { return impl_->value; }
    std::vector<double>& grad() { return impl_->grad; }
    const std::vector<double>& grad() const { return impl_->grad; }

    double item() const;  // value of a one-element tensor

    double& operator()(int i) { return impl_->value[static_cast<size_t>(i)]; }
    double operator()(int i) const { return impl_->value[static_cast<size_t>(i)]; }
    double& operator()(int i, int j);
    double operator()(int i, int j) const;
    double& operator()(int i, int j, int k);
    double operator()(int i, int j, int k) const;
    double& operator()(int i, int j, int k, int l);
    double operator()(int i, int j, int k, int l) const;

    bool requires_grad() const { return impl_->requires_grad; }
    void set_requires_grad(bool v) { impl_->requires_grad = v; }
    void zero_grad() const;

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<TensorImpl> impl_;
    friend Tensor make_tensor(Shape shape, bool requires_grad);
};

Tensor make_tensor(Shape shape, bool requires_grad);

// Ordered record of executed operations. Ops record themselves onto the
// active tape (if any) whenever their output requires gradients; backward
// replays the record in reverse, which is a valid reverse-topological order
// because entries are appended in execution order.
class Tape {
public:
    // `out` is the tensor the recorded operation produced; backward() zeroes
    // every recorded output before replaying, so leaf gradients accumulate
    // across calls while intermediates always hold the latest pass.
    void record(std::shared_ptr<TensorImpl> out, std::function<void()> backprop) {
        entries_.push_back(Entry{std::move(out), std::move(backprop)});
    }
    size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and accumulates gradients into every tensor
    // recorded on this tape. Repeated calls without zero_grad accumulate.
    void backward(const Tensor& loss);

    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    // Turns recording off for its lifetime (value-only evaluation).
    class Suspend {
    public:
        Suspend();
        ~Suspend();
        Suspend(const Suspend&) = delete;
        Suspend& operator=(const Suspend&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active();

private:
    struct Entry {
        std::shared_ptr<TensorImpl> out;
        std::function<void()> backprop;
    };
    std::vector<Entry> entries_;
};

// Convenience wrapper over Tape::active()->backward(loss).
void backward(const Tensor& loss);

// ---- elementwise (trailing-axis broadcasting, extent-1 stretching) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor maximum(const Tensor& a, const Tensor& b);  // ties route grad to a
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor shift(const Tensor& a, double c);

// ---- linear algebra / structure ----
Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k] x [k,n]
Tensor transpose(const Tensor& a);                // 2-D
Tensor reshape(const Tensor& a, const Shape& shape);
Tensor slice_cols(const Tensor& a, int c0, int c1);        // 2-D, [c0, c1)
Tensor concat_cols(const std::vector<Tensor>& parts);      // 2-D
Tensor gather_rows(const Tensor& a, const std::vector<int>& rows);  // 2-D

// ---- normalization / reductions ----
Tensor softmax(const Tensor& a, int axis);      // max-subtracted, rejects non-finite input
Tensor log_softmax(const Tensor& a, int axis);
// Softmax over the admitted entries only; masked-out entries are exactly 0 in
// the output and receive zero gradient. With an all-true mask the arithmetic
// is identical to softmax. A slice with nothing admitted is rejected.
Tensor masked_softmax(const Tensor& a, const std::vector<char>& keep, int axis);
Tensor layernorm(const Tensor& a, const Tensor& gamma, const Tensor& beta, double eps);
Tensor sum(const Tensor& a);   // full reduction to a scalar
Tensor mean(const Tensor& a);

// ---- convolution ----
// input [C_in,H,W], kernels [C_out,C_in,kh,kw]. Accumulation order is fixed:
// ascending (c_in, ky, kx), so results are reproducible bit for bit.
Tensor conv2d(const Tensor& input, const Tensor& kernels, int stride, int padding);

}  // namespace minidetr
