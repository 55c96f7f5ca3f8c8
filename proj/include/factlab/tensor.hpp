#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "factlab/errors.hpp"

namespace factlab {

using Shape = std::vector<std::int64_t>;
using TokenId = std::int32_t;

std::int64_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major float64 tensor. The handle shares storage; copies alias the
// same buffer. Values are written once by the producing op and then left
// alone, except for parameter tensors, which the optimizer updates between
// tape lifetimes, and grad buffers, which accumulate during backward().
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value);

    bool defined() const { return static_cast<bool>(d_); }
    const Shape& shape() const { return d_->shape; }
    std::int64_t size() const { return static_cast<std::int64_t>(d_->values.size()); }
    std::int64_t dim(int axis) const { return d_->shape[static_cast<size_t>(axis)]; }
    int rank() const { return static_cast<int>(d_->shape.size()); }

    std::vector<double>& data() { return d_->values; }
    const std::vector<double>& data() const { return d_->values; }

    // Value of a size-1 tensor.
    double item() const;

    bool requires_grad() const { return d_->requires_grad; }
    void set_requires_grad(bool rg) { d_->requires_grad = rg; }
    bool has_grad() const { return !d_->grad.empty(); }

    // Grad buffer, allocated as zeros on first access. Requires requires_grad.
    std::vector<double>& grad();
    const std::vector<double>& grad() const;
    void zero_grad() { d_->grad.clear(); }

    // Identity of the underlying storage, used by the tape bookkeeping.
    const void* id() const { return d_.get(); }

    friend class Tape;

private:
    struct Data {
        Shape shape;
        std::vector<double> values;
        std::vector<double> grad;  // empty until first touched
        bool requires_grad = false;
    };
    std::shared_ptr<Data> d_;

    static Tensor wrap(std::shared_ptr<Data> d);
};

// Records ops in execution order; backward() replays the local gradient rules
// in reverse. One tape per training step, confined to one thread.
class Tape {
public:
    Tape() = default;

    void backward(const Tensor& loss);
    void reset();

    bool consumed() const { return consumed_; }
    std::size_t num_records() const { return records_.size(); }

    // Internal: used by ops to register a backward step and its output.
    void record(const Tensor& output, std::function<void()> backward_step);
    bool knows_output(const Tensor& t) const { return outputs_.count(t.id()) > 0; }

private:
    std::vector<std::function<void()>> records_;
    std::unordered_set<const void*> outputs_;
    bool consumed_ = false;
};

// Differentiable ops. `tape == nullptr` runs pure inference: no gradient rule
// is recorded and outputs do not require grad.
namespace ops {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
// elementwise, identical shapes
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape* tape, const Tensor& a, const Tensor& b);
// [t,n] + [n] broadcast over rows
Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias);
Tensor scale(Tape* tape, const Tensor& x, double c);
Tensor gelu(Tape* tape, const Tensor& x);
// softmax along the last axis, max-subtracted
Tensor softmax(Tape* tape, const Tensor& x);
// x [t,d], gain [d], bias [d]
Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);
// table [v,d], ids in [0,v) -> [ids.size(),d]
Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<TokenId>& ids);
// logits [t,v], targets [t] -> scalar mean of -log softmax(logits)[target]
Tensor cross_entropy(Tape* tape, const Tensor& logits, const std::vector<TokenId>& targets);
// q,k,v [t,d]; causal multi-head attention with scale 1/sqrt(d/heads)
Tensor causal_attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads);

}  // namespace ops

// Raw kernels shared by forward and backward paths. All accumulate variants
// add into `out`.
namespace kernels {
void mm_nn(const double* a, const double* b, double* out, std::int64_t m, std::int64_t k,
           std::int64_t n);                      // out = a.b
void mm_nt_acc(const double* a, const double* b, double* out, std::int64_t m, std::int64_t n,
               std::int64_t k);                  // out += a.b^T ; a [m,n], b [k,n]
void mm_tn_acc(const double* a, const double* b, double* out, std::int64_t m, std::int64_t k,
               std::int64_t n);                  // out += a^T.b ; a [m,k] -> out [k,n]
}  // namespace kernels

}  // namespace factlab
