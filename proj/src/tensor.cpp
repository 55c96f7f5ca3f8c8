#include "factlab/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace factlab {

std::int64_t shape_size(const Shape& shape) {
    std::int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor Tensor::wrap(std::shared_ptr<Data> d) {
    Tensor t;
    t.d_ = std::move(d);
    return t;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    auto d = std::make_shared<Data>();
    const auto n = shape_size(shape);
    if (n < 0) throw DimensionError("negative dimension in shape " + shape_str(shape));
    d->shape = std::move(shape);
    d->values.assign(static_cast<size_t>(n), 0.0);
    d->requires_grad = requires_grad;
    return wrap(std::move(d));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    const auto n = shape_size(shape);
    if (n != static_cast<std::int64_t>(values.size()))
        throw DimensionError("value count " + std::to_string(values.size()) +
                             " does not fill shape " + shape_str(shape));
    auto d = std::make_shared<Data>();
    d->shape = std::move(shape);
    d->values = std::move(values);
    d->requires_grad = requires_grad;
    return wrap(std::move(d));
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a size-1 tensor, got " + shape_str(shape()));
    return d_->values[0];
}

std::vector<double>& Tensor::grad() {
    if (!d_->requires_grad) throw ContractError("grad access on a tensor without requires_grad");
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0);
    return d_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (d_->grad.empty()) throw ContractError("grad is not populated");
    return d_->grad;
}

void Tape::record(const Tensor& output, std::function<void()> backward_step) {
    records_.push_back(std::move(backward_step));
    outputs_.insert(output.id());
}

void Tape::backward(const Tensor& loss) {
    if (consumed_) throw ContractError("backward() called twice on the same tape; reset() first");
    if (!loss.defined() || loss.size() != 1)
        throw ContractError("backward() requires a scalar loss, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
    if (!knows_output(loss)) throw ContractError("loss tensor was not produced on this tape");
    consumed_ = true;
    // Seed d(loss)/d(loss) = 1 and replay local rules in reverse order.
    const_cast<Tensor&>(loss).grad()[0] += 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

void Tape::reset() {
    records_.clear();
    outputs_.clear();
    consumed_ = false;
}

namespace kernels {

void mm_nn(const double* a, const double* b, double* out, std::int64_t m, std::int64_t k,
           std::int64_t n) {
    for (std::int64_t i = 0; i < m; ++i) {
        double* orow = out + i * n;
        std::fill(orow, orow + n, 0.0);
        const double* arow = a + i * k;
        for (std::int64_t l = 0; l < k; ++l) {
            const double av = arow[l];
            const double* brow = b + l * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

void mm_nt_acc(const double* a, const double* b, double* out, std::int64_t m, std::int64_t n,
               std::int64_t k) {
    // out[m,k] += a[m,n] . b[k,n]^T : dot products of contiguous rows
    for (std::int64_t i = 0; i < m; ++i) {
        const double* arow = a + i * n;
        double* orow = out + i * k;
        for (std::int64_t j = 0; j < k; ++j) {
            const double* brow = b + j * n;
            double acc = 0.0;
            for (std::int64_t l = 0; l < n; ++l) acc += arow[l] * brow[l];
            orow[j] += acc;
        }
    }
}

void mm_tn_acc(const double* a, const double* b, double* out, std::int64_t m, std::int64_t k,
               std::int64_t n) {
    // out[k,n] += a[m,k]^T . b[m,n] : rank-1 updates, vectorizes along n
    for (std::int64_t l = 0; l < m; ++l) {
        const double* arow = a + l * k;
        const double* brow = b + l * n;
        for (std::int64_t i = 0; i < k; ++i) {
            const double av = arow[i];
            if (av == 0.0) continue;
            double* orow = out + i * n;
            for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
}

}  // namespace kernels

namespace ops {
namespace {

bool want_grad(Tape* tape, std::initializer_list<const Tensor*> inputs) {
    if (!tape) return false;
    for (const auto* t : inputs)
        if (t->requires_grad()) return true;
    return false;
}

// Accumulation guard: an output whose grad buffer was never touched is not on
// the path to the loss, so its contribution is zero.
const std::vector<double>* out_grad(Tensor& out) {
    return out.has_grad() ? &out.grad() : nullptr;
}

void check_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()) + " differ");
}

}  // namespace

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor out = Tensor::zeros({m, n}, want_grad(tape, {&a, &b}));
    kernels::mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n);
    if (out.requires_grad()) {
        tape->record(out, [a, b, out, m, k, n]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            if (a.requires_grad())
                kernels::mm_nt_acc(go->data(), b.data().data(), a.grad().data(), m, n, k);
            if (b.requires_grad())
                kernels::mm_tn_acc(a.data().data(), go->data(), b.grad().data(), m, k, n);
        });
    }
    return out;
}

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape("add", a, b);
    Tensor out = Tensor::zeros(a.shape(), want_grad(tape, {&a, &b}));
    const auto n = static_cast<size_t>(a.size());
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
    if (out.requires_grad()) {
        tape->record(out, [a, b, out, n]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (size_t i = 0; i < n; ++i) ga[i] += (*go)[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (size_t i = 0; i < n; ++i) gb[i] += (*go)[i];
            }
        });
    }
    return out;
}

Tensor mul(Tape* tape, const Tensor& a, const Tensor& b) {
    check_same_shape("mul", a, b);
    Tensor out = Tensor::zeros(a.shape(), want_grad(tape, {&a, &b}));
    const auto n = static_cast<size_t>(a.size());
    for (size_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
    if (out.requires_grad()) {
        tape->record(out, [a, b, out, n]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            if (a.requires_grad()) {
                auto& ga = a.grad();
                for (size_t i = 0; i < n; ++i) ga[i] += (*go)[i] * b.data()[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.grad();
                for (size_t i = 0; i < n; ++i) gb[i] += (*go)[i] * a.data()[i];
            }
        });
    }
    return out;
}

Tensor add_bias(Tape* tape, const Tensor& x, const Tensor& bias) {
    if (x.rank() != 2 || bias.rank() != 1 || x.dim(1) != bias.dim(0))
        throw DimensionError("add_bias: shapes " + shape_str(x.shape()) + " and " +
                             shape_str(bias.shape()) + " do not broadcast");
    const std::int64_t t = x.dim(0), n = x.dim(1);
    Tensor out = Tensor::zeros({t, n}, want_grad(tape, {&x, &bias}));
    for (std::int64_t i = 0; i < t; ++i)
        for (std::int64_t j = 0; j < n; ++j)
            out.data()[static_cast<size_t>(i * n + j)] =
                x.data()[static_cast<size_t>(i * n + j)] + bias.data()[static_cast<size_t>(j)];
    if (out.requires_grad()) {
        tape->record(out, [x, bias, out, t, n]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            if (x.requires_grad()) {
                auto& gx = x.grad();
                for (size_t i = 0; i < static_cast<size_t>(t * n); ++i) gx[i] += (*go)[i];
            }
            if (bias.requires_grad()) {
                auto& gb = bias.grad();
                for (std::int64_t i = 0; i < t; ++i)
                    for (std::int64_t j = 0; j < n; ++j)
                        gb[static_cast<size_t>(j)] += (*go)[static_cast<size_t>(i * n + j)];
            }
        });
    }
    return out;
}

Tensor scale(Tape* tape, const Tensor& x, double c) {
    Tensor out = Tensor::zeros(x.shape(), want_grad(tape, {&x}));
    const auto n = static_cast<size_t>(x.size());
    for (size_t i = 0; i < n; ++i) out.data()[i] = c * x.data()[i];
    if (out.requires_grad()) {
        tape->record(out, [x, out, c, n]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            auto& gx = x.grad();
            for (size_t i = 0; i < n; ++i) gx[i] += c * (*go)[i];
        });
    }
    return out;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(Tape* tape, const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape(), want_grad(tape, {&x}));
    const auto n = static_cast<size_t>(x.size());
    for (size_t i = 0; i < n; ++i) {
        const double v = x.data()[i];
        out.data()[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
    }
    if (out.requires_grad()) {
        tape->record(out, [x, out, n]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            auto& gx = x.grad();
            for (size_t i = 0; i < n; ++i) {
                const double v = x.data()[i];
                const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                gx[i] += (*go)[i] * (cdf + v * pdf);
            }
        });
    }
    return out;
}

Tensor softmax(Tape* tape, const Tensor& x) {
    if (x.rank() < 1) throw DimensionError("softmax: rank-0 input");
    const std::int64_t n = x.dim(x.rank() - 1);
    const std::int64_t rows = x.size() / n;
    Tensor out = Tensor::zeros(x.shape(), want_grad(tape, {&x}));
    for (std::int64_t r = 0; r < rows; ++r) {
        const double* in = x.data().data() + r * n;
        double* o = out.data().data() + r * n;
        double mx = in[0];
        for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
        if (!std::isfinite(mx)) throw NumericError("softmax: non-finite input");
        double sum = 0.0;
        for (std::int64_t j = 0; j < n; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        const double inv = 1.0 / sum;
        for (std::int64_t j = 0; j < n; ++j) o[j] *= inv;
    }
    if (out.requires_grad()) {
        tape->record(out, [x, out, rows, n]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            auto& gx = x.grad();
            for (std::int64_t r = 0; r < rows; ++r) {
                const double* y = out.data().data() + r * n;
                const double* g = go->data() + r * n;
                double dot = 0.0;
                for (std::int64_t j = 0; j < n; ++j) dot += y[j] * g[j];
                for (std::int64_t j = 0; j < n; ++j)
                    gx[static_cast<size_t>(r * n + j)] += y[j] * (g[j] - dot);
            }
        });
    }
    return out;
}

Tensor layer_norm(Tape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
    if (x.rank() != 2) throw DimensionError("layer_norm: input must be [t,d], got " + shape_str(x.shape()));
    const std::int64_t t = x.dim(0), d = x.dim(1);
    if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d)
        throw DimensionError("layer_norm: gain/bias must be [" + std::to_string(d) + "]");
    Tensor out = Tensor::zeros({t, d}, want_grad(tape, {&x, &gain, &bias}));
    std::vector<double> inv_std(static_cast<size_t>(t));
    std::vector<double> xhat(static_cast<size_t>(t * d));
    for (std::int64_t i = 0; i < t; ++i) {
        const double* row = x.data().data() + i * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[static_cast<size_t>(i)] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[static_cast<size_t>(i * d + j)] = h;
            out.data()[static_cast<size_t>(i * d + j)] = gain.data()[static_cast<size_t>(j)] * h +
                                                         bias.data()[static_cast<size_t>(j)];
        }
    }
    if (out.requires_grad()) {
        tape->record(out, [x, gain, bias, out, t, d, inv_std = std::move(inv_std),
                           xhat = std::move(xhat)]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            for (std::int64_t i = 0; i < t; ++i) {
                const double* g = go->data() + i * d;
                const double* h = xhat.data() + i * d;
                if (gain.requires_grad()) {
                    auto& gg = gain.grad();
                    for (std::int64_t j = 0; j < d; ++j) gg[static_cast<size_t>(j)] += g[j] * h[j];
                }
                if (bias.requires_grad()) {
                    auto& gb = bias.grad();
                    for (std::int64_t j = 0; j < d; ++j) gb[static_cast<size_t>(j)] += g[j];
                }
                if (x.requires_grad()) {
                    auto& gx = x.grad();
                    double sum_gy = 0.0, sum_gyh = 0.0;
                    std::vector<double> gy(static_cast<size_t>(d));
                    for (std::int64_t j = 0; j < d; ++j) {
                        gy[static_cast<size_t>(j)] = g[j] * gain.data()[static_cast<size_t>(j)];
                        sum_gy += gy[static_cast<size_t>(j)];
                        sum_gyh += gy[static_cast<size_t>(j)] * h[j];
                    }
                    const double inv_d = 1.0 / static_cast<double>(d);
                    const double is = inv_std[static_cast<size_t>(i)];
                    for (std::int64_t j = 0; j < d; ++j)
                        gx[static_cast<size_t>(i * d + j)] +=
                            is * (gy[static_cast<size_t>(j)] - inv_d * sum_gy -
                                  h[j] * inv_d * sum_gyh);
                }
            }
        });
    }
    return out;
}

Tensor embedding_lookup(Tape* tape, const Tensor& table, const std::vector<TokenId>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be [v,d]");
    const std::int64_t v = table.dim(0), d = table.dim(1);
    for (auto id : ids)
        if (id < 0 || id >= v)
            throw IndexError("embedding_lookup: id " + std::to_string(id) + " outside table of " +
                             std::to_string(v) + " rows");
    const std::int64_t t = static_cast<std::int64_t>(ids.size());
    Tensor out = Tensor::zeros({t, d}, want_grad(tape, {&table}));
    for (std::int64_t i = 0; i < t; ++i)
        std::copy_n(table.data().data() + static_cast<std::int64_t>(ids[static_cast<size_t>(i)]) * d,
                    d, out.data().data() + i * d);
    if (out.requires_grad()) {
        tape->record(out, [table, out, ids, d, t]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            auto& gt = table.grad();
            for (std::int64_t i = 0; i < t; ++i) {
                double* dst = gt.data() + static_cast<std::int64_t>(ids[static_cast<size_t>(i)]) * d;
                const double* src = go->data() + i * d;
                for (std::int64_t j = 0; j < d; ++j) dst[j] += src[j];
            }
        });
    }
    return out;
}

Tensor cross_entropy(Tape* tape, const Tensor& logits, const std::vector<TokenId>& targets) {
    if (logits.rank() != 2) throw DimensionError("cross_entropy: logits must be [t,v]");
    const std::int64_t t = logits.dim(0), v = logits.dim(1);
    if (static_cast<std::int64_t>(targets.size()) != t)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                             std::to_string(t) + " logit rows");
    for (auto id : targets)
        if (id < 0 || id >= v)
            throw IndexError("cross_entropy: target id " + std::to_string(id) +
                             " outside vocabulary of " + std::to_string(v));
    std::vector<double> lse(static_cast<size_t>(t));
    double total = 0.0;
    for (std::int64_t i = 0; i < t; ++i) {
        const double* row = logits.data().data() + i * v;
        double mx = row[0];
        for (std::int64_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        if (!std::isfinite(mx)) throw NumericError("cross_entropy: non-finite logits");
        double sum = 0.0;
        for (std::int64_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
        lse[static_cast<size_t>(i)] = mx + std::log(sum);
        total += lse[static_cast<size_t>(i)] - row[targets[static_cast<size_t>(i)]];
    }
    Tensor out = Tensor::from({}, {total / static_cast<double>(t)}, want_grad(tape, {&logits}));
    if (out.requires_grad()) {
        tape->record(out, [logits, out, targets, lse = std::move(lse), t, v]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            const double g = (*go)[0] / static_cast<double>(t);
            auto& gl = logits.grad();
            for (std::int64_t i = 0; i < t; ++i) {
                const double* row = logits.data().data() + i * v;
                double* grow = gl.data() + i * v;
                const double l = lse[static_cast<size_t>(i)];
                for (std::int64_t j = 0; j < v; ++j) grow[j] += g * std::exp(row[j] - l);
                grow[targets[static_cast<size_t>(i)]] -= g;
            }
        });
    }
    return out;
}

Tensor causal_attention(Tape* tape, const Tensor& q, const Tensor& k, const Tensor& v,
                        int n_heads) {
    if (q.rank() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
        throw DimensionError("causal_attention: q/k/v must share shape [t,d]");
    const std::int64_t t = q.dim(0), d = q.dim(1);
    if (n_heads <= 0 || d % n_heads != 0)
        throw DimensionError("causal_attention: d_model " + std::to_string(d) +
                             " not divisible by n_heads " + std::to_string(n_heads));
    const std::int64_t dh = d / n_heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    Tensor out = Tensor::zeros({t, d}, want_grad(tape, {&q, &k, &v}));
    // probs[h][i*t + j] for j <= i; strictly upper entries stay zero
    std::vector<double> probs(static_cast<size_t>(n_heads) * static_cast<size_t>(t * t), 0.0);
    for (int h = 0; h < n_heads; ++h) {
        const std::int64_t off = static_cast<std::int64_t>(h) * dh;
        double* p_h = probs.data() + static_cast<size_t>(h) * static_cast<size_t>(t * t);
        for (std::int64_t i = 0; i < t; ++i) {
            const double* qi = q.data().data() + i * d + off;
            double* pr = p_h + i * t;
            double mx = -1e300;
            for (std::int64_t j = 0; j <= i; ++j) {
                const double* kj = k.data().data() + j * d + off;
                double s = 0.0;
                for (std::int64_t l = 0; l < dh; ++l) s += qi[l] * kj[l];
                s *= sc;
                pr[j] = s;
                mx = std::max(mx, s);
            }
            if (!std::isfinite(mx)) throw NumericError("causal_attention: non-finite scores");
            double sum = 0.0;
            for (std::int64_t j = 0; j <= i; ++j) {
                pr[j] = std::exp(pr[j] - mx);
                sum += pr[j];
            }
            const double inv = 1.0 / sum;
            double* oi = out.data().data() + i * d + off;
            for (std::int64_t j = 0; j <= i; ++j) {
                pr[j] *= inv;
                const double* vj = v.data().data() + j * d + off;
                const double p = pr[j];
                for (std::int64_t l = 0; l < dh; ++l) oi[l] += p * vj[l];
            }
        }
    }
    if (out.requires_grad()) {
        tape->record(out, [q, k, v, out, probs = std::move(probs), t, d, dh, sc,
                           n_heads]() mutable {
            const auto* go = out_grad(out);
            if (!go) return;
            std::vector<double> ds(static_cast<size_t>(t));
            for (int h = 0; h < n_heads; ++h) {
                const std::int64_t off = static_cast<std::int64_t>(h) * dh;
                const double* p_h = probs.data() + static_cast<size_t>(h) * static_cast<size_t>(t * t);
                for (std::int64_t i = 0; i < t; ++i) {
                    const double* gi = go->data() + i * d + off;
                    const double* pr = p_h + i * t;
                    // dP and the softmax Jacobian, row i restricted to j <= i
                    double dot = 0.0;
                    for (std::int64_t j = 0; j <= i; ++j) {
                        const double* vj = v.data().data() + j * d + off;
                        double dp = 0.0;
                        for (std::int64_t l = 0; l < dh; ++l) dp += gi[l] * vj[l];
                        ds[static_cast<size_t>(j)] = dp;
                        dot += dp * pr[j];
                    }
                    for (std::int64_t j = 0; j <= i; ++j)
                        ds[static_cast<size_t>(j)] = pr[j] * (ds[static_cast<size_t>(j)] - dot) * sc;
                    if (v.requires_grad()) {
                        auto& gv = v.grad();
                        for (std::int64_t j = 0; j <= i; ++j) {
                            double* gvj = gv.data() + j * d + off;
                            const double p = pr[j];
                            for (std::int64_t l = 0; l < dh; ++l) gvj[l] += p * gi[l];
                        }
                    }
                    if (q.requires_grad()) {
                        auto& gq = q.grad();
                        double* gqi = gq.data() + i * d + off;
                        for (std::int64_t j = 0; j <= i; ++j) {
                            const double* kj = k.data().data() + j * d + off;
                            const double s = ds[static_cast<size_t>(j)];
                            for (std::int64_t l = 0; l < dh; ++l) gqi[l] += s * kj[l];
                        }
                    }
                    if (k.requires_grad()) {
                        auto& gk = k.grad();
                        const double* qi = q.data().data() + i * d + off;
                        for (std::int64_t j = 0; j <= i; ++j) {
                            double* gkj = gk.data() + j * d + off;
                            const double s = ds[static_cast<size_t>(j)];
                            for (std::int64_t l = 0; l < dh; ++l) gkj[l] += s * qi[l];
                        }
                    }
                }
            }
        });
    }
    return out;
}

}  // namespace ops
}  // namespace factlab
