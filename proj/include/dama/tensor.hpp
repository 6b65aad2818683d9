#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "dama/errors.hpp"

namespace dama {

namespace detail {

inline std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

inline std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

}  // namespace detail

template <typename S>
struct TensorNode {
    std::vector<int> shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until a gradient is accumulated
    bool requires_grad = false;

    std::int64_t numel() const { return static_cast<std::int64_t>(value.size()); }

    std::vector<S>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), S(0));
        return grad;
    }
};

// Value-semantic handle onto a shared node. Copying a tensor aliases the
// same storage; parameters stay alive across training steps while the tape
// that produced intermediate tensors is discarded.
template <typename S>
class BasicTensor {
public:
    BasicTensor() : node_(std::make_shared<TensorNode<S>>()) {}

    static BasicTensor zeros(std::vector<int> shape, bool requires_grad = false) {
        BasicTensor t;
        t.node_->shape = std::move(shape);
        t.node_->value.assign(static_cast<std::size_t>(detail::numel_of(t.node_->shape)), S(0));
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static BasicTensor full(std::vector<int> shape, S fill, bool requires_grad = false) {
        BasicTensor t = zeros(std::move(shape), requires_grad);
        std::fill(t.node_->value.begin(), t.node_->value.end(), fill);
        return t;
    }

    static BasicTensor from(std::vector<int> shape, std::vector<S> data, bool requires_grad = false) {
        BasicTensor t;
        if (detail::numel_of(shape) != static_cast<std::int64_t>(data.size()))
            throw ShapeError("data length " + std::to_string(data.size()) +
                             " does not match shape " + detail::shape_str(shape));
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static BasicTensor scalar(S v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    const std::vector<int>& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape[i]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    std::int64_t size() const { return node_->numel(); }

    std::vector<S>& value() { return node_->value; }
    const std::vector<S>& value() const { return node_->value; }

    // Empty until backward has accumulated into this tensor.
    const std::vector<S>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    S item() const {
        if (size() != 1) throw ContractError("item() requires a scalar tensor, got shape " + detail::shape_str(shape()));
        return node_->value[0];
    }

    BasicTensor clone() const {
        BasicTensor t;
        t.node_->shape = node_->shape;
        t.node_->value = node_->value;
        t.node_->requires_grad = node_->requires_grad;
        return t;
    }

    std::shared_ptr<TensorNode<S>> node() const { return node_; }
    bool same_storage(const BasicTensor& other) const { return node_ == other.node_; }

private:
    std::shared_ptr<TensorNode<S>> node_;
};

// Reverse-mode tape. Operations append a backward closure as they execute;
// backward() replays them in exact reverse append order. One tape lives per
// training step.
template <typename S>
class Tape {
public:
    void record(std::shared_ptr<TensorNode<S>> out, std::function<void()> fn) {
        steps_.push_back({std::move(out), std::move(fn)});
    }

    std::size_t size() const { return steps_.size(); }

    void clear() { steps_.clear(); }

    // Seeds d(loss)/d(loss) = 1 and replays the tape backwards. Gradients of
    // op outputs are cleared first so repeated calls accumulate exactly one
    // extra copy of the gradient into leaf tensors.
    void backward(const BasicTensor<S>& loss) {
        if (loss.size() != 1)
            throw ContractError("backward requires a scalar loss, got shape " + detail::shape_str(loss.shape()));
        for (auto& step : steps_) step.out->grad.clear();
        loss.node()->grad_buffer()[0] += S(1);
        for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) {
            if (!it->out->grad.empty()) it->fn();
        }
    }

private:
    struct Step {
        std::shared_ptr<TensorNode<S>> out;
        std::function<void()> fn;
    };
    std::vector<Step> steps_;
};

namespace detail {

template <typename S>
inline bool track(const BasicTensor<S>& t) {
    return t.requires_grad();
}

// Rows/cols view of an arbitrary-rank tensor with the last axis as columns.
template <typename S>
inline std::pair<std::int64_t, std::int64_t> rows_cols(const BasicTensor<S>& t) {
    if (t.rank() == 0) throw ShapeError("operation requires rank >= 1");
    std::int64_t cols = t.shape().back();
    return {t.size() / cols, cols};
}

template <typename S>
inline void check_same_shape(const BasicTensor<S>& a, const BasicTensor<S>& b, const char* op) {
    if (a.shape() != b.shape())
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operations
// ---------------------------------------------------------------------------

template <typename S>
BasicTensor<S> matmul(Tape<S>& tape, const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: incompatible shapes " + detail::shape_str(a.shape()) +
                         " and " + detail::shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = BasicTensor<S>::zeros({m, n}, detail::track(a) || detail::track(b));
    {
        const S* pa = a.value().data();
        const S* pb = b.value().data();
        S* pc = out.value().data();
        for (int i = 0; i < m; ++i)
            for (int p = 0; p < k; ++p) {
                const S av = pa[i * k + p];
                const S* brow = pb + static_cast<std::size_t>(p) * n;
                S* crow = pc + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            }
    }
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool need_a = a.requires_grad(), need_b = b.requires_grad();
        tape.record(on, [an, bn, on, m, k, n, need_a, need_b] {
            const S* g = on->grad.data();
            if (need_a) {
                S* da = an->grad_buffer().data();
                const S* pb = bn->value.data();
                for (int i = 0; i < m; ++i)
                    for (int p = 0; p < k; ++p) {
                        S acc = 0;
                        const S* grow = g + static_cast<std::size_t>(i) * n;
                        const S* brow = pb + static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) acc += grow[j] * brow[j];
                        da[i * k + p] += acc;
                    }
            }
            if (need_b) {
                S* db = bn->grad_buffer().data();
                const S* pa = an->value.data();
                for (int i = 0; i < m; ++i) {
                    const S* grow = g + static_cast<std::size_t>(i) * n;
                    for (int p = 0; p < k; ++p) {
                        const S av = pa[i * k + p];
                        if (av == S(0)) continue;
                        S* brow = db + static_cast<std::size_t>(p) * n;
                        for (int j = 0; j < n; ++j) brow[j] += av * grow[j];
                    }
                }
            }
        });
    }
    return out;
}

template <typename S>
BasicTensor<S> add(Tape<S>& tape, const BasicTensor<S>& a, const BasicTensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    auto out = BasicTensor<S>::zeros(a.shape(), detail::track(a) || detail::track(b));
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] + b.value()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool need_a = a.requires_grad(), need_b = b.requires_grad();
        tape.record(on, [an, bn, on, need_a, need_b] {
            const auto& g = on->grad;
            if (need_a) {
                auto& da = an->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            }
            if (need_b) {
                auto& db = bn->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i];
            }
        });
    }
    return out;
}

template <typename S>
BasicTensor<S> sub(Tape<S>& tape, const BasicTensor<S>& a, const BasicTensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    auto out = BasicTensor<S>::zeros(a.shape(), detail::track(a) || detail::track(b));
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] - b.value()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool need_a = a.requires_grad(), need_b = b.requires_grad();
        tape.record(on, [an, bn, on, need_a, need_b] {
            const auto& g = on->grad;
            if (need_a) {
                auto& da = an->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
            }
            if (need_b) {
                auto& db = bn->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) db[i] -= g[i];
            }
        });
    }
    return out;
}

// Elementwise (Hadamard) product.
template <typename S>
BasicTensor<S> mul(Tape<S>& tape, const BasicTensor<S>& a, const BasicTensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    auto out = BasicTensor<S>::zeros(a.shape(), detail::track(a) || detail::track(b));
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] * b.value()[i];
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool need_a = a.requires_grad(), need_b = b.requires_grad();
        tape.record(on, [an, bn, on, need_a, need_b] {
            const auto& g = on->grad;
            if (need_a) {
                auto& da = an->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bn->value[i];
            }
            if (need_b) {
                auto& db = bn->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) db[i] += g[i] * an->value[i];
            }
        });
    }
    return out;
}

template <typename S>
BasicTensor<S> scale(Tape<S>& tape, const BasicTensor<S>& a, double c) {
    auto out = BasicTensor<S>::zeros(a.shape(), detail::track(a));
    const S cs = static_cast<S>(c);
    for (std::size_t i = 0; i < out.value().size(); ++i) out.value()[i] = a.value()[i] * cs;
    if (out.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on, cs] {
            auto& da = an->grad_buffer();
            for (std::size_t i = 0; i < on->grad.size(); ++i) da[i] += on->grad[i] * cs;
        });
    }
    return out;
}

// x: R x C plus a length-C row vector broadcast over rows.
template <typename S>
BasicTensor<S> add_rowvec(Tape<S>& tape, const BasicTensor<S>& x, const BasicTensor<S>& b) {
    auto [rows, cols] = detail::rows_cols(x);
    if (b.size() != cols)
        throw ShapeError("add_rowvec: vector length " + std::to_string(b.size()) +
                         " does not match columns of " + detail::shape_str(x.shape()));
    auto out = BasicTensor<S>::zeros(x.shape(), detail::track(x) || detail::track(b));
    for (std::int64_t r = 0; r < rows; ++r)
        for (std::int64_t c = 0; c < cols; ++c)
            out.value()[static_cast<std::size_t>(r * cols + c)] =
                x.value()[static_cast<std::size_t>(r * cols + c)] + b.value()[static_cast<std::size_t>(c)];
    if (out.requires_grad()) {
        auto xn = x.node(), bn = b.node(), on = out.node();
        bool need_x = x.requires_grad(), need_b = b.requires_grad();
        tape.record(on, [xn, bn, on, rows, cols, need_x, need_b] {
            const auto& g = on->grad;
            if (need_x) {
                auto& dx = xn->grad_buffer();
                for (std::size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
            }
            if (need_b) {
                auto& db = bn->grad_buffer();
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t c = 0; c < cols; ++c)
                        db[static_cast<std::size_t>(c)] += g[static_cast<std::size_t>(r * cols + c)];
            }
        });
    }
    return out;
}

template <typename S>
BasicTensor<S> transpose(Tape<S>& tape, const BasicTensor<S>& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + detail::shape_str(a.shape()));
    const int r = a.dim(0), c = a.dim(1);
    auto out = BasicTensor<S>::zeros({c, r}, detail::track(a));
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out.value()[static_cast<std::size_t>(j) * r + i] = a.value()[static_cast<std::size_t>(i) * c + j];
    if (out.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on, r, c] {
            auto& da = an->grad_buffer();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    da[static_cast<std::size_t>(i) * c + j] += on->grad[static_cast<std::size_t>(j) * r + i];
        });
    }
    return out;
}

template <typename S>
BasicTensor<S> reshape(Tape<S>& tape, const BasicTensor<S>& a, std::vector<int> new_shape) {
    if (detail::numel_of(new_shape) != a.size())
        throw ShapeError("reshape: cannot view " + detail::shape_str(a.shape()) + " as " + detail::shape_str(new_shape));
    auto out = BasicTensor<S>::from(std::move(new_shape), a.value(), detail::track(a));
    if (out.requires_grad()) {
        auto an = a.node(), on = out.node();
        tape.record(on, [an, on] {
            auto& da = an->grad_buffer();
            for (std::size_t i = 0; i < on->grad.size(); ++i) da[i] += on->grad[i];
        });
    }
    return out;
}

// Selects rows (leading-axis slices) by index; duplicate indices are allowed
// and their gradients sum.
template <typename S>
BasicTensor<S> gather_rows(Tape<S>& tape, const BasicTensor<S>& a, const std::vector<int>& indices) {
    if (a.rank() < 1) throw ShapeError("gather_rows: rank must be >= 1");
    const std::int64_t rows = a.dim(0);
    const std::int64_t row_len = a.size() / rows;
    for (int idx : indices)
        if (idx < 0 || idx >= rows)
            throw IndexError("gather_rows: index " + std::to_string(idx) + " out of range [0, " +
                             std::to_string(rows) + ")");
    std::vector<int> out_shape = a.shape();
    out_shape[0] = static_cast<int>(indices.size());
    auto out = BasicTensor<S>::zeros(std::move(out_shape), detail::track(a));
    for (std::size_t r = 0; r < indices.size(); ++r)
        std::copy_n(a.value().data() + indices[r] * row_len, row_len,
                    out.value().data() + static_cast<std::int64_t>(r) * row_len);
    if (out.requires_grad()) {
        auto an = a.node(), on = out.node();
        auto idx = indices;
        tape.record(on, [an, on, idx, row_len] {
            auto& da = an->grad_buffer();
            for (std::size_t r = 0; r < idx.size(); ++r) {
                const S* g = on->grad.data() + static_cast<std::int64_t>(r) * row_len;
                S* dst = da.data() + idx[r] * row_len;
                for (std::int64_t i = 0; i < row_len; ++i) dst[i] += g[i];
            }
        });
    }
    return out;
}

// Concatenation along the leading axis.
template <typename S>
BasicTensor<S> concat(Tape<S>& tape, const BasicTensor<S>& a, const BasicTensor<S>& b) {
    if (a.rank() != b.rank() || a.rank() < 1)
        throw ShapeError("concat: rank mismatch " + detail::shape_str(a.shape()) + " vs " + detail::shape_str(b.shape()));
    for (int i = 1; i < a.rank(); ++i)
        if (a.dim(static_cast<std::size_t>(i)) != b.dim(static_cast<std::size_t>(i)))
            throw ShapeError("concat: trailing dims differ, " + detail::shape_str(a.shape()) + " vs " +
                             detail::shape_str(b.shape()));
    std::vector<int> out_shape = a.shape();
    out_shape[0] += b.dim(0);
    auto out = BasicTensor<S>::zeros(std::move(out_shape), detail::track(a) || detail::track(b));
    std::copy(a.value().begin(), a.value().end(), out.value().begin());
    std::copy(b.value().begin(), b.value().end(), out.value().begin() + a.value().size());
    if (out.requires_grad()) {
        auto an = a.node(), bn = b.node(), on = out.node();
        bool need_a = a.requires_grad(), need_b = b.requires_grad();
        const std::size_t na = a.value().size();
        tape.record(on, [an, bn, on, na, need_a, need_b] {
            if (need_a) {
                auto& da = an->grad_buffer();
                for (std::size_t i = 0; i < na; ++i) da[i] += on->grad[i];
            }
            if (need_b) {
                auto& db = bn->grad_buffer();
                for (std::size_t i = 0; i < db.size(); ++i) db[i] += on->grad[na + i];
            }
        });
    }
    return out;
}

// Softmax over the last axis.
template <typename S>
BasicTensor<S> softmax(Tape<S>& tape, const BasicTensor<S>& x) {
    auto [rows, cols] = detail::rows_cols(x);
    auto out = BasicTensor<S>::zeros(x.shape(), detail::track(x));
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* in = x.value().data() + r * cols;
        S* o = out.value().data() + r * cols;
        S mx = in[0];
        for (std::int64_t c = 1; c < cols; ++c) mx = std::max(mx, in[c]);
        S sum = 0;
        for (std::int64_t c = 0; c < cols; ++c) {
            o[c] = std::exp(in[c] - mx);
            sum += o[c];
        }
        for (std::int64_t c = 0; c < cols; ++c) o[c] /= sum;
    }
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, rows, cols] {
            auto& dx = xn->grad_buffer();
            for (std::int64_t r = 0; r < rows; ++r) {
                const S* y = on->value.data() + r * cols;
                const S* g = on->grad.data() + r * cols;
                S dot = 0;
                for (std::int64_t c = 0; c < cols; ++c) dot += y[c] * g[c];
                S* d = dx.data() + r * cols;
                for (std::int64_t c = 0; c < cols; ++c) d[c] += y[c] * (g[c] - dot);
            }
        });
    }
    return out;
}

// Exact GELU: x * Phi(x).
template <typename S>
BasicTensor<S> gelu(Tape<S>& tape, const BasicTensor<S>& x) {
    auto out = BasicTensor<S>::zeros(x.shape(), detail::track(x));
    constexpr double kInvSqrt2 = 0.7071067811865475244;
    for (std::size_t i = 0; i < out.value().size(); ++i) {
        const double v = static_cast<double>(x.value()[i]);
        out.value()[i] = static_cast<S>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
    }
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on] {
            constexpr double kInvSqrt2Pi = 0.3989422804014326779;
            auto& dx = xn->grad_buffer();
            for (std::size_t i = 0; i < on->grad.size(); ++i) {
                const double v = static_cast<double>(xn->value[i]);
                const double phi = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                dx[i] += on->grad[i] * static_cast<S>(phi + v * pdf);
            }
        });
    }
    return out;
}

// Per-last-axis standardization followed by an affine map.
template <typename S>
BasicTensor<S> layer_norm(Tape<S>& tape, const BasicTensor<S>& x, const BasicTensor<S>& gain,
                          const BasicTensor<S>& bias, double eps) {
    auto [rows, cols] = detail::rows_cols(x);
    if (gain.size() != cols || bias.size() != cols)
        throw ShapeError("layer_norm: gain/bias length must equal last dim " + std::to_string(cols));
    if (eps <= 0) throw ConfigError("layer_norm: eps must be positive");
    auto out = BasicTensor<S>::zeros(x.shape(), detail::track(x) || detail::track(gain) || detail::track(bias));
    // xhat rows are re-derived in backward from the stored inverse sigma.
    std::vector<S> inv_sigma(static_cast<std::size_t>(rows));
    std::vector<S> mean(static_cast<std::size_t>(rows));
    for (std::int64_t r = 0; r < rows; ++r) {
        const S* in = x.value().data() + r * cols;
        S m = 0;
        for (std::int64_t c = 0; c < cols; ++c) m += in[c];
        m /= static_cast<S>(cols);
        S var = 0;
        for (std::int64_t c = 0; c < cols; ++c) var += (in[c] - m) * (in[c] - m);
        var /= static_cast<S>(cols);
        const S is = S(1) / std::sqrt(var + static_cast<S>(eps));
        mean[static_cast<std::size_t>(r)] = m;
        inv_sigma[static_cast<std::size_t>(r)] = is;
        S* o = out.value().data() + r * cols;
        for (std::int64_t c = 0; c < cols; ++c)
            o[c] = (in[c] - m) * is * gain.value()[static_cast<std::size_t>(c)] + bias.value()[static_cast<std::size_t>(c)];
    }
    if (out.requires_grad()) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node(), on = out.node();
        bool need_x = x.requires_grad(), need_g = gain.requires_grad(), need_b = bias.requires_grad();
        tape.record(on, [xn, gn, bn, on, rows, cols, mean, inv_sigma, need_x, need_g, need_b] {
            for (std::int64_t r = 0; r < rows; ++r) {
                const S* in = xn->value.data() + r * cols;
                const S* g = on->grad.data() + r * cols;
                const S m = mean[static_cast<std::size_t>(r)];
                const S is = inv_sigma[static_cast<std::size_t>(r)];
                if (need_g || need_b) {
                    for (std::int64_t c = 0; c < cols; ++c) {
                        const S xhat = (in[c] - m) * is;
                        if (need_g) gn->grad_buffer()[static_cast<std::size_t>(c)] += g[c] * xhat;
                        if (need_b) bn->grad_buffer()[static_cast<std::size_t>(c)] += g[c];
                    }
                }
                if (need_x) {
                    // dxhat = g * gain; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_sigma
                    S sum_d = 0, sum_dx = 0;
                    for (std::int64_t c = 0; c < cols; ++c) {
                        const S xhat = (in[c] - m) * is;
                        const S dh = g[c] * gn->value[static_cast<std::size_t>(c)];
                        sum_d += dh;
                        sum_dx += dh * xhat;
                    }
                    sum_d /= static_cast<S>(cols);
                    sum_dx /= static_cast<S>(cols);
                    S* dx = xn->grad_buffer().data() + r * cols;
                    for (std::int64_t c = 0; c < cols; ++c) {
                        const S xhat = (in[c] - m) * is;
                        const S dh = g[c] * gn->value[static_cast<std::size_t>(c)];
                        dx[c] += (dh - sum_d - xhat * sum_dx) * is;
                    }
                }
            }
        });
    }
    return out;
}

// Mean along one axis of a rank-2 tensor; the reduced axis is dropped.
template <typename S>
BasicTensor<S> mean_over_axis(Tape<S>& tape, const BasicTensor<S>& x, int axis) {
    if (x.rank() != 2) throw ShapeError("mean_over_axis: expected rank 2, got " + detail::shape_str(x.shape()));
    if (axis != 0 && axis != 1) throw ShapeError("mean_over_axis: axis must be 0 or 1");
    const std::int64_t r = x.dim(0), c = x.dim(1);
    const std::int64_t out_len = axis == 0 ? c : r;
    const std::int64_t count = axis == 0 ? r : c;
    auto out = BasicTensor<S>::zeros({static_cast<int>(out_len)}, detail::track(x));
    for (std::int64_t i = 0; i < r; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            out.value()[static_cast<std::size_t>(axis == 0 ? j : i)] += x.value()[static_cast<std::size_t>(i * c + j)];
    for (auto& v : out.value()) v /= static_cast<S>(count);
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on, r, c, axis, count] {
            auto& dx = xn->grad_buffer();
            const S inv = S(1) / static_cast<S>(count);
            for (std::int64_t i = 0; i < r; ++i)
                for (std::int64_t j = 0; j < c; ++j)
                    dx[static_cast<std::size_t>(i * c + j)] +=
                        on->grad[static_cast<std::size_t>(axis == 0 ? j : i)] * inv;
        });
    }
    return out;
}

// Full reduction to a scalar.
template <typename S>
BasicTensor<S> sum(Tape<S>& tape, const BasicTensor<S>& x) {
    auto out = BasicTensor<S>::zeros({1}, detail::track(x));
    S acc = 0;
    for (S v : x.value()) acc += v;
    out.value()[0] = acc;
    if (out.requires_grad()) {
        auto xn = x.node(), on = out.node();
        tape.record(on, [xn, on] {
            auto& dx = xn->grad_buffer();
            const S g = on->grad[0];
            for (auto& v : dx) v += g;
        });
    }
    return out;
}

// Column slice [c0, c1) of a rank-2 tensor, composed from transpose and
// gather_rows so the gradient comes for free.
template <typename S>
BasicTensor<S> slice_cols(Tape<S>& tape, const BasicTensor<S>& x, int c0, int c1) {
    if (x.rank() != 2) throw ShapeError("slice_cols: expected rank 2");
    if (c0 < 0 || c1 > x.dim(1) || c0 >= c1)
        throw IndexError("slice_cols: range [" + std::to_string(c0) + ", " + std::to_string(c1) +
                         ") invalid for " + detail::shape_str(x.shape()));
    std::vector<int> idx(static_cast<std::size_t>(c1 - c0));
    std::iota(idx.begin(), idx.end(), c0);
    return transpose(tape, gather_rows(tape, transpose(tape, x), idx));
}

template <typename S>
BasicTensor<S> concat_cols(Tape<S>& tape, const std::vector<BasicTensor<S>>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: empty input");
    BasicTensor<S> acc = transpose(tape, parts[0]);
    for (std::size_t i = 1; i < parts.size(); ++i) acc = concat(tape, acc, transpose(tape, parts[i]));
    return transpose(tape, acc);
}

}  // namespace dama
