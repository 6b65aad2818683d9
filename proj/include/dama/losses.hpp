#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "dama/errors.hpp"
#include "dama/masking.hpp"
#include "dama/tensor.hpp"

namespace dama {

// Per-step loss record. total == lp1 + lp2 + alpha * lf; the per-patch
// vector is detached and is what adaptive masking consumes.
struct LossReport {
    double lp1 = 0.0;
    double lp2 = 0.0;
    double lf = 0.0;
    double total = 0.0;
    std::vector<double> per_patch_1;
};

template <typename S>
struct PixelLossResult {
    BasicTensor<S> scalar;
    std::vector<double> per_patch;  // zeros at visible positions, detached
};

// Mean squared error per patch, averaged over masked patches only. Visible
// patches contribute nothing to the scalar, so its value is bit-invariant
// to their content.
template <typename S>
PixelLossResult<S> pixel_loss(Tape<S>& tape, const BasicTensor<S>& pred, const BasicTensor<S>& target,
                              const Mask& mask) {
    if (pred.shape() != target.shape() || pred.rank() != 2)
        throw ShapeError("pixel_loss: pred/target must share an N x D shape");
    if (pred.dim(0) != mask.length()) throw ShapeError("pixel_loss: mask length != patch rows");
    const auto masked = mask.masked_indices();
    if (masked.empty()) throw ContractError("pixel_loss: no masked patches to score");

    auto diff = sub(tape, pred, target);
    auto per_patch = mean_over_axis(tape, mul(tape, diff, diff), 1);  // {N}
    auto masked_losses = gather_rows(tape, per_patch, masked);
    auto scalar = scale(tape, sum(tape, masked_losses), 1.0 / static_cast<double>(masked.size()));

    PixelLossResult<S> result;
    result.scalar = scalar;
    result.per_patch.assign(static_cast<std::size_t>(mask.length()), 0.0);
    for (int i : masked)
        result.per_patch[static_cast<std::size_t>(i)] = static_cast<double>(per_patch.value()[static_cast<std::size_t>(i)]);
    return result;
}

// Smooth-L1 between prediction and target, averaged over all entries:
// 0.5*d^2/beta for |d| <= beta, |d| - 0.5*beta otherwise. The pointwise
// derivative is d/beta inside the band and saturates at +-1 outside.
template <typename S>
BasicTensor<S> smooth_l1(Tape<S>& tape, const BasicTensor<S>& pred, const BasicTensor<S>& target, double beta) {
    if (beta <= 0.0) throw ConfigError("smooth_l1: beta must be positive");
    if (pred.shape() != target.shape())
        throw ShapeError("smooth_l1: shape mismatch " + detail::shape_str(pred.shape()) + " vs " +
                         detail::shape_str(target.shape()));
    const std::size_t n = pred.value().size();
    const S b = static_cast<S>(beta);
    S acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const S d = pred.value()[i] - target.value()[i];
        const S a = std::abs(d);
        acc += a <= b ? S(0.5) * d * d / b : a - S(0.5) * b;
    }
    auto out = BasicTensor<S>::zeros({1}, detail::track(pred) || detail::track(target));
    out.value()[0] = acc / static_cast<S>(n);
    if (out.requires_grad()) {
        auto pn = pred.node(), tn = target.node(), on = out.node();
        bool need_p = pred.requires_grad(), need_t = target.requires_grad();
        tape.record(on, [pn, tn, on, b, n, need_p, need_t] {
            const S g = on->grad[0] / static_cast<S>(n);
            for (std::size_t i = 0; i < n; ++i) {
                const S d = pn->value[i] - tn->value[i];
                const S slope = std::abs(d) <= b ? d / b : (d > 0 ? S(1) : S(-1));
                if (need_p) pn->grad_buffer()[i] += g * slope;
                if (need_t) tn->grad_buffer()[i] -= g * slope;
            }
        });
    }
    return out;
}

// L_total = L_p1 + L_p2 + alpha * L_f.
template <typename S>
BasicTensor<S> total_loss(Tape<S>& tape, const BasicTensor<S>& lp1, const BasicTensor<S>& lp2,
                          const BasicTensor<S>& lf, double alpha) {
    for (const auto* t : {&lp1, &lp2, &lf})
        if (!std::isfinite(static_cast<double>(t->item())))
            throw NumericError("total_loss: non-finite loss component");
    return add(tape, add(tape, lp1, lp2), scale(tape, lf, alpha));
}

// Mean softmax cross-entropy over rows of logits; labels are class ids.
template <typename S>
BasicTensor<S> cross_entropy(Tape<S>& tape, const BasicTensor<S>& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.dim(0) != static_cast<int>(labels.size()))
        throw ShapeError("cross_entropy: logits rows must match label count");
    const int rows = logits.dim(0), cols = logits.dim(1);
    for (int y : labels)
        if (y < 0 || y >= cols) throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range");

    auto out = BasicTensor<S>::zeros({1}, detail::track(logits));
    std::vector<S> probs(static_cast<std::size_t>(rows) * cols);
    S acc = 0;
    for (int r = 0; r < rows; ++r) {
        const S* l = logits.value().data() + static_cast<std::size_t>(r) * cols;
        S mx = l[0];
        for (int c = 1; c < cols; ++c) mx = std::max(mx, l[c]);
        S sum = 0;
        for (int c = 0; c < cols; ++c) {
            probs[static_cast<std::size_t>(r * cols + c)] = std::exp(l[c] - mx);
            sum += probs[static_cast<std::size_t>(r * cols + c)];
        }
        for (int c = 0; c < cols; ++c) probs[static_cast<std::size_t>(r * cols + c)] /= sum;
        acc += std::log(sum) + mx - l[labels[static_cast<std::size_t>(r)]];
    }
    out.value()[0] = acc / static_cast<S>(rows);
    if (out.requires_grad()) {
        auto ln = logits.node(), on = out.node();
        auto lbl = labels;
        tape.record(on, [ln, on, probs, lbl, rows, cols] {
            auto& dl = ln->grad_buffer();
            const S g = on->grad[0] / static_cast<S>(rows);
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cols; ++c) {
                    const S p = probs[static_cast<std::size_t>(r * cols + c)];
                    const S onehot = c == lbl[static_cast<std::size_t>(r)] ? S(1) : S(0);
                    dl[static_cast<std::size_t>(r * cols + c)] += g * (p - onehot);
                }
        });
    }
    return out;
}

}  // namespace dama
