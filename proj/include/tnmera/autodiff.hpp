#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tnmera/errors.hpp"
#include "tnmera/tensor.hpp"

namespace tnmera {

enum class OpKind { Leaf, Input, Contract, Permute, Reshape };

struct TapeNode {
    OpKind kind;
    int a = -1;
    int b = -1;
    AxisPairing pairing;              // Contract
    std::vector<int> perm;            // Permute
    std::vector<std::int64_t> prev_shape; // Reshape
    Tensor value;
    bool requires_grad = false;
};

// Record of one forward pass: nodes in topological order (operands always
// precede consumers), leaves marked as gradient receivers. A tape is confined
// to a single forward/backward pair and never shared across threads.
class Tape {
public:
    int leaf(Tensor value) {
        return push({OpKind::Leaf, -1, -1, {}, {}, {}, std::move(value), true});
    }

    int input(Tensor value) {
        return push({OpKind::Input, -1, -1, {}, {}, {}, std::move(value), false});
    }

    int contract_op(int a, int b, AxisPairing pairing) {
        Tensor v = contract(value(a), value(b), pairing);
        const bool rg = node(a).requires_grad || node(b).requires_grad;
        return push({OpKind::Contract, a, b, std::move(pairing), {}, {}, std::move(v), rg});
    }

    int permute_op(int a, std::vector<int> perm) {
        Tensor v = permute(value(a), perm);
        return push({OpKind::Permute, a, -1, {}, std::move(perm), {}, std::move(v),
                     node(a).requires_grad});
    }

    int reshape_op(int a, std::vector<std::int64_t> shape) {
        Tensor v = reshape(value(a), shape);
        std::vector<std::int64_t> prev = value(a).shape;
        return push({OpKind::Reshape, a, -1, {}, {}, std::move(prev), std::move(v),
                     node(a).requires_grad});
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    const TapeNode& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
    int size() const { return static_cast<int>(nodes_.size()); }

    // Re-executes every recorded op against the stored operands; returns the
    // recomputed value of `output`. Deterministic: bit-identical to the recording.
    Tensor replay(int output) const {
        std::vector<Tensor> vals(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            const TapeNode& n = nodes_[i];
            switch (n.kind) {
                case OpKind::Leaf:
                case OpKind::Input: vals[i] = n.value; break;
                case OpKind::Contract:
                    vals[i] = contract(vals[static_cast<std::size_t>(n.a)],
                                       vals[static_cast<std::size_t>(n.b)], n.pairing);
                    break;
                case OpKind::Permute:
                    vals[i] = permute(vals[static_cast<std::size_t>(n.a)], n.perm);
                    break;
                case OpKind::Reshape:
                    vals[i] = reshape(vals[static_cast<std::size_t>(n.a)],
                                      nodes_[i].value.shape);
                    break;
            }
        }
        return vals[static_cast<std::size_t>(output)];
    }

    // Reverse sweep from `output` seeded with `seed` (same shape as the output
    // value). Returns one cotangent per node id; only nodes on a gradient path
    // are populated (others stay default scalars with `present=false`).
    struct Cotangents {
        std::vector<Tensor> grad;
        std::vector<char> present;
        bool has(int id) const { return present[static_cast<std::size_t>(id)] != 0; }
        const Tensor& at(int id) const { return grad[static_cast<std::size_t>(id)]; }
    };

    Cotangents backward(int output, const Tensor& seed) const {
        if (seed.shape != value(output).shape)
            throw ValidationError("backward: seed shape " + seed.shape_str() +
                                  " does not match output shape " +
                                  value(output).shape_str());
        Cotangents ct;
        ct.grad.resize(nodes_.size());
        ct.present.assign(nodes_.size(), 0);
        accumulate(ct, output, seed);

        // Leaf gradients for fully-contracted "apply" nodes (a entirely paired,
        // in order, against the leading axes of a leaf) are deferred and batched
        // into one GEMM per leaf. Leaf cotangents are read only after the sweep,
        // so deferral cannot starve a downstream node; the win is that a leaf
        // consumed by many instances accumulates in one pass instead of one
        // outer product + axpy per instance.
        std::vector<std::vector<int>> deferred(nodes_.size());

        for (int id = output; id >= 0; --id) {
            const auto uid = static_cast<std::size_t>(id);
            if (!ct.present[uid]) continue;
            const TapeNode& n = nodes_[uid];
            if (!n.requires_grad) continue;
            const Tensor& g = ct.grad[uid];
            switch (n.kind) {
                case OpKind::Leaf:
                case OpKind::Input: break;
                case OpKind::Contract: {
                    const TapeNode& na = node(n.a);
                    const TapeNode& nb = node(n.b);
                    if (na.requires_grad)
                        accumulate(ct, n.a, contract_vjp_lhs(g, na.value, nb.value, n.pairing));
                    if (nb.requires_grad) {
                        if (nb.kind == OpKind::Leaf && is_apply_pattern(n, na, nb))
                            deferred[static_cast<std::size_t>(n.b)].push_back(id);
                        else
                            accumulate(ct, n.b,
                                       contract_vjp_rhs(g, na.value, nb.value, n.pairing));
                    }
                    break;
                }
                case OpKind::Permute:
                    accumulate(ct, n.a, permute(g, inverse_perm(n.perm)));
                    break;
                case OpKind::Reshape:
                    accumulate(ct, n.a, reshape(g, n.prev_shape));
                    break;
            }
        }

        for (std::size_t leaf = 0; leaf < deferred.size(); ++leaf) {
            const auto& members = deferred[leaf];
            if (members.empty()) continue;
            const Tensor& b = nodes_[leaf].value;
            const TapeNode& first = node(members.front());
            const std::int64_t k = node(first.a).value.size();
            const std::int64_t nfree = b.size() / k;
            const std::int64_t batch = static_cast<std::int64_t>(members.size());
            // rows: operand values and cotangents, in sweep (descending id) order
            std::vector<double> astack(static_cast<std::size_t>(batch * k));
            std::vector<double> cstack(static_cast<std::size_t>(batch * nfree));
            for (std::int64_t r = 0; r < batch; ++r) {
                const TapeNode& mem = node(members[static_cast<std::size_t>(r)]);
                const Tensor& a = node(mem.a).value;
                const Tensor& g = ct.grad[static_cast<std::size_t>(members[static_cast<std::size_t>(r)])];
                std::copy(a.data.begin(), a.data.end(), astack.begin() + r * k);
                std::copy(g.data.begin(), g.data.end(), cstack.begin() + r * nfree);
            }
            Tensor grad_b(b.shape);
            matmul(k, batch, nfree, astack.data(), true, cstack.data(), false,
                   grad_b.data.data());
            accumulate(ct, static_cast<int>(leaf), std::move(grad_b));
        }
        return ct;
    }

private:
    int push(TapeNode n) {
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    // c = contract(a, b) with a fully paired in axis order against the leading
    // axes of b: grad_b is then outer(a, g) in b's native layout.
    static bool is_apply_pattern(const TapeNode& n, const TapeNode& na, const TapeNode& nb) {
        (void)nb;
        if (static_cast<int>(n.pairing.size()) != na.value.rank()) return false;
        for (std::size_t i = 0; i < n.pairing.size(); ++i)
            if (n.pairing[i].first != static_cast<int>(i) ||
                n.pairing[i].second != static_cast<int>(i))
                return false;
        return true;
    }

    static void accumulate(Cotangents& ct, int id, Tensor g) {
        const auto uid = static_cast<std::size_t>(id);
        if (!ct.present[uid]) {
            ct.grad[uid] = std::move(g);
            ct.present[uid] = 1;
        } else {
            axpy(ct.grad[uid], 1.0, g);
        }
    }

    // VJP of c = contract(a, b, pairing) with cotangent g (axes: free_a ++ free_b).
    //
    // d/da: contract g with b over b's free axes; the result carries
    // [free_a..., paired-b-axes ascending], then a permutation restores a's
    // native axis order. The rhs rule is the mirror image.
    static Tensor contract_vjp_lhs(const Tensor& g, const Tensor& a, const Tensor& b,
                                   const AxisPairing& pairing) {
        const int ra = a.rank(), rb = b.rank();
        std::vector<int> a_partner(static_cast<std::size_t>(ra), -1);
        std::vector<char> b_paired(static_cast<std::size_t>(rb), 0);
        for (const auto& [ax_a, ax_b] : pairing) {
            a_partner[static_cast<std::size_t>(ax_a)] = ax_b;
            b_paired[static_cast<std::size_t>(ax_b)] = 1;
        }
        int n_free_a = 0;
        for (int d = 0; d < ra; ++d)
            if (a_partner[static_cast<std::size_t>(d)] < 0) ++n_free_a;

        AxisPairing gp;
        int pos = n_free_a;
        for (int d = 0; d < rb; ++d)
            if (!b_paired[static_cast<std::size_t>(d)]) gp.emplace_back(pos++, d);
        Tensor raw = contract(g, b, gp);

        // raw axes: free_a (in order), then b's paired axes ascending.
        std::vector<int> paired_b_sorted;
        for (int d = 0; d < rb; ++d)
            if (b_paired[static_cast<std::size_t>(d)]) paired_b_sorted.push_back(d);
        std::vector<int> perm(static_cast<std::size_t>(ra));
        int free_seen = 0;
        for (int d = 0; d < ra; ++d) {
            const int partner = a_partner[static_cast<std::size_t>(d)];
            if (partner < 0) {
                perm[static_cast<std::size_t>(d)] = free_seen++;
            } else {
                const auto it = std::lower_bound(paired_b_sorted.begin(), paired_b_sorted.end(),
                                                 partner);
                perm[static_cast<std::size_t>(d)] =
                    n_free_a + static_cast<int>(it - paired_b_sorted.begin());
            }
        }
        return permute(raw, perm);
    }

    static Tensor contract_vjp_rhs(const Tensor& g, const Tensor& a, const Tensor& b,
                                   const AxisPairing& pairing) {
        const int ra = a.rank(), rb = b.rank();
        std::vector<int> b_partner(static_cast<std::size_t>(rb), -1);
        std::vector<char> a_paired(static_cast<std::size_t>(ra), 0);
        for (const auto& [ax_a, ax_b] : pairing) {
            b_partner[static_cast<std::size_t>(ax_b)] = ax_a;
            a_paired[static_cast<std::size_t>(ax_a)] = 1;
        }
        AxisPairing gp;
        int pos = 0;
        for (int d = 0; d < ra; ++d)
            if (!a_paired[static_cast<std::size_t>(d)]) gp.emplace_back(d, pos++);
        Tensor raw = contract(a, g, gp);

        // raw axes: a's paired axes ascending, then free_b (in order).
        std::vector<int> paired_a_sorted;
        for (int d = 0; d < ra; ++d)
            if (a_paired[static_cast<std::size_t>(d)]) paired_a_sorted.push_back(d);
        const int n_paired = static_cast<int>(paired_a_sorted.size());
        std::vector<int> perm(static_cast<std::size_t>(rb));
        int free_seen = 0;
        for (int d = 0; d < rb; ++d) {
            const int partner = b_partner[static_cast<std::size_t>(d)];
            if (partner < 0) {
                perm[static_cast<std::size_t>(d)] = n_paired + free_seen++;
            } else {
                const auto it = std::lower_bound(paired_a_sorted.begin(), paired_a_sorted.end(),
                                                 partner);
                perm[static_cast<std::size_t>(d)] = static_cast<int>(it - paired_a_sorted.begin());
            }
        }
        return permute(raw, perm);
    }

    std::vector<TapeNode> nodes_;
};

// ---- classification loss ----

struct LossResult {
    double loss = 0.0;
    Tensor grad_logits;
    Tensor probs;
};

// Numerically stable -log softmax(logits)[label]; gradient is softmax - onehot.
inline LossResult softmax_cross_entropy(const Tensor& logits, int label) {
    if (logits.rank() != 1) throw ValidationError("softmax_cross_entropy: logits must be rank 1");
    const std::int64_t c = logits.size();
    if (label < 0 || label >= c) throw ValidationError("softmax_cross_entropy: label out of range");
    if (!all_finite(logits)) throw NumericalError("softmax_cross_entropy: non-finite logits");

    double zmax = logits[0];
    for (std::int64_t i = 1; i < c; ++i) zmax = std::max(zmax, logits[i]);
    double denom = 0.0;
    for (std::int64_t i = 0; i < c; ++i) denom += std::exp(logits[i] - zmax);

    LossResult out;
    out.loss = std::log(denom) - (logits[label] - zmax);
    out.probs = Tensor({c});
    out.grad_logits = Tensor({c});
    for (std::int64_t i = 0; i < c; ++i) {
        const double p = std::exp(logits[i] - zmax) / denom;
        out.probs[i] = p;
        out.grad_logits[i] = p - (i == label ? 1.0 : 0.0);
    }
    return out;
}

// ---- parameter updates ----

struct StepReport {
    bool applied = true;
    std::string message;
};

// Plain gradient descent: theta <- theta - lr * g. A non-finite gradient skips
// the whole step and reports which tensor was bad.
inline StepReport sgd_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                           double lr, const std::vector<std::string>* names = nullptr) {
    if (lr < 0.0) throw ValidationError("sgd_step: lr must not be negative");
    if (params.size() != grads.size()) throw ValidationError("sgd_step: param/grad count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (params[i].shape != grads[i].shape)
            throw ValidationError("sgd_step: shape mismatch at parameter " + std::to_string(i));
        if (!all_finite(grads[i])) {
            StepReport r;
            r.applied = false;
            r.message = "non-finite gradient in " +
                        (names ? (*names)[i] : "parameter " + std::to_string(i)) +
                        "; step skipped";
            return r;
        }
    }
    for (std::size_t i = 0; i < params.size(); ++i) axpy(params[i], -lr, grads[i]);
    return {};
}

// Adaptive first-order optimizer: Adam-style moments (momentum + per-coordinate
// scaling) with a per-tensor trust ratio. The raw update direction is rescaled
// to move each tensor by at most lr relative to its own norm, which keeps deep
// multiplicative networks stable at practical learning rates: an absolute step
// that is negligible for one tensor can be explosive for another, and the
// product structure amplifies any overshoot exponentially in depth.
class AdaptiveOptimizer {
public:
    AdaptiveOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
        if (lr <= 0.0) throw ValidationError("adaptive optimizer: lr must be > 0");
    }

    StepReport step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                    const std::vector<std::string>* names = nullptr) {
        if (params.size() != grads.size())
            throw ValidationError("adaptive step: param/grad count mismatch");
        for (std::size_t i = 0; i < params.size(); ++i) {
            if (params[i].shape != grads[i].shape)
                throw ValidationError("adaptive step: shape mismatch at parameter " +
                                      std::to_string(i));
            if (!all_finite(grads[i])) {
                StepReport r;
                r.applied = false;
                r.message = "non-finite gradient in " +
                            (names ? (*names)[i] : "parameter " + std::to_string(i)) +
                            "; step skipped";
                return r;
            }
        }
        if (m_.empty()) {
            for (const auto& p : params) {
                m_.emplace_back(p.shape);
                v_.emplace_back(p.shape);
            }
        }
        ++t_;
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& m = m_[i];
            Tensor& v = v_[i];
            const Tensor& g = grads[i];
            Tensor& p = params[i];
            double unorm2 = 0.0, pnorm2 = 0.0;
            scratch_.resize(static_cast<std::size_t>(p.size()));
            for (std::int64_t j = 0; j < p.size(); ++j) {
                m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
                v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
                const double u = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + eps_);
                scratch_[static_cast<std::size_t>(j)] = u;
                unorm2 += u * u;
                pnorm2 += p[j] * p[j];
            }
            const double unorm = std::sqrt(unorm2), pnorm = std::sqrt(pnorm2);
            // Clamped trust ratio: an unbounded ratio blows up once the moment
            // estimates shrink near convergence (tiny ||u|| -> giant step).
            double ratio = (unorm > 0.0 && pnorm > 0.0) ? pnorm / unorm : 1.0;
            ratio = std::min(ratio, 1.0);
            const double step = lr_ * ratio;
            for (std::int64_t j = 0; j < p.size(); ++j)
                p[j] -= step * scratch_[static_cast<std::size_t>(j)];
        }
        return {};
    }

private:
    double lr_, beta1_, beta2_, eps_;
    std::int64_t t_ = 0;
    std::vector<Tensor> m_, v_;
    std::vector<double> scratch_;
};

} // namespace tnmera
