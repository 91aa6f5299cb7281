#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <string>
#include <vector>

#include "tnmera/autodiff.hpp"
#include "tnmera/checkpoint.hpp"
#include "tnmera/errors.hpp"
#include "tnmera/image.hpp"
#include "tnmera/mera.hpp"
#include "tnmera/rng.hpp"

namespace tnmera {

struct TrainOptions {
    double lr = 1e-5;           // the tuned default together with init std 1e-4
    std::string optimizer = "sgd"; // sgd | adaptive
    int batch_size = 32;
    int epochs = 1;
    std::uint64_t seed = 0;
    double val_fraction = 0.0;
    int threads = 1;
    bool deterministic = false; // forces one thread and zeroes wall_ms in metrics
    bool log_steps = false;     // per-step rows in addition to per-epoch rows
    int retract_every = 0;      // project u/w back onto the isometry set every N steps (0 = off)

    void validate() const {
        if (lr <= 0.0) throw ValidationError("train: lr must be > 0");
        if (epochs < 1) throw ValidationError("train: epochs must be >= 1");
        if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
        if (val_fraction < 0.0 || val_fraction >= 1.0)
            throw ValidationError("train: val fraction must be in [0,1)");
        if (optimizer != "sgd" && optimizer != "adaptive")
            throw ValidationError("train: optimizer must be sgd or adaptive");
    }
};

struct MetricsRow {
    int epoch = 0;
    std::int64_t step = 0;
    double loss = 0.0;
    double train_acc = 0.0;
    double val_acc = -1.0; // -1 when no validation split
    std::int64_t wall_ms = 0;
};

struct TrainResult {
    std::vector<MetricsRow> rows;
    double final_train_acc = 0.0;
    double final_val_acc = -1.0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::string out = "epoch,step,loss,train_acc,val_acc,wall_ms\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf), "%d,%lld,%.17g,%.17g,%.17g,%lld\n", r.epoch,
                      static_cast<long long>(r.step), r.loss, r.train_acc, r.val_acc,
                      static_cast<long long>(r.wall_ms));
        out += buf;
    }
    return out;
}

namespace detail {

struct BatchStats {
    GradientSet grads;
    double loss_sum = 0.0;
    int correct = 0;
};

// Fixed binary reduction tree over sample indices: the combination order (and
// therefore the floating-point sum) is identical for any thread count.
inline BatchStats batch_reduce(const MeraModel& m, const std::vector<ImageSample>& data,
                               const std::vector<int>& idx, std::size_t lo, std::size_t hi,
                               int threads) {
    if (hi - lo == 1) {
        const ImageSample& s = data[static_cast<std::size_t>(idx[lo])];
        SampleResult r = grad_sample(m, s, s.label);
        BatchStats st;
        st.grads = std::move(r.grads);
        st.loss_sum = r.loss;
        st.correct = r.predicted == s.label ? 1 : 0;
        return st;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    BatchStats left, right;
    if (threads > 1) {
        auto fut = std::async(std::launch::async, batch_reduce, std::cref(m), std::cref(data),
                              std::cref(idx), lo, mid, threads / 2);
        right = batch_reduce(m, data, idx, mid, hi, threads - threads / 2);
        left = fut.get();
    } else {
        left = batch_reduce(m, data, idx, lo, mid, 1);
        right = batch_reduce(m, data, idx, mid, hi, 1);
    }
    left.grads.add_scaled(right.grads, 1.0);
    left.loss_sum += right.loss_sum;
    left.correct += right.correct;
    return left;
}

// Retraction onto the constraint set: every disentangler and isometry is
// replaced by its nearest column-isometry (in-legs as rows).
inline void retract_isometries(MeraModel& m) {
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        const std::string& n = m.param_names[k];
        if (n.find(".u") == std::string::npos && n.find(".w") == std::string::npos) continue;
        m.params[k] = project_isometry(m.params[k], AxisSplit{{0, 1, 2, 3}});
    }
}

inline void diagnose_non_finite(const MeraModel& m, const GradientSet* grads) {
    for (std::size_t k = 0; k < m.params.size(); ++k)
        if (!all_finite(m.params[k]))
            throw NumericalError("training diverged: non-finite values in parameter " +
                                 m.param_names[k]);
    if (grads)
        for (std::size_t k = 0; k < grads->grads.size(); ++k)
            if (!all_finite(grads->grads[k]))
                throw NumericalError("training diverged: non-finite gradient for " +
                                     m.param_names[k]);
    throw NumericalError("training diverged: non-finite loss");
}

} // namespace detail

inline double evaluate_accuracy(const MeraModel& m, const std::vector<ImageSample>& data) {
    if (data.empty()) return -1.0;
    int correct = 0;
    for (const auto& s : data) correct += predict(m, s) == s.label ? 1 : 0;
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

// Mini-batch gradient descent on the softmax cross entropy. Row 0 is the
// pre-training loss over (a deterministic slice of) the training split; one row
// per epoch follows. Single-thread deterministic mode produces bit-identical
// metrics for a fixed seed.
inline TrainResult train_model(MeraModel& m, const std::vector<ImageSample>& data,
                               const TrainOptions& opt_in,
                               std::vector<ImageSample>* val_out = nullptr) {
    TrainOptions opt = opt_in;
    opt.validate();
    if (data.empty()) throw ValidationError("train: empty dataset");
    if (opt.deterministic) opt.threads = 1;
    if (opt.threads < 1) opt.threads = 1;

    // Deterministic split: shuffle once from the seed, carve off the val head.
    std::vector<int> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    Rng split_rng = Rng(opt.seed).split(0xA11CE);
    for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(split_rng.below(i))]);
    const std::size_t n_val = static_cast<std::size_t>(opt.val_fraction * data.size());
    std::vector<int> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<int> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    if (train_idx.empty()) throw ValidationError("train: validation split leaves no training data");

    std::vector<ImageSample> val_set;
    for (int i : val_idx) val_set.push_back(data[static_cast<std::size_t>(i)]);
    if (val_out) *val_out = val_set;

    AdaptiveOptimizer adaptive(opt.lr);
    const bool use_adaptive = opt.optimizer == "adaptive";

    TrainResult result;
    const auto t0 = std::chrono::steady_clock::now();
    auto wall_ms = [&]() -> std::int64_t {
        if (opt.deterministic) return 0;
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - t0)
            .count();
    };

    // Pre-training loss over a deterministic slice (enough for the ln C check).
    {
        const std::size_t probe = std::min<std::size_t>(train_idx.size(), 512);
        double loss_sum = 0.0;
        int correct = 0;
        for (std::size_t i = 0; i < probe; ++i) {
            const ImageSample& s = data[static_cast<std::size_t>(train_idx[i])];
            const Tensor logits = forward_logits(m, s);
            if (!all_finite(logits)) detail::diagnose_non_finite(m, nullptr);
            loss_sum += softmax_cross_entropy(logits, s.label).loss;
            correct += predict_from_logits(logits) == s.label ? 1 : 0;
        }
        result.rows.push_back({0, 0, loss_sum / probe,
                               static_cast<double>(correct) / static_cast<double>(probe),
                               -1.0, wall_ms()});
    }

    std::int64_t step = 0;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        Rng shuffle_rng = Rng(opt.seed).split(0xE0000 + static_cast<std::uint64_t>(epoch));
        std::vector<int> idx = train_idx;
        for (std::size_t i = idx.size(); i > 1; --i)
            std::swap(idx[i - 1], idx[static_cast<std::size_t>(shuffle_rng.below(i))]);

        double loss_sum = 0.0;
        int correct = 0, seen = 0;
        for (std::size_t lo = 0; lo < idx.size(); lo += static_cast<std::size_t>(opt.batch_size)) {
            const std::size_t hi = std::min(idx.size(), lo + static_cast<std::size_t>(opt.batch_size));
            detail::BatchStats st = detail::batch_reduce(m, data, idx, lo, hi, opt.threads);
            const double inv = 1.0 / static_cast<double>(hi - lo);
            for (auto& g : st.grads.grads) scale_inplace(g, inv);

            if (!std::isfinite(st.loss_sum)) detail::diagnose_non_finite(m, &st.grads);
            StepReport sr = use_adaptive ? adaptive.step(m.params, st.grads.grads, &m.param_names)
                                         : sgd_step(m.params, st.grads.grads, opt.lr, &m.param_names);
            if (!sr.applied)
                std::fprintf(stderr, "[train] step %lld skipped: %s\n",
                             static_cast<long long>(step), sr.message.c_str());
            ++step;
            if (opt.retract_every > 0 && step % opt.retract_every == 0)
                detail::retract_isometries(m);
            loss_sum += st.loss_sum;
            correct += st.correct;
            seen += static_cast<int>(hi - lo);
            if (opt.log_steps)
                result.rows.push_back({epoch, step, st.loss_sum * inv,
                                       static_cast<double>(st.correct) / (hi - lo), -1.0,
                                       wall_ms()});
        }

        MetricsRow row;
        row.epoch = epoch;
        row.step = step;
        row.loss = loss_sum / seen;
        row.train_acc = static_cast<double>(correct) / seen;
        row.val_acc = val_set.empty() ? -1.0 : evaluate_accuracy(m, val_set);
        row.wall_ms = wall_ms();
        result.rows.push_back(row);
        result.final_train_acc = row.train_acc;
        result.final_val_acc = row.val_acc;
    }
    return result;
}

// ---- evaluation with confusion counts ----

struct EvalResult {
    double accuracy = 0.0;
    std::vector<std::vector<int>> confusion; // [true][predicted]
};

inline EvalResult evaluate(const MeraModel& m, const std::vector<ImageSample>& data) {
    if (data.empty()) throw ValidationError("eval: empty dataset");
    EvalResult r;
    const int c = m.config.num_classes;
    r.confusion.assign(static_cast<std::size_t>(c), std::vector<int>(static_cast<std::size_t>(c), 0));
    int correct = 0;
    for (const auto& s : data) {
        if (s.label < 0 || s.label >= c)
            throw ValidationError("eval: label " + std::to_string(s.label) +
                                  " outside the model's class count");
        const int p = predict(m, s);
        r.confusion[static_cast<std::size_t>(s.label)][static_cast<std::size_t>(p)] += 1;
        correct += p == s.label ? 1 : 0;
    }
    r.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
    return r;
}

inline std::string confusion_csv(const EvalResult& r) {
    std::string out = "true\\pred";
    const std::size_t c = r.confusion.size();
    for (std::size_t j = 0; j < c; ++j) out += "," + std::to_string(j);
    out += "\n";
    for (std::size_t i = 0; i < c; ++i) {
        out += std::to_string(i);
        for (std::size_t j = 0; j < c; ++j) out += "," + std::to_string(r.confusion[i][j]);
        out += "\n";
    }
    return out;
}

} // namespace tnmera
