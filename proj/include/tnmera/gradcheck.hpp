#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "tnmera/autodiff.hpp"
#include "tnmera/image.hpp"
#include "tnmera/mera.hpp"

namespace tnmera {

// Re-randomizes parameters into a well-conditioned test point for the finite
// difference comparison: positive entries of magnitude ~1/sqrt(out_dim). Two
// effects matter. The 1/sqrt(out) scale keeps signal norms O(1) through the
// contraction (isometric inits shrink norms by sqrt(out/in) per layer, pushing
// gradients to the FD noise floor). Positivity removes accidental
// cancellations, so no single gradient entry is orders of magnitude below the
// rest; central differences resolve every entry to ~1e-8 relative.
inline void randomize_norm_preserving(MeraModel& m, std::uint64_t seed) {
    Rng master(seed);
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        Tensor& t = m.params[k];
        std::int64_t in_dim = 1;
        const int in_axes = t.rank() == 2 ? 1 : 4;
        for (int d = 0; d < in_axes; ++d) in_dim *= t.extent(d);
        const double scale = 1.0 / std::sqrt(static_cast<double>(t.size() / in_dim));
        Rng stream = master.split(k);
        if (m.param_names[k] == "top") {
            // Zero-mean class projections: positive entries here would make the
            // logits nearly proportional, and softmax ignores the common mode.
            // The 0.2 floor keeps every projection coefficient away from zero.
            for (std::int64_t i = 0; i < t.size(); ++i) {
                const double g = stream.gaussian(scale);
                t[i] = g + (g >= 0.0 ? 0.2 : -0.2) * scale;
            }
        } else {
            for (std::int64_t i = 0; i < t.size(); ++i)
                t[i] = (0.45 + 0.55 * stream.uniform()) * scale;
        }
    }
}

// Matching well-conditioned input: pixels bounded away from 0 and 1.
inline ImageSample gradcheck_image(int height, int width, std::uint64_t seed, int label = 0) {
    ImageSample img(height, width, label);
    Rng rng(seed);
    for (auto& p : img.pixels) p = 0.15 + 0.7 * rng.uniform();
    return img;
}

// Full conditioning: randomize as above, then bring every signal in the
// network to O(1). The contraction is multilinear with each tensor instance
// appearing exactly once, so scaling all non-top tensors by a common alpha
// scales the logits by alpha^instances; alpha = M^(-1/instances) normalizes the
// positive-mode gain in one shot. The top is then rescaled so max|logit| = 1,
// keeping the softmax far from saturation (saturated classes have exactly zero
// gradient, which would make the finite-difference comparison vacuous).
inline void condition_for_gradcheck(MeraModel& m, const ImageSample& img, std::uint64_t seed) {
    randomize_norm_preserving(m, seed);
    std::int64_t instances = 0;
    instances += static_cast<std::int64_t>(m.config.grid_side()) * m.config.grid_side();
    for (const auto& lvl : m.levels)
        instances += static_cast<std::int64_t>(lvl.plaquettes.size()) + lvl.isometry_count;

    const int top = m.param_index("top");
    const double m0 = max_abs(forward_logits(m, img));
    if (m0 > 0.0) {
        const double alpha = std::pow(m0, -1.0 / static_cast<double>(instances));
        for (std::size_t k = 0; k < m.params.size(); ++k)
            if (static_cast<int>(k) != top) scale_inplace(m.params[k], alpha);
    }
    const double m1 = max_abs(forward_logits(m, img));
    if (m1 > 0.0) scale_inplace(m.params[static_cast<std::size_t>(top)], 1.0 / m1);
}

struct GradCheckReport {
    bool pass = false;
    double max_rel_err = 0.0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double analytic = 0.0;
    double numeric = 0.0;
    std::int64_t checked = 0;
};

// Central finite differences against the tape gradients, every parameter entry.
// rel err = |fd - ad| / max(|fd|, |ad|, 1e-12). The model is restored entry by
// entry; double precision and O(1)-scaled inits (qr / identity_noise) are what
// make the 1e-6 tolerance attainable.
inline GradCheckReport gradient_check(MeraModel& m, const ImageSample& img, int label,
                                      double h = 1e-5, double tol = 1e-6) {
    SampleResult base = grad_sample(m, img, label);
    GradCheckReport rep;
    rep.pass = true;

    for (std::size_t k = 0; k < m.params.size(); ++k) {
        Tensor& theta = m.params[k];
        const Tensor& analytic = base.grads.grads[k];
        for (std::int64_t i = 0; i < theta.size(); ++i) {
            const double saved = theta[i];
            theta[i] = saved + h;
            const double lp = softmax_cross_entropy(forward_logits(m, img), label).loss;
            theta[i] = saved - h;
            const double lm = softmax_cross_entropy(forward_logits(m, img), label).loss;
            theta[i] = saved;

            const double fd = (lp - lm) / (2.0 * h);
            const double ad = analytic[i];
            const double rel = std::abs(fd - ad) /
                               std::max({std::abs(fd), std::abs(ad), 1e-12});
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_param = m.param_names[k];
                rep.worst_index = i;
                rep.analytic = ad;
                rep.numeric = fd;
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

} // namespace tnmera
