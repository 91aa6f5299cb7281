#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tnmera/image.hpp"
#include "tnmera/rng.hpp"

namespace tnmera {

// Procedural handwritten-style digit generator: each class is a fixed stroke
// skeleton in unit coordinates (y down), jittered per sample by a random affine
// map and stroke width, rasterized with an anti-aliased distance falloff into a
// 28x28 canvas. Deterministic in (seed, index).

namespace detail {

struct P {
    double x, y;
};
using Stroke = std::vector<P>; // polyline

inline const std::vector<std::vector<Stroke>>& digit_skeletons() {
    static const std::vector<std::vector<Stroke>> glyphs = {
        // 0
        {{{0.50, 0.14}, {0.70, 0.23}, {0.77, 0.50}, {0.70, 0.77}, {0.50, 0.86},
          {0.30, 0.77}, {0.23, 0.50}, {0.30, 0.23}, {0.50, 0.14}}},
        // 1
        {{{0.36, 0.28}, {0.54, 0.13}, {0.54, 0.87}}},
        // 2
        {{{0.26, 0.31}, {0.33, 0.17}, {0.52, 0.12}, {0.70, 0.20}, {0.74, 0.36},
          {0.62, 0.52}, {0.44, 0.65}, {0.28, 0.76}, {0.23, 0.86}, {0.78, 0.86}}},
        // 3
        {{{0.26, 0.20}, {0.44, 0.13}, {0.64, 0.18}, {0.71, 0.31}, {0.61, 0.44},
          {0.46, 0.49}, {0.63, 0.54}, {0.75, 0.66}, {0.67, 0.80}, {0.47, 0.87},
          {0.26, 0.80}}},
        // 4
        {{{0.56, 0.12}, {0.22, 0.58}, {0.78, 0.58}}, {{0.62, 0.34}, {0.62, 0.88}}},
        // 5
        {{{0.72, 0.14}, {0.32, 0.14}, {0.28, 0.45}, {0.48, 0.40}, {0.66, 0.45},
          {0.74, 0.60}, {0.66, 0.78}, {0.45, 0.86}, {0.26, 0.78}}},
        // 6
        {{{0.66, 0.14}, {0.45, 0.20}, {0.31, 0.38}, {0.26, 0.60}, {0.33, 0.79},
          {0.52, 0.87}, {0.68, 0.78}, {0.71, 0.62}, {0.59, 0.50}, {0.41, 0.50},
          {0.28, 0.60}}},
        // 7
        {{{0.22, 0.15}, {0.78, 0.15}, {0.46, 0.87}}},
        // 8
        {{{0.50, 0.13}, {0.66, 0.20}, {0.69, 0.30}, {0.63, 0.41}, {0.50, 0.47},
          {0.37, 0.41}, {0.31, 0.30}, {0.34, 0.20}, {0.50, 0.13}},
         {{0.50, 0.47}, {0.68, 0.55}, {0.73, 0.68}, {0.65, 0.81}, {0.50, 0.87},
          {0.35, 0.81}, {0.27, 0.68}, {0.32, 0.55}, {0.50, 0.47}}},
        // 9
        {{{0.68, 0.30}, {0.58, 0.15}, {0.38, 0.13}, {0.27, 0.26}, {0.31, 0.42},
          {0.48, 0.50}, {0.66, 0.44}},
         {{0.68, 0.22}, {0.69, 0.55}, {0.57, 0.87}}},
    };
    return glyphs;
}

inline double dist_to_segment(double px, double py, const P& a, const P& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double wx = px - a.x, wy = py - a.y;
    const double vv = vx * vx + vy * vy;
    double t = vv > 0.0 ? (wx * vx + wy * vy) / vv : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = px - (a.x + t * vx), dy = py - (a.y + t * vy);
    return std::sqrt(dx * dx + dy * dy);
}

} // namespace detail

// Renders one jittered digit; the canvas defaults to the MNIST geometry.
inline ImageSample render_digit(int digit, Rng& rng, int canvas = 28) {
    const auto& glyphs = detail::digit_skeletons();
    const auto& strokes = glyphs[static_cast<std::size_t>(digit % 10)];

    const double sx = 0.82 + 0.26 * rng.uniform();
    const double sy = 0.82 + 0.26 * rng.uniform();
    const double rot = -0.20 + 0.40 * rng.uniform();
    const double shear = -0.16 + 0.32 * rng.uniform();
    const double tx = -0.05 + 0.10 * rng.uniform();
    const double ty = -0.05 + 0.10 * rng.uniform();
    const double cosr = std::cos(rot), sinr = std::sin(rot);
    auto map = [&](const detail::P& p) {
        double x = p.x - 0.5, y = p.y - 0.5;
        x += shear * y;
        const double xr = cosr * x - sinr * y, yr = sinr * x + cosr * y;
        return detail::P{0.5 + sx * xr + tx, 0.5 + sy * yr + ty};
    };

    std::vector<std::pair<detail::P, detail::P>> segs;
    for (const auto& s : strokes)
        for (std::size_t i = 0; i + 1 < s.size(); ++i)
            segs.emplace_back(map(s[i]), map(s[i + 1]));

    const double margin = 2.0;
    const double box = canvas - 2.0 * margin;
    const double thick = 1.35 + 1.2 * rng.uniform(); // stroke width in pixels
    const double bright = 0.85 + 0.15 * rng.uniform();

    ImageSample img(canvas, canvas, digit);
    for (int r = 0; r < canvas; ++r)
        for (int c = 0; c < canvas; ++c) {
            const double ux = (c + 0.5 - margin) / box;
            const double uy = (r + 0.5 - margin) / box;
            double d = 1e9;
            for (const auto& [a, b] : segs)
                d = std::min(d, detail::dist_to_segment(ux, uy, a, b));
            const double dpix = d * box;
            const double v = (thick * 0.5 + 0.6 - dpix) / 0.9;
            img.at(r, c) = bright * std::clamp(v, 0.0, 1.0);
        }
    return img;
}

// Balanced dataset: sample i is class i % 10, jitter stream split(i) from the
// master seed so any subrange is reproducible in isolation.
inline std::vector<ImageSample> generate_digits(int count, std::uint64_t seed, int canvas = 28) {
    Rng master(seed);
    std::vector<ImageSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng stream = master.split(static_cast<std::uint64_t>(i));
        out.push_back(render_digit(i % 10, stream, canvas));
    }
    return out;
}

} // namespace tnmera
