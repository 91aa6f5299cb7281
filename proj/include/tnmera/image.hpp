#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tnmera/errors.hpp"

namespace tnmera {

// Grayscale image with pixels in [0,1], row-major, plus an integer class label.
struct ImageSample {
    int height = 0;
    int width = 0;
    std::vector<double> pixels;
    int label = 0;

    ImageSample() = default;
    ImageSample(int h, int w, int lbl = 0)
        : height(h), width(w), pixels(static_cast<std::size_t>(h) * static_cast<std::size_t>(w), 0.0),
          label(lbl) {}

    double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
    double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }

    void validate_range() const {
        for (double p : pixels)
            if (!(p >= 0.0 && p <= 1.0))
                throw ValidationError("image: pixel outside [0,1]");
    }
};

enum class ResizeMode { PadZero, DownsampleMean };

// pad_zero: centers the image on a zero canvas (source must fit).
// downsample_mean: block-averages; target must divide the source extent.
inline ImageSample resize_or_pad(const ImageSample& src, int target_h, int target_w,
                                 ResizeMode mode) {
    if (target_h < 1 || target_w < 1) throw ValidationError("resize: target must be positive");
    ImageSample out(target_h, target_w, src.label);
    if (mode == ResizeMode::PadZero) {
        if (target_h < src.height || target_w < src.width)
            throw ValidationError("resize: pad_zero target smaller than source");
        const int r0 = (target_h - src.height) / 2;
        const int c0 = (target_w - src.width) / 2;
        for (int r = 0; r < src.height; ++r)
            for (int c = 0; c < src.width; ++c) out.at(r0 + r, c0 + c) = src.at(r, c);
        return out;
    }
    if (src.height % target_h != 0 || src.width % target_w != 0)
        throw ValidationError("resize: downsample_mean target must divide source dimensions");
    const int fh = src.height / target_h, fw = src.width / target_w;
    for (int r = 0; r < target_h; ++r)
        for (int c = 0; c < target_w; ++c) {
            double acc = 0.0;
            for (int i = 0; i < fh; ++i)
                for (int j = 0; j < fw; ++j) acc += src.at(r * fh + i, c * fw + j);
            out.at(r, c) = acc / (fh * fw);
        }
    return out;
}

} // namespace tnmera
