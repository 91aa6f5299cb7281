#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tnmera/errors.hpp"
#include "tnmera/image.hpp"

namespace tnmera {

// IDX binary format (the MNIST distribution format): big-endian u32 magic and
// dimensions, then raw bytes. Magic 0x00000803 for u8 rank-3 image files,
// 0x00000801 for u8 rank-1 label files.

namespace detail {

inline std::uint32_t read_be32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4))
        throw ValidationError("idx: truncated file while reading " + what);
    return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) |
           (std::uint32_t(b[2]) << 8) | std::uint32_t(b[3]);
}

inline void write_be32(std::ostream& out, std::uint32_t v) {
    const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                                static_cast<unsigned char>(v >> 16),
                                static_cast<unsigned char>(v >> 8),
                                static_cast<unsigned char>(v)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

} // namespace detail

// Loads an images/labels pair. Pixel bytes scale to [0,1] by /255.
inline std::vector<ImageSample> load_idx(const std::string& images_path,
                                         const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw ValidationError("idx: cannot open " + images_path);
    std::ifstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw ValidationError("idx: cannot open " + labels_path);

    if (detail::read_be32(imgs, "image magic") != 0x00000803u)
        throw ValidationError("idx: bad image magic in " + images_path);
    const std::uint32_t n_images = detail::read_be32(imgs, "image count");
    const std::uint32_t rows = detail::read_be32(imgs, "row count");
    const std::uint32_t cols = detail::read_be32(imgs, "column count");

    if (detail::read_be32(lbls, "label magic") != 0x00000801u)
        throw ValidationError("idx: bad label magic in " + labels_path);
    const std::uint32_t n_labels = detail::read_be32(lbls, "label count");
    if (n_images != n_labels)
        throw ValidationError("idx: image/label count mismatch (" + std::to_string(n_images) +
                              " vs " + std::to_string(n_labels) + ")");

    std::vector<ImageSample> out;
    out.reserve(n_images);
    std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
    for (std::uint32_t i = 0; i < n_images; ++i) {
        if (!imgs.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
            throw ValidationError("idx: truncated image data in " + images_path);
        char lbl;
        if (!lbls.get(lbl)) throw ValidationError("idx: truncated label data in " + labels_path);
        ImageSample s(static_cast<int>(rows), static_cast<int>(cols),
                      static_cast<int>(static_cast<unsigned char>(lbl)));
        for (std::size_t k = 0; k < buf.size(); ++k) s.pixels[k] = buf[k] / 255.0;
        out.push_back(std::move(s));
    }
    return out;
}

// Writes an images/labels pair; all samples must share one geometry. Pixels
// quantize round-half-up to bytes.
inline void save_idx(const std::vector<ImageSample>& samples, const std::string& images_path,
                     const std::string& labels_path) {
    if (samples.empty()) throw ValidationError("idx: nothing to write");
    const int h = samples[0].height, w = samples[0].width;
    std::ofstream imgs(images_path, std::ios::binary);
    if (!imgs) throw ValidationError("idx: cannot write " + images_path);
    std::ofstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw ValidationError("idx: cannot write " + labels_path);

    detail::write_be32(imgs, 0x00000803u);
    detail::write_be32(imgs, static_cast<std::uint32_t>(samples.size()));
    detail::write_be32(imgs, static_cast<std::uint32_t>(h));
    detail::write_be32(imgs, static_cast<std::uint32_t>(w));
    detail::write_be32(lbls, 0x00000801u);
    detail::write_be32(lbls, static_cast<std::uint32_t>(samples.size()));

    std::vector<unsigned char> buf(static_cast<std::size_t>(h) * w);
    for (const auto& s : samples) {
        if (s.height != h || s.width != w)
            throw ValidationError("idx: mixed geometries in one file");
        for (std::size_t k = 0; k < buf.size(); ++k)
            buf[k] = static_cast<unsigned char>(s.pixels[k] * 255.0 + 0.5);
        imgs.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
        lbls.put(static_cast<char>(s.label));
    }
}

} // namespace tnmera
