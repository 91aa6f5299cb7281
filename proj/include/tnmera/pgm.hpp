#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "tnmera/errors.hpp"
#include "tnmera/image.hpp"

namespace tnmera {

// Binary PGM, exactly "P5\n<w> <h>\n255\n" + raw bytes, row-major. Pixels
// quantize round-half-up; a read recovers them within 1/510.

inline void write_pgm(const ImageSample& img, const std::string& path) {
    if (img.height < 1 || img.width < 1)
        throw ValidationError("pgm: refusing to write an empty image");
    img.validate_range();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("pgm: cannot write " + path);
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    for (double p : img.pixels)
        out.put(static_cast<char>(static_cast<unsigned char>(p * 255.0 + 0.5)));
    if (!out) throw ValidationError("pgm: write failed for " + path);
}

inline ImageSample read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("pgm: cannot open " + path);
    std::string magic;
    in >> magic;
    if (magic != "P5") throw ValidationError("pgm: not a binary P5 file: " + path);
    int w = 0, h = 0, maxval = 0;
    // Skip whitespace and '#' comment lines between header tokens.
    auto next_int = [&](int& v) {
        while (true) {
            const int c = in.peek();
            if (c == '#') {
                std::string line;
                std::getline(in, line);
            } else if (std::isspace(c)) {
                in.get();
            } else {
                break;
            }
        }
        if (!(in >> v)) throw ValidationError("pgm: malformed header in " + path);
    };
    next_int(w);
    next_int(h);
    next_int(maxval);
    if (w < 1 || h < 1) throw ValidationError("pgm: bad dimensions in " + path);
    if (maxval != 255) throw ValidationError("pgm: only maxval 255 is supported: " + path);
    in.get(); // single whitespace after maxval

    ImageSample img(h, w);
    std::vector<char> buf(static_cast<std::size_t>(w) * h);
    if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size())))
        throw ValidationError("pgm: truncated pixel data in " + path);
    for (std::size_t i = 0; i < buf.size(); ++i)
        img.pixels[i] = static_cast<unsigned char>(buf[i]) / 255.0;
    return img;
}

} // namespace tnmera
