#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "tnmera/errors.hpp"
#include "tnmera/image.hpp"
#include "tnmera/pgm.hpp"
#include "tnmera/rng.hpp"

namespace tnmera {

// NeedleMNIST-style generator: each canvas carries digit patches pasted at
// uniform random non-overlapping positions on a black background. A positive
// sample contains exactly one patch of the object digit plus distractor digits;
// a negative sample contains only distractors. Pasting is element-wise max.

struct NeedleConfig {
    int canvas_size = 64;
    int object_digit = 3;
    int num_distractors = 4;
    int count_per_class = 1000;
    bool allow_overlap = false;
    std::uint64_t rng_seed = 0;

    void validate() const {
        if (canvas_size < 2 * 28)
            throw ValidationError("needle: canvas must be at least 56 (2x the 28px patch)");
        if (num_distractors < 0) throw ValidationError("needle: distractor count must be >= 0");
        if (count_per_class < 1) throw ValidationError("needle: count per class must be >= 1");
        if (object_digit < 0 || object_digit > 9)
            throw ValidationError("needle: object digit must be 0..9");
    }

    // Nominal object-to-image area ratio, recorded as patch-area / canvas-area.
    double o2i_ratio() const {
        return (28.0 * 28.0) / (static_cast<double>(canvas_size) * canvas_size);
    }
};

struct PatchPlacement {
    int digit = 0;
    bool is_object = false;
    int row = 0, col = 0;     // paste position of the cropped patch
    int height = 0, width = 0; // cropped patch extents
};

struct NeedleSampleMeta {
    std::vector<PatchPlacement> patches;
};

struct NeedleDataset {
    NeedleConfig config;
    std::vector<ImageSample> samples; // label 1 = object present
    std::vector<NeedleSampleMeta> meta;
};

namespace detail {

// Tight crop to the nonzero bounding box; MNIST-style digits occupy roughly the
// central 20x20, and cropping is what makes five patches packable on a 64px canvas.
inline ImageSample crop_to_content(const ImageSample& src) {
    int rmin = src.height, rmax = -1, cmin = src.width, cmax = -1;
    for (int r = 0; r < src.height; ++r)
        for (int c = 0; c < src.width; ++c)
            if (src.at(r, c) > 0.0) {
                rmin = std::min(rmin, r);
                rmax = std::max(rmax, r);
                cmin = std::min(cmin, c);
                cmax = std::max(cmax, c);
            }
    if (rmax < 0) return ImageSample(1, 1, src.label);
    ImageSample out(rmax - rmin + 1, cmax - cmin + 1, src.label);
    for (int r = 0; r < out.height; ++r)
        for (int c = 0; c < out.width; ++c) out.at(r, c) = src.at(rmin + r, cmin + c);
    return out;
}

inline bool boxes_overlap(int r0, int c0, int h0, int w0, int r1, int c1, int h1, int w1) {
    return r0 < r1 + h1 && r1 < r0 + h0 && c0 < c1 + w1 && c1 < c0 + w0;
}

} // namespace detail

// Pure function of (cfg, source): identical seeds give identical datasets.
// Sample order interleaves positive/negative so any prefix stays balanced.
inline NeedleDataset gen_needle(const NeedleConfig& cfg, const std::vector<ImageSample>& source) {
    cfg.validate();
    std::vector<int> object_pool, distractor_pool;
    for (std::size_t i = 0; i < source.size(); ++i) {
        if (source[i].label == cfg.object_digit)
            object_pool.push_back(static_cast<int>(i));
        else
            distractor_pool.push_back(static_cast<int>(i));
    }
    if (object_pool.empty())
        throw ValidationError("needle: source has no images of the object digit");
    if (distractor_pool.empty() && cfg.num_distractors > 0)
        throw ValidationError("needle: source has no distractor digits");

    NeedleDataset ds;
    ds.config = cfg;
    Rng master(cfg.rng_seed);
    const int total = 2 * cfg.count_per_class;

    for (int i = 0; i < total; ++i) {
        Rng rng = master.split(static_cast<std::uint64_t>(i));
        const bool positive = (i % 2) == 0;
        const int n_patches = cfg.num_distractors + 1;

        std::vector<ImageSample> patches;
        std::vector<char> is_object;
        for (int p = 0; p < n_patches; ++p) {
            const bool object = positive && p == 0;
            const auto& pool = object ? object_pool : distractor_pool;
            const int src = pool[static_cast<std::size_t>(rng.below(pool.size()))];
            patches.push_back(detail::crop_to_content(source[static_cast<std::size_t>(src)]));
            is_object.push_back(object ? 1 : 0);
        }

        ImageSample canvas(cfg.canvas_size, cfg.canvas_size, positive ? 1 : 0);
        NeedleSampleMeta meta;
        for (int p = 0; p < n_patches; ++p) {
            const ImageSample& patch = patches[static_cast<std::size_t>(p)];
            const int max_r = cfg.canvas_size - patch.height;
            const int max_c = cfg.canvas_size - patch.width;
            if (max_r < 0 || max_c < 0)
                throw ValidationError("needle: patch larger than canvas");
            int row = 0, col = 0;
            bool placed = false;
            for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
                row = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_r + 1)));
                col = static_cast<int>(rng.below(static_cast<std::uint64_t>(max_c + 1)));
                placed = true;
                if (!cfg.allow_overlap)
                    for (const auto& prev : meta.patches)
                        if (detail::boxes_overlap(row, col, patch.height, patch.width, prev.row,
                                                  prev.col, prev.height, prev.width)) {
                            placed = false;
                            break;
                        }
            }
            if (!placed)
                throw ValidationError("needle: could not place patch " + std::to_string(p) +
                                      " of sample " + std::to_string(i) +
                                      " without overlap after 200 retries");
            for (int r = 0; r < patch.height; ++r)
                for (int c = 0; c < patch.width; ++c)
                    canvas.at(row + r, col + c) =
                        std::max(canvas.at(row + r, col + c), patch.at(r, c));
            meta.patches.push_back({patch.label, is_object[static_cast<std::size_t>(p)] != 0,
                                    row, col, patch.height, patch.width});
        }
        ds.samples.push_back(std::move(canvas));
        ds.meta.push_back(std::move(meta));
    }
    return ds;
}

inline std::string needle_file_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "needle_%05d.pgm", index);
    return buf;
}

inline nlohmann::ordered_json needle_manifest(const NeedleDataset& ds) {
    nlohmann::ordered_json j;
    j["format"] = "tnmera-needle-v1";
    j["config"] = {{"canvas_size", ds.config.canvas_size},
                   {"object_digit", ds.config.object_digit},
                   {"num_distractors", ds.config.num_distractors},
                   {"count_per_class", ds.config.count_per_class},
                   {"allow_overlap", ds.config.allow_overlap},
                   {"seed", ds.config.rng_seed}};
    j["o2i_ratio"] = ds.config.o2i_ratio();
    int pos = 0;
    for (const auto& s : ds.samples) pos += s.label;
    j["counts"] = {{"total", ds.samples.size()},
                   {"positive", pos},
                   {"negative", static_cast<int>(ds.samples.size()) - pos}};
    auto records = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < ds.samples.size(); ++i)
        records.push_back({{"file", needle_file_name(static_cast<int>(i))},
                           {"label", ds.samples[i].label}});
    j["records"] = std::move(records);
    return j;
}

// Writes PGM files + labels.csv + manifest.json into dir.
inline void write_needle_dataset(const NeedleDataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream labels(fs::path(dir) / "labels.csv");
    if (!labels) throw ValidationError("needle: cannot write labels.csv in " + dir);
    labels << "filename,label\n";
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
        const std::string name = needle_file_name(static_cast<int>(i));
        write_pgm(ds.samples[i], (fs::path(dir) / name).string());
        labels << name << ',' << ds.samples[i].label << '\n';
    }
    std::ofstream manifest(fs::path(dir) / "manifest.json");
    if (!manifest) throw ValidationError("needle: cannot write manifest.json in " + dir);
    manifest << needle_manifest(ds).dump(2) << '\n';
}

// Reads back a labels.csv + PGM directory (the on-disk dataset format).
inline std::vector<ImageSample> load_dataset_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream labels(fs::path(dir) / "labels.csv");
    if (!labels) throw ValidationError("dataset: cannot open labels.csv in " + dir);
    std::string line;
    if (!std::getline(labels, line) || line != "filename,label")
        throw ValidationError("dataset: labels.csv must start with 'filename,label'");
    std::vector<ImageSample> out;
    while (std::getline(labels, line)) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos)
            throw ValidationError("dataset: malformed labels.csv row: " + line);
        ImageSample img = read_pgm((fs::path(dir) / line.substr(0, comma)).string());
        img.label = std::stoi(line.substr(comma + 1));
        out.push_back(std::move(img));
    }
    return out;
}

} // namespace tnmera
