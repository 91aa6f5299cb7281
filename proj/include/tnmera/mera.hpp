#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "tnmera/autodiff.hpp"
#include "tnmera/errors.hpp"
#include "tnmera/image.hpp"
#include "tnmera/isometry.hpp"
#include "tnmera/rng.hpp"
#include "tnmera/tensor.hpp"

namespace tnmera {

enum class Boundary { Open, Periodic };
enum class EmbeddingKind { FlattenBias, PixelMap };
enum class WeightSharing { None, PerLayer };

// Disentangler placement. Offset puts them on 2x2 plaquettes shifted by (1,1)
// from the isometry blocks (the standard 2D MERA picture); exact contraction of
// that network has intermediates that grow exponentially with the site-grid
// side, so it is only evaluable at small grids. Aligned puts the disentangler
// on the same 2x2 block its isometry consumes, which keeps the contraction a
// tree and scales to training-size grids.
enum class Layout { Offset, Aligned };

inline Boundary parse_boundary(const std::string& s) {
    if (s == "open") return Boundary::Open;
    if (s == "periodic") return Boundary::Periodic;
    throw ValidationError("unknown boundary: " + s);
}
inline EmbeddingKind parse_embedding(const std::string& s) {
    if (s == "flatten_bias") return EmbeddingKind::FlattenBias;
    if (s == "pixel_map") return EmbeddingKind::PixelMap;
    throw ValidationError("unknown embedding: " + s);
}
inline WeightSharing parse_sharing(const std::string& s) {
    if (s == "none") return WeightSharing::None;
    if (s == "per_layer") return WeightSharing::PerLayer;
    throw ValidationError("unknown weight sharing: " + s);
}
inline Layout parse_layout(const std::string& s) {
    if (s == "offset") return Layout::Offset;
    if (s == "aligned") return Layout::Aligned;
    throw ValidationError("unknown layout: " + s);
}
inline std::string to_string(Boundary b) { return b == Boundary::Open ? "open" : "periodic"; }
inline std::string to_string(EmbeddingKind e) {
    return e == EmbeddingKind::FlattenBias ? "flatten_bias" : "pixel_map";
}
inline std::string to_string(WeightSharing w) {
    return w == WeightSharing::None ? "none" : "per_layer";
}
inline std::string to_string(Layout l) { return l == Layout::Offset ? "offset" : "aligned"; }

struct MeraConfig {
    int image_height = 32;
    int image_width = 32;
    int block_size = 4;   // b: pixels per side of a bottom region
    int bond_dim = 4;     // chi
    int num_classes = 10; // C
    Boundary boundary = Boundary::Open;
    EmbeddingKind embedding = EmbeddingKind::FlattenBias;
    WeightSharing sharing = WeightSharing::None;
    Layout layout = Layout::Offset;
    InitMode init_mode = InitMode::Noise;
    double init_std = 1e-4;
    bool auto_pad = false;
    // Elements allowed in any single schedule intermediate before forward refuses.
    std::int64_t contraction_budget = std::int64_t(1) << 24;

    int raw_site_dim() const {
        return embedding == EmbeddingKind::FlattenBias ? block_size * block_size + 1
                                                       : 2 * block_size * block_size;
    }

    // Side of the square canvas the image lives on: the smallest b * 2^k
    // (k >= 1) covering both image dimensions.
    int padded_size() const {
        int target = block_size * 2;
        const int need = std::max(image_height, image_width);
        while (target < need) target *= 2;
        return target;
    }

    bool needs_padding() const {
        return image_height != padded_size() || image_width != padded_size();
    }

    int grid_side() const { return padded_size() / block_size; }

    int num_levels() const {
        int side = grid_side(), l = 0;
        while (side > 1) {
            side /= 2;
            ++l;
        }
        return l;
    }

    // Site leg extent entering each level; the first bond cannot exceed the raw
    // block dimension under the isometric constraint.
    std::vector<int> level_dims() const {
        std::vector<int> dims(static_cast<std::size_t>(num_levels()));
        dims[0] = std::min(bond_dim, raw_site_dim());
        for (std::size_t l = 1; l < dims.size(); ++l) dims[l] = bond_dim;
        return dims;
    }

    void validate() const {
        if (image_height < 1 || image_width < 1)
            throw ValidationError("mera config: image dimensions must be positive");
        if (block_size < 1) throw ValidationError("mera config: block size must be >= 1");
        if (bond_dim < 2) throw ValidationError("mera config: bond dimension must be >= 2");
        if (num_classes < 2) throw ValidationError("mera config: class count must be >= 2");
        if (!auto_pad && needs_padding())
            throw ValidationError(
                "mera config: image " + std::to_string(image_height) + "x" +
                std::to_string(image_width) + " is not a b*2^k square (needs " +
                std::to_string(padded_size()) + "x" + std::to_string(padded_size()) +
                "); enable auto-pad or resize in the data pipeline");
        if (init_mode != InitMode::Qr && init_std <= 0.0 &&
            !(init_mode == InitMode::IdentityNoise && init_std == 0.0))
            throw ValidationError("mera config: init std must be > 0 in noise modes");
        const auto dims = level_dims();
        const std::int64_t top_in = static_cast<std::int64_t>(dims.back()) * dims.back() *
                                    dims.back() * dims.back();
        if (num_classes > top_in)
            throw ValidationError("mera config: class count exceeds top tensor input dimension");
    }
};

// One rank-1 tensor per site, row-major over a square grid.
struct SiteGrid {
    int side = 0;
    std::vector<Tensor> sites;

    Tensor& at(int r, int c) { return sites[static_cast<std::size_t>(r) * side + c]; }
    const Tensor& at(int r, int c) const { return sites[static_cast<std::size_t>(r) * side + c]; }
};

// Blocks the image into b x b regions and maps each region to one bottom leg.
//   flatten_bias: the b^2 intensities row-major, then a constant 1 channel so
//                 all-black regions do not annihilate the contraction.
//   pixel_map:    per pixel (cos(pi p / 2), sin(pi p / 2)), concatenated.
inline SiteGrid embed(const ImageSample& img, const MeraConfig& cfg) {
    img.validate_range();
    const int target = cfg.padded_size();
    const ImageSample* src = &img;
    ImageSample padded;
    if (img.height != target || img.width != target) {
        if (img.height == cfg.image_height && img.width == cfg.image_width && cfg.auto_pad) {
            padded = resize_or_pad(img, target, target, ResizeMode::PadZero);
            src = &padded;
        } else {
            throw ValidationError("embed: image " + std::to_string(img.height) + "x" +
                                  std::to_string(img.width) + " does not match model geometry " +
                                  std::to_string(target) + "x" + std::to_string(target));
        }
    }

    const int b = cfg.block_size;
    SiteGrid grid;
    grid.side = cfg.grid_side();
    grid.sites.reserve(static_cast<std::size_t>(grid.side) * grid.side);
    const double half_pi = 1.5707963267948966;
    for (int br = 0; br < grid.side; ++br)
        for (int bc = 0; bc < grid.side; ++bc) {
            Tensor v({cfg.raw_site_dim()});
            std::int64_t k = 0;
            for (int r = 0; r < b; ++r)
                for (int c = 0; c < b; ++c) {
                    const double p = src->at(br * b + r, bc * b + c);
                    if (cfg.embedding == EmbeddingKind::FlattenBias) {
                        v[k++] = p;
                    } else {
                        v[k++] = std::cos(half_pi * p);
                        v[k++] = std::sin(half_pi * p);
                    }
                }
            if (cfg.embedding == EmbeddingKind::FlattenBias) v[k] = 1.0;
            grid.sites.push_back(std::move(v));
        }
    return grid;
}

// ---- schedule and bond graph ----

struct ScheduleStep {
    int lhs = -1;
    int rhs = -1;
    AxisPairing pairing;
};

// Fixed contraction program. Node ids: [0, num_sites) are the raw site vectors
// in row-major order, [num_sites, num_sites + num_params) the parameter leaves
// in registry order, then one node per step.
struct Schedule {
    int num_sites = 0;
    int num_params = 0;
    std::vector<ScheduleStep> steps;
    int output = -1;
    double max_intermediate = 0.0; // elements in the largest produced tensor
};

// Structural tensor graph: one vertex per bottom site and per tensor instance,
// one edge per bond, weighted by log2 of the bond extent.
struct BondGraph {
    struct Edge {
        int a = -1, b = -1;
        double bits = 0.0;
    };
    int num_vertices = 0;
    int num_sites = 0;
    int top_vertex = -1;
    std::vector<Edge> edges;
};

struct LevelSpec {
    int grid_side = 0;
    std::vector<std::pair<int, int>> plaquettes; // top-left site coordinates
    int isometry_count = 0;                      // 0 on the top level (top tensor instead)
};

class MeraModel {
public:
    MeraConfig config;
    std::uint64_t seed = 0;
    std::vector<std::string> param_names;
    std::vector<Tensor> params;
    std::vector<LevelSpec> levels;
    Schedule schedule;
    BondGraph bonds;

    int param_index(const std::string& name) const {
        for (std::size_t i = 0; i < param_names.size(); ++i)
            if (param_names[i] == name) return static_cast<int>(i);
        throw ValidationError("no parameter named " + name);
    }

    std::int64_t total_parameters() const {
        std::int64_t n = 0;
        for (const auto& p : params) n += p.size();
        return n;
    }

    // max |W^T W - I| over every disentangler and isometry (matrixized in-legs
    // as rows). Embedders and the top tensor are not constrained.
    double max_constraint_residual() const {
        double worst = 0.0;
        for (std::size_t i = 0; i < params.size(); ++i) {
            const std::string& n = param_names[i];
            const bool uw = n.find(".u") != std::string::npos || n.find(".w") != std::string::npos;
            if (!uw) continue;
            const Tensor& t = params[i];
            std::int64_t rows = 1; // both tensor kinds have four in-legs
            for (int d = 0; d < 4; ++d) rows *= t.extent(d);
            worst = std::max(worst, isometry_residual(t, rows, t.size() / rows));
        }
        return worst;
    }

    std::string summary() const;
};

namespace detail {

struct GreedyNode {
    int prog = -1;
    std::vector<std::int64_t> extents;
    std::vector<int> bond_of_axis; // -1 for a free (class) leg
    bool alive = true;
};

} // namespace detail

// Builds the model: parameter registry, initialization, bond graph, and the
// fixed contraction schedule (tree order for aligned layout, deterministic
// greedy pair order for offset). init_params=false leaves tensors zeroed for
// callers that overwrite them (checkpoint loading).
inline MeraModel build(const MeraConfig& cfg, std::uint64_t seed, bool init_params = true) {
    cfg.validate();
    MeraModel m;
    m.config = cfg;
    m.seed = seed;

    const int side = cfg.grid_side();
    const int num_sites = side * side;
    const int levels = cfg.num_levels();
    const auto dims = cfg.level_dims();
    const int d0 = cfg.raw_site_dim();
    const bool shared = cfg.sharing == WeightSharing::PerLayer;

    // --- parameter registry ---
    struct PendingParam {
        std::string name;
        std::int64_t dim_in, dim_out;
        std::vector<std::int64_t> shape;
        bool is_embedder = false;
    };
    std::vector<PendingParam> reg;
    auto add_param = [&](std::string name, std::int64_t din, std::int64_t dout,
                         std::vector<std::int64_t> shape, bool is_embedder = false) {
        reg.push_back({std::move(name), din, dout, std::move(shape), is_embedder});
        return static_cast<int>(reg.size()) - 1;
    };

    std::vector<int> embed_param(static_cast<std::size_t>(num_sites));
    if (shared) {
        const int id = add_param("embed", d0, dims[0], {d0, dims[0]}, true);
        std::fill(embed_param.begin(), embed_param.end(), id);
    } else {
        for (int r = 0; r < side; ++r)
            for (int c = 0; c < side; ++c)
                embed_param[static_cast<std::size_t>(r) * side + c] =
                    add_param("embed[" + std::to_string(r) + "," + std::to_string(c) + "]", d0,
                              dims[0], {d0, dims[0]}, true);
    }

    m.levels.resize(static_cast<std::size_t>(levels));
    std::vector<std::vector<int>> u_param(static_cast<std::size_t>(levels));
    std::vector<std::vector<int>> w_param(static_cast<std::size_t>(levels));
    int top_param = -1;

    for (int l = 0; l < levels; ++l) {
        LevelSpec& spec = m.levels[static_cast<std::size_t>(l)];
        spec.grid_side = side >> l;
        const int s = spec.grid_side;
        const int e = dims[static_cast<std::size_t>(l)];
        const std::int64_t e4 = static_cast<std::int64_t>(e) * e * e * e;

        if (cfg.layout == Layout::Aligned) {
            for (int i = 0; i < s / 2; ++i)
                for (int j = 0; j < s / 2; ++j) spec.plaquettes.emplace_back(2 * i, 2 * j);
        } else {
            const int span = cfg.boundary == Boundary::Periodic ? s / 2 : s / 2 - 1;
            for (int i = 0; i < span; ++i)
                for (int j = 0; j < span; ++j) spec.plaquettes.emplace_back(2 * i + 1, 2 * j + 1);
        }

        auto& ups = u_param[static_cast<std::size_t>(l)];
        const std::string lvl = "L" + std::to_string(l);
        if (!spec.plaquettes.empty()) {
            if (shared) {
                const int id = add_param(lvl + ".u", e4, e4, {e, e, e, e, e, e, e, e});
                ups.assign(spec.plaquettes.size(), id);
            } else {
                for (const auto& [pr, pc] : spec.plaquettes)
                    ups.push_back(add_param(lvl + ".u[" + std::to_string(pr) + "," +
                                                std::to_string(pc) + "]",
                                            e4, e4, {e, e, e, e, e, e, e, e}));
            }
        }

        if (l + 1 < levels) {
            spec.isometry_count = (s / 2) * (s / 2);
            const int enext = dims[static_cast<std::size_t>(l + 1)];
            auto& wps = w_param[static_cast<std::size_t>(l)];
            if (shared) {
                const int id = add_param(lvl + ".w", e4, enext, {e, e, e, e, enext});
                wps.assign(static_cast<std::size_t>(spec.isometry_count), id);
            } else {
                for (int i = 0; i < s / 2; ++i)
                    for (int j = 0; j < s / 2; ++j)
                        wps.push_back(add_param(lvl + ".w[" + std::to_string(i) + "," +
                                                    std::to_string(j) + "]",
                                                e4, enext, {e, e, e, e, enext}));
            }
        } else {
            top_param = add_param("top", e4, cfg.num_classes, {e, e, e, e, cfg.num_classes});
        }
    }

    // --- initialization: one split stream per parameter, independent of order ---
    Rng master(seed);
    m.param_names.reserve(reg.size());
    m.params.reserve(reg.size());
    for (std::size_t k = 0; k < reg.size(); ++k) {
        m.param_names.push_back(reg[k].name);
        if (!init_params) {
            m.params.emplace_back(reg[k].shape);
            continue;
        }
        Rng stream = master.split(k);
        Tensor t;
        if (reg[k].is_embedder && cfg.init_mode == InitMode::IdentityNoise &&
            cfg.embedding == EmbeddingKind::FlattenBias) {
            // Bias-first permuted identity: the raw block vector carries its
            // constant 1 in the LAST slot, and a plain truncated identity would
            // route only near-zero pixel products into the bond. Mapping the
            // bias onto bond component 0 keeps a unit-strength signal path
            // through every truncated-identity isometry above.
            const std::int64_t din = reg[k].dim_in, dout = reg[k].dim_out;
            t = Tensor({din, dout});
            t.data[static_cast<std::size_t>((din - 1) * dout)] = 1.0;
            for (std::int64_t j = 1; j < dout; ++j)
                t.data[static_cast<std::size_t>((j - 1) * dout + j)] = 1.0;
            if (cfg.init_std > 0.0) {
                for (auto& v : t.data) v += stream.gaussian(cfg.init_std);
                polar_orthonormal(din, dout, t.data);
            }
        } else {
            t = random_isometry(reg[k].dim_in, reg[k].dim_out, cfg.init_mode, cfg.init_std,
                                stream);
        }
        m.params.push_back(reshape(t, reg[k].shape));
    }

    // --- program + bond graph ---
    const int num_params = static_cast<int>(reg.size());
    Schedule& sch = m.schedule;
    sch.num_sites = num_sites;
    sch.num_params = num_params;
    int next_prog = num_sites + num_params;
    auto prog_of_param = [&](int k) { return num_sites + k; };

    std::vector<detail::GreedyNode> gnodes;
    std::vector<std::pair<int, int>> bond_ends; // (gnode index, gnode index), filled on wiring
    BondGraph& bg = m.bonds;
    bg.num_sites = num_sites;

    // Graph vertices parallel gnodes (same indices) for capacity queries.
    auto new_gnode = [&](int prog, std::vector<std::int64_t> extents) {
        detail::GreedyNode n;
        n.prog = prog;
        n.extents = std::move(extents);
        n.bond_of_axis.assign(n.extents.size(), -1);
        gnodes.push_back(std::move(n));
        return static_cast<int>(gnodes.size()) - 1;
    };
    auto wire = [&](int ga, int axa, int gb, int axb) {
        const std::int64_t ea = gnodes[static_cast<std::size_t>(ga)].extents[static_cast<std::size_t>(axa)];
        const std::int64_t eb = gnodes[static_cast<std::size_t>(gb)].extents[static_cast<std::size_t>(axb)];
        if (ea != eb) throw ValidationError("build: bond extent mismatch in shape audit");
        const int bond = static_cast<int>(bond_ends.size());
        bond_ends.emplace_back(ga, gb);
        gnodes[static_cast<std::size_t>(ga)].bond_of_axis[static_cast<std::size_t>(axa)] = bond;
        gnodes[static_cast<std::size_t>(gb)].bond_of_axis[static_cast<std::size_t>(axb)] = bond;
        bg.edges.push_back({ga, gb, std::log2(static_cast<double>(ea))});
    };

    // Embedding steps come first in canonical row-major order.
    struct LegRef {
        int gnode = -1;
        int axis = -1;
    };
    std::vector<LegRef> eff(static_cast<std::size_t>(num_sites));
    for (int sidx = 0; sidx < num_sites; ++sidx) {
        sch.steps.push_back({sidx, prog_of_param(embed_param[static_cast<std::size_t>(sidx)]),
                             AxisPairing{{0, 0}}});
        const int prog = next_prog++;
        const int g = new_gnode(prog, {dims[0]});
        eff[static_cast<std::size_t>(sidx)] = {g, 0};
        sch.max_intermediate = std::max(sch.max_intermediate, static_cast<double>(dims[0]));
    }

    // Wire every level's disentanglers and isometries.
    for (int l = 0; l < levels; ++l) {
        const LevelSpec& spec = m.levels[static_cast<std::size_t>(l)];
        const int s = spec.grid_side;
        const int e = dims[static_cast<std::size_t>(l)];
        std::vector<LegRef> next_eff;

        for (std::size_t pi = 0; pi < spec.plaquettes.size(); ++pi) {
            const auto [pr, pc] = spec.plaquettes[pi];
            const int g = new_gnode(prog_of_param(u_param[static_cast<std::size_t>(l)][pi]),
                                    {e, e, e, e, e, e, e, e});
            for (int q = 0; q < 4; ++q) {
                const int r = (pr + q / 2) % s, c = (pc + q % 2) % s;
                const LegRef& in = eff[static_cast<std::size_t>(r) * s + c];
                wire(in.gnode, in.axis, g, q);
                eff[static_cast<std::size_t>(r) * s + c] = {g, 4 + q};
            }
        }

        if (l + 1 < levels) {
            const int enext = dims[static_cast<std::size_t>(l + 1)];
            next_eff.resize(static_cast<std::size_t>((s / 2) * (s / 2)));
            for (int i = 0; i < s / 2; ++i)
                for (int j = 0; j < s / 2; ++j) {
                    const int g = new_gnode(
                        prog_of_param(
                            w_param[static_cast<std::size_t>(l)][static_cast<std::size_t>(i) * (s / 2) + j]),
                        {e, e, e, e, enext});
                    for (int q = 0; q < 4; ++q) {
                        const int r = 2 * i + q / 2, c = 2 * j + q % 2;
                        const LegRef& in = eff[static_cast<std::size_t>(r) * s + c];
                        wire(in.gnode, in.axis, g, q);
                    }
                    next_eff[static_cast<std::size_t>(i) * (s / 2) + j] = {g, 4};
                }
            eff = std::move(next_eff);
        } else {
            const int g = new_gnode(prog_of_param(top_param),
                                    {e, e, e, e, cfg.num_classes});
            for (int q = 0; q < 4; ++q) {
                const int r = q / 2, c = q % 2;
                const LegRef& in = eff[static_cast<std::size_t>(r) * s + c];
                wire(in.gnode, in.axis, g, q);
            }
            bg.top_vertex = g;
        }
    }
    bg.num_vertices = static_cast<int>(gnodes.size());

    // --- contraction order ---
    if (cfg.layout == Layout::Aligned) {
        // Canonical tree order: per block, kron the four site vectors, apply the
        // disentangler, then the isometry (or the top tensor on the last level).
        std::vector<int> cur(static_cast<std::size_t>(num_sites));
        for (int sidx = 0; sidx < num_sites; ++sidx)
            cur[static_cast<std::size_t>(sidx)] = num_sites + num_params + sidx;
        auto emit = [&](int lhs, int rhs, AxisPairing p, double out_elems) {
            sch.steps.push_back({lhs, rhs, std::move(p)});
            sch.max_intermediate = std::max(sch.max_intermediate, out_elems);
            return next_prog++;
        };
        const AxisPairing four = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
        for (int l = 0; l < levels; ++l) {
            const int s = side >> l;
            const double e = static_cast<double>(dims[static_cast<std::size_t>(l)]);
            std::vector<int> nxt(static_cast<std::size_t>((s / 2) * (s / 2)));
            for (int i = 0; i < s / 2; ++i)
                for (int j = 0; j < s / 2; ++j) {
                    const std::size_t bi = static_cast<std::size_t>(i) * (s / 2) + j;
                    const int v00 = cur[static_cast<std::size_t>(2 * i) * s + 2 * j];
                    const int v01 = cur[static_cast<std::size_t>(2 * i) * s + 2 * j + 1];
                    const int v10 = cur[static_cast<std::size_t>(2 * i + 1) * s + 2 * j];
                    const int v11 = cur[static_cast<std::size_t>(2 * i + 1) * s + 2 * j + 1];
                    const int k12 = emit(v00, v01, {}, e * e);
                    const int k34 = emit(v10, v11, {}, e * e);
                    const int k = emit(k12, k34, {}, e * e * e * e);
                    const int y = emit(k, prog_of_param(u_param[static_cast<std::size_t>(l)][bi]),
                                       four, e * e * e * e);
                    if (l + 1 < levels) {
                        const double en = dims[static_cast<std::size_t>(l + 1)];
                        nxt[bi] = emit(y,
                                       prog_of_param(w_param[static_cast<std::size_t>(l)][bi]),
                                       four, en);
                    } else {
                        sch.output = emit(y, prog_of_param(top_param), four,
                                          static_cast<double>(cfg.num_classes));
                    }
                }
            cur = std::move(nxt);
        }
    } else {
        // Deterministic greedy pair order over the bond graph: repeatedly merge
        // the bonded pair with the smallest result, contracting every shared
        // bond at once. Ties break on the smaller program ids.
        auto node_elems = [&](const detail::GreedyNode& n) {
            double p = 1.0;
            for (std::int64_t ext : n.extents) p *= static_cast<double>(ext);
            return p;
        };
        int alive = static_cast<int>(gnodes.size());
        while (alive > 1) {
            int best_a = -1, best_b = -1;
            double best_cost = 0.0;
            for (std::size_t bid = 0; bid < bond_ends.size(); ++bid) {
                auto [ga, gb] = bond_ends[bid];
                if (ga < 0 || !gnodes[static_cast<std::size_t>(ga)].alive ||
                    !gnodes[static_cast<std::size_t>(gb)].alive)
                    continue;
                if (ga == gb) continue;
                double shared = 1.0;
                const auto& na = gnodes[static_cast<std::size_t>(ga)];
                const auto& nb = gnodes[static_cast<std::size_t>(gb)];
                for (std::size_t ax = 0; ax < na.bond_of_axis.size(); ++ax) {
                    const int bo = na.bond_of_axis[ax];
                    if (bo < 0) continue;
                    auto [ea, eb] = bond_ends[static_cast<std::size_t>(bo)];
                    if ((ea == ga && eb == gb) || (ea == gb && eb == ga))
                        shared *= static_cast<double>(na.extents[ax]);
                }
                const double cost = node_elems(na) * node_elems(nb) / (shared * shared);
                const int pa = std::min(na.prog, nb.prog), pb = std::max(na.prog, nb.prog);
                if (best_a < 0 || cost < best_cost ||
                    (cost == best_cost &&
                     std::make_pair(pa, pb) <
                         std::make_pair(std::min(gnodes[static_cast<std::size_t>(best_a)].prog,
                                                 gnodes[static_cast<std::size_t>(best_b)].prog),
                                        std::max(gnodes[static_cast<std::size_t>(best_a)].prog,
                                                 gnodes[static_cast<std::size_t>(best_b)].prog)))) {
                    best_cost = cost;
                    best_a = ga;
                    best_b = gb;
                }
            }
            if (best_a < 0) throw ValidationError("build: contraction graph is disconnected");

            auto& na = gnodes[static_cast<std::size_t>(best_a)];
            auto& nb = gnodes[static_cast<std::size_t>(best_b)];
            AxisPairing pairing;
            for (std::size_t axa = 0; axa < na.bond_of_axis.size(); ++axa) {
                const int bo = na.bond_of_axis[axa];
                if (bo < 0) continue;
                auto [ea, eb] = bond_ends[static_cast<std::size_t>(bo)];
                const bool between = (ea == best_a && eb == best_b) || (ea == best_b && eb == best_a);
                if (!between) continue;
                for (std::size_t axb = 0; axb < nb.bond_of_axis.size(); ++axb)
                    if (nb.bond_of_axis[axb] == bo)
                        pairing.emplace_back(static_cast<int>(axa), static_cast<int>(axb));
            }
            sch.steps.push_back({na.prog, nb.prog, pairing});
            detail::GreedyNode merged;
            merged.prog = next_prog++;
            std::vector<char> pa(na.extents.size(), 0), pb(nb.extents.size(), 0);
            for (auto& [xa, xb] : pairing) {
                pa[static_cast<std::size_t>(xa)] = 1;
                pb[static_cast<std::size_t>(xb)] = 1;
            }
            for (std::size_t ax = 0; ax < na.extents.size(); ++ax)
                if (!pa[ax]) {
                    merged.extents.push_back(na.extents[ax]);
                    merged.bond_of_axis.push_back(na.bond_of_axis[ax]);
                }
            for (std::size_t ax = 0; ax < nb.extents.size(); ++ax)
                if (!pb[ax]) {
                    merged.extents.push_back(nb.extents[ax]);
                    merged.bond_of_axis.push_back(nb.bond_of_axis[ax]);
                }
            na.alive = false;
            nb.alive = false;
            gnodes.push_back(merged);
            const int gm = static_cast<int>(gnodes.size()) - 1;
            for (std::size_t ax = 0; ax < merged.bond_of_axis.size(); ++ax) {
                const int bo = merged.bond_of_axis[ax];
                if (bo < 0) continue;
                auto& ends = bond_ends[static_cast<std::size_t>(bo)];
                if (ends.first == best_a || ends.first == best_b) ends.first = gm;
                if (ends.second == best_a || ends.second == best_b) ends.second = gm;
            }
            sch.max_intermediate = std::max(sch.max_intermediate, node_elems(merged));
            --alive;
        }
        for (const auto& n : gnodes)
            if (n.alive) {
                if (n.extents != std::vector<std::int64_t>{cfg.num_classes})
                    throw ValidationError("build: schedule did not reduce to the class leg");
                sch.output = n.prog;
            }
    }

    return m;
}

// ---- execution ----

// Un-taped schedule execution; bit-identical to the taped path (same operation
// order, same kernels).
inline Tensor forward_logits(const MeraModel& m, const ImageSample& img) {
    if (m.schedule.max_intermediate > static_cast<double>(m.config.contraction_budget))
        throw ValidationError("forward: schedule intermediate of " +
                              std::to_string(static_cast<std::int64_t>(m.schedule.max_intermediate)) +
                              " elements exceeds the contraction budget; exact offset-layout "
                              "contraction does not scale to this grid, use aligned layout");
    SiteGrid grid = embed(img, m.config);
    std::vector<Tensor> vals;
    vals.reserve(static_cast<std::size_t>(m.schedule.num_sites + m.schedule.num_params) +
                 m.schedule.steps.size());
    for (auto& s : grid.sites) vals.push_back(std::move(s));
    for (const auto& p : m.params) vals.push_back(p);
    for (const auto& st : m.schedule.steps)
        vals.push_back(contract(vals[static_cast<std::size_t>(st.lhs)],
                                vals[static_cast<std::size_t>(st.rhs)], st.pairing));
    return vals[static_cast<std::size_t>(m.schedule.output)];
}

struct ForwardRecord {
    Tape tape;
    int logits_node = -1;
    std::vector<int> param_nodes; // tape node per parameter, registry order
};

inline ForwardRecord record_forward(const MeraModel& m, const ImageSample& img) {
    if (m.schedule.max_intermediate > static_cast<double>(m.config.contraction_budget))
        throw ValidationError("record_forward: schedule exceeds the contraction budget; "
                              "use aligned layout at this size");
    SiteGrid grid = embed(img, m.config);
    ForwardRecord fr;
    for (auto& s : grid.sites) fr.tape.input(std::move(s));
    fr.param_nodes.reserve(m.params.size());
    for (const auto& p : m.params) fr.param_nodes.push_back(fr.tape.leaf(p));
    for (const auto& st : m.schedule.steps) fr.tape.contract_op(st.lhs, st.rhs, st.pairing);
    fr.logits_node = m.schedule.output;
    return fr;
}

// Softmax is monotone, so argmax over logits is the prediction; ties resolve to
// the lowest class index.
inline int predict_from_logits(const Tensor& logits) {
    int best = 0;
    for (std::int64_t i = 1; i < logits.size(); ++i)
        if (logits[i] > logits[best]) best = static_cast<int>(i);
    return best;
}

inline int predict(const MeraModel& m, const ImageSample& img) {
    return predict_from_logits(forward_logits(m, img));
}

// Per-parameter gradients, registry order.
struct GradientSet {
    std::vector<Tensor> grads;

    void add_scaled(const GradientSet& other, double alpha) {
        if (grads.empty()) {
            grads = other.grads;
            if (alpha != 1.0)
                for (auto& g : grads) scale_inplace(g, alpha);
            return;
        }
        for (std::size_t i = 0; i < grads.size(); ++i) axpy(grads[i], alpha, other.grads[i]);
    }
};

struct SampleResult {
    double loss = 0.0;
    int predicted = -1;
    GradientSet grads;
};

inline SampleResult grad_sample(const MeraModel& m, const ImageSample& img, int label) {
    ForwardRecord fr = record_forward(m, img);
    const Tensor& logits = fr.tape.value(fr.logits_node);
    if (!all_finite(logits)) throw NumericalError("forward produced non-finite logits");
    LossResult lr = softmax_cross_entropy(logits, label);
    auto ct = fr.tape.backward(fr.logits_node, lr.grad_logits);

    SampleResult out;
    out.loss = lr.loss;
    out.predicted = predict_from_logits(logits);
    out.grads.grads.reserve(m.params.size());
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        const int node = fr.param_nodes[k];
        if (ct.has(node))
            out.grads.grads.push_back(std::move(ct.grad[static_cast<std::size_t>(node)]));
        else
            out.grads.grads.emplace_back(m.params[k].shape);
    }
    return out;
}

// ---- entanglement capacity across a site bipartition ----

namespace detail {

// Dinic max-flow with double capacities.
class MaxFlow {
public:
    explicit MaxFlow(int n) : head_(static_cast<std::size_t>(n), -1) {}

    void add_edge(int u, int v, double cap) {
        push(u, v, cap);
        push(v, u, 0.0);
    }

    void add_undirected(int u, int v, double cap) {
        push(u, v, cap);
        push(v, u, cap);
    }

    double run(int s, int t) {
        static constexpr double EPS = 1e-9;
        double flow = 0.0;
        while (bfs(s, t)) {
            iter_ = head_;
            double f;
            while ((f = dfs(s, t, 1e300)) > EPS) flow += f;
        }
        return flow;
    }

private:
    struct Arc {
        int to, next;
        double cap;
    };

    void push(int u, int v, double cap) {
        arcs_.push_back({v, head_[static_cast<std::size_t>(u)], cap});
        head_[static_cast<std::size_t>(u)] = static_cast<int>(arcs_.size()) - 1;
    }

    bool bfs(int s, int t) {
        level_.assign(head_.size(), -1);
        std::deque<int> q{s};
        level_[static_cast<std::size_t>(s)] = 0;
        while (!q.empty()) {
            const int u = q.front();
            q.pop_front();
            for (int a = head_[static_cast<std::size_t>(u)]; a >= 0; a = arcs_[static_cast<std::size_t>(a)].next) {
                const auto& arc = arcs_[static_cast<std::size_t>(a)];
                if (arc.cap > 1e-12 && level_[static_cast<std::size_t>(arc.to)] < 0) {
                    level_[static_cast<std::size_t>(arc.to)] = level_[static_cast<std::size_t>(u)] + 1;
                    q.push_back(arc.to);
                }
            }
        }
        return level_[static_cast<std::size_t>(t)] >= 0;
    }

    double dfs(int u, int t, double limit) {
        if (u == t) return limit;
        for (int& a = iter_[static_cast<std::size_t>(u)]; a >= 0; a = arcs_[static_cast<std::size_t>(a)].next) {
            Arc& arc = arcs_[static_cast<std::size_t>(a)];
            if (arc.cap <= 1e-12 || level_[static_cast<std::size_t>(arc.to)] != level_[static_cast<std::size_t>(u)] + 1)
                continue;
            const double f = dfs(arc.to, t, std::min(limit, arc.cap));
            if (f > 1e-12) {
                arc.cap -= f;
                arcs_[static_cast<std::size_t>(a ^ 1)].cap += f;
                return f;
            }
        }
        return 0.0;
    }

    std::vector<int> head_, iter_, level_;
    std::vector<Arc> arcs_;
};

} // namespace detail

// Upper bound, in bits, on the entanglement the network can carry across the
// given bottom-site bipartition: the minimal total log2-extent of bonds whose
// removal separates the A sites from the B sites and the class leg.
inline double entanglement_capacity(const MeraModel& m, const std::vector<char>& in_a) {
    const BondGraph& bg = m.bonds;
    if (static_cast<int>(in_a.size()) != bg.num_sites)
        throw ValidationError("entanglement_capacity: mask size does not match site grid");
    int count_a = 0;
    for (char c : in_a) count_a += c ? 1 : 0;
    if (count_a == 0 || count_a == bg.num_sites) return 0.0;

    const int src = bg.num_vertices, sink = bg.num_vertices + 1;
    detail::MaxFlow mf(bg.num_vertices + 2);
    constexpr double INF = 1e18;
    for (int s = 0; s < bg.num_sites; ++s) {
        if (in_a[static_cast<std::size_t>(s)])
            mf.add_edge(src, s, INF);
        else
            mf.add_edge(s, sink, INF);
    }
    mf.add_edge(bg.top_vertex, sink, INF); // class leg stays on the B side
    for (const auto& e : bg.edges) mf.add_undirected(e.a, e.b, e.bits);
    return mf.run(src, sink);
}

// Half-plane cut helper: A = sites with row (or column) index < k.
inline std::vector<char> half_plane_mask(int side, bool by_rows, int k) {
    std::vector<char> mask(static_cast<std::size_t>(side) * side, 0);
    for (int r = 0; r < side; ++r)
        for (int c = 0; c < side; ++c)
            mask[static_cast<std::size_t>(r) * side + c] = (by_rows ? r : c) < k ? 1 : 0;
    return mask;
}

inline std::string MeraModel::summary() const {
    std::ostringstream os;
    const auto dims = config.level_dims();
    os << "MERA model\n";
    os << "  image " << config.image_height << "x" << config.image_width << " (canvas "
       << config.padded_size() << "x" << config.padded_size() << "), block " << config.block_size
       << " -> " << config.grid_side() << "x" << config.grid_side() << " sites, "
       << config.num_levels() << " levels\n";
    os << "  layout " << to_string(config.layout) << ", boundary " << to_string(config.boundary)
       << ", embedding " << to_string(config.embedding) << " (dim " << config.raw_site_dim()
       << "), sharing " << to_string(config.sharing) << "\n";
    os << "  bond dims:";
    for (int d : dims) os << " " << d;
    os << " -> " << config.num_classes << " classes\n";
    os << "  levels:\n";
    for (std::size_t l = 0; l < levels.size(); ++l) {
        os << "    L" << l << ": grid " << levels[l].grid_side << "x" << levels[l].grid_side
           << ", " << levels[l].plaquettes.size() << " disentanglers, ";
        if (levels[l].isometry_count > 0)
            os << levels[l].isometry_count << " isometries\n";
        else
            os << "top tensor\n";
    }
    os << "  tensors:\n";
    for (std::size_t k = 0; k < params.size(); ++k)
        os << "    " << param_names[k] << "  " << params[k].shape_str() << "  "
           << params[k].size() << "\n";
    os << "  total parameters: " << total_parameters() << "\n";
    os << "  schedule: " << schedule.steps.size() << " contractions, max intermediate "
       << static_cast<std::int64_t>(schedule.max_intermediate) << " elements\n";
    return os.str();
}

} // namespace tnmera
