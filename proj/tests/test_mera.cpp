#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "oracles.hpp"
#include "tnmera/gradcheck.hpp"
#include "tnmera/mera.hpp"

using namespace tnmera;

namespace {

MeraConfig small_config(int img, int b, int chi, int classes, Layout layout = Layout::Offset) {
    MeraConfig cfg;
    cfg.image_height = cfg.image_width = img;
    cfg.block_size = b;
    cfg.bond_dim = chi;
    cfg.num_classes = classes;
    cfg.init_mode = InitMode::Qr;
    cfg.layout = layout;
    return cfg;
}

ImageSample random_image(int h, int w, std::uint64_t seed, int label = 0) {
    ImageSample img(h, w, label);
    Rng rng(seed);
    for (auto& p : img.pixels) p = rng.uniform();
    return img;
}

} // namespace

TEST_CASE("build: 32x32 b=4 offset layout matches the layout arithmetic") {
    MeraConfig cfg = small_config(32, 4, 4, 10);
    MeraModel m = build(cfg, 1);
    REQUIRE(cfg.grid_side() == 8);
    REQUIRE(cfg.num_levels() == 3);
    REQUIRE(m.levels.size() == 3);
    // isometry grids 16, 4, then the top tensor
    REQUIRE(m.levels[0].isometry_count == 16);
    REQUIRE(m.levels[1].isometry_count == 4);
    REQUIRE(m.levels[2].isometry_count == 0);
    // interior offset plaquettes per level: 9, 1, 0
    REQUIRE(m.levels[0].plaquettes.size() == 9);
    REQUIRE(m.levels[1].plaquettes.size() == 1);
    REQUIRE(m.levels[2].plaquettes.size() == 0);
    REQUIRE(m.param_index("top") >= 0);
    // disentangler legs: rank 8; isometries rank 5 with out extent chi
    const Tensor& u = m.params[static_cast<std::size_t>(m.param_index("L0.u[1,1]"))];
    REQUIRE(u.rank() == 8);
    const Tensor& w = m.params[static_cast<std::size_t>(m.param_index("L1.w[0,0]"))];
    REQUIRE(w.rank() == 5);
    REQUIRE(w.extent(4) == 4);
}

TEST_CASE("build: smallest admissible case 8x8 b=2") {
    MeraModel m = build(small_config(8, 2, 2, 2), 2);
    REQUIRE(m.config.grid_side() == 4);
    REQUIRE(m.levels.size() == 2);
    REQUIRE(m.levels[0].isometry_count == 4);
    REQUIRE(m.levels[0].plaquettes.size() == 1);
    REQUIRE(m.levels[1].plaquettes.size() == 0);
    // schedule reaches a rank-1 output of extent C
    Tensor logits = forward_logits(m, random_image(8, 8, 3));
    REQUIRE(logits.shape == std::vector<std::int64_t>{2});
    REQUIRE(all_finite(logits));
}

TEST_CASE("build: aligned layout plaquettes sit on every block") {
    MeraModel m = build(small_config(32, 4, 4, 10, Layout::Aligned), 1);
    REQUIRE(m.levels[0].plaquettes.size() == 16);
    REQUIRE(m.levels[1].plaquettes.size() == 4);
    REQUIRE(m.levels[2].plaquettes.size() == 1);
}

TEST_CASE("build: periodic boundary keeps wrap-around plaquettes") {
    MeraConfig cfg = small_config(32, 4, 3, 4);
    cfg.boundary = Boundary::Periodic;
    MeraModel m = build(cfg, 1);
    REQUIRE(m.levels[0].plaquettes.size() == 16);
    REQUIRE(m.levels[1].plaquettes.size() == 4);
    REQUIRE(m.levels[2].plaquettes.size() == 1);
}

TEST_CASE("build: 28x28 needs auto-pad") {
    MeraConfig cfg = small_config(28, 4, 4, 10);
    REQUIRE_THROWS_AS(cfg.validate(), ValidationError);
    cfg.auto_pad = true;
    cfg.validate();
    REQUIRE(cfg.padded_size() == 32);
    MeraModel m = build(cfg, 1);
    Tensor logits = forward_logits(m, random_image(28, 28, 4));
    REQUIRE(logits.size() == 10);
}

TEST_CASE("build: config validation errors") {
    REQUIRE_THROWS_AS(small_config(8, 2, 1, 2).validate(), ValidationError); // chi < 2
    REQUIRE_THROWS_AS(small_config(8, 2, 2, 1).validate(), ValidationError); // C < 2
    REQUIRE_THROWS_AS(small_config(8, 2, 2, 17).validate(), ValidationError); // C > chi^4
    REQUIRE_THROWS_AS(small_config(12, 4, 2, 2).validate(), ValidationError); // 3x3 grid
}

TEST_CASE("build: per-layer sharing deduplicates parameters") {
    MeraConfig cfg = small_config(32, 4, 3, 4);
    cfg.sharing = WeightSharing::PerLayer;
    MeraModel m = build(cfg, 5);
    // embed, u0, w0, u1, w1, top (L2 has no offset plaquettes)
    REQUIRE(m.params.size() == 6);
    MeraConfig dense = cfg;
    dense.sharing = WeightSharing::None;
    MeraModel md = build(dense, 5);
    REQUIRE(md.params.size() == 64 + 9 + 16 + 1 + 4 + 1);
    // schedules have identical step structure
    REQUIRE(md.schedule.steps.size() == m.schedule.steps.size());
}

TEST_CASE("embed: flatten_bias examples") {
    MeraConfig cfg = small_config(8, 2, 2, 2);
    ImageSample black(8, 8);
    SiteGrid g = embed(black, cfg);
    REQUIRE(g.side == 4);
    for (const auto& s : g.sites) {
        REQUIRE(s.shape == std::vector<std::int64_t>{5});
        REQUIRE(s.data == std::vector<double>{0, 0, 0, 0, 1});
    }

    ImageSample img(8, 8);
    img.at(0, 0) = 0.5;
    img.at(0, 1) = 1.0;
    img.at(1, 0) = 0.0;
    img.at(1, 1) = 0.25;
    REQUIRE(embed(img, cfg).at(0, 0).data == std::vector<double>{0.5, 1.0, 0.0, 0.25, 1});
}

TEST_CASE("embed: pixel_map has unit norm per pixel") {
    MeraConfig cfg = small_config(8, 2, 2, 2);
    cfg.embedding = EmbeddingKind::PixelMap;
    ImageSample img(8, 8);
    img.at(0, 0) = 0.0;
    img.at(0, 1) = 1.0;
    SiteGrid g = embed(img, cfg);
    const Tensor& v = g.at(0, 0);
    REQUIRE(v.shape == std::vector<std::int64_t>{8});
    REQUIRE(std::abs(v[0] - 1.0) <= 1e-15); // cos(0)
    REQUIRE(std::abs(v[1] - 0.0) <= 1e-15); // sin(0)
    REQUIRE(std::abs(v[2] - 0.0) <= 1e-12); // cos(pi/2)
    REQUIRE(std::abs(v[3] - 1.0) <= 1e-15); // sin(pi/2)
    for (int px = 0; px < 4; ++px) {
        const double n = v[2 * px] * v[2 * px] + v[2 * px + 1] * v[2 * px + 1];
        REQUIRE(std::abs(n - 1.0) <= 1e-14);
    }
}

TEST_CASE("embed: rejects pixels outside [0,1] and geometry mismatch") {
    MeraConfig cfg = small_config(8, 2, 2, 2);
    ImageSample img(8, 8);
    img.at(3, 3) = 1.5;
    REQUIRE_THROWS_AS(embed(img, cfg), ValidationError);
    REQUIRE_THROWS_AS(embed(ImageSample(6, 6), cfg), ValidationError);
}

TEST_CASE("constraint residuals at init: qr and identity_noise, both layouts") {
    for (auto layout : {Layout::Offset, Layout::Aligned}) {
        for (auto mode : {InitMode::Qr, InitMode::IdentityNoise}) {
            MeraConfig cfg = small_config(16, 2, 3, 4, layout);
            cfg.init_mode = mode;
            cfg.init_std = 1e-4;
            MeraModel m = build(cfg, 11);
            REQUIRE(m.max_constraint_residual() <= 1e-12);
        }
    }
}

TEST_CASE("embedders are isometric at init in constrained modes") {
    MeraModel m = build(small_config(8, 2, 2, 2), 13);
    const Tensor& e = m.params[0];
    REQUIRE(isometry_residual(e, e.extent(0), e.extent(1)) <= 1e-12);
}

TEST_CASE("forward: linear in the top tensor") {
    MeraModel m = build(small_config(8, 2, 3, 3), 21);
    ImageSample img = random_image(8, 8, 22);
    Tensor base = forward_logits(m, img);
    scale_inplace(m.params[static_cast<std::size_t>(m.param_index("top"))], 3.25);
    Tensor scaled_logits = forward_logits(m, img);
    for (std::int64_t i = 0; i < base.size(); ++i) {
        const double want = 3.25 * base[i];
        REQUIRE(std::abs(scaled_logits[i] - want) <=
                1e-12 * std::max({std::abs(want), std::abs(base[i]), 1e-30}));
    }
}

TEST_CASE("forward: zero top tensor gives zero logits and uniform softmax") {
    MeraModel m = build(small_config(8, 2, 2, 2), 23);
    auto& top = m.params[static_cast<std::size_t>(m.param_index("top"))];
    std::fill(top.data.begin(), top.data.end(), 0.0);
    Tensor logits = forward_logits(m, random_image(8, 8, 24));
    REQUIRE(max_abs(logits) == 0.0);
    auto lr = softmax_cross_entropy(logits, 0);
    REQUIRE(std::abs(lr.probs[0] - 0.5) <= 1e-15);
    REQUIRE(predict_from_logits(logits) == 0); // tie rule
}

TEST_CASE("forward: permuting the class leg permutes logits exactly") {
    MeraModel m = build(small_config(8, 2, 2, 4), 25);
    ImageSample img = random_image(8, 8, 26);
    Tensor base = forward_logits(m, img);
    // cyclic shift on the class leg
    auto& top = m.params[static_cast<std::size_t>(m.param_index("top"))];
    Tensor rotated = top;
    const std::int64_t c = 4;
    for (std::int64_t i = 0; i < top.size(); i += c)
        for (std::int64_t k = 0; k < c; ++k) rotated.data[i + (k + 1) % c] = top.data[i + k];
    top = rotated;
    Tensor moved = forward_logits(m, img);
    for (std::int64_t k = 0; k < c; ++k) REQUIRE(moved[(k + 1) % c] == base[k]);
}

TEST_CASE("predict: argmax with lowest-index tie rule") {
    REQUIRE(predict_from_logits(Tensor({3}, {0.1, 2.0, -1.0})) == 1);
    REQUIRE(predict_from_logits(Tensor({4}, {0.5, 0.5, 0.5, 0.5})) == 0);
    REQUIRE(predict_from_logits(Tensor({3}, {1.0, 2.0, 2.0})) == 1);

    Rng rng(27);
    for (int t = 0; t < 100; ++t) {
        Tensor z({5});
        for (auto& v : z.data) v = rng.gaussian();
        const auto probs = softmax_cross_entropy(z, 0).probs;
        int best = 0;
        for (std::int64_t i = 1; i < 5; ++i)
            if (probs[i] > probs[best]) best = static_cast<int>(i);
        REQUIRE(predict_from_logits(z) == best);
    }
}

TEST_CASE("record_forward: taped equals untaped bit-exactly, replay stable") {
    for (auto layout : {Layout::Offset, Layout::Aligned}) {
        MeraModel m = build(small_config(8, 2, 3, 3, layout), 31);
        ImageSample img = random_image(8, 8, 32);
        Tensor plain = forward_logits(m, img);
        ForwardRecord fr = record_forward(m, img);
        REQUIRE(fr.tape.value(fr.logits_node).data == plain.data);
        REQUIRE(fr.tape.replay(fr.logits_node).data == plain.data);
    }
}

TEST_CASE("gradcheck: offset default configuration, five seeds") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        MeraModel m = build(small_config(8, 2, 2, 2), seed);
        ImageSample img = gradcheck_image(8, 8, seed ^ 0xABCD, 1);
        condition_for_gradcheck(m, img, seed * 977 + 13);
        auto rep = gradient_check(m, img, 1, 1e-5, 1e-6);
        INFO("seed " << seed << " max rel " << rep.max_rel_err);
        REQUIRE(rep.pass);
    }
}

TEST_CASE("gradcheck: aligned layout") {
    for (std::uint64_t seed : {1, 2, 3}) {
        MeraModel m = build(small_config(8, 2, 2, 2, Layout::Aligned), seed);
        ImageSample img = gradcheck_image(8, 8, seed ^ 0x1234, 0);
        condition_for_gradcheck(m, img, seed * 31 + 5);
        auto rep = gradient_check(m, img, 0, 1e-5, 1e-6);
        INFO("seed " << seed << " max rel " << rep.max_rel_err);
        REQUIRE(rep.pass);
    }
}

TEST_CASE("gradcheck: three-level network on an 8x8 input (b=1)") {
    MeraModel m = build(small_config(8, 1, 2, 2), 41);
    REQUIRE(m.config.num_levels() == 3);
    REQUIRE(m.total_parameters() <= 50000);
    ImageSample img = gradcheck_image(8, 8, 42, 1);
    condition_for_gradcheck(m, img, 43);
    auto rep = gradient_check(m, img, 1, 1e-5, 1e-6);
    INFO("max rel " << rep.max_rel_err << " over " << rep.checked);
    REQUIRE(rep.pass);
}

TEST_CASE("gradcheck: per-layer sharing accumulates instance gradients") {
    MeraConfig cfg = small_config(8, 2, 2, 2, Layout::Aligned);
    cfg.sharing = WeightSharing::PerLayer;
    MeraModel m = build(cfg, 44);
    ImageSample img = gradcheck_image(8, 8, 45, 0);
    condition_for_gradcheck(m, img, 46);
    auto rep = gradient_check(m, img, 0, 1e-5, 1e-6);
    INFO("max rel " << rep.max_rel_err);
    REQUIRE(rep.pass);
}

TEST_CASE("negative control: corrupted gradient fails the check") {
    MeraModel m = build(small_config(8, 2, 2, 2), 47);
    ImageSample img = gradcheck_image(8, 8, 48, 1);
    condition_for_gradcheck(m, img, 49);
    SampleResult base = grad_sample(m, img, 1);
    // corrupt one entry by 1%
    Tensor& g = base.grads.grads[static_cast<std::size_t>(m.param_index("top"))];
    std::int64_t worst = 0;
    for (std::int64_t i = 0; i < g.size(); ++i)
        if (std::abs(g[i]) > std::abs(g[worst])) worst = i;
    const double truth = g[worst];
    const double corrupted = truth * 1.01;
    const double h = 1e-5;
    auto& top = m.params[static_cast<std::size_t>(m.param_index("top"))];
    const double saved = top[worst];
    top[worst] = saved + h;
    const double lp = softmax_cross_entropy(forward_logits(m, img), 1).loss;
    top[worst] = saved - h;
    const double lm = softmax_cross_entropy(forward_logits(m, img), 1).loss;
    top[worst] = saved;
    const double fd = (lp - lm) / (2 * h);
    const double rel = std::abs(fd - corrupted) / std::max({std::abs(fd), std::abs(corrupted), 1e-12});
    REQUIRE(rel > 1e-6); // the checker detects the corruption
    const double rel_true = std::abs(fd - truth) / std::max({std::abs(fd), std::abs(truth), 1e-12});
    REQUIRE(rel_true <= 1e-6);
}

TEST_CASE("capacity: empty and full masks give zero") {
    MeraModel m = build(small_config(8, 2, 2, 2), 51);
    std::vector<char> none(16, 0), all(16, 1);
    REQUIRE(entanglement_capacity(m, none) == 0.0);
    REQUIRE(entanglement_capacity(m, all) == 0.0);
    REQUIRE_THROWS_AS(entanglement_capacity(m, std::vector<char>(7, 0)), ValidationError);
}

TEST_CASE("capacity: single site is bounded by its leg") {
    MeraConfig cfg = small_config(8, 2, 4, 2); // e0 = min(4, 5) = 4
    MeraModel m = build(cfg, 52);
    std::vector<char> mask(16, 0);
    mask[5] = 1; // interior site
    REQUIRE(std::abs(entanglement_capacity(m, mask) - 2.0) <= 1e-9); // log2(4)
}

TEST_CASE("capacity: matches the Edmonds-Karp oracle on assorted cuts") {
    for (auto layout : {Layout::Offset, Layout::Aligned}) {
        MeraConfig cfg = small_config(16, 2, 4, 2, layout);
        MeraModel m = build(cfg, 53);
        const int side = cfg.grid_side();
        const BondGraph& bg = m.bonds;

        auto oracle_cut = [&](const std::vector<char>& mask) {
            const int n = bg.num_vertices + 2;
            std::vector<std::vector<double>> cap(n, std::vector<double>(n, 0.0));
            const int src = bg.num_vertices, sink = bg.num_vertices + 1;
            for (int s = 0; s < bg.num_sites; ++s) {
                if (mask[static_cast<std::size_t>(s)])
                    cap[src][s] = 1e18;
                else
                    cap[s][sink] = 1e18;
            }
            cap[bg.top_vertex][sink] = 1e18;
            for (const auto& e : bg.edges) {
                cap[e.a][e.b] += e.bits;
                cap[e.b][e.a] += e.bits;
            }
            return oracle::ek_max_flow(cap, src, sink);
        };

        // half planes and a block corner
        std::vector<std::vector<char>> masks;
        masks.push_back(half_plane_mask(side, true, side / 2));
        masks.push_back(half_plane_mask(side, false, side / 2));
        masks.push_back(half_plane_mask(side, false, 1));
        std::vector<char> corner(static_cast<std::size_t>(side) * side, 0);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) corner[static_cast<std::size_t>(r) * side + c] = 1;
        masks.push_back(corner);

        for (const auto& mask : masks) {
            const double got = entanglement_capacity(m, mask);
            const double want = oracle_cut(mask);
            INFO(to_string(layout));
            REQUIRE(std::abs(got - want) <= 1e-9);
            // uniform chi=4 bonds: capacity is an even number of bits
            REQUIRE(std::abs(got / 2.0 - std::round(got / 2.0)) <= 1e-9);
        }
    }
}

TEST_CASE("capacity: offset disentanglers raise the half-plane capacity over a bare tree") {
    MeraConfig tree = small_config(16, 2, 4, 2, Layout::Aligned);
    MeraConfig mera = small_config(16, 2, 4, 2, Layout::Offset);
    MeraModel mt = build(tree, 54);
    MeraModel mm = build(mera, 54);
    const auto mask = half_plane_mask(8, false, 4);
    REQUIRE(entanglement_capacity(mm, mask) > entanglement_capacity(mt, mask));
}

TEST_CASE("offset layout beyond the exact-contraction budget refuses forward") {
    MeraConfig cfg = small_config(64, 4, 4, 2);
    cfg.init_mode = InitMode::IdentityNoise;
    cfg.init_std = 0.0;
    MeraModel m = build(cfg, 55); // build succeeds: structure + residuals usable
    REQUIRE(m.config.grid_side() == 16);
    REQUIRE(m.schedule.max_intermediate > static_cast<double>(cfg.contraction_budget));
    REQUIRE_THROWS_AS(forward_logits(m, random_image(64, 64, 56)), ValidationError);
    // aligned at the same size contracts fine
    MeraConfig ok = small_config(64, 4, 4, 2, Layout::Aligned);
    ok.init_mode = InitMode::IdentityNoise;
    ok.init_std = 0.0;
    MeraModel ma = build(ok, 55);
    REQUIRE(all_finite(forward_logits(ma, random_image(64, 64, 56))));
}

TEST_CASE("translation: shared tree with identity disentanglers is block-equivariant") {
    // Identity disentanglers + per-layer sharing + periodic boundary: translating
    // the image by one block translates the level-0 site outputs exactly; logits
    // agree when the top tensor respects the induced leg permutation.
    MeraConfig cfg = small_config(8, 2, 2, 2, Layout::Aligned);
    cfg.sharing = WeightSharing::PerLayer;
    cfg.boundary = Boundary::Periodic;
    MeraModel m = build(cfg, 57);

    // fix all disentanglers to the identity
    for (std::size_t k = 0; k < m.params.size(); ++k) {
        if (m.param_names[k].find(".u") == std::string::npos) continue;
        Tensor& u = m.params[k];
        const std::int64_t d = u.extent(0) * u.extent(1) * u.extent(2) * u.extent(3);
        Tensor eye({d, d});
        for (std::int64_t i = 0; i < d; ++i) eye.data[static_cast<std::size_t>(i * d + i)] = 1.0;
        u = reshape(eye, u.shape);
    }

    ImageSample img = random_image(8, 8, 58);
    ImageSample shifted(8, 8, img.label);
    const int shift = 2 * cfg.block_size; // one level-1 block, the tree period
    for (int r = 0; r < 8; ++r)
        for (int c = 0; c < 8; ++c) shifted.at(r, (c + shift) % 8) = img.at(r, c);

    // Site outputs at the first level translate exactly: verify through embed +
    // shared embedder contraction.
    SiteGrid g0 = embed(img, cfg);
    SiteGrid g1 = embed(shifted, cfg);
    const int sshift = shift / cfg.block_size;
    for (int r = 0; r < g0.side; ++r)
        for (int c = 0; c < g0.side; ++c)
            REQUIRE(g1.at(r, (c + sshift) % g0.side).data == g0.at(r, c).data);

    // The induced permutation on the final 2x2 grid swaps the two columns, i.e.
    // top legs (0,1)(2,3). Symmetrize the top under that transposition.
    Tensor& top = m.params[static_cast<std::size_t>(m.param_index("top"))];
    Tensor sym = scaled(permute(top, {1, 0, 3, 2, 4}), 0.5);
    axpy(sym, 0.5, top);
    top = sym;

    Tensor a = forward_logits(m, img);
    Tensor b = forward_logits(m, shifted);
    for (std::int64_t i = 0; i < a.size(); ++i) REQUIRE(std::abs(a[i] - b[i]) <= 1e-13);
}

TEST_CASE("summary lists every tensor and the totals") {
    MeraModel m = build(small_config(8, 2, 2, 2), 59);
    const std::string s = m.summary();
    for (const auto& name : m.param_names) REQUIRE(s.find(name) != std::string::npos);
    REQUIRE(s.find("total parameters: " + std::to_string(m.total_parameters())) !=
            std::string::npos);
    REQUIRE(s.find("4x4 sites") != std::string::npos);
}

TEST_CASE("shape audit holds for admissible configs up to 64x64") {
    for (int img : {8, 16, 32, 64}) {
        for (int b : {2, 4, 8}) {
            if (img / b < 2 || img % b != 0) continue;
            for (auto layout : {Layout::Offset, Layout::Aligned}) {
                MeraConfig cfg = small_config(img, b, 2, 2, layout);
                cfg.init_mode = InitMode::IdentityNoise;
                cfg.init_std = 0.0;
                MeraModel m = build(cfg, 61); // wire() audits every bond extent
                REQUIRE(m.schedule.output >= 0);
                REQUIRE(!m.bonds.edges.empty());
            }
        }
    }
}
