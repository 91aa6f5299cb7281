// tnmera command-line tool: train | eval | gradcheck | entropy | gen-needle |
// gen-digits | summary | capacity.
//
// Exit codes: 0 success, 1 validation error, 2 numerical failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tnmera/checkpoint.hpp"
#include "tnmera/digits.hpp"
#include "tnmera/entanglement.hpp"
#include "tnmera/errors.hpp"
#include "tnmera/gradcheck.hpp"
#include "tnmera/idx.hpp"
#include "tnmera/mera.hpp"
#include "tnmera/needle.hpp"
#include "tnmera/pgm.hpp"
#include "tnmera/trainer.hpp"

namespace fs = std::filesystem;
using namespace tnmera;

namespace {

struct DataFlags {
    std::string images, labels, dataset_dir;
    int take = 0;
    int pad_to = 0;
    int downsample_to = 0;
    int skip = 0;
};

void add_data_flags(CLI::App* cmd, DataFlags& d) {
    cmd->add_option("--images", d.images, "IDX image file");
    cmd->add_option("--labels", d.labels, "IDX label file");
    cmd->add_option("--dataset", d.dataset_dir, "Dataset directory (labels.csv + PGM files)");
    cmd->add_option("--skip", d.skip, "Skip the first N samples");
    cmd->add_option("--take", d.take, "Use at most N samples (after --skip)");
    cmd->add_option("--pad-to", d.pad_to, "Zero-pad (centered) to this square size");
    cmd->add_option("--downsample-to", d.downsample_to, "Block-average to this square size");
}

std::vector<ImageSample> load_data(const DataFlags& d) {
    std::vector<ImageSample> data;
    if (!d.dataset_dir.empty()) {
        data = load_dataset_dir(d.dataset_dir);
    } else if (!d.images.empty() && !d.labels.empty()) {
        data = load_idx(d.images, d.labels);
    } else {
        throw ValidationError("provide either --dataset or --images/--labels");
    }
    if (d.skip > 0) {
        if (d.skip >= static_cast<int>(data.size()))
            throw ValidationError("--skip exceeds the dataset size");
        data.erase(data.begin(), data.begin() + d.skip);
    }
    if (d.take > 0 && d.take < static_cast<int>(data.size())) data.resize(d.take);
    for (auto& s : data) {
        if (d.pad_to > 0) s = resize_or_pad(s, d.pad_to, d.pad_to, ResizeMode::PadZero);
        if (d.downsample_to > 0)
            s = resize_or_pad(s, d.downsample_to, d.downsample_to, ResizeMode::DownsampleMean);
    }
    return data;
}

struct ModelFlags {
    int block_size = 4;
    int bond_dim = 4;
    int classes = 10;
    std::string boundary = "open";
    std::string embedding = "flatten_bias";
    std::string sharing = "none";
    std::string layout = "offset";
    std::string init_mode = "noise";
    double init_std = 1e-4;
};

void add_model_flags(CLI::App* cmd, ModelFlags& m) {
    cmd->add_option("--block-size", m.block_size, "Pixels per side of a bottom region (b)");
    cmd->add_option("--bond-dim", m.bond_dim, "Internal leg extent (chi)");
    cmd->add_option("--classes", m.classes, "Number of classes (C)");
    cmd->add_option("--boundary", m.boundary, "open | periodic");
    cmd->add_option("--embedding", m.embedding, "flatten_bias | pixel_map");
    cmd->add_option("--sharing", m.sharing, "Weight sharing: none | per_layer");
    cmd->add_option("--layout", m.layout, "Disentangler layout: offset | aligned");
    cmd->add_option("--init-mode", m.init_mode, "qr | noise | identity_noise");
    cmd->add_option("--init-std", m.init_std, "Init noise scale");
}

MeraConfig to_config(const ModelFlags& f, int image_h, int image_w) {
    MeraConfig c;
    c.image_height = image_h;
    c.image_width = image_w;
    c.block_size = f.block_size;
    c.bond_dim = f.bond_dim;
    c.num_classes = f.classes;
    c.boundary = parse_boundary(f.boundary);
    c.embedding = parse_embedding(f.embedding);
    c.sharing = parse_sharing(f.sharing);
    c.layout = parse_layout(f.layout);
    c.init_mode = parse_init_mode(f.init_mode);
    c.init_std = f.init_std;
    c.auto_pad = true;
    return c;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write " + path.string());
    out << text;
}

int run_train(const DataFlags& data_flags, const ModelFlags& model_flags, TrainOptions& opt,
              const std::string& out_dir) {
    auto data = load_data(data_flags);
    if (data.empty()) throw ValidationError("train: empty dataset");
    MeraConfig cfg = to_config(model_flags, data[0].height, data[0].width);
    cfg.validate();

    MeraModel model = build(cfg, opt.seed);
    std::cerr << model.summary();
    TrainResult result = train_model(model, data, opt);

    fs::create_directories(out_dir);
    write_text(fs::path(out_dir) / "metrics.csv", metrics_csv(result.rows));
    checkpoint_save(model, (fs::path(out_dir) / "checkpoint.tnm").string());

    std::string echo;
    echo += "block-size = " + std::to_string(cfg.block_size) + "\n";
    echo += "bond-dim = " + std::to_string(cfg.bond_dim) + "\n";
    echo += "classes = " + std::to_string(cfg.num_classes) + "\n";
    echo += "boundary = " + to_string(cfg.boundary) + "\n";
    echo += "embedding = " + to_string(cfg.embedding) + "\n";
    echo += "sharing = " + to_string(cfg.sharing) + "\n";
    echo += "layout = " + to_string(cfg.layout) + "\n";
    echo += "init-mode = " + to_string(cfg.init_mode) + "\n";
    echo += "init-std = " + std::to_string(cfg.init_std) + "\n";
    echo += "lr = " + std::to_string(opt.lr) + "\n";
    echo += "optimizer = " + opt.optimizer + "\n";
    echo += "batch-size = " + std::to_string(opt.batch_size) + "\n";
    echo += "epochs = " + std::to_string(opt.epochs) + "\n";
    echo += "seed = " + std::to_string(opt.seed) + "\n";
    echo += "val-fraction = " + std::to_string(opt.val_fraction) + "\n";
    write_text(fs::path(out_dir) / "config.txt", echo);

    const auto& last = result.rows.back();
    std::cout << "trained " << opt.epochs << " epochs; final loss " << last.loss
              << ", train acc " << last.train_acc;
    if (last.val_acc >= 0) std::cout << ", val acc " << last.val_acc;
    std::cout << "\nrun directory: " << out_dir << "\n";
    return 0;
}

int run_eval(const std::string& ckpt, const DataFlags& data_flags, const std::string& out_dir) {
    MeraModel model = checkpoint_load(ckpt);
    auto data = load_data(data_flags);
    if (data.empty()) throw ValidationError("eval: empty dataset");
    if (data[0].height != model.config.image_height || data[0].width != model.config.image_width)
        throw ValidationError("eval: dataset geometry " + std::to_string(data[0].height) + "x" +
                              std::to_string(data[0].width) + " does not match checkpoint " +
                              std::to_string(model.config.image_height) + "x" +
                              std::to_string(model.config.image_width));
    EvalResult r = evaluate(model, data);
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(fs::path(out_dir) / "confusion.csv", confusion_csv(r));
    }
    std::printf("accuracy %.6f over %zu samples\n", r.accuracy, data.size());
    return 0;
}

int run_gradcheck(int size, const ModelFlags& model_flags, std::uint64_t seed, int num_seeds,
                  double h, double tol) {
    double worst = 0.0;
    bool all_pass = true;
    for (int k = 0; k < num_seeds; ++k) {
        const std::uint64_t s = seed + static_cast<std::uint64_t>(k);
        MeraConfig cfg = to_config(model_flags, size, size);
        cfg.init_mode = InitMode::Qr; // structure only; values are re-randomized below
        cfg.validate();
        MeraModel m = build(cfg, s);
        if (m.total_parameters() > 50000)
            throw ValidationError("gradcheck: configuration exceeds 5e4 parameters; "
                                  "finite differences would be impractical");
        ImageSample img = gradcheck_image(size, size, s ^ 0x9E3779B9u, 0);
        condition_for_gradcheck(m, img, s * 1000003 + 17);
        const int label = static_cast<int>(s % static_cast<std::uint64_t>(cfg.num_classes));
        GradCheckReport rep = gradient_check(m, img, label, h, tol);
        std::printf("seed %llu: max rel err %.3e over %lld entries -> %s\n",
                    static_cast<unsigned long long>(s), rep.max_rel_err,
                    static_cast<long long>(rep.checked), rep.pass ? "pass" : "FAIL");
        if (!rep.pass)
            std::printf("  worst: %s[%lld] analytic %.9e vs numeric %.9e\n",
                        rep.worst_param.c_str(), static_cast<long long>(rep.worst_index),
                        rep.analytic, rep.numeric);
        worst = std::max(worst, rep.max_rel_err);
        all_pass = all_pass && rep.pass;
    }
    std::printf("worst over %d seed(s): %.3e (tolerance %.1e)\n", num_seeds, worst, tol);
    if (!all_pass) {
        std::fprintf(stderr, "gradient check FAILED\n");
        return 2;
    }
    return 0;
}

int run_entropy(const std::string& function, int height, int width, int r, std::uint64_t seed,
                const std::string& cuts_arg, const std::string& out_path,
                const std::vector<double>& disk_radii) {
    if (height * width > kMaxFunctionPixels)
        throw ValidationError("entropy: grid exceeds " + std::to_string(kMaxFunctionPixels) +
                              " pixels");
    if (function == "disk") {
        std::vector<double> radii = disk_radii;
        if (radii.empty()) radii = {0.5, 1.0, 1.5, 2.0};
        const auto rows = disk_object_scan(height, width, r, radii, seed);
        const std::string csv = disk_scan_csv(rows);
        if (out_path.empty())
            std::cout << csv;
        else
            write_text(out_path, csv);
        return 0;
    }

    std::vector<double> table;
    if (function == "constant") {
        table.assign(std::size_t(1) << (height * width), 1.0);
    } else if (function == "bell") {
        table.assign(std::size_t(1) << (height * width), 0.0);
        for (std::uint32_t s = 0; s < table.size(); ++s)
            if (((s >> 0) & 1u) == ((s >> 1) & 1u)) table[s] = 1.0;
    } else if (function == "local") {
        Rng rng(seed);
        table = random_local_function(height, width, r, rng);
    } else {
        throw ValidationError("entropy: unknown function " + function +
                              " (constant | bell | local | disk)");
    }

    std::vector<StraightCut> cuts;
    if (cuts_arg == "all" || cuts_arg.empty()) {
        cuts = all_straight_cuts(height, width);
    } else {
        std::stringstream ss(cuts_arg);
        std::string tok;
        while (std::getline(ss, tok, ',')) {
            if (tok.size() < 2 || (tok[0] != 'v' && tok[0] != 'h'))
                throw ValidationError("entropy: cut spec must look like v1 or h2");
            cuts.push_back({tok[0] == 'v', std::stoi(tok.substr(1))});
        }
    }

    AreaLawReport report = area_law_check(table, height, width, r, cuts);
    const std::string csv = report.to_csv();
    if (out_path.empty())
        std::cout << csv;
    else
        write_text(out_path, csv);
    for (const auto& row : report.rows)
        std::fprintf(stderr, "cut %s: S = %.6f bits, bound %.1f bits, %s\n", row.cut_id.c_str(),
                     row.entropy_bits, row.bound_bits, row.ok ? "ok" : "VIOLATION");
    if (!report.all_ok()) {
        std::fprintf(stderr, "area-law bound violated\n");
        return 2;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    // Batch-level parallelism is explicit (--threads); nested BLAS threading
    // would oversubscribe and break run-to-run determinism.
    setenv("OPENBLAS_NUM_THREADS", "1", 0);

    CLI::App app{"tnmera: 2D MERA tensor-network image classifier and entanglement lab"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Config file (key = value); flags take precedence");

    // train
    auto* train = app.add_subcommand("train", "Train a model");
    DataFlags train_data;
    ModelFlags train_model_flags;
    TrainOptions opt;
    std::string train_out = "run";
    bool single_thread = false;
    add_data_flags(train, train_data);
    add_model_flags(train, train_model_flags);
    train->add_option("--lr", opt.lr, "Learning rate");
    train->add_option("--optimizer", opt.optimizer, "sgd | adaptive");
    train->add_option("--batch-size", opt.batch_size, "Mini-batch size");
    train->add_option("--epochs", opt.epochs, "Training epochs");
    train->add_option("--seed", opt.seed, "Master RNG seed");
    train->add_option("--val-fraction", opt.val_fraction, "Validation fraction in [0,1)");
    train->add_option("--threads", opt.threads, "Batch-parallel worker count");
    train->add_flag("--single-thread", single_thread,
                    "Serial execution and zeroed wall_ms for bit-reproducible runs");
    train->add_flag("--log-steps", opt.log_steps, "Log per-step rows in metrics.csv");
    train->add_option("--retract-every", opt.retract_every,
                      "Project disentanglers/isometries back onto the isometry set every N steps");
    train->add_option("--out", train_out, "Run output directory");

    // eval
    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    DataFlags eval_data;
    std::string eval_ckpt, eval_out;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
    add_data_flags(eval, eval_data);
    eval->add_option("--out", eval_out, "Directory for confusion.csv");

    // gradcheck
    auto* gradcheck = app.add_subcommand("gradcheck", "Finite-difference gradient certification");
    ModelFlags gc_flags;
    gc_flags.block_size = 2;
    gc_flags.bond_dim = 2;
    gc_flags.classes = 2;
    int gc_size = 8, gc_seeds = 1;
    std::uint64_t gc_seed = 1;
    double gc_h = 1e-5, gc_tol = 1e-6;
    add_model_flags(gradcheck, gc_flags);
    gradcheck->add_option("--size", gc_size, "Square image size");
    gradcheck->add_option("--seed", gc_seed, "First seed");
    gradcheck->add_option("--seeds", gc_seeds, "Number of consecutive seeds");
    gradcheck->add_option("--fd-step", gc_h, "Central-difference step");
    gradcheck->add_option("--tol", gc_tol, "Max relative error tolerance");

    // entropy
    auto* entropy = app.add_subcommand("entropy", "Entanglement-entropy area-law reports");
    std::string en_function = "local", en_cuts = "all", en_out;
    int en_h = 4, en_w = 3, en_r = 1;
    std::uint64_t en_seed = 0;
    std::vector<double> en_radii;
    entropy->add_option("--function", en_function, "constant | bell | local | disk");
    entropy->add_option("--height", en_h, "Grid height in pixels");
    entropy->add_option("--width", en_w, "Grid width in pixels");
    entropy->add_option("--r", en_r, "Interaction radius in pixels");
    entropy->add_option("--seed", en_seed, "RNG seed for random functions");
    entropy->add_option("--cuts", en_cuts, "all or a list like v1,h2");
    entropy->add_option("--disk-radii", en_radii, "Disk radii for --function disk");
    entropy->add_option("--out", en_out, "CSV output path (stdout when omitted)");

    // gen-needle
    auto* gen_needle_cmd = app.add_subcommand("gen-needle", "Generate a NeedleMNIST-style dataset");
    NeedleConfig ncfg;
    std::string gn_src_images, gn_src_labels, gn_out = "needle";
    gen_needle_cmd->add_option("--source-images", gn_src_images, "IDX digit images")->required();
    gen_needle_cmd->add_option("--source-labels", gn_src_labels, "IDX digit labels")->required();
    gen_needle_cmd->add_option("--canvas", ncfg.canvas_size, "Canvas size (64/128 supported)");
    gen_needle_cmd->add_option("--object-digit", ncfg.object_digit, "Digit that defines a positive");
    gen_needle_cmd->add_option("--distractors", ncfg.num_distractors, "Unrelated patches per image");
    gen_needle_cmd->add_option("--count-per-class", ncfg.count_per_class, "Samples per class");
    gen_needle_cmd->add_flag("--allow-overlap", ncfg.allow_overlap, "Permit overlapping patches");
    gen_needle_cmd->add_option("--seed", ncfg.rng_seed, "Master RNG seed");
    gen_needle_cmd->add_option("--out", gn_out, "Output dataset directory");

    // gen-digits
    auto* gen_digits_cmd =
        app.add_subcommand("gen-digits", "Generate a synthetic handwritten-digit IDX pair");
    int gd_count = 1000, gd_canvas = 28;
    std::uint64_t gd_seed = 0;
    std::string gd_out = "digits";
    gen_digits_cmd->add_option("--count", gd_count, "Total samples (balanced over classes)");
    gen_digits_cmd->add_option("--canvas", gd_canvas, "Canvas size");
    gen_digits_cmd->add_option("--seed", gd_seed, "Master RNG seed");
    gen_digits_cmd->add_option("--out", gd_out, "Output directory");

    // summary
    auto* summary = app.add_subcommand("summary", "Print a model architecture summary");
    ModelFlags sm_flags;
    int sm_size = 32;
    std::string sm_ckpt;
    std::uint64_t sm_seed = 0;
    add_model_flags(summary, sm_flags);
    summary->add_option("--image-size", sm_size, "Square image size");
    summary->add_option("--seed", sm_seed, "Init seed");
    summary->add_option("--checkpoint", sm_ckpt, "Summarize a saved checkpoint instead");

    // capacity
    auto* capacity = app.add_subcommand("capacity", "Entanglement capacity across a site cut");
    ModelFlags cap_flags;
    int cap_size = 32;
    std::string cap_cut = "col:half";
    capacity->add_option("--image-size", cap_size, "Square image size");
    add_model_flags(capacity, cap_flags);
    capacity->add_option("--cut", cap_cut, "row:K | col:K | row:half | col:half");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            opt.deterministic = single_thread;
            return run_train(train_data, train_model_flags, opt, train_out);
        }
        if (eval->parsed()) return run_eval(eval_ckpt, eval_data, eval_out);
        if (gradcheck->parsed())
            return run_gradcheck(gc_size, gc_flags, gc_seed, gc_seeds, gc_h, gc_tol);
        if (entropy->parsed())
            return run_entropy(en_function, en_h, en_w, en_r, en_seed, en_cuts, en_out, en_radii);
        if (gen_needle_cmd->parsed()) {
            auto source = load_idx(gn_src_images, gn_src_labels);
            NeedleDataset ds = gen_needle(ncfg, source);
            write_needle_dataset(ds, gn_out);
            std::printf("wrote %zu samples to %s (O2I %.4f%%)\n", ds.samples.size(),
                        gn_out.c_str(), 100.0 * ncfg.o2i_ratio());
            return 0;
        }
        if (gen_digits_cmd->parsed()) {
            auto samples = generate_digits(gd_count, gd_seed, gd_canvas);
            fs::create_directories(gd_out);
            save_idx(samples, (fs::path(gd_out) / "digits-images-idx3-ubyte").string(),
                     (fs::path(gd_out) / "digits-labels-idx1-ubyte").string());
            std::printf("wrote %d digits to %s\n", gd_count, gd_out.c_str());
            return 0;
        }
        if (summary->parsed()) {
            if (!sm_ckpt.empty()) {
                std::cout << checkpoint_load(sm_ckpt).summary();
            } else {
                MeraConfig cfg = to_config(sm_flags, sm_size, sm_size);
                cfg.validate();
                std::cout << build(cfg, sm_seed).summary();
            }
            return 0;
        }
        if (capacity->parsed()) {
            MeraConfig cfg = to_config(cap_flags, cap_size, cap_size);
            cfg.validate();
            MeraModel m = build(cfg, 0);
            const auto colon = cap_cut.find(':');
            if (colon == std::string::npos)
                throw ValidationError("capacity: cut must be row:K or col:K");
            const bool by_rows = cap_cut.substr(0, colon) == "row";
            const std::string karg = cap_cut.substr(colon + 1);
            const int side = cfg.grid_side();
            const int k = karg == "half" ? side / 2 : std::stoi(karg);
            const double bits = entanglement_capacity(m, half_plane_mask(side, by_rows, k));
            std::printf("capacity across %s cut at %d: %.4f bits\n", by_rows ? "row" : "column",
                        k, bits);
            return 0;
        }
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 2;
    }
    return 0;
}
