// Command-line front end: data generation, training, inference, evaluation,
// dispersion/sparsity indices, gradient checking, and the scan benchmark.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include "comma/config.hpp"
#include "comma/gradcheck.hpp"
#include "comma/phantom.hpp"
#include "comma/train.hpp"

namespace fs = std::filesystem;
using namespace comma;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

std::uint64_t seed_or_env(std::uint64_t seed, bool seed_given) {
    if (seed_given) return seed;
    if (const char* env = std::getenv("COMMA_SEED")) return std::strtoull(env, nullptr, 10);
    return seed;
}

std::string find_manifest(const std::string& data) {
    if (fs::is_directory(data)) {
        auto p = fs::path(data) / "manifest.tsv";
        if (!fs::exists(p))
            throw std::runtime_error(strcat_msg("no manifest.tsv under ", data));
        return p.string();
    }
    if (!fs::exists(data)) throw std::runtime_error(strcat_msg("no such data path: ", data));
    return data;
}

struct GenArgs {
    std::string out = "data";
    std::int64_t cases = 10;
    std::uint64_t seed = 7;
    bool seed_given = false;
    std::vector<std::int64_t> size{64, 64, 64};
    std::vector<double> splits{0.8, 0.0, 0.2};
    std::int64_t depth = 4;
    double root_radius = 2.2;
    double radius_decay = 0.75;
    double contrast = 1.0;
    double noise = 0.05;
    double bias = 0.2;
    double decoy_contrast = 0.0;
    std::int64_t workers = 1;
};

int run_gen(const GenArgs& a) {
    PhantomSpec spec;
    spec.extents = {a.size[0], a.size[1], a.size[2]};
    spec.branching_depth = static_cast<int>(a.depth);
    spec.root_radius = a.root_radius;
    spec.radius_decay = a.radius_decay;
    spec.intensity_contrast = a.contrast;
    spec.noise_level = a.noise;
    spec.bias_strength = a.bias;
    spec.decoy_contrast = a.decoy_contrast;
    SplitRatios ratios{a.splits[0], a.splits[1], a.splits[2]};
    auto manifest = make_dataset(a.out, a.cases, spec, ratios, seed_or_env(a.seed, a.seed_given),
                                 a.workers);
    auto counts = split_counts(a.cases, ratios);
    std::cout << "wrote " << manifest.entries.size() << " cases to " << a.out << " (train "
              << counts[0] << ", val " << counts[1] << ", test " << counts[2] << ")\n";
    return kExitOk;
}

struct TrainArgs {
    std::string config_path;
    std::string data;
    std::string out = "run";
    std::vector<std::string> ablate;
    std::vector<std::string> overrides;
    std::int64_t iterations = -1;
    std::uint64_t seed = 0;
    bool seed_given = false;
    bool verbose = false;
};

int run_train(const TrainArgs& a) {
    CommaConfig cfg = a.config_path.empty() ? desk_config() : load_config_file(a.config_path);
    for (const auto& kv : a.overrides) {
        auto eq = kv.find('=');
        check(eq != std::string::npos, strcat_msg("--set expects key=value, got '", kv, "'"));
        apply_config_entry(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    for (const auto& ab : a.ablate) {
        if (ab == "lfe") cfg.ablate.lfe = false;
        else if (ab == "glf") cfg.ablate.glf = false;
        else if (ab == "gloss") cfg.ablate.global_loss = false;
        else if (ab == "randcoord") cfg.ablate.randomize_coords = true;
        else fail(strcat_msg("unknown --ablate value '", ab, "'"));
    }
    if (a.iterations > 0) cfg.iterations = a.iterations;
    if (a.seed_given || std::getenv("COMMA_SEED")) cfg.seed = seed_or_env(a.seed, a.seed_given);

    auto manifest_path = find_manifest(a.data);
    auto train_cases = load_cases(manifest_path, "train");
    auto val_cases = load_cases(manifest_path, "val");
    check(!train_cases.empty(), strcat_msg("manifest ", manifest_path, " has no training cases"));

    CommaNet<float> net(cfg);
    fs::create_directories(a.out);
    {
        std::ofstream cf((fs::path(a.out) / "config.used").string());
        cf << config_to_text(cfg);
    }
    TrainOptions opts;
    opts.out_dir = a.out;
    opts.quiet = !a.verbose;
    auto result = train_model(net, train_cases, val_cases, opts);
    std::cout << "trained " << result.iterations_run << " iterations, final val dice "
              << result.final_val_dice << "\n";
    return kExitOk;
}

struct InferArgs {
    std::string config_path;
    std::string model;
    std::string input;
    std::string output;
    std::string data;
    std::string split = "test";
    std::string out_dir = "pred";
    double threshold = 0.5;
};

int run_infer(const InferArgs& a) {
    CommaConfig cfg = a.config_path.empty() ? desk_config() : load_config_file(a.config_path);
    CommaNet<float> net(cfg);
    check(!a.model.empty(), "infer: --model is required");
    load_checkpoint(a.model, net.reg);
    if (!a.input.empty()) {
        check(!a.output.empty(), "infer: --output required with --input");
        auto vol = read_volume(a.input);
        auto mask = infer_volume(net, vol, a.threshold);
        write_volume(a.output, mask);
        std::cout << "wrote " << a.output << "\n";
        return kExitOk;
    }
    check(!a.data.empty(), "infer: provide --input or --data");
    auto manifest_path = find_manifest(a.data);
    auto manifest = read_manifest(manifest_path);
    fs::path base = fs::path(manifest_path).parent_path();
    fs::create_directories(a.out_dir);
    int n = 0;
    for (const auto& e : manifest.split(a.split)) {
        auto vp = fs::exists(e.volume_path) ? fs::path(e.volume_path) : base / e.volume_path;
        auto vol = read_volume(vp.string());
        auto mask = infer_volume(net, vol, a.threshold);
        auto out = fs::path(a.out_dir) / fs::path(e.mask_path).filename();
        write_volume(out.string(), mask);
        ++n;
    }
    std::cout << "wrote " << n << " predictions to " << a.out_dir << "\n";
    return kExitOk;
}

struct EvalArgs {
    std::string pred_dir;
    std::string gt;  // directory or manifest
    std::string out_csv;
    std::string out_json;
    double tau = 1.0;
    std::string sv_axis;
    std::int64_t sv_threshold = 60;
    std::int64_t workers = 1;
};

int run_eval(const EvalArgs& a) {
    check(!a.pred_dir.empty() && !a.gt.empty(), "eval: --pred and --gt are required");
    std::optional<SmallVesselSplit> sv;
    if (!a.sv_axis.empty()) {
        SmallVesselSplit s;
        check(a.sv_axis == "x" || a.sv_axis == "y" || a.sv_axis == "z",
              strcat_msg("eval: bad --small-vessel-axis '", a.sv_axis, "'"));
        s.axis = a.sv_axis == "x" ? 0 : a.sv_axis == "y" ? 1 : 2;
        s.threshold = a.sv_threshold;
        sv = s;
    }
    // collect (name, pred path, gt path)
    std::vector<std::array<std::string, 3>> pairs;
    if (fs::is_directory(a.gt) && !fs::exists(fs::path(a.gt) / "manifest.tsv")) {
        for (const auto& entry : fs::directory_iterator(a.gt)) {
            if (!entry.is_regular_file()) continue;
            auto name = entry.path().filename().string();
            if (vvol_dtype(entry.path().string()) != 1) continue;
            auto pred = fs::path(a.pred_dir) / name;
            if (fs::exists(pred) && vvol_dtype(pred.string()) == 1)
                pairs.push_back({name, pred.string(), entry.path().string()});
        }
        std::sort(pairs.begin(), pairs.end());
    } else {
        auto manifest_path = find_manifest(a.gt);
        auto manifest = read_manifest(manifest_path);
        fs::path base = fs::path(manifest_path).parent_path();
        for (const auto& e : manifest.entries) {
            auto name = fs::path(e.mask_path).filename().string();
            auto pred = fs::path(a.pred_dir) / name;
            if (!fs::exists(pred)) continue;
            auto gt = fs::exists(e.mask_path) ? fs::path(e.mask_path) : base / e.mask_path;
            pairs.push_back({name, pred.string(), gt.string()});
        }
    }
    check(!pairs.empty(), strcat_msg("eval: no prediction/reference pairs between ", a.pred_dir,
                                     " and ", a.gt));
    std::vector<MetricsReport> rows(pairs.size());
    auto run_range = [&](std::size_t lo, std::size_t hi) {
        for (std::size_t i = lo; i < hi; ++i)
            rows[i] = evaluate_case(pairs[i][0], read_mask(pairs[i][1]), read_mask(pairs[i][2]),
                                    a.tau, sv);
    };
    std::int64_t nw = std::clamp<std::int64_t>(a.workers, 1,
                                               static_cast<std::int64_t>(pairs.size()));
    if (nw <= 1) {
        run_range(0, pairs.size());
    } else {
        std::vector<std::thread> pool;
        for (std::int64_t w = 0; w < nw; ++w)
            pool.emplace_back(run_range, pairs.size() * w / nw, pairs.size() * (w + 1) / nw);
        for (auto& t : pool) t.join();
    }
    std::ostringstream csv;
    csv << metrics_csv_header() << '\n';
    for (const auto& r : rows) csv << metrics_csv_row(r) << '\n';
    if (a.out_csv.empty()) {
        std::cout << csv.str();
    } else {
        std::ofstream os(a.out_csv);
        os << csv.str();
        std::cout << "wrote " << a.out_csv << "\n";
    }
    if (!a.out_json.empty()) {
        std::ofstream os(a.out_json);
        os << metrics_json(rows);
    }
    return kExitOk;
}

int run_indices(const std::vector<std::string>& paths) {
    check(!paths.empty(), "indices: give at least one mask file or directory");
    std::vector<std::string> files;
    for (const auto& p : paths) {
        if (fs::is_directory(p)) {
            for (const auto& entry : fs::directory_iterator(p))
                if (entry.is_regular_file() && vvol_dtype(entry.path().string()) == 1)
                    files.push_back(entry.path().string());
        } else {
            files.push_back(p);
        }
    }
    std::sort(files.begin(), files.end());
    std::cout << "case,si,di\n";
    for (const auto& f : files) {
        auto m = read_mask(f);
        std::cout << fs::path(f).filename().string() << ',' << sparsity_index(m) << ','
                  << dispersion_index(m) << '\n';
    }
    return kExitOk;
}

// Block-by-block finite-difference verification at 64-bit.
int run_gradcheck(std::int64_t seeds, double tol_primitive, double tol_composed) {
    using D = double;
    bool all_ok = true;
    auto report = [&](const std::string& name, const GradCheckReport& rep, double tol) {
        bool ok = rep.ok(tol);
        all_ok = all_ok && ok;
        std::cout << (ok ? "ok   " : "FAIL ") << name << ": max rel err " << rep.max_rel_err
                  << " (tol " << tol << ", " << rep.coords_checked << " coords)\n";
    };
    for (std::int64_t s = 0; s < seeds; ++s) {
        Rng rng(Rng::mix(99, static_cast<std::uint64_t>(s)));
        {
            auto a = Tensor<D>::uniform({3, 4}, rng, -1, 1, true);
            auto b = Tensor<D>::uniform({4, 2}, rng, -1, 1, true);
            report(strcat_msg("matmul seed ", s),
                   gradcheck<D>([&] { return sum(matmul(a, b)); }, {a, b}), tol_primitive);
        }
        {
            auto x = Tensor<D>::uniform({2, 4, 4, 4}, rng, -1, 1, true);
            auto w = Tensor<D>::uniform({3, 2, 3, 3, 3}, rng, -0.3, 0.3, true);
            report(strcat_msg("conv3d seed ", s),
                   gradcheck<D>([&] { return sum(conv3d(x, w, std::int64_t(1), 1)); }, {x, w}),
                   tol_primitive);
        }
        {
            auto x = Tensor<D>::uniform({3, 4, 4, 2}, rng, -2, 2, true);
            report(strcat_msg("instance_norm seed ", s),
                   gradcheck<D>([&] {
                       Rng wr(Rng::mix(55, static_cast<std::uint64_t>(s)));
                       auto w = Tensor<D>::uniform(x.shape(), wr, 0.1, 1.0);
                       return sum(mul(instance_norm(x), w));
                   },
                                {x}),
                   tol_primitive);
        }
        {
            ParamRegistry<D> reg(Rng::mix(7, static_cast<std::uint64_t>(s)));
            CcMambaConfig ccfg;
            ccfg.token_size = 2;
            ccfg.compressed_dim = 8;
            ccfg.state_dim = 4;
            auto blk = CcMambaBlock<D>::make(reg, "g", 4 * 8, ccfg);
            auto f = Tensor<D>::uniform({4, 4, 4, 4}, rng, -1, 1, true);
            report(strcat_msg("ccmamba_block seed ", s),
                   gradcheck<D>([&] { return sum(blk.forward_volume(f)); }, {f}), tol_composed);
        }
    }
    return all_ok ? kExitOk : kExitNumerical;
}

struct BenchArgs {
    std::vector<std::int64_t> lengths{1024, 2048, 4096, 8192, 16384};
    std::int64_t dim = 32;
    std::string out_csv;
    std::uint64_t seed = 17;
};

int run_bench(const BenchArgs& a) {
    auto rows = bench_scan_vs_attention(a.lengths, a.dim, a.seed);
    std::ostringstream os;
    os << "L,scan_ms,attn_ms,scan_bytes,attn_bytes\n";
    for (const auto& r : rows)
        os << r.length << ',' << r.scan_ms << ',' << r.attn_ms << ',' << r.scan_bytes << ','
           << r.attn_bytes << '\n';
    if (a.out_csv.empty()) {
        std::cout << os.str();
    } else {
        std::ofstream f(a.out_csv);
        f << os.str();
        std::cout << "wrote " << a.out_csv << "\n";
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"COMMA: coordinate-aware dual-branch vessel segmentation"};
    app.require_subcommand(1);

    GenArgs gen;
    auto* sc_gen = app.add_subcommand("gen-data", "generate a synthetic phantom dataset");
    sc_gen->add_option("--out", gen.out, "output directory");
    sc_gen->add_option("--cases", gen.cases, "number of cases");
    auto* gen_seed = sc_gen->add_option("--seed", gen.seed, "dataset seed");
    sc_gen->add_option("--size", gen.size, "volume extents H,W,D")->delimiter(',')->expected(3);
    sc_gen->add_option("--splits", gen.splits, "train,val,test ratios")
        ->delimiter(',')
        ->expected(3);
    sc_gen->add_option("--depth", gen.depth, "branching depth");
    sc_gen->add_option("--root-radius", gen.root_radius, "root tube radius (voxels)");
    sc_gen->add_option("--radius-decay", gen.radius_decay, "radius decay per branch");
    sc_gen->add_option("--contrast", gen.contrast, "vessel intensity contrast");
    sc_gen->add_option("--noise", gen.noise, "additive noise sigma");
    sc_gen->add_option("--bias", gen.bias, "bias field strength");
    sc_gen->add_option("--decoy-contrast", gen.decoy_contrast,
                       "mirrored unlabeled decoy tree contrast (0 = off)");
    sc_gen->add_option("--workers", gen.workers, "parallel case generation");

    TrainArgs tr;
    auto* sc_train = app.add_subcommand("train", "train a model");
    sc_train->add_option("--config", tr.config_path, "key=value config file");
    sc_train->add_option("--data", tr.data, "dataset directory or manifest")->required();
    sc_train->add_option("--out", tr.out, "output directory");
    sc_train->add_option("--ablate", tr.ablate, "disable a module: lfe, glf, gloss; or randcoord")
        ->take_all();
    sc_train->add_option("--set", tr.overrides, "config override key=value")->take_all();
    sc_train->add_option("--iterations", tr.iterations, "override iteration count");
    auto* tr_seed = sc_train->add_option("--seed", tr.seed, "training seed");
    sc_train->add_flag("--verbose", tr.verbose, "log validation to stderr");

    InferArgs inf;
    auto* sc_infer = app.add_subcommand("infer", "sliding-window inference");
    sc_infer->add_option("--config", inf.config_path, "config file (must match the checkpoint)");
    sc_infer->add_option("--model", inf.model, "checkpoint path")->required();
    sc_infer->add_option("--input", inf.input, "single input volume");
    sc_infer->add_option("--output", inf.output, "output mask path (with --input)");
    sc_infer->add_option("--data", inf.data, "dataset directory or manifest");
    sc_infer->add_option("--split", inf.split, "manifest split to predict");
    sc_infer->add_option("--out", inf.out_dir, "prediction directory");
    sc_infer->add_option("--threshold", inf.threshold, "probability threshold");

    EvalArgs ev;
    auto* sc_eval = app.add_subcommand("eval", "segmentation metrics report");
    sc_eval->add_option("--pred", ev.pred_dir, "prediction directory")->required();
    sc_eval->add_option("--gt", ev.gt, "reference directory or manifest")->required();
    sc_eval->add_option("--out", ev.out_csv, "CSV output (stdout if omitted)");
    sc_eval->add_option("--json", ev.out_json, "JSON output path");
    sc_eval->add_option("--tau", ev.tau, "surface distance tolerance (voxels)");
    sc_eval->add_option("--small-vessel-axis", ev.sv_axis, "x, y or z");
    sc_eval->add_option("--small-vessel-threshold", ev.sv_threshold, "coordinate threshold");
    sc_eval->add_option("--workers", ev.workers, "parallel case evaluation");

    std::vector<std::string> idx_paths;
    auto* sc_idx = app.add_subcommand("indices", "sparsity/dispersion indices of masks");
    sc_idx->add_option("paths", idx_paths, "mask files or directories");

    std::int64_t gc_seeds = 3;
    double gc_tol_prim = 1e-6, gc_tol_comp = 1e-4;
    auto* sc_gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
    sc_gc->add_option("--seeds", gc_seeds, "random seeds per block");
    sc_gc->add_option("--tol-primitive", gc_tol_prim, "per-primitive tolerance");
    sc_gc->add_option("--tol-composed", gc_tol_comp, "composed-block tolerance");

    BenchArgs bench;
    auto* sc_bench = app.add_subcommand("bench-scan", "scan-vs-attention scaling benchmark");
    sc_bench->add_option("--lengths", bench.lengths, "token counts")->delimiter(',');
    sc_bench->add_option("--dim", bench.dim, "token dimension");
    sc_bench->add_option("--out", bench.out_csv, "CSV output (stdout if omitted)");
    sc_bench->add_option("--seed", bench.seed, "benchmark seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitUsage;
    }

    try {
        gen.seed_given = gen_seed->count() > 0;
        tr.seed_given = tr_seed->count() > 0;
        if (sc_gen->parsed()) return run_gen(gen);
        if (sc_train->parsed()) return run_train(tr);
        if (sc_infer->parsed()) return run_infer(inf);
        if (sc_eval->parsed()) return run_eval(ev);
        if (sc_idx->parsed()) return run_indices(idx_paths);
        if (sc_gc->parsed()) return run_gradcheck(gc_seeds, gc_tol_prim, gc_tol_comp);
        if (sc_bench->parsed()) return run_bench(bench);
    } catch (const NumericalFailure& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    return kExitUsage;
}
