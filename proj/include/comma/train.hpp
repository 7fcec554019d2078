#pragma once

#include <filesystem>
#include <fstream>

#include "comma/metrics.hpp"
#include "comma/net.hpp"

namespace comma {

struct NumericalFailure : std::runtime_error {
    std::int64_t iteration;
    explicit NumericalFailure(std::int64_t iter)
        : std::runtime_error(strcat_msg("non-finite loss at iteration ", iter)),
          iteration(iter) {}
};

struct TrainCase {
    Volume image;
    BinaryMask3D mask;
    std::vector<std::array<std::int64_t, 3>> fg_voxels;  // for foreground-forced sampling
};

inline TrainCase make_train_case(Volume image, BinaryMask3D mask) {
    TrainCase c{std::move(image), std::move(mask), {}};
    const auto [H, W, D] = c.mask.extents;
    for (std::int64_t k = 0; k < D; ++k)
        for (std::int64_t j = 0; j < W; ++j)
            for (std::int64_t i = 0; i < H; ++i)
                if (c.mask.at(i, j, k)) c.fg_voxels.push_back({i, j, k});
    return c;
}

struct TrainLogRow {
    std::int64_t iter;
    double loss;
    double loss_local;
    double loss_global;
    double val_dice;  // NaN until the first validation pass
};

struct TrainOptions {
    std::string out_dir;           // empty: nothing written to disk
    double early_stop_val_dice = -1.0;  // stop once val dice reaches this (<0: never)
    bool quiet = true;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    double best_val_dice = 0.0;
    double final_val_dice = 0.0;
    std::int64_t iterations_run = 0;
};

// Uniform or foreground-centered random patch origin.
inline std::array<std::int64_t, 3> sample_patch_origin(const TrainCase& c,
                                                       std::array<std::int64_t, 3> patch,
                                                       Rng& rng, double fg_fraction) {
    const auto full = c.mask.extents;
    std::array<std::int64_t, 3> origin{};
    bool force_fg = !c.fg_voxels.empty() && rng.uniform() < fg_fraction;
    if (force_fg) {
        const auto& v = c.fg_voxels[static_cast<std::size_t>(
            rng.uniform_int(static_cast<std::int64_t>(c.fg_voxels.size())))];
        for (int a = 0; a < 3; ++a) {
            std::int64_t o = v[a] - patch[a] / 2;
            origin[a] = std::clamp<std::int64_t>(o, 0, std::max<std::int64_t>(0, full[a] - patch[a]));
        }
    } else {
        for (int a = 0; a < 3; ++a) {
            std::int64_t span = std::max<std::int64_t>(1, full[a] - patch[a] + 1);
            origin[a] = rng.uniform_int(span);
        }
    }
    return origin;
}

template <class T>
double validation_dice(const CommaNet<T>& net, const std::vector<TrainCase>& val_cases) {
    if (val_cases.empty()) return std::numeric_limits<double>::quiet_NaN();
    double acc = 0.0;
    for (const auto& c : val_cases) acc += dice(infer_volume(net, c.image), c.mask);
    return acc / static_cast<double>(val_cases.size());
}

// One optimization step over `batch_size` patches of a single case (the
// global pass is shared). Returns (total, local, global) loss values.
template <class T>
std::array<double, 3> train_step(CommaNet<T>& net, SgdOptimizer<T>& opt, const TrainCase& c,
                                 std::int64_t iter) {
    const auto& cfg = net.cfg;
    auto image_t = volume_to_tensor<T>(c.image);
    auto gout = net.global_forward(image_t);

    Tensor<T> local_sum;
    for (std::int64_t slot = 0; slot < cfg.batch_size; ++slot) {
        Rng slot_rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(iter),
                              static_cast<std::uint64_t>(slot)));
        auto origin = sample_patch_origin(c, cfg.patch_shape, slot_rng, cfg.fg_patch_fraction);
        PatchRecord rec = make_patch_record(origin, cfg.patch_shape, c.mask.extents);
        if (cfg.ablate.randomize_coords)
            for (int a = 0; a < 3; ++a) rec.center[a] = slot_rng.uniform(-1.0, 1.0);
        auto patch = volume_to_tensor<T>(crop_volume(c.image, origin, cfg.patch_shape));
        auto target = mask_to_tensor<T>(crop_mask(c.mask, origin, cfg.patch_shape));
        auto logits = net.local_forward(patch, gout.features, rec);
        auto loss = seg_loss(logits, target, static_cast<T>(cfg.dice_eps));
        local_sum = local_sum.defined() ? add(local_sum, loss) : loss;
    }
    auto l_local = scale(local_sum, T(1) / static_cast<T>(cfg.batch_size));

    Tensor<T> l_global;
    double l_global_value = 0.0;
    Tensor<T> total;
    if (cfg.ablate.global_loss && cfg.lambda_global > 0.0) {
        std::array<std::int64_t, 3> grid{gout.logits.extent(1), gout.logits.extent(2),
                                         gout.logits.extent(3)};
        auto gtarget = mask_to_grid_tensor<T>(c.mask, grid);
        l_global = seg_loss(gout.logits, gtarget, static_cast<T>(cfg.dice_eps));
        l_global_value = static_cast<double>(l_global.item());
        total = total_loss(l_local, l_global, static_cast<T>(cfg.lambda_global));
    } else {
        total = l_local;
    }

    double total_value = static_cast<double>(total.item());
    if (!std::isfinite(total_value)) throw NumericalFailure(iter);

    net.reg.zero_grads();
    total.backward();
    opt.step(opt.lr_at(iter, cfg.iterations));
    return {total_value, static_cast<double>(l_local.item()), l_global_value};
}

template <class T>
TrainResult train_model(CommaNet<T>& net, const std::vector<TrainCase>& train_cases,
                        const std::vector<TrainCase>& val_cases, const TrainOptions& opts) {
    check(!train_cases.empty(), "train: no training cases");
    namespace fs = std::filesystem;
    const auto& cfg = net.cfg;
    SgdOptimizer<T> opt(net.reg, cfg.lr, cfg.momentum);
    TrainResult result;
    std::ofstream metrics_csv;
    if (!opts.out_dir.empty()) {
        fs::create_directories(opts.out_dir);
        metrics_csv.open((fs::path(opts.out_dir) / "metrics.csv").string());
        metrics_csv << "iter,loss,loss_local,loss_global,val_dice\n";
    }
    double val = std::numeric_limits<double>::quiet_NaN();
    for (std::int64_t iter = 0; iter < cfg.iterations; ++iter) {
        Rng iter_rng(Rng::mix(cfg.seed, static_cast<std::uint64_t>(iter), 0x5a5aULL));
        const auto& c = train_cases[static_cast<std::size_t>(
            iter_rng.uniform_int(static_cast<std::int64_t>(train_cases.size())))];
        auto losses = train_step(net, opt, c, iter);

        bool last = iter + 1 == cfg.iterations;
        if ((iter + 1) % cfg.val_interval == 0 || last) {
            val = validation_dice(net, val_cases.empty() ? train_cases : val_cases);
            result.best_val_dice = std::max(result.best_val_dice, val);
            if (!opts.quiet)
                std::fprintf(stderr, "iter %lld loss %.4f val_dice %.4f\n",
                             static_cast<long long>(iter + 1), losses[0], val);
        }
        result.log.push_back({iter + 1, losses[0], losses[1], losses[2], val});
        if (metrics_csv.is_open()) {
            metrics_csv << (iter + 1) << ',' << losses[0] << ',' << losses[1] << ','
                        << losses[2] << ',' << val << '\n';
        }
        if (!opts.out_dir.empty() &&
            ((iter + 1) % cfg.checkpoint_interval == 0 || last)) {
            save_checkpoint((fs::path(opts.out_dir) / "model.ckpt").string(), net.reg);
        }
        result.iterations_run = iter + 1;
        if (opts.early_stop_val_dice > 0.0 && std::isfinite(val) &&
            val >= opts.early_stop_val_dice) {
            if (!opts.out_dir.empty())
                save_checkpoint((fs::path(opts.out_dir) / "model.ckpt").string(), net.reg);
            break;
        }
    }
    result.final_val_dice = val;
    return result;
}

// Loads manifest entries (paths resolved relative to the manifest's directory
// when not found as-is).
std::vector<TrainCase> load_cases(const std::string& manifest_path, const std::string& split);

inline std::vector<TrainCase> load_cases(const std::string& manifest_path,
                                         const std::string& split) {
    namespace fs = std::filesystem;
    auto manifest = read_manifest(manifest_path);
    fs::path base = fs::path(manifest_path).parent_path();
    std::vector<TrainCase> cases;
    for (const auto& e : manifest.split(split)) {
        auto resolve = [&](const std::string& p) {
            if (fs::exists(p)) return p;
            return (base / p).string();
        };
        cases.push_back(make_train_case(read_volume(resolve(e.volume_path)),
                                        read_mask(resolve(e.mask_path))));
    }
    return cases;
}

}  // namespace comma
