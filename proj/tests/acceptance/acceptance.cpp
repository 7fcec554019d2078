// Acceptance suite: one checkable criterion per function, one PASS/FAIL line
// per criterion on stdout. Runs everything by default; `--only N` restricts
// to a single criterion (used by the ctest registrations).

#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>

#include "comma/config.hpp"
#include "comma/gradcheck.hpp"
#include "comma/phantom.hpp"
#include "comma/train.hpp"

#include "../support/oracles.hpp"

using namespace comma;
namespace fs = std::filesystem;

namespace {

struct Criterion {
    int id;
    std::string name;
    std::function<bool(std::ostream&)> run;
};

// ---------------------------------------------------------------------- 1 --
// Gradient suite: 64-bit central finite differences for every block;
// < 1e-6 per primitive, < 1e-4 composed; >= 20 seeds; < 10 minutes.

bool crit_gradients(std::ostream& os) {
    Timer timer;
    using D = double;
    double worst_prim = 0, worst_comp = 0;
    const std::int64_t seeds = 20;

    auto wsum = [](const Tensor<D>& x, std::uint64_t seed) {
        Rng rng(seed);
        auto w = Tensor<D>::uniform(x.shape(), rng, 0.1, 1.0);
        return sum(mul(x, w));
    };

    for (std::int64_t s = 0; s < seeds; ++s) {
        Rng rng(Rng::mix(0xacce97, static_cast<std::uint64_t>(s)));
        // primitives
        {
            auto a = Tensor<D>::uniform({3, 4}, rng, -1, 1, true);
            auto b = Tensor<D>::uniform({4, 3}, rng, -1, 1, true);
            worst_prim = std::max(worst_prim,
                                  gradcheck<D>([&] { return wsum(matmul(a, b), s); }, {a, b})
                                      .max_rel_err);
            auto x = Tensor<D>::uniform({2, 4, 4, 4}, rng, -1, 1, true);
            auto w = Tensor<D>::uniform({2, 2, 3, 3, 3}, rng, -0.4, 0.4, true);
            worst_prim = std::max(
                worst_prim,
                gradcheck<D>([&] { return wsum(conv3d(x, w, std::int64_t(1), 1), s + 1); },
                             {x, w})
                    .max_rel_err);
            auto t = Tensor<D>::uniform({4, 6}, rng, -2, 2, true);
            worst_prim = std::max(
                worst_prim,
                gradcheck<D>([&] { return wsum(softmax_rows(silu(t)), s + 2); }, {t})
                    .max_rel_err);
            worst_prim = std::max(
                worst_prim,
                gradcheck<D>([&] { return wsum(layer_norm(t), s + 3); }, {t}).max_rel_err);
            worst_prim = std::max(
                worst_prim,
                gradcheck<D>([&] { return wsum(instance_norm(x), s + 4); }, {x}).max_rel_err);
        }
        // losses
        {
            auto logits = Tensor<D>::uniform({1, 3, 3, 3}, rng, -2, 2, true);
            std::vector<D> tv(27);
            for (auto& v : tv) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
            auto target = Tensor<D>::from_data({1, 3, 3, 3}, std::move(tv));
            worst_prim = std::max(
                worst_prim,
                gradcheck<D>([&] { return seg_loss(logits, target); }, {logits}).max_rel_err);
        }
        // conv module (conv + instance norm + leaky relu)
        {
            ParamRegistry<D> reg(Rng::mix(1, static_cast<std::uint64_t>(s)));
            auto cm = ConvModule<D>::make(reg, "cm", 2, 3);
            auto x = Tensor<D>::uniform({2, 4, 4, 4}, rng, -1, 1, true);
            worst_comp = std::max(
                worst_comp,
                gradcheck<D>([&] { return wsum(cm.forward(x), s + 5); }, {x}).max_rel_err);
        }
        // ccMamba block
        {
            ParamRegistry<D> reg(Rng::mix(2, static_cast<std::uint64_t>(s)));
            CcMambaConfig ccfg;
            ccfg.token_size = 2;
            ccfg.compressed_dim = 8;
            ccfg.state_dim = 4;
            auto blk = CcMambaBlock<D>::make(reg, "b", 32, ccfg);
            auto f = Tensor<D>::uniform({4, 4, 4, 4}, rng, -1, 1, true);
            worst_comp = std::max(
                worst_comp,
                gradcheck<D>([&] { return wsum(blk.forward_volume(f), s + 6); }, {f})
                    .max_rel_err);
        }
        // Coord-LFE and Coord-GLF
        {
            ParamRegistry<D> reg(Rng::mix(3, static_cast<std::uint64_t>(s)));
            CamConfig ccfg;
            ccfg.global_token_size = 2;
            ccfg.attention_dim = 4;
            ccfg.mask_conv_kernel = 3;
            auto block = CamBlock<D>::make(reg, "cam", 2, 2, 2, ccfg);
            auto pos = PosEmbed<D>::make(reg, "pos", ccfg.attention_dim);
            auto grid = token_coords_global({4, 4, 4}, 2);
            auto rec = make_patch_record({2, 2, 2}, {4, 4, 4}, {8, 8, 8});
            auto fl = Tensor<D>::uniform({2, 4, 4, 4}, rng, -1, 1, true);
            auto fg = Tensor<D>::uniform({2, 4, 4, 4}, rng, -1, 1, true);
            worst_comp = std::max(
                worst_comp,
                gradcheck<D>(
                    [&] { return wsum(block.coord_lfe(fl, fg, pos, rec, grid), s + 7); },
                    {fl, fg})
                    .max_rel_err);
            auto fpg = Tensor<D>::uniform({2, 4, 4, 4}, rng, -1, 1, true);
            worst_comp = std::max(
                worst_comp,
                gradcheck<D>([&] { return wsum(block.coord_glf(fl, fpg), s + 8); }, {fl, fpg})
                    .max_rel_err);
        }
    }
    // end-to-end toy model: patch + volume input coordinates, sampled
    {
        auto cfg = tiny_config();
        cfg.seed = 31337;
        CommaNet<D> net(cfg);
        for (std::int64_t s = 0; s < 3; ++s) {
            Rng rng(Rng::mix(4, static_cast<std::uint64_t>(s)));
            auto vol = Tensor<D>::uniform({1, 24, 24, 24}, rng, -1, 1, true);
            auto patch = Tensor<D>::uniform({1, 16, 16, 16}, rng, -1, 1, true);
            std::vector<D> tv(16 * 16 * 16);
            for (auto& v : tv) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
            auto target = Tensor<D>::from_data({1, 16, 16, 16}, std::move(tv));
            std::vector<D> gv(16 * 16 * 16);
            for (auto& v : gv) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
            auto gtarget = Tensor<D>::from_data({1, 16, 16, 16}, std::move(gv));
            auto rec = make_patch_record({4, 4, 4}, {16, 16, 16}, {24, 24, 24});
            auto forward = [&] {
                auto g = net.global_forward(vol);
                auto logits = net.local_forward(patch, g.features, rec);
                return total_loss(seg_loss(logits, target), seg_loss(g.logits, gtarget),
                                  static_cast<D>(0.25));
            };
            Rng coord_rng(Rng::mix(5, static_cast<std::uint64_t>(s)));
            auto rep = gradcheck<D>(forward, {patch, vol}, 1e-6, 60, &coord_rng);
            worst_comp = std::max(worst_comp, rep.max_rel_err);
        }
    }
    double elapsed = timer.seconds();
    os << "primitive max rel err " << worst_prim << " (tol 1e-6), composed " << worst_comp
       << " (tol 1e-4), " << elapsed << " s";
    return worst_prim < 1e-6 && worst_comp < 1e-4 && elapsed < 600.0;
}

// ---------------------------------------------------------------------- 2 --
// Scan oracle up to L = 16384 at 32-bit, plus the hand recurrence.

bool crit_scan_oracle(std::ostream& os) {
    float worst = 0;
    for (std::int64_t len : {64, 1024, 4096, 16384}) {
        Rng rng(Rng::mix(0x5ca9, static_cast<std::uint64_t>(len)));
        const std::int64_t e_dim = 8, n_dim = 4;
        auto abar = Tensor<float>::uniform({len, e_dim, n_dim}, rng, 0.0f, 0.999f);
        auto bu = Tensor<float>::uniform({len, e_dim, n_dim}, rng, -1, 1);
        auto c = Tensor<float>::uniform({len, n_dim}, rng, -1, 1);
        auto y = ssm_scan_core(abar, bu, c);
        auto ref = oracle::naive_scan(
            std::vector<float>(abar.data().begin(), abar.data().end()),
            std::vector<float>(bu.data().begin(), bu.data().end()),
            std::vector<float>(c.data().begin(), c.data().end()), len, e_dim, n_dim);
        for (std::int64_t i = 0; i < y.size(); ++i)
            worst = std::max(worst, std::abs(y.data()[i] - ref[static_cast<std::size_t>(i)]));
    }
    auto abar = Tensor<float>::filled({3, 1, 1}, 0.5f);
    auto bu = Tensor<float>::from_data({3, 1, 1}, {1, 0, 0});
    auto c = Tensor<float>::filled({3, 1}, 1.0f);
    auto y = ssm_scan_core(abar, bu, c);
    bool hand_ok = std::abs(y.data()[0] - 1.0f) < 1e-7f && std::abs(y.data()[1] - 0.5f) < 1e-7f &&
                   std::abs(y.data()[2] - 0.25f) < 1e-7f;
    os << "max |scan - sequential oracle| " << worst << " over L<=16384; hand case [1,0.5,0.25] "
       << (hand_ok ? "ok" : "wrong");
    return worst < 1e-6f && hand_ok;
}

// ---------------------------------------------------------------------- 3 --
// Coordinate geometry against the voxel-center oracle, symmetry, spacing,
// and the global-grid reduction.

bool crit_coords(std::ostream& os) {
    Rng rng(0xc003d);
    double worst_oracle = 0, worst_sym = 0, worst_spacing = 0;
    int configs = 0;
    while (configs < 1000) {
        std::int64_t full = 4 * (1 + rng.uniform_int(24));
        std::int64_t p = 1 + rng.uniform_int(4);
        std::int64_t ntok = 1 + rng.uniform_int(8);
        std::int64_t h = p * ntok;
        if (h > full) continue;
        ++configs;
        std::array<std::int64_t, 3> origin{};
        for (int a = 0; a < 3; ++a) origin[a] = rng.uniform_int(full - h + 1);
        PatchRecord rec = make_patch_record(origin, {h, h, h}, {full, full, full});
        auto g = token_coords_local(rec.center, {full, full, full}, {h, h, h}, p);
        for (int a = 0; a < 3; ++a) {
            std::int64_t stride = a == 0 ? ntok * ntok : a == 1 ? ntok : 1;
            for (std::int64_t i = 0; i < ntok; ++i) {
                double vc = double(origin[a]) + double(i) * double(p) + double(p) / 2.0;
                double expect = 2.0 * vc / double(full) - 1.0;
                worst_oracle = std::max(worst_oracle, std::abs(g.at(i * stride)[a] - expect));
                // symmetry about the center
                double mirrored = g.at((ntok - 1 - i) * stride)[a];
                worst_sym = std::max(worst_sym,
                                     std::abs((g.at(i * stride)[a] - rec.center[a]) +
                                              (mirrored - rec.center[a])));
            }
            for (std::int64_t i = 1; i < ntok; ++i)
                worst_spacing = std::max(
                    worst_spacing, std::abs((g.at(i * stride)[a] - g.at((i - 1) * stride)[a]) -
                                            2.0 * double(p) / double(full)));
        }
    }
    // reduction: h = H, P_c = 0 must equal the global grid exactly
    bool reduction_ok = true;
    auto local = token_coords_local({0, 0, 0}, {48, 32, 16}, {48, 32, 16}, 4);
    auto global = token_coords_global({48, 32, 16}, 4);
    for (std::int64_t l = 0; l < local.length(); ++l)
        for (int a = 0; a < 3; ++a)
            reduction_ok = reduction_ok && local.at(l)[a] == global.at(l)[a];
    os << "oracle dev " << worst_oracle << ", symmetry dev " << worst_sym << ", spacing dev "
       << worst_spacing << " over 1000 configs; global reduction "
       << (reduction_ok ? "exact" : "broken");
    return worst_oracle < 1e-12 && worst_sym < 1e-12 && worst_spacing < 1e-12 && reduction_ok;
}

// ---------------------------------------------------------------------- 4 --
// Shared positional embedding: equal coordinates, bitwise-equal rows.

bool crit_pos_embed(std::ostream& os) {
    ParamRegistry<float> reg(0x905e);
    auto pos = PosEmbed<float>::make(reg, "pos", 32);
    auto gg = token_coords_global({32, 32, 32}, 8);
    auto lg = token_coords_local({0, 0, 0}, {32, 32, 32}, {32, 32, 32}, 8);
    auto eg = pos.embed(gg);
    auto el = pos.embed(lg);
    bool same = eg.size() == el.size() &&
                std::memcmp(eg.data().data(), el.data().data(),
                            sizeof(float) * static_cast<std::size_t>(eg.size())) == 0;
    // and across different grid objects sharing a subset of coordinates
    auto sub = token_coords_local({0.5, 0.5, 0.5}, {32, 32, 32}, {16, 16, 16}, 8);
    auto es = pos.embed(sub);
    // the sub-grid has 8 tokens; locate one matching global coordinate
    bool cross = true;
    for (std::int64_t l = 0; l < sub.length(); ++l) {
        for (std::int64_t m = 0; m < gg.length(); ++m) {
            if (gg.at(m) == sub.at(l)) {
                for (int c = 0; c < 32; ++c)
                    cross = cross && es.data()[l * 32 + c] == eg.data()[m * 32 + c];
            }
        }
    }
    os << "same-grid " << (same ? "bitwise" : "differs") << ", cross-grid "
       << (cross ? "bitwise" : "differs");
    return same && cross;
}

// ---------------------------------------------------------------------- 5 --
// Metric oracles: dice exact, NSD vs pairwise oracle, clDice component
// ratios, skeleton component preservation on 50 tube phantoms.

bool crit_metric_oracles(std::ostream& os) {
    Rng rng(0x3e77);
    bool dice_ok = true;
    for (int t = 0; t < 100; ++t) {
        auto p = BinaryMask3D::zeros({8, 8, 8});
        auto g = BinaryMask3D::zeros({8, 8, 8});
        for (auto& v : p.voxels) v = rng.uniform() < 0.3 ? 1 : 0;
        for (auto& v : g.voxels) v = rng.uniform() < 0.3 ? 1 : 0;
        dice_ok = dice_ok && dice(p, g) == oracle::dice_by_counts(p, g);
    }
    double worst_nsd = 0;
    for (int t = 0; t < 30; ++t) {
        auto p = BinaryMask3D::zeros({8, 8, 8});
        auto g = BinaryMask3D::zeros({8, 8, 8});
        for (auto& v : p.voxels) v = rng.uniform() < 0.25 ? 1 : 0;
        for (auto& v : g.voxels) v = rng.uniform() < 0.25 ? 1 : 0;
        double tau = rng.uniform(0.5, 3.0);
        worst_nsd = std::max(worst_nsd,
                             std::abs(nsd(p, g, tau) - oracle::nsd_pairwise(p, g, tau)));
    }
    // clDice component ratios recomputed from the skeletons directly
    bool cl_ok = true;
    for (int t = 0; t < 10; ++t) {
        PhantomSpec sa, sb;
        sa.seed = 100 + static_cast<std::uint64_t>(t);
        sb.seed = 200 + static_cast<std::uint64_t>(t);
        sa.extents = sb.extents = {24, 24, 24};
        sa.branching_depth = sb.branching_depth = 2;
        auto pred = generate_phantom(sa).mask;
        auto gt = generate_phantom(sb).mask;
        auto sp = skeletonize(pred);
        auto sg = skeletonize(gt);
        std::int64_t spn = 0, spin = 0, sgn = 0, sgin = 0;
        for (std::size_t i = 0; i < sp.voxels.size(); ++i) {
            spn += sp.voxels[i] != 0;
            spin += sp.voxels[i] && gt.voxels[i];
            sgn += sg.voxels[i] != 0;
            sgin += sg.voxels[i] && pred.voxels[i];
        }
        double tprec = spn ? double(spin) / double(spn) : 0.0;
        double tsens = sgn ? double(sgin) / double(sgn) : 0.0;
        double expect = (tprec + tsens) > 0 ? 2 * tprec * tsens / (tprec + tsens) : 0.0;
        cl_ok = cl_ok && std::abs(cldice(pred, gt) - expect) < 1e-12;
    }
    // skeletonization preserves 26-component count on 50 tube phantoms
    int preserved = 0;
    for (std::uint64_t s = 0; s < 50; ++s) {
        PhantomSpec spec;
        spec.seed = 1000 + s;
        spec.extents = {26, 26, 26};
        spec.branching_depth = 2;
        spec.root_radius = 1.6;
        auto mask = generate_phantom(spec).mask;
        preserved += count_components_26(skeletonize(mask)) == count_components_26(mask);
    }
    os << "dice oracle " << (dice_ok ? "exact" : "broken") << ", NSD max dev " << worst_nsd
       << ", clDice ratios " << (cl_ok ? "match" : "broken") << ", components preserved "
       << preserved << "/50";
    return dice_ok && worst_nsd < 1e-9 && cl_ok && preserved == 50;
}

// ---------------------------------------------------------------------- 6 --
// Index hand cases.

bool crit_indices(std::ostream& os) {
    auto m = BinaryMask3D::zeros({4, 4, 4});
    for (int i = 0; i < 8; ++i) m.voxels[static_cast<std::size_t>(i * 8)] = 1;
    bool si_ok = sparsity_index(m) == 0.125;
    auto single = BinaryMask3D::zeros({4, 4, 4});
    single.at(1, 2, 3) = 1;
    bool di_single_ok = dispersion_index(single) == 0.0;
    auto two = BinaryMask3D::zeros({4, 4, 4});
    two.at(0, 0, 0) = 1;
    two.at(2, 0, 0) = 1;
    double di = dispersion_index(two);
    bool di_two_ok = std::abs(di - 2.0 / std::sqrt(48.0)) < 1e-12;
    auto shifted = BinaryMask3D::zeros({4, 4, 4});
    shifted.at(1, 1, 2) = 1;
    shifted.at(3, 1, 2) = 1;
    bool di_shift_ok = std::abs(dispersion_index(shifted) - di) < 1e-12;
    os << "SI(8 in 4^3)=" << sparsity_index(m) << ", DI(single)=" << dispersion_index(single)
       << ", DI(two@2)=" << di << " vs " << 2.0 / std::sqrt(48.0) << ", translation "
       << (di_shift_ok ? "invariant" : "broken");
    return si_ok && di_single_ok && di_two_ok && di_shift_ok;
}

// ---------------------------------------------------------------------- 7 --
// Overfit sanity: desk preset reaches training dice >= 0.95 on one phantom
// within 2000 iterations and 30 minutes.

bool crit_overfit(std::ostream& os) {
    Timer timer;
    auto cfg = desk_config();
    cfg.seed = 4242;
    cfg.val_interval = 50;
    CommaNet<float> net(cfg);
    PhantomSpec spec;
    spec.seed = 77;
    spec.extents = {64, 64, 64};
    spec.root_radius = 2.5;
    auto ph = generate_phantom(spec);
    std::vector<TrainCase> cases;
    cases.push_back(make_train_case(std::move(ph.image), std::move(ph.mask)));
    TrainOptions opts;
    opts.early_stop_val_dice = 0.95;
    auto result = train_model(net, cases, {}, opts);
    double minutes = timer.seconds() / 60.0;
    os << "dice " << result.best_val_dice << " after " << result.iterations_run
       << " iterations in " << minutes << " min";
    return result.best_val_dice >= 0.95 && result.iterations_run <= 2000 && minutes < 30.0;
}

// ---------------------------------------------------------------------- 8 --
// Ablation direction on phantoms: full model beats randomized coordinates
// and beats the all-modules-off variant on mean test dice over 3 seeds.

bool crit_ablation(std::ostream& os) {
    Timer timer;
    auto data_dir = (fs::temp_directory_path() / "comma_accept_ablation").string();
    if (!fs::exists(fs::path(data_dir) / "manifest.tsv")) {
        PhantomSpec spec;
        spec.extents = {48, 48, 48};
        spec.branching_depth = 3;
        spec.root_radius = 2.2;
        spec.decoy_contrast = 1.0;  // position is the only cue against decoys
        make_dataset(data_dir, 20, spec, {0.8, 0.0, 0.2}, 2024);
    }
    auto manifest = (fs::path(data_dir) / "manifest.tsv").string();
    auto train_cases = load_cases(manifest, "train");
    auto test_cases = load_cases(manifest, "test");

    auto run_variant = [&](std::uint64_t seed, const AblationFlags& flags) {
        auto cfg = tiny_config();
        cfg.iterations = 400;
        cfg.val_interval = 10000;
        cfg.seed = seed;
        cfg.ablate = flags;
        CommaNet<float> net(cfg);
        TrainOptions opts;
        train_model(net, train_cases, {}, opts);
        double acc = 0;
        for (const auto& c : test_cases) acc += dice(infer_volume(net, c.image), c.mask);
        return acc / double(test_cases.size());
    };

    AblationFlags full;
    AblationFlags randc;
    randc.randomize_coords = true;
    AblationFlags none;
    none.lfe = none.glf = none.global_loss = false;

    double full_mean = 0, rand_mean = 0, none_mean = 0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        full_mean += run_variant(10 + s, full);
        rand_mean += run_variant(10 + s, randc);
        none_mean += run_variant(10 + s, none);
    }
    full_mean /= 3;
    rand_mean /= 3;
    none_mean /= 3;
    os << "mean test dice: full " << full_mean << ", randomized coords " << rand_mean
       << " (gap " << full_mean - rand_mean << "), modules off " << none_mean << " (gap "
       << full_mean - none_mean << "); " << timer.seconds() / 60.0 << " min";
    return full_mean > rand_mean && full_mean > none_mean;
}

// ---------------------------------------------------------------------- 9 --
// Scaling: linear-time scan vs quadratic attention.

bool crit_scaling(std::ostream& os) {
    auto rows = bench_scan_vs_attention({4096, 8192, 16384}, 32, 99);
    bool ok = true;
    os << "per-doubling ratios:";
    for (std::size_t i = 1; i < rows.size(); ++i) {
        double scan_ratio = rows[i].scan_ms / rows[i - 1].scan_ms;
        double attn_ratio = rows[i].attn_ms / rows[i - 1].attn_ms;
        os << " L=" << rows[i].length << " scan x" << scan_ratio << " attn x" << attn_ratio;
        ok = ok && scan_ratio <= 2.5 && attn_ratio >= 3.2;
    }
    return ok;
}

// --------------------------------------------------------------------- 10 --
// Determinism and persistence.

bool crit_determinism(std::ostream& os) {
    // VVOL round trip
    PhantomSpec spec;
    spec.seed = 8;
    spec.extents = {20, 18, 14};
    auto ph = generate_phantom(spec);
    auto dir = fs::temp_directory_path() / "comma_accept_det";
    fs::create_directories(dir);
    write_volume((dir / "v.vvol").string(), ph.image);
    write_volume((dir / "m.vvol").string(), ph.mask);
    auto v2 = read_volume((dir / "v.vvol").string());
    auto m2 = read_mask((dir / "m.vvol").string());
    bool vvol_ok = std::memcmp(v2.voxels.data(), ph.image.voxels.data(),
                               v2.voxels.size() * sizeof(float)) == 0 &&
                   m2.voxels == ph.mask.voxels;

    // identical seeds reproduce identical training curves
    auto cfg = tiny_config();
    cfg.iterations = 10;
    cfg.val_interval = 5;
    PhantomSpec tspec;
    tspec.seed = 9;
    tspec.extents = {32, 32, 32};
    auto run = [&] {
        auto phantom = generate_phantom(tspec);
        std::vector<TrainCase> cases;
        cases.push_back(make_train_case(phantom.image, phantom.mask));
        CommaNet<float> net(cfg);
        TrainOptions opts;
        return train_model(net, cases, {}, opts);
    };
    auto r1 = run();
    auto r2 = run();
    bool curves_ok = r1.log.size() == r2.log.size();
    for (std::size_t i = 0; curves_ok && i < r1.log.size(); ++i)
        curves_ok = r1.log[i].loss == r2.log[i].loss &&
                    r1.log[i].val_dice == r2.log[i].val_dice ||
                    (std::isnan(r1.log[i].val_dice) && std::isnan(r2.log[i].val_dice) &&
                     r1.log[i].loss == r2.log[i].loss);

    // checkpoint round trip preserves inference bitwise
    auto phantom = generate_phantom(tspec);
    std::vector<TrainCase> cases;
    cases.push_back(make_train_case(phantom.image, phantom.mask));
    CommaNet<float> net(cfg);
    TrainOptions opts;
    train_model(net, cases, {}, opts);
    Volume probs_before;
    auto mask_before = infer_volume(net, cases[0].image, 0.5, &probs_before);
    save_checkpoint((dir / "model.ckpt").string(), net.reg);
    auto cfg2 = cfg;
    cfg2.seed = 777;  // different init, overwritten by the checkpoint
    CommaNet<float> net2(cfg2);
    load_checkpoint((dir / "model.ckpt").string(), net2.reg);
    Volume probs_after;
    auto mask_after = infer_volume(net2, cases[0].image, 0.5, &probs_after);
    bool ckpt_ok = mask_before.voxels == mask_after.voxels &&
                   std::memcmp(probs_before.voxels.data(), probs_after.voxels.data(),
                               probs_before.voxels.size() * sizeof(float)) == 0;
    os << "VVOL " << (vvol_ok ? "bitwise" : "broken") << ", training curves "
       << (curves_ok ? "identical" : "diverged") << ", checkpoint inference "
       << (ckpt_ok ? "bitwise" : "broken");
    return vvol_ok && curves_ok && ckpt_ok;
}

}  // namespace

int main(int argc, char** argv) {
    int only = 0;
    for (int i = 1; i < argc; ++i) {
        if (std::string(argv[i]) == "--only" && i + 1 < argc) only = std::atoi(argv[i + 1]);
    }
    std::vector<Criterion> criteria = {
        {1, "gradient suite (finite differences, 20 seeds)", crit_gradients},
        {2, "scan oracle equivalence up to L=16384", crit_scan_oracle},
        {3, "coordinate formula vs voxel-center oracle", crit_coords},
        {4, "shared positional embedding bitwise identity", crit_pos_embed},
        {5, "metric oracles (dice, NSD, clDice, skeleton)", crit_metric_oracles},
        {6, "sparsity/dispersion hand cases", crit_indices},
        {7, "overfit sanity on one phantom", crit_overfit},
        {8, "ablation direction (full > rand-coord, full > none)", crit_ablation},
        {9, "scan vs attention scaling", crit_scaling},
        {10, "determinism and persistence", crit_determinism},
    };
    bool all_ok = true;
    for (const auto& c : criteria) {
        if (only != 0 && c.id != only) continue;
        std::ostringstream detail;
        bool ok = false;
        try {
            ok = c.run(detail);
        } catch (const std::exception& e) {
            detail << "exception: " << e.what();
        }
        all_ok = all_ok && ok;
        std::cout << (ok ? "[PASS] " : "[FAIL] ") << "criterion " << c.id << ": " << c.name
                  << " — " << detail.str() << "\n";
        std::cout.flush();
    }
    return all_ok ? 0 : 1;
}
