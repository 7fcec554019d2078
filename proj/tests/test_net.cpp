#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "comma/config.hpp"
#include "comma/gradcheck.hpp"
#include "comma/phantom.hpp"
#include "comma/train.hpp"

using namespace comma;
namespace fs = std::filesystem;

namespace {

// narrow channels, full-size extents: shape algebra without the flop bill
CommaConfig narrow96() {
    CommaConfig c;
    c.base_channels = 2;
    c.stage_channels = {2, 4, 6, 8};
    c.stem_channels = {2, 4};
    c.global_resize = {32, 32, 16};
    c.cam.attention_dim = 8;
    c.ccmamba.compressed_dim = 8;
    c.ccmamba.layers = 1;
    c.ccmamba.state_dim = 4;
    return c;
}

TrainCase overfit_case(std::uint64_t seed, std::array<std::int64_t, 3> ext) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.extents = ext;
    spec.root_radius = 2.5;
    auto ph = generate_phantom(spec);
    return make_train_case(std::move(ph.image), std::move(ph.mask));
}

}  // namespace

TEST_CASE("loss: perfect prediction saturates to (almost) zero") {
    auto target = Tensor<float>::from_data({1, 2, 2, 2}, {1, 0, 1, 0, 0, 1, 1, 0});
    std::vector<float> logits(8);
    for (int i = 0; i < 8; ++i) logits[static_cast<std::size_t>(i)] =
        target.data()[i] > 0.5f ? 20.0f : -20.0f;
    auto pred = Tensor<float>::from_data({1, 2, 2, 2}, std::move(logits));
    CHECK(seg_loss(pred, target).item() < 1e-3f);
}

TEST_CASE("loss: all-0.5 probabilities against a half-filled mask give BCE ln 2") {
    auto logits = Tensor<double>::zeros({1, 4, 2, 2});
    std::vector<double> t(16, 0.0);
    for (int i = 0; i < 8; ++i) t[static_cast<std::size_t>(i)] = 1.0;
    auto target = Tensor<double>::from_data({1, 4, 2, 2}, std::move(t));
    CHECK(bce_with_logits(logits, target).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("loss gradchecks, rel err < 1e-6") {
    Rng rng(111);
    auto logits = Tensor<double>::uniform({1, 3, 3, 3}, rng, -2, 2, true);
    std::vector<double> t(27);
    for (auto& v : t) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
    auto target = Tensor<double>::from_data({1, 3, 3, 3}, std::move(t));
    CHECK(gradcheck<double>([&] { return bce_with_logits(logits, target); }, {logits})
              .max_rel_err < 1e-6);
    CHECK(gradcheck<double>([&] { return dice_loss_with_logits(logits, target); }, {logits})
              .max_rel_err < 1e-6);
    CHECK(gradcheck<double>([&] { return seg_loss(logits, target); }, {logits}).max_rel_err <
          1e-6);
    CHECK_THROWS_AS(seg_loss(logits, Tensor<double>::zeros({1, 2, 2, 2})),
                    std::invalid_argument);
}

TEST_CASE("loss is non-negative and zero only at saturation") {
    Rng rng(112);
    for (int t = 0; t < 10; ++t) {
        auto logits = Tensor<float>::uniform({1, 2, 2, 2}, rng, -3, 3);
        std::vector<float> tv(8);
        for (auto& v : tv) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
        auto target = Tensor<float>::from_data({1, 2, 2, 2}, std::move(tv));
        CHECK(seg_loss(logits, target).item() >= 0.0f);
    }
}

TEST_CASE("total loss combines the branches linearly") {
    auto ll = Tensor<float>::scalar(1.0f);
    auto lg = Tensor<float>::scalar(2.0f);
    CHECK(total_loss(ll, lg, 0.25f).item() == doctest::Approx(1.5f));
    CHECK(total_loss(ll, lg, 0.0f).item() == doctest::Approx(1.0f));
}

TEST_CASE("encoder halves extents per stage on a 96-cube") {
    auto cfg = narrow96();
    CommaNet<float> net(cfg);
    Rng rng(113);
    NoGradGuard ng;
    auto x = Tensor<float>::uniform({1, 96, 96, 96}, rng, -1, 1);
    auto enc = net.encoder.forward(x);
    REQUIRE(enc.skips.size() == 4);
    CHECK(enc.skips[0].shape() == Shape{2, 96, 96, 96});
    CHECK(enc.skips[1].shape() == Shape{4, 48, 48, 48});
    CHECK(enc.skips[2].shape() == Shape{6, 24, 24, 24});
    CHECK(enc.skips[3].shape() == Shape{8, 12, 12, 12});
    CHECK(enc.bottleneck.shape() == Shape{8, 6, 6, 6});
    // pooled stage outputs land on 48/24/12/6 as published
    CHECK(maxpool2(enc.skips[0]).extent(1) == 48);
}

TEST_CASE("published configuration carries the stated widths and token sizes") {
    auto cfg = paper_config();
    CHECK(cfg.base_channels == 32);
    CHECK(cfg.stage_channels == std::array<std::int64_t, 4>{64, 128, 256, 320});
    CHECK(cfg.stem_channels == std::array<std::int64_t, 2>{16, 32});
    CHECK(cfg.cam.stage_local_token_sizes == std::vector<std::int64_t>{1, 2, 3, 6});
    CHECK(cfg.cam.global_token_size == 8);
    CHECK(cfg.ccmamba.compressed_dim == 32);
    CHECK(cfg.lambda_global == doctest::Approx(0.25));
    CHECK(cfg.iterations == 25000);
    CHECK(cfg.batch_size == 2);
    CHECK(cfg.patch_shape == std::array<std::int64_t, 3>{96, 96, 96});
    CHECK(cfg.global_resize == std::array<std::int64_t, 3>{256, 256, 96});
    cfg.validate();  // stage extents divisible by [1,2,3,6] deepest-to-shallowest
    // channel progression through the encoder weights: 1->32->64->128->256->320
    CommaNet<float> net(tiny_config());
    CHECK(net.encoder.initial.conv.weight.extent(1) == 1);
    CHECK(net.encoder.stages[0].conv.weight.extent(1) == net.cfg.base_channels);
    for (int s = 0; s < 4; ++s)
        CHECK(net.encoder.stages[static_cast<std::size_t>(s)].conv.weight.extent(0) ==
              net.cfg.stage_channels[static_cast<std::size_t>(s)]);
}

TEST_CASE("decoder emits full-resolution single-channel logits") {
    CommaNet<float> net(tiny_config());
    Rng rng(114);
    NoGradGuard ng;
    auto patch = Tensor<float>::uniform({1, 16, 16, 16}, rng, -1, 1);
    auto vol = Tensor<float>::uniform({1, 48, 48, 48}, rng, -1, 1);
    auto g = net.global_forward(vol);
    auto rec = make_patch_record({8, 8, 8}, {16, 16, 16}, {48, 48, 48});
    auto logits = net.local_forward(patch, g.features, rec);
    CHECK(logits.shape() == Shape{1, 16, 16, 16});
}

TEST_CASE("with all CaM paths disabled the decoder ignores CaM parameters") {
    auto cfg = tiny_config();
    cfg.ablate.lfe = false;
    cfg.ablate.glf = false;
    CommaNet<float> net(cfg);
    Rng rng(115);
    NoGradGuard ng;
    auto patch = Tensor<float>::uniform({1, 16, 16, 16}, rng, -1, 1);
    auto vol = Tensor<float>::uniform({1, 48, 48, 48}, rng, -1, 1);
    auto g = net.global_forward(vol);
    auto rec = make_patch_record({8, 8, 8}, {16, 16, 16}, {48, 48, 48});
    auto before = net.local_forward(patch, g.features, rec);
    for (auto& p : net.reg.params())
        if (p.name.find(".cam") != std::string::npos)
            for (auto& v : p.tensor.mutable_data()) v += 7.5f;
    auto after = net.local_forward(patch, g.features, rec);
    for (std::int64_t i = 0; i < before.size(); ++i) CHECK(before.data()[i] == after.data()[i]);
}

TEST_CASE("global branch halves XY only and survives constant input") {
    CommaNet<float> net(desk_config());
    NoGradGuard ng;
    auto vol = Tensor<float>::filled({1, 64, 64, 32}, 0.5f);
    auto g = net.global_forward(vol);
    CHECK(g.features.shape() == Shape{8, 32, 32, 32});
    CHECK(g.logits.shape() == Shape{1, 32, 32, 32});
    for (std::int64_t i = 0; i < g.logits.size(); ++i)
        CHECK(std::isfinite(g.logits.data()[i]));
}

TEST_CASE("global branch gradcheck at toy scale") {
    auto cfg = tiny_config();
    cfg.global_resize = {32, 32, 16};
    CommaNet<double> net(cfg);
    Rng rng(116);
    auto vol = Tensor<double>::uniform({1, 32, 32, 16}, rng, -1, 1, true);
    Rng coord_rng(117);
    auto rep = gradcheck<double>(
        [&] {
            auto g = net.global.forward(resample_trilinear(vol, cfg.global_resize));
            Rng wr(118);
            auto w = Tensor<double>::uniform(g.logits.shape(), wr, 0.1, 1.0);
            return sum(mul(g.logits, w));
        },
        {vol}, 1e-6, 120, &coord_rng);
    CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("training on one phantom: loss trends down over the first 50 iterations") {
    auto cfg = tiny_config();
    cfg.iterations = 60;
    cfg.val_interval = 1000;  // no validation inside this smoke test
    cfg.seed = 7;
    CommaNet<float> net(cfg);
    std::vector<TrainCase> cases;
    cases.push_back(overfit_case(500, {48, 48, 48}));
    TrainOptions opts;
    auto result = train_model(net, cases, {}, opts);
    REQUIRE(result.log.size() == 60);
    double first10 = 0, last10 = 0;
    for (int i = 0; i < 10; ++i) first10 += result.log[static_cast<std::size_t>(i)].loss;
    for (int i = 40; i < 50; ++i) last10 += result.log[static_cast<std::size_t>(i)].loss;
    CHECK(last10 < first10);
}

TEST_CASE("training is reproducible: same seed, identical loss curves") {
    auto cfg = tiny_config();
    cfg.iterations = 8;
    cfg.val_interval = 1000;
    auto run = [&] {
        CommaNet<float> net(cfg);
        std::vector<TrainCase> cases;
        cases.push_back(overfit_case(501, {32, 32, 32}));
        TrainOptions opts;
        return train_model(net, cases, {}, opts);
    };
    auto a = run();
    auto b = run();
    REQUIRE(a.log.size() == b.log.size());
    for (std::size_t i = 0; i < a.log.size(); ++i) {
        CHECK(a.log[i].loss == b.log[i].loss);
        CHECK(a.log[i].loss_local == b.log[i].loss_local);
    }
}

TEST_CASE("non-finite loss aborts with the iteration number") {
    auto cfg = tiny_config();
    cfg.iterations = 40;
    cfg.lr = 1e14;  // diverges promptly
    cfg.val_interval = 1000;
    CommaNet<float> net(cfg);
    std::vector<TrainCase> cases;
    cases.push_back(overfit_case(502, {32, 32, 32}));
    TrainOptions opts;
    try {
        train_model(net, cases, {}, opts);
        FAIL("expected NumericalFailure");
    } catch (const NumericalFailure& e) {
        CHECK(e.iteration >= 0);
        CHECK(std::string(e.what()).find("iteration") != std::string::npos);
    }
}

TEST_CASE("randomized-coordinate training runs and differs from true coordinates") {
    auto cfg = tiny_config();
    cfg.iterations = 4;
    cfg.val_interval = 1000;
    auto run = [&](bool rand_coord) {
        auto c = cfg;
        c.ablate.randomize_coords = rand_coord;
        CommaNet<float> net(c);
        std::vector<TrainCase> cases;
        cases.push_back(overfit_case(503, {32, 32, 32}));
        TrainOptions opts;
        return train_model(net, cases, {}, opts);
    };
    auto with = run(true);
    auto without = run(false);
    bool any_diff = false;
    for (std::size_t i = 0; i < with.log.size(); ++i)
        any_diff = any_diff || with.log[i].loss != without.log[i].loss;
    CHECK(any_diff);
}

TEST_CASE("inference on a volume equal to the patch is one thresholded forward") {
    auto cfg = tiny_config();
    CommaNet<float> net(cfg);
    PhantomSpec spec;
    spec.seed = 71;
    spec.extents = {16, 16, 16};
    auto ph = generate_phantom(spec);
    net.global_forward_calls = 0;
    auto mask = infer_volume(net, ph.image);
    CHECK(net.global_forward_calls == 1);
    NoGradGuard ng;
    auto g = net.global_forward(volume_to_tensor<float>(ph.image));
    auto rec = make_patch_record({0, 0, 0}, {16, 16, 16}, {16, 16, 16});
    auto logits = net.local_forward(volume_to_tensor<float>(ph.image), g.features, rec);
    auto probs = sigmoid(logits);
    auto vol_probs = tensor_to_volume(probs);
    for (std::int64_t i = 0; i < 16; ++i)
        for (std::int64_t j = 0; j < 16; ++j)
            for (std::int64_t k = 0; k < 16; ++k)
                CHECK(mask.at(i, j, k) == (vol_probs.at(i, j, k) > 0.5f ? 1 : 0));
}

TEST_CASE("stitched probabilities of a constant-logit model show no seams") {
    auto cfg = tiny_config();
    CommaNet<float> net(cfg);
    // force constant logits: zero the head, set its bias
    auto& head = net.decoder.head;
    for (auto& v : head.weight.mutable_data()) v = 0.0f;
    head.bias.mutable_data()[0] = 0.73f;
    PhantomSpec spec;
    spec.seed = 72;
    spec.extents = {40, 40, 40};  // forces overlapping tiles
    auto ph = generate_phantom(spec);
    Volume probs;
    net.global_forward_calls = 0;
    (void)infer_volume(net, ph.image, 0.5, &probs);
    CHECK(net.global_forward_calls == 1);
    float expect = 1.0f / (1.0f + std::exp(-0.73f));
    for (auto v : probs.voxels) CHECK(v == doctest::Approx(expect).epsilon(1e-5));
}

TEST_CASE("checkpoint round-trip preserves inference bitwise") {
    auto cfg = tiny_config();
    cfg.iterations = 3;
    cfg.val_interval = 1000;
    CommaNet<float> net(cfg);
    std::vector<TrainCase> cases;
    cases.push_back(overfit_case(504, {32, 32, 32}));
    TrainOptions opts;
    train_model(net, cases, {}, opts);
    auto dir = fs::temp_directory_path() / "comma_ckpt_rt";
    fs::create_directories(dir);
    auto path = (dir / "model.ckpt").string();
    save_checkpoint(path, net.reg);

    auto before = infer_volume(net, cases[0].image);
    CommaNet<float> net2(cfg);  // same seed, but weights get overwritten anyway
    net2.cfg.seed = 999;
    load_checkpoint(path, net2.reg);
    auto after = infer_volume(net2, cases[0].image);
    CHECK(before.voxels == after.voxels);
}

TEST_CASE("config file round trip and ablation keys") {
    auto cfg = desk_config();
    cfg.ablate.glf = false;
    cfg.lambda_global = 0.125;
    auto text = config_to_text(cfg);
    auto parsed = parse_config_text("preset=desk\n" + text);
    CHECK(parsed.lambda_global == doctest::Approx(0.125));
    CHECK_FALSE(parsed.ablate.glf);
    CHECK(parsed.patch_shape == cfg.patch_shape);
    CHECK_THROWS_AS(parse_config_text("nonsense=1\n"), std::invalid_argument);
    auto overridden = parse_config_text("preset=tiny\nlambda=0.5\nablate.randomize_coords=true\n");
    CHECK(overridden.lambda_global == doctest::Approx(0.5));
    CHECK(overridden.ablate.randomize_coords);
    CHECK(overridden.patch_shape == std::array<std::int64_t, 3>{16, 16, 16});
}

TEST_CASE("config validation rejects indivisible geometries") {
    auto cfg = tiny_config();
    cfg.patch_shape = {24, 24, 24};  // not divisible by 16
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    auto cfg2 = tiny_config();
    cfg2.cam.stage_local_token_sizes = {1, 1, 3, 2};  // 8 % 3 != 0
    CHECK_THROWS_AS(cfg2.validate(), std::invalid_argument);
}

TEST_CASE("global target downsampling hits nearest voxels") {
    BinaryMask3D m = BinaryMask3D::zeros({4, 4, 4});
    m.at(1, 1, 1) = 1;
    m.at(3, 3, 3) = 1;
    auto t = mask_to_grid_tensor<float>(m, {2, 2, 2});
    CHECK(t.shape() == Shape{1, 2, 2, 2});
    // grid cell g samples source voxel floor((g+0.5)*E/G): 0 -> 1, 1 -> 3
    CHECK(t.data()[0] == doctest::Approx(1.0f));
    CHECK(t.data()[7] == doctest::Approx(1.0f));
    CHECK(t.data()[1] == doctest::Approx(0.0f));
}
