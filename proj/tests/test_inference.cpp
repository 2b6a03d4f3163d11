#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>

#include "bts/inference.hpp"

using namespace bts;

namespace {

ChannelGrid random_volume4(Rng& rng, Shape3 shape) {
    ChannelGrid g = make_channel_grid(4, shape);
    for (auto& v : g.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    return g;
}

// A voxelwise map with distinct, bounded outputs per region.
VoxelwisePredictor::Fn test_fn() {
    return [](const std::array<float, 4>& in) {
        auto squash = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
        return std::array<float, NUM_REGIONS>{
            static_cast<float>(squash(0.9 * in[0] - 0.2 * in[1])),
            static_cast<float>(squash(0.5 * in[1] + 0.3 * in[2] - 0.1)),
            static_cast<float>(squash(0.2 * in[0] + 0.4 * in[3] + 0.05))};
    };
}

} // namespace

TEST_CASE("plan_windows placement rule") {
    SUBCASE("challenge volume, 50% overlap: 12 windows") {
        WindowPlan plan = plan_windows({240, 240, 155}, {128, 160, 112}, 0.5);
        CHECK(plan.origins.size() == 12);
        // axis origin sets
        std::vector<std::int64_t> xs, ys, zs;
        for (const auto& o : plan.origins) {
            if (o[1] == 0 && o[2] == 0) xs.push_back(o[0]);
            if (o[0] == 0 && o[2] == 0) ys.push_back(o[1]);
            if (o[0] == 0 && o[1] == 0) zs.push_back(o[2]);
        }
        CHECK(xs == std::vector<std::int64_t>{0, 64, 112});
        CHECK(ys == std::vector<std::int64_t>{0, 80});
        CHECK(zs == std::vector<std::int64_t>{0, 43});
        CHECK(plan.pad_lo == std::array<std::int64_t, 3>{0, 0, 0});
    }

    SUBCASE("volume equal to window: one window at origin") {
        WindowPlan plan = plan_windows({16, 16, 16}, {16, 16, 16}, 0.7);
        REQUIRE(plan.origins.size() == 1);
        CHECK(plan.origins[0] == std::array<std::int64_t, 3>{0, 0, 0});
    }

    SUBCASE("70% overlap steps") {
        WindowPlan plan = plan_windows({240, 240, 155}, {128, 160, 112}, 0.7);
        // steps floor(W*0.3) = (38, 48, 33); just check the second origins
        std::vector<std::int64_t> xs;
        for (const auto& o : plan.origins)
            if (o[1] == 0 && o[2] == 0) xs.push_back(o[0]);
        REQUIRE(xs.size() >= 2);
        CHECK(xs[1] == 38);
    }

    SUBCASE("small volume is padded symmetrically") {
        WindowPlan plan = plan_windows({10, 16, 20}, {16, 16, 16}, 0.5);
        CHECK(plan.pad_lo[0] == 3);
        CHECK(plan.pad_hi[0] == 3);
        CHECK(plan.padded_extent == Shape3{16, 16, 20});
    }

    SUBCASE("origins are lexicographically sorted and end at extent-W") {
        WindowPlan plan = plan_windows({40, 33, 29}, {16, 16, 16}, 0.5);
        CHECK(std::is_sorted(plan.origins.begin(), plan.origins.end()));
        std::array<std::int64_t, 3> max_origin{0, 0, 0};
        for (const auto& o : plan.origins)
            for (int a = 0; a < 3; ++a) max_origin[a] = std::max(max_origin[a], o[a]);
        for (int a = 0; a < 3; ++a) CHECK(max_origin[a] == plan.padded_extent[a] - plan.window[a]);
    }

    SUBCASE("identical inputs give identical plans") {
        WindowPlan a = plan_windows({40, 33, 29}, {16, 16, 16}, 0.5);
        WindowPlan b = plan_windows({40, 33, 29}, {16, 16, 16}, 0.5);
        CHECK(a.origins == b.origins);
    }

    SUBCASE("invalid overlap is rejected") {
        CHECK_THROWS_AS(plan_windows({16, 16, 16}, {8, 8, 8}, 1.0), ValueError);
        CHECK_THROWS_AS(plan_windows({16, 16, 16}, {8, 8, 8}, -0.1), ValueError);
    }
}

TEST_CASE("blend_kernel") {
    SUBCASE("uniform 2x2x2 is eight ones") {
        std::vector<float> k = blend_kernel({2, 2, 2}, BlendMode::Uniform);
        CHECK(k == std::vector<float>(8, 1.0f));
    }

    SUBCASE("gaussian peak is exactly 1") {
        for (Shape3 w : {Shape3{7, 7, 7}, Shape3{8, 8, 8}, Shape3{6, 10, 4}}) {
            std::vector<float> k = blend_kernel(w, BlendMode::Gaussian);
            float mx = 0.0f;
            for (float v : k) mx = std::max(mx, v);
            CHECK(mx == 1.0f);
        }
    }

    SUBCASE("gaussian corner for W=8 floors at 1e-6") {
        // raw corner value exp(-3*3.5^2/2) ~ 1e-8 < 1e-6
        std::vector<float> k = blend_kernel({8, 8, 8}, BlendMode::Gaussian);
        CHECK(k[0] == 1e-6f);
        CHECK(k[linear_index({8, 8, 8}, 7, 7, 7)] == 1e-6f);
    }

    SUBCASE("gaussian is separable and symmetric") {
        Shape3 w{5, 5, 5};
        std::vector<float> k = blend_kernel(w, BlendMode::Gaussian);
        CHECK(k[linear_index(w, 2, 2, 2)] == 1.0f);
        CHECK(k[linear_index(w, 1, 2, 2)] == k[linear_index(w, 3, 2, 2)]);
        CHECK(k[linear_index(w, 0, 2, 2)] == k[linear_index(w, 2, 0, 2)]);
    }
}

TEST_CASE("sliding window reproduces a constant predictor exactly") {
    Rng rng(3);
    for (double overlap : {0.5, 0.7}) {
        for (BlendMode mode : {BlendMode::Uniform, BlendMode::Gaussian}) {
            ChannelGrid vol = random_volume4(rng, {25, 18, 22});
            ConstantPredictor pred({12, 12, 12}, {0.2f, 0.5f, 0.9f});
            WindowPlan plan = plan_windows(vol.shape, {12, 12, 12}, overlap, mode);
            RegionProbs probs = sliding_window_predict(vol, pred, plan);
            for (float v : probs.channels[0].data) CHECK(std::abs(v - 0.2f) <= 1e-6f);
            for (float v : probs.channels[1].data) CHECK(std::abs(v - 0.5f) <= 1e-6f);
            for (float v : probs.channels[2].data) CHECK(std::abs(v - 0.9f) <= 1e-6f);
        }
    }
}

TEST_CASE("sliding window equals whole-volume application for voxelwise predictors") {
    Rng rng(5);
    ChannelGrid vol = random_volume4(rng, {30, 21, 17});
    VoxelwisePredictor whole(vol.shape, test_fn());
    ChannelGrid direct = whole.predict(vol);

    for (double overlap : {0.5, 0.7}) {
        for (BlendMode mode : {BlendMode::Uniform, BlendMode::Gaussian}) {
            VoxelwisePredictor pred({12, 12, 12}, test_fn());
            WindowPlan plan = plan_windows(vol.shape, {12, 12, 12}, overlap, mode);
            RegionProbs probs = sliding_window_predict(vol, pred, plan);
            const std::int64_t n = vol.voxels();
            for (int c = 0; c < NUM_REGIONS; ++c)
                for (std::int64_t v = 0; v < n; ++v)
                    CHECK(std::abs(probs.channels[c].data[v] - direct.data[c * n + v]) <= 1e-5f);
        }
    }
}

TEST_CASE("padded volumes keep the voxelwise equivalence on real voxels") {
    Rng rng(6);
    ChannelGrid vol = random_volume4(rng, {10, 21, 9}); // smaller than the window on two axes
    VoxelwisePredictor whole(vol.shape, test_fn());
    ChannelGrid direct = whole.predict(vol);

    VoxelwisePredictor pred({12, 12, 12}, test_fn());
    WindowPlan plan = plan_windows(vol.shape, {12, 12, 12}, 0.7, BlendMode::Gaussian);
    CHECK(plan.pad_lo[0] == 1);
    CHECK(plan.pad_hi[0] == 1);
    RegionProbs probs = sliding_window_predict(vol, pred, plan);
    const std::int64_t n = vol.voxels();
    for (int c = 0; c < NUM_REGIONS; ++c)
        for (std::int64_t v = 0; v < n; ++v)
            CHECK(std::abs(probs.channels[c].data[v] - direct.data[c * n + v]) <= 1e-5f);
}

TEST_CASE("every voxel is covered on random shapes") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        Shape3 shape{static_cast<std::int64_t>(5 + rng.uniform_int(40)),
                     static_cast<std::int64_t>(5 + rng.uniform_int(40)),
                     static_cast<std::int64_t>(5 + rng.uniform_int(40))};
        Shape3 window{static_cast<std::int64_t>(4 + rng.uniform_int(12)),
                      static_cast<std::int64_t>(4 + rng.uniform_int(12)),
                      static_cast<std::int64_t>(4 + rng.uniform_int(12))};
        double overlap = rng.bernoulli(0.5) ? 0.5 : 0.7;
        WindowPlan plan = plan_windows(shape, window, overlap);

        std::vector<std::int32_t> cover(static_cast<std::size_t>(plan.padded_extent.voxels()), 0);
        for (const auto& o : plan.origins)
            for (std::int64_t z = 0; z < window.nz; ++z)
                for (std::int64_t y = 0; y < window.ny; ++y)
                    for (std::int64_t x = 0; x < window.nx; ++x)
                        ++cover[linear_index(plan.padded_extent, o[0] + x, o[1] + y, o[2] + z)];
        for (auto c : cover) CHECK(c >= 1);
    }
}

TEST_CASE("mednext predictor output is a valid probability patch") {
    MedNeXtConfig cfg = MedNeXtConfig::toy();
    ParamTree tree = build_mednext(cfg, 9);
    MedNeXtPredictor pred(std::move(tree), cfg, {16, 16, 16});
    Rng rng(11);
    ChannelGrid vol = random_volume4(rng, {20, 16, 18});
    WindowPlan plan = plan_windows(vol.shape, {16, 16, 16}, 0.5, BlendMode::Gaussian);
    RegionProbs probs = sliding_window_predict(vol, pred, plan);
    probs.validate(); // checks [0,1] bounds
    CHECK(probs.shape() == vol.shape);
}

TEST_CASE("ensemble_mean") {
    Rng rng(13);
    Shape3 s{6, 5, 4};
    auto random_probs = [&]() {
        RegionProbs p = make_region_probs(s);
        for (int c = 0; c < NUM_REGIONS; ++c)
            for (auto& v : p.channels[c].data) v = static_cast<float>(rng.uniform01());
        return p;
    };

    SUBCASE("mean of identical maps is the map") {
        RegionProbs p = random_probs();
        std::vector<RegionProbs> maps(5, p);
        RegionProbs mean = ensemble_mean(maps);
        for (int c = 0; c < NUM_REGIONS; ++c)
            for (std::size_t v = 0; v < p.channels[c].data.size(); ++v)
                CHECK(std::abs(mean.channels[c].data[v] - p.channels[c].data[v]) <= 1e-7f);
    }

    SUBCASE("0.2 and 0.8 average to 0.5") {
        RegionProbs a = make_region_probs(s), b = make_region_probs(s);
        std::fill(a.channels[0].data.begin(), a.channels[0].data.end(), 0.2f);
        std::fill(b.channels[0].data.begin(), b.channels[0].data.end(), 0.8f);
        std::vector<RegionProbs> maps{a, b};
        RegionProbs mean = ensemble_mean(maps);
        for (float v : mean.channels[0].data) CHECK(v == doctest::Approx(0.5).epsilon(1e-7));
    }

    SUBCASE("permutation invariance within 1e-7") {
        std::vector<RegionProbs> maps{random_probs(), random_probs(), random_probs(),
                                      random_probs(), random_probs()};
        RegionProbs fwd = ensemble_mean(maps);
        std::reverse(maps.begin(), maps.end());
        RegionProbs rev = ensemble_mean(maps);
        for (int c = 0; c < NUM_REGIONS; ++c)
            for (std::size_t v = 0; v < fwd.channels[c].data.size(); ++v)
                CHECK(std::abs(fwd.channels[c].data[v] - rev.channels[c].data[v]) <= 1e-7f);
    }

    SUBCASE("output bounded by member min/max") {
        std::vector<RegionProbs> maps{random_probs(), random_probs(), random_probs()};
        RegionProbs mean = ensemble_mean(maps);
        for (int c = 0; c < NUM_REGIONS; ++c)
            for (std::size_t v = 0; v < mean.channels[c].data.size(); ++v) {
                float lo = 1.0f, hi = 0.0f;
                for (const auto& m : maps) {
                    lo = std::min(lo, m.channels[c].data[v]);
                    hi = std::max(hi, m.channels[c].data[v]);
                }
                CHECK(mean.channels[c].data[v] >= lo - 1e-7f);
                CHECK(mean.channels[c].data[v] <= hi + 1e-7f);
            }
    }

    SUBCASE("mean-then-binarize matches a scalar oracle") {
        std::vector<RegionProbs> maps{random_probs(), random_probs(), random_probs(),
                                      random_probs(), random_probs()};
        RegionProbs mean = ensemble_mean(maps);
        const std::size_t n = static_cast<std::size_t>(s.voxels());
        for (int c = 0; c < NUM_REGIONS; ++c)
            for (std::size_t v = 0; v < n; ++v) {
                double acc = 0.0;
                for (const auto& m : maps) acc += m.channels[c].data[v];
                bool oracle_bit = acc / 5.0 >= 0.5;
                bool got_bit = mean.channels[c].data[v] >= 0.5f;
                // allow the knife-edge case where float rounding flips the bit
                if (std::abs(acc / 5.0 - 0.5) > 1e-6) CHECK(oracle_bit == got_bit);
            }
    }

    SUBCASE("empty list and geometry mismatch are rejected") {
        std::vector<RegionProbs> none;
        CHECK_THROWS_AS(ensemble_mean(none), ValueError);
        std::vector<RegionProbs> bad{random_probs(), make_region_probs({4, 4, 4})};
        CHECK_THROWS_AS(ensemble_mean(bad), ShapeError);
    }
}

TEST_CASE("probability map persistence round trips") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "bts_probs_test";
    fs::create_directories(dir);
    Rng rng(17);
    RegionProbs p = make_region_probs({7, 5, 3}, {1.0f, 1.5f, 2.0f});
    for (int c = 0; c < NUM_REGIONS; ++c)
        for (auto& v : p.channels[c].data) v = static_cast<float>(rng.uniform01());

    ProbsInfo info;
    info.window = {4, 4, 4};
    info.overlap = 0.5;
    info.blend = "gaussian";
    info.model_ids = {"fold0", "fold1"};
    write_probs(p, dir / "case0_probs", info);

    ProbsInfo back_info;
    RegionProbs back = read_probs(dir / "case0_probs", &back_info);
    CHECK(back.shape() == p.shape());
    CHECK(back.spacing() == p.spacing());
    for (int c = 0; c < NUM_REGIONS; ++c) CHECK(back.channels[c].data == p.channels[c].data);
    CHECK(back_info.model_ids == info.model_ids);
    CHECK(back_info.overlap == 0.5);
    CHECK(back_info.blend == "gaussian");
}
