#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bts/losses.hpp"

using namespace bts;

namespace {

LogitBatch random_logits(Rng& rng, std::size_t samples, Shape3 shape, double lo = -3.0,
                         double hi = 3.0) {
    LogitBatch batch;
    for (std::size_t s = 0; s < samples; ++s) {
        LogitSample ls;
        ls.shape = shape;
        ls.values.resize(static_cast<std::size_t>(NUM_REGIONS * shape.voxels()));
        for (auto& v : ls.values) v = rng.uniform(lo, hi);
        batch.push_back(std::move(ls));
    }
    return batch;
}

TargetBatch random_targets(Rng& rng, std::size_t samples, Shape3 shape, double p = 0.4) {
    TargetBatch batch;
    for (std::size_t s = 0; s < samples; ++s) {
        TargetSample ts;
        ts.shape = shape;
        ts.values.resize(static_cast<std::size_t>(NUM_REGIONS * shape.voxels()));
        for (auto& v : ts.values) v = rng.bernoulli(p) ? 1 : 0;
        batch.push_back(std::move(ts));
    }
    return batch;
}

// Central finite differences on a random subset of logit coordinates.
template <typename LossFn>
void check_gradients(Rng& rng, LogitBatch logits, const TargetBatch& targets, LossFn&& fn,
                     int coords_per_trial = 12, double h = 1e-3, double tol = 1e-4) {
    LossResult base = fn(logits, targets);
    for (int c = 0; c < coords_per_trial; ++c) {
        std::size_t s = static_cast<std::size_t>(rng.uniform_int(logits.size()));
        std::size_t e = static_cast<std::size_t>(rng.uniform_int(logits[s].values.size()));
        double orig = logits[s].values[e];
        logits[s].values[e] = orig + h;
        double up = fn(logits, targets).loss;
        logits[s].values[e] = orig - h;
        double down = fn(logits, targets).loss;
        logits[s].values[e] = orig;
        double fd = (up - down) / (2.0 * h);
        double an = base.grads[s][e];
        double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
        CHECK(rel < tol);
    }
}

} // namespace

TEST_CASE("batch dice loss values") {
    Shape3 s{4, 4, 4};
    Rng rng(1);

    SUBCASE("perfect prediction has near-zero loss") {
        TargetBatch targets = random_targets(rng, 2, s);
        LogitBatch logits;
        for (const auto& t : targets) {
            LogitSample ls;
            ls.shape = s;
            ls.values.resize(t.values.size());
            for (std::size_t e = 0; e < t.values.size(); ++e)
                ls.values[e] = t.values[e] ? 12.0 : -12.0;
            logits.push_back(std::move(ls));
        }
        LossResult r = batch_dice_loss(logits, targets);
        CHECK(r.loss < 1e-3);
    }

    SUBCASE("all-zero targets with large-negative logits vanish via the smooth term") {
        TargetBatch targets(2);
        LogitBatch logits(2);
        for (int i = 0; i < 2; ++i) {
            targets[i].shape = s;
            targets[i].values.assign(static_cast<std::size_t>(3 * s.voxels()), 0);
            logits[i].shape = s;
            logits[i].values.assign(static_cast<std::size_t>(3 * s.voxels()), -30.0);
        }
        LossResult r = batch_dice_loss(logits, targets, 1e-5);
        // per channel: L = 1 - s/(sum_p + s) with sum_p = 128 * sigmoid(-30)
        double sum_p = 128.0 / (1.0 + std::exp(30.0));
        double expected = 1.0 - 1e-5 / (sum_p + 1e-5);
        CHECK(r.loss == doctest::Approx(expected).epsilon(1e-9));
        CHECK(r.loss < 1e-5);
    }

    SUBCASE("batch pooling differs from mean of per-sample dice") {
        // sample 1: many positives predicted confidently; sample 2: few
        // positives predicted badly. Pooled sums dilute sample 2's miss.
        Shape3 tiny{2, 2, 2};
        TargetBatch targets(2);
        LogitBatch logits(2);
        for (int i = 0; i < 2; ++i) {
            targets[i].shape = tiny;
            targets[i].values.assign(24, 0);
            logits[i].shape = tiny;
            logits[i].values.assign(24, -9.0);
        }
        for (int e = 0; e < 24; ++e) {
            targets[0].values[static_cast<std::size_t>(e)] = 1;
            logits[0].values[static_cast<std::size_t>(e)] = 9.0;
        }
        targets[1].values[0] = 1; // one positive, predicted negative

        LossResult pooled = batch_dice_loss(logits, targets);

        LogitBatch only0{logits[0]}, only1{logits[1]};
        TargetBatch t0{targets[0]}, t1{targets[1]};
        double per_sample_mean =
            0.5 * (batch_dice_loss(only0, t0).loss + batch_dice_loss(only1, t1).loss);
        CHECK(std::abs(pooled.loss - per_sample_mean) > 0.05);
    }
}

TEST_CASE("batch dice gradients match finite differences") {
    Rng rng(2);
    for (int trial = 0; trial < 20; ++trial) {
        LogitBatch logits = random_logits(rng, 2, {8, 8, 8});
        TargetBatch targets = random_targets(rng, 2, {8, 8, 8});
        check_gradients(rng, std::move(logits), targets,
                        [](const LogitBatch& l, const TargetBatch& t) {
                            return batch_dice_loss(l, t);
                        });
    }
}

TEST_CASE("focal loss values") {
    Shape3 one{1, 1, 1};

    SUBCASE("target 1, p = 0.5, gamma 2 gives 0.25 ln 2 per element") {
        LogitBatch logits(1);
        logits[0].shape = one;
        logits[0].values = {0.0, 0.0, 0.0}; // p = 0.5 in all three channels
        TargetBatch targets(1);
        targets[0].shape = one;
        targets[0].values = {1, 1, 1};
        LossResult r = focal_loss(logits, targets, 2.0);
        CHECK(r.loss == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
    }

    SUBCASE("gamma 0 reduces to binary cross-entropy") {
        Rng rng(3);
        LogitBatch logits = random_logits(rng, 2, {4, 4, 4});
        TargetBatch targets = random_targets(rng, 2, {4, 4, 4});
        LossResult r = focal_loss(logits, targets, 0.0);

        double bce = 0.0;
        std::size_t count = 0;
        for (std::size_t s = 0; s < logits.size(); ++s)
            for (std::size_t e = 0; e < logits[s].values.size(); ++e) {
                double p = 1.0 / (1.0 + std::exp(-logits[s].values[e]));
                bce += targets[s].values[e] ? -std::log(p) : -std::log(1.0 - p);
                ++count;
            }
        bce /= double(count);
        CHECK(std::abs(r.loss - bce) < 1e-10);
    }
}

TEST_CASE("focal gradients match finite differences") {
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        LogitBatch logits = random_logits(rng, 2, {8, 8, 8});
        TargetBatch targets = random_targets(rng, 2, {8, 8, 8});
        for (double gamma : {2.0, 0.0})
            check_gradients(rng, logits, targets,
                            [gamma](const LogitBatch& l, const TargetBatch& t) {
                                return focal_loss(l, t, gamma);
                            },
                            6);
    }
}

TEST_CASE("target downsampling strides from the corner") {
    TargetSample t;
    t.shape = {4, 4, 4};
    t.values.assign(static_cast<std::size_t>(3 * 64), 0);
    t.values[static_cast<std::size_t>(linear_index(t.shape, 0, 0, 0))] = 1;
    t.values[static_cast<std::size_t>(linear_index(t.shape, 2, 2, 2))] = 1;
    t.values[static_cast<std::size_t>(linear_index(t.shape, 1, 1, 1))] = 1; // dropped
    TargetSample d = downsample_targets(t, 2);
    CHECK(d.shape == Shape3{2, 2, 2});
    CHECK(d.values[static_cast<std::size_t>(linear_index(d.shape, 0, 0, 0))] == 1);
    CHECK(d.values[static_cast<std::size_t>(linear_index(d.shape, 1, 1, 1))] == 1);
    CHECK(d.values[static_cast<std::size_t>(linear_index(d.shape, 1, 0, 0))] == 0);

    CHECK_THROWS_AS(downsample_targets(TargetSample{{3, 4, 4}, {}}, 2), ShapeError);
}

TEST_CASE("deep-supervision combined loss") {
    Rng rng(5);
    Shape3 full{8, 8, 8};

    SUBCASE("single level with weight 1 equals dice + focal") {
        LogitBatch logits = random_logits(rng, 2, full);
        TargetBatch targets = random_targets(rng, 2, full);
        LossConfig cfg;
        cfg.ds_weights = {1.0};
        DsLossResult ds = ds_combined_loss({logits}, targets, cfg);
        LossResult direct = combined_loss(logits, targets, cfg);
        CHECK(ds.loss == doctest::Approx(direct.loss).epsilon(1e-12));
        for (std::size_t s = 0; s < logits.size(); ++s)
            for (std::size_t e = 0; e < logits[s].values.size(); ++e)
                CHECK(ds.grads[0][s][e] == doctest::Approx(direct.grads[s][e]).epsilon(1e-12));
    }

    SUBCASE("perfect predictions at all levels give near-zero loss") {
        TargetBatch targets = random_targets(rng, 2, full);
        std::vector<LogitBatch> levels;
        for (int l = 0; l < 4; ++l) {
            LogitBatch lb;
            for (const TargetSample& t : targets) {
                TargetSample down = downsample_targets(t, 1 << l);
                LogitSample ls;
                ls.shape = down.shape;
                ls.values.resize(down.values.size());
                for (std::size_t e = 0; e < down.values.size(); ++e)
                    ls.values[e] = down.values[e] ? 25.0 : -25.0;
                lb.push_back(std::move(ls));
            }
            levels.push_back(std::move(lb));
        }
        LossConfig cfg;
        DsLossResult ds = ds_combined_loss(levels, targets, cfg);
        CHECK(ds.loss < 1e-3);
    }

    SUBCASE("per-level gradients pass finite differences") {
        TargetBatch targets = random_targets(rng, 2, full);
        std::vector<LogitBatch> levels;
        for (int l = 0; l < 4; ++l) {
            Shape3 s{full.nx >> l, full.ny >> l, full.nz >> l};
            levels.push_back(random_logits(rng, 2, s));
        }
        LossConfig cfg;
        DsLossResult base = ds_combined_loss(levels, targets, cfg);
        const double h = 1e-3;
        for (int check = 0; check < 24; ++check) {
            std::size_t l = static_cast<std::size_t>(rng.uniform_int(levels.size()));
            std::size_t s = static_cast<std::size_t>(rng.uniform_int(levels[l].size()));
            std::size_t e =
                static_cast<std::size_t>(rng.uniform_int(levels[l][s].values.size()));
            double orig = levels[l][s].values[e];
            levels[l][s].values[e] = orig + h;
            double up = ds_combined_loss(levels, targets, cfg).loss;
            levels[l][s].values[e] = orig - h;
            double down = ds_combined_loss(levels, targets, cfg).loss;
            levels[l][s].values[e] = orig;
            double fd = (up - down) / (2.0 * h);
            double an = base.grads[l][s][e];
            double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8});
            CHECK(rel < 1e-4);
        }
    }

    SUBCASE("mismatched level shape is rejected") {
        LogitBatch logits = random_logits(rng, 1, {6, 8, 8}); // not full/2
        TargetBatch targets = random_targets(rng, 1, full);
        LossConfig cfg;
        cfg.ds_weights = {0.5, 0.5};
        std::vector<LogitBatch> levels{random_logits(rng, 1, full), logits};
        CHECK_THROWS_AS(ds_combined_loss(levels, targets, cfg), ShapeError);
    }
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.ds_weights = {0.5, 0.6};
    CHECK_THROWS_AS(cfg.validate(), ValueError);
    cfg = LossConfig{};
    cfg.focal_gamma = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ValueError);
}
