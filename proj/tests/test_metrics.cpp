#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "bts/metrics.hpp"
#include "oracles.hpp"

using namespace bts;

namespace {

std::vector<std::uint8_t> empty_mask(const Shape3& s) {
    return std::vector<std::uint8_t>(static_cast<std::size_t>(s.voxels()), 0);
}

} // namespace

TEST_CASE("dice basics") {
    Shape3 s{4, 4, 4};
    auto a = empty_mask(s), b = empty_mask(s);

    SUBCASE("identical nonempty masks give 1") {
        a[3] = a[10] = 1;
        CHECK(dice(a, a, s) == 1.0);
    }
    SUBCASE("disjoint nonempty masks give 0") {
        a[0] = 1;
        b[1] = 1;
        CHECK(dice(a, b, s) == 0.0);
    }
    SUBCASE("|P|=2 |G|=2 overlap 1 gives 0.5") {
        a[0] = a[1] = 1;
        b[1] = b[2] = 1;
        CHECK(dice(a, b, s) == 0.5);
    }
    SUBCASE("empty conventions") {
        CHECK(dice(a, b, s) == 1.0);
        b[5] = 1;
        CHECK(dice(a, b, s) == 0.0);
    }
    SUBCASE("symmetry") {
        Rng rng(1);
        a = oracles::random_blob_mask(rng, s);
        b = oracles::random_blob_mask(rng, s);
        CHECK(dice(a, b, s) == dice(b, a, s));
    }
    SUBCASE("shape mismatch") {
        std::vector<std::uint8_t> small(8, 0);
        CHECK_THROWS_AS(dice(small, b, s), ShapeError);
    }
}

TEST_CASE("surface_voxels") {
    SUBCASE("solid 3^3 cube inside a 5^3 grid has 26 surface voxels") {
        Shape3 s{5, 5, 5};
        auto m = empty_mask(s);
        for (std::int64_t z = 1; z <= 3; ++z)
            for (std::int64_t y = 1; y <= 3; ++y)
                for (std::int64_t x = 1; x <= 3; ++x) m[linear_index(s, x, y, z)] = 1;
        auto surf = surface_voxels(m, s);
        std::int64_t count = 0;
        for (auto v : surf) count += v;
        CHECK(count == 26);
        CHECK(surf[linear_index(s, 2, 2, 2)] == 0); // center is interior
    }
    SUBCASE("single voxel is its own surface") {
        Shape3 s{3, 3, 3};
        auto m = empty_mask(s);
        m[linear_index(s, 1, 1, 1)] = 1;
        auto surf = surface_voxels(m, s);
        CHECK(surf == m);
    }
    SUBCASE("empty mask has empty surface") {
        Shape3 s{3, 3, 3};
        auto surf = surface_voxels(empty_mask(s), s);
        for (auto v : surf) CHECK(v == 0);
    }
    SUBCASE("grid boundary counts as outside") {
        Shape3 s{2, 2, 2};
        std::vector<std::uint8_t> m(8, 1);
        auto surf = surface_voxels(m, s);
        for (auto v : surf) CHECK(v == 1); // every voxel touches the grid edge
    }
}

TEST_CASE("hd95 basics") {
    Shape3 s{6, 6, 6};
    auto a = empty_mask(s), b = empty_mask(s);

    SUBCASE("pred == gt nonempty gives 0") {
        a[linear_index(s, 2, 3, 1)] = 1;
        a[linear_index(s, 2, 4, 1)] = 1;
        CHECK(hd95(a, a, s, UNIT_SPACING) == 0.0);
    }
    SUBCASE("two single voxels 3 apart give 3") {
        a[linear_index(s, 0, 0, 0)] = 1;
        b[linear_index(s, 0, 0, 3)] = 1;
        CHECK(hd95(a, b, s, UNIT_SPACING) == doctest::Approx(3.0).epsilon(1e-12));
    }
    SUBCASE("empty conventions") {
        CHECK(hd95(a, b, s, UNIT_SPACING) == 0.0);
        a[0] = 1;
        CHECK(hd95(a, b, s, UNIT_SPACING) == HD95_EMPTY_PENALTY);
        CHECK(hd95(b, a, s, UNIT_SPACING) == HD95_EMPTY_PENALTY);
    }
    SUBCASE("anisotropic spacing is honored") {
        a[linear_index(s, 0, 0, 0)] = 1;
        b[linear_index(s, 0, 0, 2)] = 1;
        CHECK(hd95(a, b, s, Spacing3{1.0f, 1.0f, 2.5f}) == doctest::Approx(5.0).epsilon(1e-12));
    }
}

TEST_CASE("hd95 fast path matches the all-pairs oracle") {
    Rng rng(77);
    int nontrivial = 0;
    for (int trial = 0; trial < 60; ++trial) {
        Shape3 s{static_cast<std::int64_t>(6 + rng.uniform_int(11)),
                 static_cast<std::int64_t>(6 + rng.uniform_int(11)),
                 static_cast<std::int64_t>(6 + rng.uniform_int(11))};
        Spacing3 sp{static_cast<float>(rng.uniform(0.5, 3.0)),
                    static_cast<float>(rng.uniform(0.5, 3.0)),
                    static_cast<float>(rng.uniform(0.5, 3.0))};
        auto p = oracles::random_blob_mask(rng, s);
        auto g = oracles::random_blob_mask(rng, s);
        double fast = hd95(p, g, s, sp);
        double slow = oracles::hd95_bruteforce(p, g, s, sp);
        CHECK(std::abs(fast - slow) <= 1e-6);
        if (fast > 0.0 && fast != HD95_EMPTY_PENALTY) ++nontrivial;

        // symmetry of the combined-multiset definition
        CHECK(hd95(g, p, s, sp) == doctest::Approx(fast).epsilon(1e-12));
    }
    CHECK(nontrivial > 20);
}

TEST_CASE("percentile uses linear interpolation") {
    CHECK(percentile_linear({1.0, 2.0, 3.0, 4.0}, 50.0) == doctest::Approx(2.5));
    CHECK(percentile_linear({0.0, 10.0}, 95.0) == doctest::Approx(9.5));
    CHECK(percentile_linear({5.0}, 95.0) == 5.0);
    CHECK_THROWS_AS(percentile_linear({}, 95.0), ValueError);
}

TEST_CASE("lesionwise") {
    Shape3 s{20, 12, 12};
    auto gt = empty_mask(s), pred = empty_mask(s);
    // one gt lesion: 3x3x3 cube at (2..4)^3
    for (std::int64_t z = 2; z <= 4; ++z)
        for (std::int64_t y = 2; y <= 4; ++y)
            for (std::int64_t x = 2; x <= 4; ++x) gt[linear_index(s, x, y, z)] = 1;

    SUBCASE("perfect prediction gives (1, 0)") {
        LesionWiseResult r = lesionwise(gt, gt, s, UNIT_SPACING);
        CHECK(r.dice == 1.0);
        CHECK(r.hd95 == 0.0);
        CHECK(r.gt_lesions == 1);
        CHECK(r.false_positives == 0);
    }

    SUBCASE("perfect match plus one far FP blob halves the lesion dice") {
        pred = gt;
        // 10-voxel FP far away (beyond the 3-iteration dilation halo)
        for (std::int64_t x = 14; x < 19; ++x) {
            pred[linear_index(s, x, 9, 9)] = 1;
            pred[linear_index(s, x, 10, 9)] = 1;
        }
        LesionWiseResult r = lesionwise(pred, gt, s, UNIT_SPACING);
        CHECK(r.false_positives == 1);
        CHECK(r.dice == doctest::Approx(0.5));
        CHECK(r.hd95 == doctest::Approx((0.0 + HD95_EMPTY_PENALTY) / 2.0));
    }

    SUBCASE("missed lesion gives (0, penalty)") {
        LesionWiseResult r = lesionwise(pred, gt, s, UNIT_SPACING);
        CHECK(r.dice == 0.0);
        CHECK(r.hd95 == HD95_EMPTY_PENALTY);
    }

    SUBCASE("both empty gives (1, 0)") {
        auto e1 = empty_mask(s), e2 = empty_mask(s);
        LesionWiseResult r = lesionwise(e1, e2, s, UNIT_SPACING);
        CHECK(r.dice == 1.0);
        CHECK(r.hd95 == 0.0);
    }

    SUBCASE("single lesion + single matching component degenerates to whole-mask metrics") {
        pred = gt;
        pred[linear_index(s, 5, 2, 2)] = 1; // slightly larger prediction, still one component
        LesionWiseResult r = lesionwise(pred, gt, s, UNIT_SPACING);
        CHECK(r.dice == doctest::Approx(dice(pred, gt, s)));
        CHECK(r.hd95 == doctest::Approx(hd95(pred, gt, s, UNIT_SPACING)));
    }

    SUBCASE("min_lesion_volume drops tiny gt lesions") {
        gt[linear_index(s, 18, 1, 1)] = 1; // 1-voxel lesion
        LesionWiseOpts opts;
        opts.min_lesion_volume = 2;
        LesionWiseResult keep_all = lesionwise(empty_mask(s), gt, s, UNIT_SPACING, {});
        LesionWiseResult dropped = lesionwise(empty_mask(s), gt, s, UNIT_SPACING, opts);
        CHECK(keep_all.gt_lesions == 2);
        CHECK(dropped.gt_lesions == 1);
    }
}

TEST_CASE("evaluate_case expands regions and flags empties") {
    Shape3 s{10, 10, 10};
    LabelMap gt = make_labelmap(s);
    for (std::int64_t z = 2; z < 6; ++z)
        for (std::int64_t y = 2; y < 6; ++y)
            for (std::int64_t x = 2; x < 6; ++x)
                gt.data[linear_index(s, x, y, z)] = LABEL_SNFH; // WT only

    SUBCASE("pred == gt gives dice 1 hd95 0") {
        CaseMetrics cm = evaluate_case(gt, gt, {}, "c0");
        for (const auto& r : cm.regions) {
            CHECK(r.dice == 1.0);
            CHECK(r.hd95 == 0.0);
        }
        // ET and TC are empty on both sides
        CHECK(cm.regions[0].gt_empty);
        CHECK(cm.regions[0].pred_empty);
    }

    SUBCASE("sphere vs shifted sphere matches the brute-force oracle") {
        LabelMap a = make_labelmap(s), b = make_labelmap(s);
        auto paint = [&](LabelMap& m, double cx, double cy, double cz) {
            for (std::int64_t z = 0; z < s.nz; ++z)
                for (std::int64_t y = 0; y < s.ny; ++y)
                    for (std::int64_t x = 0; x < s.nx; ++x) {
                        double dx = x - cx, dy = y - cy, dz = z - cz;
                        if (dx * dx + dy * dy + dz * dz <= 9.0)
                            m.data[linear_index(s, x, y, z)] = LABEL_ET;
                    }
        };
        paint(a, 4, 4, 4);
        paint(b, 5, 4, 4);
        CaseMetrics cm = evaluate_case(a, b, {}, "s");
        RegionMasks ra = labels_to_regions(a), rb = labels_to_regions(b);
        for (int r = 0; r < NUM_REGIONS; ++r) {
            double expect_hd = oracles::hd95_bruteforce(ra.masks[r], rb.masks[r], s, UNIT_SPACING);
            CHECK(cm.regions[r].hd95 == doctest::Approx(expect_hd).epsilon(1e-9));
        }
    }

    SUBCASE("geometry mismatch is rejected") {
        LabelMap other = make_labelmap({9, 10, 10});
        CHECK_THROWS_AS(evaluate_case(gt, other, {}, "x"), ShapeError);
    }
}

TEST_CASE("aggregate reproduces challenge table arithmetic") {
    SUBCASE("three-region row: Dice (0.883, 0.873, 0.933) -> 0.8963") {
        std::array<double, 3> means{0.883, 0.873, 0.933};
        CHECK(mean_of_region_means(means) == doctest::Approx(0.8963).epsilon(5e-4));
    }
    SUBCASE("three-region row: HD95 (14.248, 21.028, 8.770) -> 14.682") {
        std::array<double, 3> means{14.248, 21.028, 8.770};
        CHECK(std::abs(mean_of_region_means(means) - 14.682) < 5e-4);
    }
    SUBCASE("six-region row -> 0.830") {
        std::array<double, 6> means{0.657, 0.89, 0.89, 0.853, 0.723, 0.967};
        CHECK(std::abs(mean_of_region_means(means) - 0.830) < 5e-4);
    }
    SUBCASE("aggregate over cases averages region-first") {
        CaseMetrics a, b;
        a.case_id = "a";
        b.case_id = "b";
        for (int r = 0; r < NUM_REGIONS; ++r) {
            a.regions[r].dice = 0.8 + 0.05 * r;
            b.regions[r].dice = 0.6 + 0.05 * r;
            a.regions[r].hd95 = 2.0 * r;
            b.regions[r].hd95 = 4.0 * r;
        }
        std::vector<CaseMetrics> cases{a, b};
        AggregateReport rep = aggregate(cases);
        CHECK(rep.mean_dice[0] == doctest::Approx(0.7));
        CHECK(rep.overall_dice == doctest::Approx((0.7 + 0.75 + 0.8) / 3.0));
        CHECK(rep.overall_hd95 == doctest::Approx((0.0 + 3.0 + 6.0) / 3.0));
        CHECK(rep.case_count == 2);
    }
    SUBCASE("empty input is rejected") {
        std::vector<CaseMetrics> none;
        CHECK_THROWS_AS(aggregate(none), ValueError);
    }
}

TEST_CASE("report serialization") {
    Shape3 s{6, 6, 6};
    LabelMap gt = make_labelmap(s);
    gt.data[0] = LABEL_ET;
    MetricOpts opts;
    CaseMetrics cm = evaluate_case(gt, gt, opts, "case-1");
    std::vector<CaseMetrics> cases{cm};
    AggregateReport agg = aggregate(cases);

    std::string js = report_to_json(cases, agg, opts);
    CHECK(js.find("\"case_id\": \"case-1\"") != std::string::npos);
    CHECK(js.find("\"aggregate\"") != std::string::npos);

    std::string csv = report_to_csv(cases, agg, opts);
    CHECK(csv.find("case_id,region,dice,hd95") == 0);
    CHECK(csv.find("dice_et,dice_tc,dice_wt,avg_dice,hd95_et,hd95_tc,hd95_wt,avg_hd95") !=
          std::string::npos);
}
