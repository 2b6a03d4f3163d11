#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "bts/volume.hpp"

using namespace bts;

namespace {

LabelMap random_labelmap(Rng& rng, Shape3 shape) {
    LabelMap m = make_labelmap(shape);
    for (auto& v : m.data) v = static_cast<std::uint8_t>(rng.uniform_int(4));
    return m;
}

std::size_t count_set(const std::vector<std::uint8_t>& mask) {
    std::size_t n = 0;
    for (auto v : mask) n += v;
    return n;
}

} // namespace

TEST_CASE("labels_to_regions definitions") {
    LabelMap m = make_labelmap({4, 4, 4});

    SUBCASE("all-zero map gives three empty masks") {
        RegionMasks r = labels_to_regions(m);
        CHECK(count_set(r.mask(Region::ET)) == 0);
        CHECK(count_set(r.mask(Region::TC)) == 0);
        CHECK(count_set(r.mask(Region::WT)) == 0);
    }

    SUBCASE("single label-3 voxel lands in ET, TC and WT") {
        m.data[linear_index(m.shape, 1, 2, 3)] = LABEL_ET;
        RegionMasks r = labels_to_regions(m);
        std::int64_t idx = linear_index(m.shape, 1, 2, 3);
        CHECK(r.mask(Region::ET)[idx] == 1);
        CHECK(r.mask(Region::TC)[idx] == 1);
        CHECK(r.mask(Region::WT)[idx] == 1);
        CHECK(count_set(r.mask(Region::WT)) == 1);
    }

    SUBCASE("one voxel of each label gives |ET|=1 |TC|=2 |WT|=3") {
        m.data[0] = LABEL_NETC;
        m.data[1] = LABEL_SNFH;
        m.data[2] = LABEL_ET;
        RegionMasks r = labels_to_regions(m);
        CHECK(count_set(r.mask(Region::ET)) == 1);
        CHECK(count_set(r.mask(Region::TC)) == 2);
        CHECK(count_set(r.mask(Region::WT)) == 3);
    }
}

TEST_CASE("labels_to_regions rejects invalid label values") {
    LabelMap m = make_labelmap({2, 2, 2});
    m.data[3] = 4;
    CHECK_THROWS_AS(labels_to_regions(m), ValueError);
}

TEST_CASE("regions_to_labels") {
    SUBCASE("empty masks give all-zero labels") {
        RegionMasks r = make_region_masks({3, 3, 3});
        LabelMap m = regions_to_labels(r);
        for (auto v : m.data) CHECK(v == 0);
    }

    SUBCASE("round trip restores the original map") {
        LabelMap m = make_labelmap({4, 3, 2});
        m.data[0] = LABEL_NETC;
        m.data[5] = LABEL_SNFH;
        m.data[9] = LABEL_ET;
        LabelMap back = regions_to_labels(labels_to_regions(m));
        CHECK(back.data == m.data);
    }

    SUBCASE("non-nested TC voxel becomes label 1 and joins WT") {
        RegionMasks r = make_region_masks({3, 1, 1});
        r.mask(Region::TC)[0] = 1; // not in WT
        LabelMap m = regions_to_labels(r);
        CHECK(m.data[0] == LABEL_NETC);
        RegionMasks again = labels_to_regions(m);
        CHECK(again.mask(Region::WT)[0] == 1);
    }

    SUBCASE("geometry mismatch between masks is rejected") {
        RegionMasks r = make_region_masks({3, 1, 1});
        r.mask(Region::WT).resize(2);
        CHECK_THROWS_AS(regions_to_labels(r), ShapeError);
    }
}

TEST_CASE("enforce_hierarchy") {
    RegionMasks r = make_region_masks({2, 2, 2});

    SUBCASE("already nested input is unchanged") {
        r.mask(Region::ET)[0] = 1;
        r.mask(Region::TC)[0] = 1;
        r.mask(Region::WT)[0] = 1;
        RegionMasks out = enforce_hierarchy(r);
        CHECK(out.masks == r.masks);
    }

    SUBCASE("ET voxel missing from TC is added to TC and WT") {
        r.mask(Region::ET)[3] = 1;
        RegionMasks out = enforce_hierarchy(r);
        CHECK(out.mask(Region::TC)[3] == 1);
        CHECK(out.mask(Region::WT)[3] == 1);
    }

    SUBCASE("idempotent") {
        Rng rng(7);
        for (auto& m : r.masks)
            for (auto& v : m) v = static_cast<std::uint8_t>(rng.uniform_int(2));
        RegionMasks once = enforce_hierarchy(r);
        RegionMasks twice = enforce_hierarchy(once);
        CHECK(once.masks == twice.masks);
    }
}

TEST_CASE("region algebra properties on random maps") {
    Rng rng(42);
    for (int trial = 0; trial < 50; ++trial) {
        LabelMap m = random_labelmap(rng, {8, 8, 8});
        RegionMasks r = labels_to_regions(m);

        // masks from labels are always nested
        for (std::size_t i = 0; i < r.mask(Region::ET).size(); ++i) {
            CHECK(r.mask(Region::ET)[i] <= r.mask(Region::TC)[i]);
            CHECK(r.mask(Region::TC)[i] <= r.mask(Region::WT)[i]);
        }

        LabelMap back = regions_to_labels(r);
        CHECK(back.data == m.data);
    }

    // enforce_hierarchy is monotone: never clears a voxel
    for (int trial = 0; trial < 20; ++trial) {
        RegionMasks r = make_region_masks({6, 6, 6});
        for (auto& m : r.masks)
            for (auto& v : m) v = static_cast<std::uint8_t>(rng.uniform_int(2));
        RegionMasks out = enforce_hierarchy(r);
        for (int c = 0; c < NUM_REGIONS; ++c)
            for (std::size_t i = 0; i < r.masks[c].size(); ++i)
                CHECK(out.masks[c][i] >= r.masks[c][i]);
    }
}

TEST_CASE("type invariants") {
    CHECK_THROWS_AS(make_volume({0, 2, 2}), ShapeError);
    CHECK_THROWS_AS(make_volume({2, 2, 2}, {1.0f, 0.0f, 1.0f}), ValueError);

    Volume3 v = make_volume({2, 2, 2});
    v.data.pop_back();
    CHECK_THROWS_AS(v.validate(), ShapeError);

    LabelMap m = make_labelmap({2, 2, 2});
    m.data[0] = 17;
    CHECK_THROWS_AS(m.validate(), ValueError);

    RegionProbs p = make_region_probs({2, 2, 2});
    p.channels[1].data[0] = 1.5f;
    CHECK_THROWS_AS(p.validate(), ValueError);
    p.kind = ProbKind::Logits;
    CHECK_NOTHROW(p.validate());
}

TEST_CASE("channel grid stacking keeps modality order") {
    MultiModalImage img;
    for (int c = 0; c < NUM_MODALITIES; ++c) {
        img.channels[c] = make_volume({2, 2, 2});
        for (auto& v : img.channels[c].data) v = static_cast<float>(c + 1);
    }
    ChannelGrid g = stack_modalities(img);
    CHECK(g.channels == 4);
    CHECK(g.at(0, 0, 0, 0) == 1.0f);
    CHECK(g.at(3, 1, 1, 1) == 4.0f);

    RegionProbs p = make_region_probs({2, 2, 2});
    p.channels[2].data[5] = 0.5f;
    ChannelGrid pg = probs_to_grid(p);
    RegionProbs back = grid_to_probs(pg, ProbKind::Probabilities);
    CHECK(back.channels[2].data == p.channels[2].data);
}
