#ifndef BTS_POSTPROCESS_HPP
#define BTS_POSTPROCESS_HPP

#include <span>
#include <string>
#include <vector>

#include "bts/metrics.hpp"
#include "bts/volume.hpp"

namespace bts {

struct PostprocessConfig {
    // Per-region binarization thresholds (ET, TC, WT).
    std::array<double, NUM_REGIONS> thresholds{0.7, 0.7, 0.5};
    // Components strictly smaller than these voxel counts are removed.
    std::array<std::int64_t, NUM_REGIONS> min_sizes{0, 0, 0};
    int connectivity = 26;

    void validate() const;
};

// mask_r = probs_r >= tau_r (ties included). No hierarchy implied yet.
RegionMasks binarize(const RegionProbs& probs, const std::array<double, NUM_REGIONS>& thresholds);

struct ComponentLabels {
    std::vector<std::int32_t> labels; // 0 = background, 1..count = components
    std::int32_t count = 0;
    std::vector<std::int64_t> sizes; // sizes[k-1] = voxels in component k
};

// Maximal connected sets labeled 1..n in first-voxel scan order
// (x-fastest linear order), for connectivity 6, 18 or 26.
ComponentLabels connected_components(const std::vector<std::uint8_t>& mask, const Shape3& shape,
                                     int connectivity);

// Removes exactly the components with size < min_size. Idempotent.
std::vector<std::uint8_t> filter_min_size(const std::vector<std::uint8_t>& mask,
                                          const Shape3& shape, std::int64_t min_size,
                                          int connectivity);

// binarize -> per-region min-size filter -> enforce_hierarchy -> labels.
LabelMap postprocess(const RegionProbs& probs, const PostprocessConfig& config);

struct SweepCase {
    RegionProbs probs;
    LabelMap gt;
};

struct SweepRow {
    PostprocessConfig config;
    std::array<double, NUM_REGIONS> dice{};
    std::array<double, NUM_REGIONS> hd95{};
    double mean_dice = 0.0;
    double mean_hd95 = 0.0;
};

// Evaluates every config over the cases; rows sorted by mean Dice
// descending, ties broken by mean HD95 ascending.
std::vector<SweepRow> sweep_thresholds(std::span<const SweepCase> cases,
                                       std::span<const PostprocessConfig> grid,
                                       const MetricOpts& metric_opts = {});

// One row per config; optional group label column (e.g. per learning rate).
std::string sweep_to_csv(std::span<const SweepRow> rows, const std::string& group = "");
std::string sweep_csv_header(bool with_group);

} // namespace bts

#endif
