#ifndef BTS_METRICS_HPP
#define BTS_METRICS_HPP

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bts/volume.hpp"

namespace bts {

// HD95 penalty when exactly one mask is empty, and for missed / false
// positive lesions in the lesion-wise variant (BraTS evaluation convention).
inline constexpr double HD95_EMPTY_PENALTY = 374.0;

// 2|P&G| / (|P|+|G|); both empty -> 1, exactly one empty -> 0.
double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
            const Shape3& shape);

// Mask voxels with at least one six-neighbor outside the mask
// (out-of-bounds counts as outside). Returned as a binary grid.
std::vector<std::uint8_t> surface_voxels(const std::vector<std::uint8_t>& mask,
                                         const Shape3& shape);

// Squared Euclidean distance (mm^2) from every voxel to the nearest set
// voxel of `feature`, exact separable transform. All-empty input yields
// +inf everywhere.
std::vector<double> squared_distance_field(const std::vector<std::uint8_t>& feature,
                                           const Shape3& shape, const Spacing3& spacing);

// Linear-interpolation percentile (q in [0,100]) of an unsorted sample.
double percentile_linear(std::vector<double> values, double q);

// 95th percentile of the combined multiset of surface-to-surface distances
// d(P->G) u d(G->P), in mm. Both empty -> 0, exactly one empty -> penalty.
double hd95(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
            const Shape3& shape, const Spacing3& spacing);

struct LesionWiseOpts {
    int connectivity = 26;
    int dilation_iters = 3;
    std::int64_t min_lesion_volume = 0;
};

struct LesionWiseResult {
    double dice = 1.0;
    double hd95 = 0.0;
    int gt_lesions = 0;
    int false_positives = 0;
};

// Official-style lesion-wise Dice/HD95: gt lesions are matched against pred
// components through a dilated halo; unmatched lesions and false-positive
// components contribute penalty entries.
LesionWiseResult lesionwise(const std::vector<std::uint8_t>& pred,
                            const std::vector<std::uint8_t>& gt, const Shape3& shape,
                            const Spacing3& spacing, const LesionWiseOpts& opts = {});

struct RegionMetric {
    double dice = 0.0;
    double hd95 = 0.0;
    bool pred_empty = false;
    bool gt_empty = false;
    std::optional<double> lw_dice;
    std::optional<double> lw_hd95;
};

struct CaseMetrics {
    std::string case_id;
    std::array<RegionMetric, NUM_REGIONS> regions;
};

struct MetricOpts {
    bool lesionwise = false;
    LesionWiseOpts lw;
};

CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt, const MetricOpts& opts = {},
                          const std::string& case_id = "");

struct AggregateReport {
    std::array<double, NUM_REGIONS> mean_dice{};
    std::array<double, NUM_REGIONS> mean_hd95{};
    double overall_dice = 0.0; // mean of the per-region means
    double overall_hd95 = 0.0;
    std::optional<std::array<double, NUM_REGIONS>> mean_lw_dice;
    std::optional<std::array<double, NUM_REGIONS>> mean_lw_hd95;
    std::size_t case_count = 0;
};

AggregateReport aggregate(std::span<const CaseMetrics> cases);

// Mean of a vector of per-region means; reproduces the "Avg" column
// arithmetic of challenge-style result tables.
double mean_of_region_means(std::span<const double> region_means);

std::string report_to_json(std::span<const CaseMetrics> cases, const AggregateReport& agg,
                           const MetricOpts& opts);
std::string report_to_csv(std::span<const CaseMetrics> cases, const AggregateReport& agg,
                          const MetricOpts& opts);

} // namespace bts

#endif
