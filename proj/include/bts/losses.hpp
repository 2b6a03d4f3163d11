#ifndef BTS_LOSSES_HPP
#define BTS_LOSSES_HPP

#include <span>
#include <vector>

#include "bts/volume.hpp"

namespace bts {

struct LossConfig {
    double focal_gamma = 2.0;
    double dice_smooth = 1e-5;
    double dice_weight = 1.0;
    double focal_weight = 1.0;
    // finest level first, must sum to 1
    std::vector<double> ds_weights{8.0 / 15.0, 4.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0};

    void validate() const;
};

// One sample's logits over the three region channels, channel-major,
// double precision (training math stays in double end to end).
struct LogitSample {
    Shape3 shape;
    std::vector<double> values; // NUM_REGIONS * voxels
};

struct TargetSample {
    Shape3 shape;
    std::vector<std::uint8_t> values; // NUM_REGIONS * voxels, binary
};

using LogitBatch = std::vector<LogitSample>;
using TargetBatch = std::vector<TargetSample>;

TargetSample targets_from_masks(const RegionMasks& masks);
LogitSample logits_from_grid(const ChannelGrid& grid);

struct LossResult {
    double loss = 0.0;
    std::vector<std::vector<double>> grads; // per sample, aligned with logits
};

// Region-based batch Dice: sums pooled over the whole batch per channel,
// L_c = 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s), mean over channels.
LossResult batch_dice_loss(const LogitBatch& logits, const TargetBatch& targets,
                           double smooth = 1e-5);

// Focal loss, mean over every element; gamma = 0 reduces to BCE.
LossResult focal_loss(const LogitBatch& logits, const TargetBatch& targets, double gamma = 2.0);

// dice_weight * batch_dice + focal_weight * focal.
LossResult combined_loss(const LogitBatch& logits, const TargetBatch& targets,
                         const LossConfig& cfg);

// Corner-origin factor-n striding.
TargetSample downsample_targets(const TargetSample& t, int factor);

struct DsLossResult {
    double loss = 0.0;
    // grads[level][sample] aligned with level_logits
    std::vector<std::vector<std::vector<double>>> grads;
};

// Deep-supervision combination: level l logits at full_shape / 2^l, targets
// given at full resolution and downsampled internally; per-level combined
// losses weighted by cfg.ds_weights (must cover the level count).
DsLossResult ds_combined_loss(const std::vector<LogitBatch>& level_logits,
                              const TargetBatch& full_targets, const LossConfig& cfg);

} // namespace bts

#endif
