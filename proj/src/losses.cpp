#include "bts/losses.hpp"

#include <cmath>

namespace bts {

void LossConfig::validate() const {
    if (focal_gamma < 0.0) throw ValueError("LossConfig: focal_gamma must be >= 0");
    if (!(dice_smooth > 0.0)) throw ValueError("LossConfig: dice_smooth must be > 0");
    if (dice_weight < 0.0 || focal_weight < 0.0)
        throw ValueError("LossConfig: loss weights must be >= 0");
    double sum = 0.0;
    for (double w : ds_weights) {
        if (w < 0.0) throw ValueError("LossConfig: ds_weights must be >= 0");
        sum += w;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ValueError("LossConfig: ds_weights must sum to 1");
}

TargetSample targets_from_masks(const RegionMasks& masks) {
    TargetSample t;
    t.shape = masks.shape;
    const std::size_t n = static_cast<std::size_t>(masks.shape.voxels());
    t.values.reserve(NUM_REGIONS * n);
    for (int r = 0; r < NUM_REGIONS; ++r)
        t.values.insert(t.values.end(), masks.masks[r].begin(), masks.masks[r].end());
    return t;
}

LogitSample logits_from_grid(const ChannelGrid& grid) {
    if (grid.channels != NUM_REGIONS)
        throw ShapeError("logits_from_grid: expected 3 channels");
    LogitSample s;
    s.shape = grid.shape;
    s.values.assign(grid.data.begin(), grid.data.end());
    return s;
}

namespace {

void check_batch(const LogitBatch& logits, const TargetBatch& targets, const char* what) {
    if (logits.empty()) throw ValueError(std::string(what) + ": empty batch");
    if (logits.size() != targets.size())
        throw ShapeError(std::string(what) + ": logit/target batch sizes differ");
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const std::size_t n =
            static_cast<std::size_t>(NUM_REGIONS * logits[i].shape.voxels());
        if (logits[i].values.size() != n)
            throw ShapeError(std::string(what) + ": logit size does not match shape");
        if (!(targets[i].shape == logits[i].shape) || targets[i].values.size() != n)
            throw ShapeError(std::string(what) + ": target shape does not match logits");
    }
}

} // namespace

LossResult batch_dice_loss(const LogitBatch& logits, const TargetBatch& targets, double smooth) {
    check_batch(logits, targets, "batch_dice_loss");
    if (!(smooth > 0.0)) throw ValueError("batch_dice_loss: smooth must be > 0");

    // pooled sums per channel over the entire batch
    std::array<double, NUM_REGIONS> sum_p{}, sum_g{}, sum_pg{};
    std::vector<std::vector<double>> probs(logits.size());
    for (std::size_t s = 0; s < logits.size(); ++s) {
        const std::int64_t n = logits[s].shape.voxels();
        probs[s].resize(logits[s].values.size());
        for (int c = 0; c < NUM_REGIONS; ++c)
            for (std::int64_t v = 0; v < n; ++v) {
                std::size_t e = static_cast<std::size_t>(c * n + v);
                double p = stable_sigmoid(logits[s].values[e]);
                probs[s][e] = p;
                double g = targets[s].values[e];
                sum_p[c] += p;
                sum_g[c] += g;
                sum_pg[c] += p * g;
            }
    }

    LossResult res;
    std::array<double, NUM_REGIONS> denom{}, numer{};
    for (int c = 0; c < NUM_REGIONS; ++c) {
        numer[c] = 2.0 * sum_pg[c] + smooth;
        denom[c] = sum_p[c] + sum_g[c] + smooth;
        res.loss += (1.0 - numer[c] / denom[c]) / double(NUM_REGIONS);
    }

    res.grads.resize(logits.size());
    for (std::size_t s = 0; s < logits.size(); ++s) {
        const std::int64_t n = logits[s].shape.voxels();
        res.grads[s].resize(logits[s].values.size());
        for (int c = 0; c < NUM_REGIONS; ++c) {
            const double d = denom[c];
            for (std::int64_t v = 0; v < n; ++v) {
                std::size_t e = static_cast<std::size_t>(c * n + v);
                double p = probs[s][e];
                double g = targets[s].values[e];
                // d/dp of (1 - numer/denom): -(2g*denom - numer)/denom^2
                double dLdp = -(2.0 * g * d - numer[c]) / (d * d);
                res.grads[s][e] = dLdp * p * (1.0 - p) / double(NUM_REGIONS);
            }
        }
    }
    return res;
}

LossResult focal_loss(const LogitBatch& logits, const TargetBatch& targets, double gamma) {
    check_batch(logits, targets, "focal_loss");
    if (gamma < 0.0) throw ValueError("focal_loss: gamma must be >= 0");

    constexpr double clamp_lo = 1e-7;
    constexpr double clamp_hi = 1.0 - 1e-7;

    std::size_t total = 0;
    for (const auto& s : logits) total += s.values.size();

    LossResult res;
    res.grads.resize(logits.size());
    for (std::size_t s = 0; s < logits.size(); ++s) {
        res.grads[s].resize(logits[s].values.size());
        for (std::size_t e = 0; e < logits[s].values.size(); ++e) {
            double p = stable_sigmoid(logits[s].values[e]);
            bool positive = targets[s].values[e] != 0;
            double pt = positive ? p : 1.0 - p;
            double pt_c = std::min(clamp_hi, std::max(clamp_lo, pt));
            double one_minus = 1.0 - pt_c;
            double pow_g = gamma == 0.0 ? 1.0 : std::pow(one_minus, gamma);
            res.loss += -pow_g * std::log(pt_c) / double(total);

            double dfl_dpt;
            if (gamma == 0.0) {
                dfl_dpt = -1.0 / pt_c;
            } else {
                dfl_dpt = gamma * std::pow(one_minus, gamma - 1.0) * std::log(pt_c) -
                          pow_g / pt_c;
            }
            double dpt_dz = (positive ? 1.0 : -1.0) * p * (1.0 - p);
            res.grads[s][e] = dfl_dpt * dpt_dz / double(total);
        }
    }
    return res;
}

LossResult combined_loss(const LogitBatch& logits, const TargetBatch& targets,
                         const LossConfig& cfg) {
    LossResult dice = batch_dice_loss(logits, targets, cfg.dice_smooth);
    LossResult focal = focal_loss(logits, targets, cfg.focal_gamma);
    LossResult res;
    res.loss = cfg.dice_weight * dice.loss + cfg.focal_weight * focal.loss;
    res.grads.resize(dice.grads.size());
    for (std::size_t s = 0; s < dice.grads.size(); ++s) {
        res.grads[s].resize(dice.grads[s].size());
        for (std::size_t e = 0; e < dice.grads[s].size(); ++e)
            res.grads[s][e] =
                cfg.dice_weight * dice.grads[s][e] + cfg.focal_weight * focal.grads[s][e];
    }
    return res;
}

TargetSample downsample_targets(const TargetSample& t, int factor) {
    if (factor < 1) throw ValueError("downsample_targets: factor must be >= 1");
    if (factor == 1) return t;
    for (int a = 0; a < 3; ++a)
        if (t.shape[a] % factor != 0)
            throw ShapeError("downsample_targets: shape " + t.shape.str() +
                             " not divisible by " + std::to_string(factor));
    TargetSample out;
    out.shape = Shape3{t.shape.nx / factor, t.shape.ny / factor, t.shape.nz / factor};
    const std::int64_t n_in = t.shape.voxels();
    const std::int64_t n_out = out.shape.voxels();
    out.values.resize(static_cast<std::size_t>(NUM_REGIONS * n_out));
    for (int c = 0; c < NUM_REGIONS; ++c)
        for (std::int64_t z = 0; z < out.shape.nz; ++z)
            for (std::int64_t y = 0; y < out.shape.ny; ++y)
                for (std::int64_t x = 0; x < out.shape.nx; ++x)
                    out.values[c * n_out + linear_index(out.shape, x, y, z)] =
                        t.values[c * n_in +
                                 linear_index(t.shape, x * factor, y * factor, z * factor)];
    return out;
}

DsLossResult ds_combined_loss(const std::vector<LogitBatch>& level_logits,
                              const TargetBatch& full_targets, const LossConfig& cfg) {
    cfg.validate();
    if (level_logits.empty()) throw ValueError("ds_combined_loss: no levels");
    if (cfg.ds_weights.size() < level_logits.size())
        throw ValueError("ds_combined_loss: ds_weights does not cover all levels");

    // renormalize over the levels actually present
    double wsum = 0.0;
    for (std::size_t l = 0; l < level_logits.size(); ++l) wsum += cfg.ds_weights[l];
    if (!(wsum > 0.0)) throw ValueError("ds_combined_loss: level weights sum to zero");

    DsLossResult res;
    res.grads.resize(level_logits.size());
    for (std::size_t l = 0; l < level_logits.size(); ++l) {
        int factor = 1 << l;
        TargetBatch level_targets;
        level_targets.reserve(full_targets.size());
        for (const TargetSample& t : full_targets)
            level_targets.push_back(downsample_targets(t, factor));

        LossResult lr = combined_loss(level_logits[l], level_targets, cfg);
        double w = cfg.ds_weights[l] / wsum;
        res.loss += w * lr.loss;
        res.grads[l] = std::move(lr.grads);
        for (auto& sample : res.grads[l])
            for (double& g : sample) g *= w;
    }
    return res;
}

} // namespace bts
