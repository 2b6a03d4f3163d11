#ifndef BTS_INFERENCE_HPP
#define BTS_INFERENCE_HPP

#include <functional>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bts/mednext.hpp"
#include "bts/volume.hpp"

namespace bts {

// A window predictor maps a 4-channel patch to 3 probability channels
// (ET, TC, WT) of the same spatial shape, values in [0,1].
class Predictor {
public:
    virtual ~Predictor() = default;
    virtual Shape3 window_shape() const = 0;
    virtual ChannelGrid predict(const ChannelGrid& patch) const = 0;
};

// Emits fixed per-region probabilities regardless of input.
class ConstantPredictor : public Predictor {
public:
    ConstantPredictor(Shape3 window, std::array<float, NUM_REGIONS> values)
        : window_(window), values_(values) {}
    Shape3 window_shape() const override { return window_; }
    ChannelGrid predict(const ChannelGrid& patch) const override;

private:
    Shape3 window_;
    std::array<float, NUM_REGIONS> values_;
};

// Applies a pure per-voxel function, so sliding-window output must equal
// whole-volume application.
class VoxelwisePredictor : public Predictor {
public:
    using Fn = std::function<std::array<float, NUM_REGIONS>(const std::array<float, 4>&)>;
    VoxelwisePredictor(Shape3 window, Fn fn) : window_(window), fn_(std::move(fn)) {}
    Shape3 window_shape() const override { return window_; }
    ChannelGrid predict(const ChannelGrid& patch) const override;

private:
    Shape3 window_;
    Fn fn_;
};

// Sigmoid of the finest deep-supervision logits of a MedNeXt model.
class MedNeXtPredictor : public Predictor {
public:
    MedNeXtPredictor(ParamTree params, MedNeXtConfig config, Shape3 window);
    Shape3 window_shape() const override { return window_; }
    ChannelGrid predict(const ChannelGrid& patch) const override;

private:
    ParamTree params_;
    MedNeXtConfig config_;
    Shape3 window_;
};

enum class BlendMode : int { Uniform = 0, Gaussian = 1 };

const char* blend_mode_name(BlendMode m);
BlendMode blend_mode_from_name(const std::string& name);

struct WindowPlan {
    Shape3 window;
    double overlap = 0.5;
    BlendMode blend = BlendMode::Uniform;
    std::vector<std::array<std::int64_t, 3>> origins; // lexicographic
    std::array<std::int64_t, 3> pad_lo{0, 0, 0};
    std::array<std::int64_t, 3> pad_hi{0, 0, 0};
    Shape3 padded_extent;
};

// Per axis: step = max(1, floor(W*(1-overlap))), origins 0, step, ... with
// the final origin clamped to extent-W (deduplicated). Volumes smaller than
// the window are zero-padded symmetrically first (pads recorded).
WindowPlan plan_windows(const Shape3& volume_shape, const Shape3& window, double overlap,
                        BlendMode blend = BlendMode::Uniform);

// Uniform: all ones. Gaussian: separable, sigma = W/8 per axis, centered,
// normalized to max 1, floored at 1e-6.
std::vector<float> blend_kernel(const Shape3& window, BlendMode mode);

// Weighted-average fusion of window predictions over the plan; output is a
// probability map on the unpadded volume frame.
RegionProbs sliding_window_predict(const ChannelGrid& volume, const Predictor& predictor,
                                   const WindowPlan& plan);

// Voxelwise arithmetic mean in list order, clamped to [0,1].
RegionProbs ensemble_mean(std::span<const RegionProbs> maps);

// Probability-map artifacts: {stem}.npy (float32, 3xXxYxZ, C order) and
// {stem}.json sidecar (geometry, plan parameters, model ids).
struct ProbsInfo {
    Shape3 window{0, 0, 0};
    double overlap = 0.0;
    std::string blend = "uniform";
    std::vector<std::string> model_ids;
};

void write_probs(const RegionProbs& probs, const std::filesystem::path& stem,
                 const ProbsInfo& info);
RegionProbs read_probs(const std::filesystem::path& stem, ProbsInfo* info = nullptr);

} // namespace bts

#endif
