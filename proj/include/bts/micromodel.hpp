#ifndef BTS_MICROMODEL_HPP
#define BTS_MICROMODEL_HPP

#include <memory>
#include <unordered_map>

#include "bts/inference.hpp"
#include "bts/params.hpp"
#include "bts/volume.hpp"

namespace bts {

// Purely voxelwise stack of 1x1x1 affine layers with GELU between:
// 4 -> hidden -> ... -> 3. Small enough to train on the CPU in seconds,
// which makes the full training loop verifiable end to end.
struct MicroModelConfig {
    int depth = 2; // number of affine layers
    int hidden = 8;
    int in_channels = 4;
    int out_channels = 3;

    void validate() const;
    std::string to_json() const;
    static MicroModelConfig from_json(const std::string& text);
    int layer_in(int layer) const { return layer == 0 ? in_channels : hidden; }
    int layer_out(int layer) const { return layer == depth - 1 ? out_channels : hidden; }
};

ParamTree build_micromodel(const MicroModelConfig& config, std::uint64_t seed);

// Logits over the grid (float path, used by the predictor).
ChannelGrid micromodel_forward(const ParamTree& tree, const MicroModelConfig& config,
                               const ChannelGrid& input);

// Training path: double-precision forward with cached activations plus
// backward accumulation of parameter gradients.
struct MicroActivations {
    // pre-activations per layer (layer_out(l) * voxels each, channel-major)
    std::vector<std::vector<double>> pre;
    std::int64_t voxels = 0;
};

std::vector<double> micromodel_forward_train(const ParamTree& tree,
                                             const MicroModelConfig& config,
                                             const ChannelGrid& input, MicroActivations& acts);

using GradMap = std::unordered_map<std::string, std::vector<double>>;

// Accumulates dLoss/dparam into `grads` given dLoss/dlogits for one sample.
void micromodel_backward(const ParamTree& tree, const MicroModelConfig& config,
                         const ChannelGrid& input, const MicroActivations& acts,
                         std::span<const double> dlogits, GradMap& grads);

// Sigmoid-probability window predictor backed by the micro-model.
std::unique_ptr<Predictor> make_micromodel_predictor(ParamTree tree, MicroModelConfig config,
                                                     Shape3 window);

} // namespace bts

#endif
