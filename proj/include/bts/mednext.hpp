#ifndef BTS_MEDNEXT_HPP
#define BTS_MEDNEXT_HPP

#include <array>
#include <string>
#include <vector>

#include "bts/params.hpp"
#include "bts/volume.hpp"

namespace bts {

// ConvNeXt-style 3D U-Net: 4 encoder and 4 decoder stages around a
// bottleneck, resolution changed by strided (transposed) depthwise blocks,
// additive skips, deep-supervision heads at each decoder resolution.
//
// blocks_per_stage / expansion_ratios are indexed
//   0..3 = enc0..enc3, 4 = bottleneck, 5..8 = dec3..dec0.
// Resampling blocks borrow the ratio of the stage they enter: down_i uses
// ratios[i+1] and up_l uses the entered decoder stage's entry.
struct MedNeXtConfig {
    int kernel_size = 3;
    int base_channels = 32;
    static constexpr int stages = 4;
    std::array<int, 9> blocks_per_stage{2, 2, 2, 2, 2, 2, 2, 2, 2};
    std::array<int, 9> expansion_ratios{2, 3, 4, 4, 4, 4, 4, 3, 2};
    int deep_supervision_levels = 4;
    int in_channels = 4;
    int out_channels = 3;
    std::string preset = "custom";

    static MedNeXtConfig preset_b(int base_channels = 32, int kernel_size = 3);
    static MedNeXtConfig preset_m(int base_channels = 32, int kernel_size = 3);
    // Small CPU-friendly configuration used by tests and demos.
    static MedNeXtConfig toy(int base_channels = 4, int kernel_size = 3);

    int channels_at(int level) const { return base_channels << level; } // level 0..4
    void validate() const;
    std::string to_json() const;
    static MedNeXtConfig from_json(const std::string& text);
};

// Builds the full parameter tree with deterministic He-uniform (fan-in)
// initialization for conv kernels, ones for norm scales, zeros for biases.
ParamTree build_mednext(const MedNeXtConfig& config, std::uint64_t seed);

// y = x + compress(GELU(expand(norm(dwconv(x))))) for one block; the block's
// parameters live under `prefix` in the tree. Spatial size is preserved.
ChannelGrid mednext_block_forward(const ParamTree& tree, const std::string& prefix,
                                  const ChannelGrid& x, int kernel_size, int ratio);

// Full forward pass. Input is (in_channels, X, Y, Z) with each spatial
// extent divisible by 2^stages. Returns deep-supervision logit grids,
// finest first, at scales /1, /2, /4, /8 (out_channels each).
std::vector<ChannelGrid> mednext_forward(const ParamTree& tree, const MedNeXtConfig& config,
                                         const ChannelGrid& input);

// Depthwise k^3 convolution with zero padding k/2 (the block's spatial
// kernel), exposed so tests can check it against a direct convolution.
ChannelGrid depthwise_forward(const ChannelGrid& x, const Param& weight, const Param& bias,
                              int kernel_size, int stride = 1);

} // namespace bts

#endif
