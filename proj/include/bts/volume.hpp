#ifndef BTS_VOLUME_HPP
#define BTS_VOLUME_HPP

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bts/common.hpp"

namespace bts {

// Voxel grid extents. Storage order is x-fastest everywhere:
// index(x,y,z) = x + nx*(y + ny*z). This matches the NIfTI on-disk layout.
struct Shape3 {
    std::int64_t nx = 0, ny = 0, nz = 0;

    std::int64_t voxels() const { return nx * ny * nz; }
    std::int64_t operator[](int axis) const { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
    std::int64_t& operator[](int axis) { return axis == 0 ? nx : (axis == 1 ? ny : nz); }
    bool operator==(const Shape3&) const = default;
    std::string str() const;
};

inline std::int64_t linear_index(const Shape3& s, std::int64_t x, std::int64_t y, std::int64_t z) {
    return x + s.nx * (y + s.ny * z);
}

// Voxel edge lengths in mm.
using Spacing3 = std::array<float, 3>;

inline constexpr Spacing3 UNIT_SPACING{1.0f, 1.0f, 1.0f};

// Orientation metadata carried through from NIfTI headers. The pipeline
// never resamples, so these fields are opaque: read once, re-emitted
// verbatim on write.
struct GeometryInfo {
    std::int16_t qform_code = 0;
    std::int16_t sform_code = 0;
    float quatern[3] = {0.0f, 0.0f, 0.0f};
    float qoffset[3] = {0.0f, 0.0f, 0.0f};
    float srow[12] = {0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f, 0.0f};
    float qfac = 1.0f;
    std::int8_t xyzt_units = 2; // NIFTI_UNITS_MM
    bool operator==(const GeometryInfo&) const = default;
};

// One scalar 3D grid of 32-bit floats.
struct Volume3 {
    Shape3 shape;
    Spacing3 spacing = UNIT_SPACING;
    std::vector<float> data;
    std::optional<GeometryInfo> geom;

    float at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return data[linear_index(shape, x, y, z)];
    }
    float& at(std::int64_t x, std::int64_t y, std::int64_t z) {
        return data[linear_index(shape, x, y, z)];
    }
    void validate() const;
};

Volume3 make_volume(Shape3 shape, Spacing3 spacing = UNIT_SPACING, float fill = 0.0f);

// BraTS label semantics: 0 = background, 1 = NETC, 2 = SNFH/ED, 3 = ET.
inline constexpr std::uint8_t LABEL_BACKGROUND = 0;
inline constexpr std::uint8_t LABEL_NETC = 1;
inline constexpr std::uint8_t LABEL_SNFH = 2;
inline constexpr std::uint8_t LABEL_ET = 3;
inline constexpr std::uint8_t LABEL_MAX = 3;

struct LabelMap {
    Shape3 shape;
    Spacing3 spacing = UNIT_SPACING;
    std::vector<std::uint8_t> data;
    std::optional<GeometryInfo> geom;

    std::uint8_t at(std::int64_t x, std::int64_t y, std::int64_t z) const {
        return data[linear_index(shape, x, y, z)];
    }
    void validate() const;
};

LabelMap make_labelmap(Shape3 shape, Spacing3 spacing = UNIT_SPACING, std::uint8_t fill = 0);

// Fixed input modality order used by every stacked array in the pipeline.
enum class Modality : int { T1 = 0, T1Gd = 1, T2W = 2, T2Flair = 3 };
inline constexpr int NUM_MODALITIES = 4;
const char* modality_name(Modality m);

struct MultiModalImage {
    std::array<Volume3, NUM_MODALITIES> channels;

    Shape3 shape() const { return channels[0].shape; }
    Spacing3 spacing() const { return channels[0].spacing; }
    const Volume3& channel(Modality m) const { return channels[static_cast<int>(m)]; }
    void validate() const;
};

// Prediction regions, fixed channel order (ET, TC, WT) everywhere.
enum class Region : int { ET = 0, TC = 1, WT = 2 };
inline constexpr int NUM_REGIONS = 3;
const char* region_name(Region r);

struct RegionMasks {
    Shape3 shape;
    Spacing3 spacing = UNIT_SPACING;
    std::array<std::vector<std::uint8_t>, NUM_REGIONS> masks;

    const std::vector<std::uint8_t>& mask(Region r) const { return masks[static_cast<int>(r)]; }
    std::vector<std::uint8_t>& mask(Region r) { return masks[static_cast<int>(r)]; }
    void validate() const;
};

RegionMasks make_region_masks(Shape3 shape, Spacing3 spacing = UNIT_SPACING);

enum class ProbKind : int { Logits = 0, Probabilities = 1 };

struct RegionProbs {
    std::array<Volume3, NUM_REGIONS> channels; // ET, TC, WT
    ProbKind kind = ProbKind::Probabilities;

    Shape3 shape() const { return channels[0].shape; }
    Spacing3 spacing() const { return channels[0].spacing; }
    const Volume3& channel(Region r) const { return channels[static_cast<int>(r)]; }
    Volume3& channel(Region r) { return channels[static_cast<int>(r)]; }
    void validate() const;
};

RegionProbs make_region_probs(Shape3 shape, Spacing3 spacing = UNIT_SPACING,
                              ProbKind kind = ProbKind::Probabilities);

// Flat multi-channel grid, channel-major, x-fastest within each channel.
// Used for stacked modality arrays and network feature maps.
struct ChannelGrid {
    std::int64_t channels = 0;
    Shape3 shape;
    Spacing3 spacing = UNIT_SPACING;
    std::vector<float> data;

    std::int64_t voxels() const { return shape.voxels(); }
    float* channel_ptr(std::int64_t c) { return data.data() + c * voxels(); }
    const float* channel_ptr(std::int64_t c) const { return data.data() + c * voxels(); }
    float at(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) const {
        return data[c * voxels() + linear_index(shape, x, y, z)];
    }
    float& at(std::int64_t c, std::int64_t x, std::int64_t y, std::int64_t z) {
        return data[c * voxels() + linear_index(shape, x, y, z)];
    }
    void validate() const;
};

ChannelGrid make_channel_grid(std::int64_t channels, Shape3 shape,
                              Spacing3 spacing = UNIT_SPACING, float fill = 0.0f);

ChannelGrid stack_modalities(const MultiModalImage& image);
ChannelGrid probs_to_grid(const RegionProbs& probs);
RegionProbs grid_to_probs(const ChannelGrid& grid, ProbKind kind);

// Region algebra. ET = {label 3}, TC = {1,3}, WT = {1,2,3}; the resulting
// masks are always nested ET <= TC <= WT.
RegionMasks labels_to_regions(const LabelMap& labels);

// Inverse of the region encoding: nesting is enforced first (unions), then
// WT-only voxels paint 2, TC-only 1, ET 3, everything else 0.
LabelMap regions_to_labels(const RegionMasks& masks);

// Forces ET <= TC <= WT by unioning upward. Idempotent, never clears a voxel.
RegionMasks enforce_hierarchy(const RegionMasks& masks);

} // namespace bts

#endif
