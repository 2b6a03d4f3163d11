#ifndef BTS_PREPROCESS_HPP
#define BTS_PREPROCESS_HPP

#include <filesystem>
#include <optional>

#include "bts/caseio.hpp"
#include "bts/volume.hpp"

namespace bts {

struct PatchSpec {
    Shape3 target{128, 160, 112};

    void validate() const {
        if (target.nx <= 0 || target.ny <= 0 || target.nz <= 0)
            throw ValueError("PatchSpec: target shape must be positive");
    }
};

struct ChannelNorm {
    double mean = 0.0;
    double stddev = 1.0;
    bool degenerate = false;
};

// Bookkeeping for inverting the preprocessing chain. crop_bbox is
// inclusive-exclusive in the original frame; pad/crop_fit describe what
// fit_to_patch added or removed per axis (lo, hi).
struct PreprocMeta {
    Shape3 original_shape;
    Spacing3 spacing = UNIT_SPACING;
    std::array<std::int64_t, 3> bbox_lo{0, 0, 0};
    std::array<std::int64_t, 3> bbox_hi{0, 0, 0};
    std::array<std::int64_t, 3> pad_lo{0, 0, 0};
    std::array<std::int64_t, 3> pad_hi{0, 0, 0};
    std::array<std::int64_t, 3> crop_fit_lo{0, 0, 0};
    std::array<std::int64_t, 3> crop_fit_hi{0, 0, 0};
    bool patched = false;
    std::array<ChannelNorm, NUM_MODALITIES> norm;
    std::optional<GeometryInfo> geom;

    Shape3 cropped_shape() const;
    // Shape after fit_to_patch (== cropped_shape when not patched).
    Shape3 processed_shape() const;
};

// Tightest box containing every voxel nonzero in ANY channel; all channels
// cropped identically. Throws ValueError on an all-zero image.
std::pair<MultiModalImage, PreprocMeta> crop_foreground(const MultiModalImage& image);

struct ZNormResult {
    Volume3 volume;
    ChannelNorm norm;
};

// Z-scores the nonzero voxels (population std), leaves zeros untouched.
// Degenerate channels (<=1 nonzero voxel or zero variance) get std forced
// to 1 and are flagged.
ZNormResult znormalize_nonzero(const Volume3& vol);

// Applies znormalize_nonzero channelwise and records results in meta.
MultiModalImage normalize_image(const MultiModalImage& image, PreprocMeta& meta);

// Center-pads (zeros) or center-crops each axis to the target, stacking the
// four modalities. Updates pad/crop bookkeeping in meta.
ChannelGrid fit_to_patch(const MultiModalImage& image, const PatchSpec& spec, PreprocMeta& meta);

// Same spatial fit for region masks (used to cache training targets).
RegionMasks fit_masks(const RegionMasks& masks, const PreprocMeta& meta);

// Inverse mapping back to the original frame: undoes fit_to_patch (pads
// removed, cropped margins re-filled) then places the block at the crop
// bbox, zero/background outside.
LabelMap restore_geometry(const LabelMap& labels, const PreprocMeta& meta);
RegionProbs restore_geometry(const RegionProbs& probs, const PreprocMeta& meta);
ChannelGrid restore_geometry(const ChannelGrid& grid, const PreprocMeta& meta);

struct AugmentSpec {
    Shape3 crop_target{128, 160, 112};
    bool spatial_crop = true;
    bool flips = true;
    double flip_prob = 0.5;
    bool intensity = true;
    double scale_lo = 0.9, scale_hi = 1.1;
    double shift_lo = -0.1, shift_hi = 0.1;
};

struct TrainSample {
    ChannelGrid image; // 4 channels
    RegionMasks regions;
};

// Training-time augmentation, in order: random spatial crop to the target
// (pad first when smaller), independent per-axis flips applied identically
// to image and masks, then per-channel intensity scale/shift on the image.
TrainSample augment(const TrainSample& sample, Rng& rng, const AugmentSpec& spec);

struct PreprocessOptions {
    PatchSpec patch;
    // Training caches are fitted to the patch; inference keeps the cropped
    // volume for sliding windows.
    bool fit_patch = true;
};

struct PreprocessedCase {
    std::string case_id;
    ChannelGrid image; // 4 x processed shape
    std::optional<RegionMasks> regions;
    PreprocMeta meta;
};

PreprocessedCase preprocess_case(const CaseBundle& bundle, const PreprocessOptions& options);

// Cache artifacts: {id}_img.npy (float32 4xXxYxZ), {id}_reg.npy
// (uint8 3xXxYxZ, when seg present), {id}_meta.json.
void write_preprocessed(const PreprocessedCase& pc, const std::filesystem::path& out_dir);
PreprocessedCase read_preprocessed(const std::filesystem::path& dir, const std::string& case_id);

std::string meta_to_json(const PreprocMeta& meta, const std::string& case_id);
PreprocMeta meta_from_json(const std::string& json_text, std::string* case_id = nullptr);

// NPY cache layout is C-order (C, nx, ny, nz): the last file axis varies
// fastest, so serialization transposes from the internal x-fastest order.
std::vector<float> grid_to_file_order(const ChannelGrid& grid);
ChannelGrid grid_from_file_order(const std::vector<std::int64_t>& shape,
                                 const std::vector<float>& values,
                                 Spacing3 spacing = UNIT_SPACING);
std::vector<std::uint8_t> masks_to_file_order(const RegionMasks& masks);
RegionMasks masks_from_file_order(const std::vector<std::int64_t>& shape,
                                  const std::vector<std::uint8_t>& values,
                                  Spacing3 spacing = UNIT_SPACING);

} // namespace bts

#endif
