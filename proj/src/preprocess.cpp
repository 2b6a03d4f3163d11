#include "bts/preprocess.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "json.hpp"

#include "bts/npy.hpp"
#include "geom_json.hpp"

namespace bts {

using json = nlohmann::ordered_json;

namespace {

// Copies a sub-box [lo, lo+out_shape) from src into a fresh buffer.
template <typename T>
std::vector<T> crop_block(const std::vector<T>& src, const Shape3& in_shape,
                          const std::array<std::int64_t, 3>& lo, const Shape3& out_shape) {
    std::vector<T> out(static_cast<std::size_t>(out_shape.voxels()));
    for (std::int64_t z = 0; z < out_shape.nz; ++z)
        for (std::int64_t y = 0; y < out_shape.ny; ++y) {
            const T* s = src.data() + linear_index(in_shape, lo[0], lo[1] + y, lo[2] + z);
            T* d = out.data() + linear_index(out_shape, 0, y, z);
            std::copy(s, s + out_shape.nx, d);
        }
    return out;
}

// Places src (with in_shape) into a zero buffer of out_shape at offset lo.
template <typename T>
std::vector<T> place_block(const std::vector<T>& src, const Shape3& in_shape,
                           const std::array<std::int64_t, 3>& lo, const Shape3& out_shape) {
    std::vector<T> out(static_cast<std::size_t>(out_shape.voxels()), T(0));
    for (std::int64_t z = 0; z < in_shape.nz; ++z)
        for (std::int64_t y = 0; y < in_shape.ny; ++y) {
            const T* s = src.data() + linear_index(in_shape, 0, y, z);
            T* d = out.data() + linear_index(out_shape, lo[0], lo[1] + y, lo[2] + z);
            std::copy(s, s + in_shape.nx, d);
        }
    return out;
}

struct AxisFit {
    std::int64_t pad_lo = 0, pad_hi = 0, crop_lo = 0, crop_hi = 0;
};

AxisFit fit_axis(std::int64_t size, std::int64_t target) {
    AxisFit f;
    if (size < target) {
        std::int64_t total = target - size;
        f.pad_lo = total / 2;
        f.pad_hi = total - f.pad_lo;
    } else if (size > target) {
        std::int64_t total = size - target;
        f.crop_lo = total / 2;
        f.crop_hi = total - f.crop_lo;
    }
    return f;
}

// Applies the pad/crop directions of a fit to one scalar channel.
template <typename T>
std::vector<T> apply_fit(const std::vector<T>& src, const Shape3& in_shape,
                         const std::array<AxisFit, 3>& fits, Shape3& out_shape) {
    std::array<std::int64_t, 3> crop_lo{fits[0].crop_lo, fits[1].crop_lo, fits[2].crop_lo};
    Shape3 cropped{in_shape.nx - fits[0].crop_lo - fits[0].crop_hi,
                   in_shape.ny - fits[1].crop_lo - fits[1].crop_hi,
                   in_shape.nz - fits[2].crop_lo - fits[2].crop_hi};
    std::vector<T> tmp = crop_block(src, in_shape, crop_lo, cropped);
    out_shape = Shape3{cropped.nx + fits[0].pad_lo + fits[0].pad_hi,
                       cropped.ny + fits[1].pad_lo + fits[1].pad_hi,
                       cropped.nz + fits[2].pad_lo + fits[2].pad_hi};
    std::array<std::int64_t, 3> pad_lo{fits[0].pad_lo, fits[1].pad_lo, fits[2].pad_lo};
    return place_block(tmp, cropped, pad_lo, out_shape);
}

// Inverse of apply_fit: remove the pads, re-add the cropped margins as zeros.
template <typename T>
std::vector<T> undo_fit(const std::vector<T>& src, const Shape3& in_shape,
                        const std::array<AxisFit, 3>& fits, Shape3& out_shape) {
    std::array<std::int64_t, 3> lo{fits[0].pad_lo, fits[1].pad_lo, fits[2].pad_lo};
    Shape3 unpadded{in_shape.nx - fits[0].pad_lo - fits[0].pad_hi,
                    in_shape.ny - fits[1].pad_lo - fits[1].pad_hi,
                    in_shape.nz - fits[2].pad_lo - fits[2].pad_hi};
    std::vector<T> tmp = crop_block(src, in_shape, lo, unpadded);
    out_shape = Shape3{unpadded.nx + fits[0].crop_lo + fits[0].crop_hi,
                       unpadded.ny + fits[1].crop_lo + fits[1].crop_hi,
                       unpadded.nz + fits[2].crop_lo + fits[2].crop_hi};
    std::array<std::int64_t, 3> place{fits[0].crop_lo, fits[1].crop_lo, fits[2].crop_lo};
    return place_block(tmp, unpadded, place, out_shape);
}

std::array<AxisFit, 3> fits_from_meta(const PreprocMeta& meta) {
    std::array<AxisFit, 3> fits;
    for (int a = 0; a < 3; ++a) {
        fits[a].pad_lo = meta.pad_lo[a];
        fits[a].pad_hi = meta.pad_hi[a];
        fits[a].crop_lo = meta.crop_fit_lo[a];
        fits[a].crop_hi = meta.crop_fit_hi[a];
    }
    return fits;
}

template <typename T>
std::vector<T> restore_channel(const std::vector<T>& data, const PreprocMeta& meta) {
    Shape3 shape = meta.processed_shape();
    std::vector<T> block = data;
    if (meta.patched) {
        Shape3 unfit_shape;
        block = undo_fit(block, shape, fits_from_meta(meta), unfit_shape);
        shape = unfit_shape;
    }
    if (!(shape == meta.cropped_shape()))
        throw ShapeError("restore_geometry: inconsistent meta (fit does not invert to bbox)");
    return place_block(block, shape, meta.bbox_lo, meta.original_shape);
}

void check_restore_input(const Shape3& got, const PreprocMeta& meta) {
    if (!(got == meta.processed_shape()))
        throw ShapeError("restore_geometry: input shape " + got.str() +
                         " does not match processed shape " + meta.processed_shape().str());
    if (meta.bbox_hi[0] > meta.original_shape.nx || meta.bbox_hi[1] > meta.original_shape.ny ||
        meta.bbox_hi[2] > meta.original_shape.nz)
        throw ShapeError("restore_geometry: crop bbox exceeds original shape");
}

} // namespace

Shape3 PreprocMeta::cropped_shape() const {
    return Shape3{bbox_hi[0] - bbox_lo[0], bbox_hi[1] - bbox_lo[1], bbox_hi[2] - bbox_lo[2]};
}

Shape3 PreprocMeta::processed_shape() const {
    Shape3 s = cropped_shape();
    if (!patched) return s;
    for (int a = 0; a < 3; ++a)
        s[a] = s[a] - crop_fit_lo[a] - crop_fit_hi[a] + pad_lo[a] + pad_hi[a];
    return s;
}

std::pair<MultiModalImage, PreprocMeta> crop_foreground(const MultiModalImage& image) {
    image.validate();
    const Shape3 shape = image.shape();

    std::array<std::int64_t, 3> lo{shape.nx, shape.ny, shape.nz};
    std::array<std::int64_t, 3> hi{0, 0, 0};
    for (std::int64_t z = 0; z < shape.nz; ++z)
        for (std::int64_t y = 0; y < shape.ny; ++y)
            for (std::int64_t x = 0; x < shape.nx; ++x) {
                bool fg = false;
                std::int64_t idx = linear_index(shape, x, y, z);
                for (int c = 0; c < NUM_MODALITIES && !fg; ++c)
                    fg = image.channels[c].data[idx] != 0.0f;
                if (!fg) continue;
                lo[0] = std::min(lo[0], x);
                lo[1] = std::min(lo[1], y);
                lo[2] = std::min(lo[2], z);
                hi[0] = std::max(hi[0], x + 1);
                hi[1] = std::max(hi[1], y + 1);
                hi[2] = std::max(hi[2], z + 1);
            }
    if (hi[0] == 0) throw ValueError("crop_foreground: image is entirely zero");

    PreprocMeta meta;
    meta.original_shape = shape;
    meta.spacing = image.spacing();
    meta.bbox_lo = lo;
    meta.bbox_hi = hi;
    meta.geom = image.channels[0].geom;

    Shape3 out_shape{hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]};
    MultiModalImage out;
    for (int c = 0; c < NUM_MODALITIES; ++c) {
        out.channels[c].shape = out_shape;
        out.channels[c].spacing = image.spacing();
        out.channels[c].geom = image.channels[c].geom;
        out.channels[c].data = crop_block(image.channels[c].data, shape, lo, out_shape);
    }
    return {std::move(out), meta};
}

ZNormResult znormalize_nonzero(const Volume3& vol) {
    vol.validate();
    ZNormResult res;
    res.volume = vol;

    double sum = 0.0, sumsq = 0.0;
    std::int64_t count = 0;
    for (float v : vol.data) {
        if (v == 0.0f) continue;
        sum += v;
        sumsq += double(v) * double(v);
        ++count;
    }
    if (count <= 1) {
        res.norm.mean = count == 1 ? sum : 0.0;
        res.norm.stddev = 1.0;
        res.norm.degenerate = true;
    } else {
        double mean = sum / double(count);
        double var = sumsq / double(count) - mean * mean;
        if (var < 0.0) var = 0.0; // cancellation guard
        double sd = std::sqrt(var);
        res.norm.mean = mean;
        if (sd == 0.0) {
            res.norm.stddev = 1.0;
            res.norm.degenerate = true;
        } else {
            res.norm.stddev = sd;
        }
    }
    if (count > 0) {
        for (float& v : res.volume.data)
            if (v != 0.0f)
                v = static_cast<float>((double(v) - res.norm.mean) / res.norm.stddev);
    }
    return res;
}

MultiModalImage normalize_image(const MultiModalImage& image, PreprocMeta& meta) {
    MultiModalImage out;
    for (int c = 0; c < NUM_MODALITIES; ++c) {
        ZNormResult r = znormalize_nonzero(image.channels[c]);
        out.channels[c] = std::move(r.volume);
        meta.norm[c] = r.norm;
    }
    return out;
}

ChannelGrid fit_to_patch(const MultiModalImage& image, const PatchSpec& spec, PreprocMeta& meta) {
    image.validate();
    spec.validate();
    const Shape3 in_shape = image.shape();

    std::array<AxisFit, 3> fits;
    for (int a = 0; a < 3; ++a) fits[a] = fit_axis(in_shape[a], spec.target[a]);
    for (int a = 0; a < 3; ++a) {
        meta.pad_lo[a] = fits[a].pad_lo;
        meta.pad_hi[a] = fits[a].pad_hi;
        meta.crop_fit_lo[a] = fits[a].crop_lo;
        meta.crop_fit_hi[a] = fits[a].crop_hi;
    }
    meta.patched = true;

    ChannelGrid out = make_channel_grid(NUM_MODALITIES, spec.target, image.spacing());
    for (int c = 0; c < NUM_MODALITIES; ++c) {
        Shape3 got;
        std::vector<float> fitted = apply_fit(image.channels[c].data, in_shape, fits, got);
        if (!(got == spec.target))
            throw ShapeError("fit_to_patch: internal shape error");
        std::copy(fitted.begin(), fitted.end(), out.data.begin() + c * out.voxels());
    }
    return out;
}

RegionMasks fit_masks(const RegionMasks& masks, const PreprocMeta& meta) {
    masks.validate();
    if (!meta.patched) return masks;
    auto fits = fits_from_meta(meta);
    RegionMasks out;
    out.spacing = masks.spacing;
    Shape3 got;
    for (int r = 0; r < NUM_REGIONS; ++r)
        out.masks[r] = apply_fit(masks.masks[r], masks.shape, fits, got);
    out.shape = got;
    return out;
}

LabelMap restore_geometry(const LabelMap& labels, const PreprocMeta& meta) {
    labels.validate();
    check_restore_input(labels.shape, meta);
    LabelMap out;
    out.shape = meta.original_shape;
    out.spacing = meta.spacing;
    out.geom = meta.geom;
    out.data = restore_channel(labels.data, meta);
    return out;
}

ChannelGrid restore_geometry(const ChannelGrid& grid, const PreprocMeta& meta) {
    grid.validate();
    check_restore_input(grid.shape, meta);
    ChannelGrid out = make_channel_grid(grid.channels, meta.original_shape, meta.spacing);
    const std::int64_t in_n = grid.voxels();
    const std::int64_t out_n = out.voxels();
    for (std::int64_t c = 0; c < grid.channels; ++c) {
        std::vector<float> chan(grid.data.begin() + c * in_n, grid.data.begin() + (c + 1) * in_n);
        std::vector<float> restored = restore_channel(chan, meta);
        std::copy(restored.begin(), restored.end(), out.data.begin() + c * out_n);
    }
    return out;
}

RegionProbs restore_geometry(const RegionProbs& probs, const PreprocMeta& meta) {
    RegionProbs out = grid_to_probs(restore_geometry(probs_to_grid(probs), meta), probs.kind);
    for (auto& ch : out.channels) ch.geom = meta.geom;
    return out;
}

TrainSample augment(const TrainSample& sample, Rng& rng, const AugmentSpec& spec) {
    sample.image.validate();
    sample.regions.validate();
    if (!(sample.image.shape == sample.regions.shape))
        throw ShapeError("augment: image and region shapes differ");

    ChannelGrid img = sample.image;
    RegionMasks reg = sample.regions;

    if (spec.spatial_crop) {
        // pad first on axes smaller than the target
        Shape3 shape = img.shape;
        std::array<AxisFit, 3> pads{};
        bool need_pad = false;
        for (int a = 0; a < 3; ++a) {
            if (shape[a] < spec.crop_target[a]) {
                pads[a] = fit_axis(shape[a], spec.crop_target[a]);
                pads[a].crop_lo = pads[a].crop_hi = 0;
                need_pad = true;
            }
        }
        if (need_pad) {
            Shape3 got;
            ChannelGrid padded;
            padded.channels = img.channels;
            padded.spacing = img.spacing;
            for (std::int64_t c = 0; c < img.channels; ++c) {
                std::vector<float> chan(img.data.begin() + c * img.voxels(),
                                        img.data.begin() + (c + 1) * img.voxels());
                auto fitted = apply_fit(chan, shape, pads, got);
                padded.data.insert(padded.data.end(), fitted.begin(), fitted.end());
            }
            padded.shape = got;
            img = std::move(padded);
            RegionMasks rpad;
            rpad.spacing = reg.spacing;
            for (int r = 0; r < NUM_REGIONS; ++r) rpad.masks[r] = apply_fit(reg.masks[r], shape, pads, got);
            rpad.shape = got;
            reg = std::move(rpad);
        }
        // uniform origin over valid positions
        std::array<std::int64_t, 3> origin;
        for (int a = 0; a < 3; ++a) {
            std::int64_t range = img.shape[a] - spec.crop_target[a] + 1;
            origin[a] = static_cast<std::int64_t>(rng.uniform_int(static_cast<std::uint64_t>(range)));
        }
        ChannelGrid cropped = make_channel_grid(img.channels, spec.crop_target, img.spacing);
        for (std::int64_t c = 0; c < img.channels; ++c) {
            std::vector<float> chan(img.data.begin() + c * img.voxels(),
                                    img.data.begin() + (c + 1) * img.voxels());
            auto block = crop_block(chan, img.shape, origin, spec.crop_target);
            std::copy(block.begin(), block.end(), cropped.data.begin() + c * cropped.voxels());
        }
        RegionMasks rcrop = make_region_masks(spec.crop_target, reg.spacing);
        for (int r = 0; r < NUM_REGIONS; ++r)
            rcrop.masks[r] = crop_block(reg.masks[r], reg.shape, origin, spec.crop_target);
        img = std::move(cropped);
        reg = std::move(rcrop);
    }

    if (spec.flips) {
        for (int axis = 0; axis < 3; ++axis) {
            if (!rng.bernoulli(spec.flip_prob)) continue;
            const Shape3 s = img.shape;
            auto flip_channel = [&](auto& data, std::int64_t base) {
                for (std::int64_t z = 0; z < s.nz; ++z)
                    for (std::int64_t y = 0; y < s.ny; ++y)
                        for (std::int64_t x = 0; x < s.nx; ++x) {
                            std::int64_t fx = axis == 0 ? s.nx - 1 - x : x;
                            std::int64_t fy = axis == 1 ? s.ny - 1 - y : y;
                            std::int64_t fz = axis == 2 ? s.nz - 1 - z : z;
                            bool lower = axis == 0 ? x < fx : (axis == 1 ? y < fy : z < fz);
                            if (!lower) continue;
                            std::swap(data[base + linear_index(s, x, y, z)],
                                      data[base + linear_index(s, fx, fy, fz)]);
                        }
            };
            for (std::int64_t c = 0; c < img.channels; ++c) flip_channel(img.data, c * img.voxels());
            for (int r = 0; r < NUM_REGIONS; ++r) flip_channel(reg.masks[r], 0);
        }
    }

    if (spec.intensity) {
        for (std::int64_t c = 0; c < img.channels; ++c) {
            float scale = static_cast<float>(rng.uniform(spec.scale_lo, spec.scale_hi));
            float shift = static_cast<float>(rng.uniform(spec.shift_lo, spec.shift_hi));
            float* p = img.channel_ptr(c);
            for (std::int64_t i = 0; i < img.voxels(); ++i) p[i] = p[i] * scale + shift;
        }
    }

    return TrainSample{std::move(img), std::move(reg)};
}

PreprocessedCase preprocess_case(const CaseBundle& bundle, const PreprocessOptions& options) {
    bundle.validate();
    auto [cropped, meta] = crop_foreground(bundle.image);
    MultiModalImage normalized = normalize_image(cropped, meta);

    PreprocessedCase pc;
    pc.case_id = bundle.case_id;
    if (options.fit_patch) {
        pc.image = fit_to_patch(normalized, options.patch, meta);
    } else {
        pc.image = stack_modalities(normalized);
    }
    if (bundle.seg) {
        RegionMasks regions = labels_to_regions(*bundle.seg);
        // crop to the same bbox before fitting
        RegionMasks cropped_reg;
        cropped_reg.spacing = regions.spacing;
        cropped_reg.shape = meta.cropped_shape();
        for (int r = 0; r < NUM_REGIONS; ++r)
            cropped_reg.masks[r] =
                crop_block(regions.masks[r], regions.shape, meta.bbox_lo, cropped_reg.shape);
        pc.regions = options.fit_patch ? fit_masks(cropped_reg, meta) : cropped_reg;
    }
    pc.meta = meta;
    return pc;
}

namespace {

json norm_to_json(const std::array<ChannelNorm, NUM_MODALITIES>& norm) {
    json arr = json::array();
    for (const auto& n : norm)
        arr.push_back({{"mean", n.mean}, {"std", n.stddev}, {"degenerate", n.degenerate}});
    return arr;
}

} // namespace

std::string meta_to_json(const PreprocMeta& meta, const std::string& case_id) {
    json j;
    j["case_id"] = case_id;
    j["original_shape"] = {meta.original_shape.nx, meta.original_shape.ny, meta.original_shape.nz};
    j["spacing"] = {meta.spacing[0], meta.spacing[1], meta.spacing[2]};
    j["crop_bbox"] = {{"lo", meta.bbox_lo}, {"hi", meta.bbox_hi}};
    j["pad"] = {{"lo", meta.pad_lo}, {"hi", meta.pad_hi}};
    j["crop_fit"] = {{"lo", meta.crop_fit_lo}, {"hi", meta.crop_fit_hi}};
    j["patched"] = meta.patched;
    j["normalization"] = norm_to_json(meta.norm);
    if (meta.geom) j["geometry"] = detail::geometry_to_json(*meta.geom);
    return j.dump(2);
}

PreprocMeta meta_from_json(const std::string& json_text, std::string* case_id) {
    json j = json::parse(json_text);
    PreprocMeta meta;
    if (case_id) *case_id = j.at("case_id").get<std::string>();
    auto sh = j.at("original_shape");
    meta.original_shape = Shape3{sh[0].get<std::int64_t>(), sh[1].get<std::int64_t>(),
                                 sh[2].get<std::int64_t>()};
    for (int a = 0; a < 3; ++a) {
        meta.spacing[a] = j.at("spacing")[a].get<float>();
        meta.bbox_lo[a] = j.at("crop_bbox").at("lo")[a].get<std::int64_t>();
        meta.bbox_hi[a] = j.at("crop_bbox").at("hi")[a].get<std::int64_t>();
        meta.pad_lo[a] = j.at("pad").at("lo")[a].get<std::int64_t>();
        meta.pad_hi[a] = j.at("pad").at("hi")[a].get<std::int64_t>();
        meta.crop_fit_lo[a] = j.at("crop_fit").at("lo")[a].get<std::int64_t>();
        meta.crop_fit_hi[a] = j.at("crop_fit").at("hi")[a].get<std::int64_t>();
    }
    meta.patched = j.at("patched").get<bool>();
    for (int c = 0; c < NUM_MODALITIES; ++c) {
        const auto& n = j.at("normalization")[c];
        meta.norm[c].mean = n.at("mean").get<double>();
        meta.norm[c].stddev = n.at("std").get<double>();
        meta.norm[c].degenerate = n.at("degenerate").get<bool>();
    }
    if (j.contains("geometry")) meta.geom = detail::geometry_from_json(j.at("geometry"));
    return meta;
}

std::vector<float> grid_to_file_order(const ChannelGrid& grid) {
    const Shape3 s = grid.shape;
    std::vector<float> out(grid.data.size());
    std::size_t k = 0;
    for (std::int64_t c = 0; c < grid.channels; ++c) {
        const float* chan = grid.channel_ptr(c);
        for (std::int64_t x = 0; x < s.nx; ++x)
            for (std::int64_t y = 0; y < s.ny; ++y)
                for (std::int64_t z = 0; z < s.nz; ++z) out[k++] = chan[linear_index(s, x, y, z)];
    }
    return out;
}

ChannelGrid grid_from_file_order(const std::vector<std::int64_t>& shape,
                                 const std::vector<float>& values, Spacing3 spacing) {
    if (shape.size() != 4) throw ShapeError("grid_from_file_order: expected rank-4 array");
    ChannelGrid g = make_channel_grid(shape[0], Shape3{shape[1], shape[2], shape[3]}, spacing);
    const Shape3 s = g.shape;
    if (values.size() != g.data.size())
        throw ShapeError("grid_from_file_order: value count does not match shape");
    std::size_t k = 0;
    for (std::int64_t c = 0; c < g.channels; ++c) {
        float* chan = g.channel_ptr(c);
        for (std::int64_t x = 0; x < s.nx; ++x)
            for (std::int64_t y = 0; y < s.ny; ++y)
                for (std::int64_t z = 0; z < s.nz; ++z) chan[linear_index(s, x, y, z)] = values[k++];
    }
    return g;
}

std::vector<std::uint8_t> masks_to_file_order(const RegionMasks& masks) {
    const Shape3 s = masks.shape;
    std::vector<std::uint8_t> out(static_cast<std::size_t>(NUM_REGIONS * s.voxels()));
    std::size_t k = 0;
    for (int r = 0; r < NUM_REGIONS; ++r)
        for (std::int64_t x = 0; x < s.nx; ++x)
            for (std::int64_t y = 0; y < s.ny; ++y)
                for (std::int64_t z = 0; z < s.nz; ++z)
                    out[k++] = masks.masks[r][linear_index(s, x, y, z)];
    return out;
}

RegionMasks masks_from_file_order(const std::vector<std::int64_t>& shape,
                                  const std::vector<std::uint8_t>& values, Spacing3 spacing) {
    if (shape.size() != 4 || shape[0] != NUM_REGIONS)
        throw ShapeError("masks_from_file_order: expected shape (3, nx, ny, nz)");
    RegionMasks m = make_region_masks(Shape3{shape[1], shape[2], shape[3]}, spacing);
    const Shape3 s = m.shape;
    if (values.size() != static_cast<std::size_t>(NUM_REGIONS * s.voxels()))
        throw ShapeError("masks_from_file_order: value count does not match shape");
    std::size_t k = 0;
    for (int r = 0; r < NUM_REGIONS; ++r)
        for (std::int64_t x = 0; x < s.nx; ++x)
            for (std::int64_t y = 0; y < s.ny; ++y)
                for (std::int64_t z = 0; z < s.nz; ++z)
                    m.masks[r][linear_index(s, x, y, z)] = values[k++];
    return m;
}

void write_preprocessed(const PreprocessedCase& pc, const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    const Shape3 s = pc.image.shape;
    write_npy(out_dir / (pc.case_id + "_img.npy"),
              {pc.image.channels, s.nx, s.ny, s.nz}, grid_to_file_order(pc.image));
    if (pc.regions) {
        const Shape3 rs = pc.regions->shape;
        write_npy(out_dir / (pc.case_id + "_reg.npy"), {NUM_REGIONS, rs.nx, rs.ny, rs.nz},
                  masks_to_file_order(*pc.regions));
    }
    std::ofstream f(out_dir / (pc.case_id + "_meta.json"));
    if (!f) throw IoError("write_preprocessed: cannot write meta for " + pc.case_id);
    f << meta_to_json(pc.meta, pc.case_id) << "\n";
}

PreprocessedCase read_preprocessed(const std::filesystem::path& dir, const std::string& case_id) {
    PreprocessedCase pc;
    pc.case_id = case_id;

    std::ifstream f(dir / (case_id + "_meta.json"));
    if (!f) throw IoError("read_preprocessed: missing meta for " + case_id);
    std::string text((std::istreambuf_iterator<char>(f)), {});
    pc.meta = meta_from_json(text);

    NpyArray img = read_npy(dir / (case_id + "_img.npy"));
    if (img.dtype != NpyDtype::Float32 || img.shape.size() != 4)
        throw ParseError("read_preprocessed: image cache must be float32 rank 4");
    pc.image = grid_from_file_order(img.shape, img.f32(), pc.meta.spacing);

    auto reg_path = dir / (case_id + "_reg.npy");
    if (std::filesystem::exists(reg_path)) {
        NpyArray reg = read_npy(reg_path);
        if (reg.dtype != NpyDtype::Uint8 || reg.shape.size() != 4)
            throw ParseError("read_preprocessed: region cache must be uint8 rank 4");
        pc.regions = masks_from_file_order(reg.shape, reg.u8(), pc.meta.spacing);
    }
    return pc;
}

} // namespace bts
