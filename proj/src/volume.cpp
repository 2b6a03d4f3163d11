#include "bts/volume.hpp"

#include <sstream>

namespace bts {

std::string Shape3::str() const {
    std::ostringstream os;
    os << nx << "x" << ny << "x" << nz;
    return os.str();
}

namespace {

void check_shape_positive(const Shape3& s, const char* what) {
    if (s.nx <= 0 || s.ny <= 0 || s.nz <= 0)
        throw ShapeError(std::string(what) + ": shape must be positive, got " + s.str());
}

void check_spacing_positive(const Spacing3& sp, const char* what) {
    for (float v : sp)
        if (!(v > 0.0f))
            throw ValueError(std::string(what) + ": spacing components must be > 0");
}

} // namespace

void Volume3::validate() const {
    check_shape_positive(shape, "Volume3");
    check_spacing_positive(spacing, "Volume3");
    if (static_cast<std::int64_t>(data.size()) != shape.voxels())
        throw ShapeError("Volume3: data length " + std::to_string(data.size()) +
                         " does not match shape " + shape.str());
}

Volume3 make_volume(Shape3 shape, Spacing3 spacing, float fill) {
    Volume3 v;
    v.shape = shape;
    v.spacing = spacing;
    v.data.assign(static_cast<std::size_t>(shape.voxels()), fill);
    v.validate();
    return v;
}

void LabelMap::validate() const {
    check_shape_positive(shape, "LabelMap");
    check_spacing_positive(spacing, "LabelMap");
    if (static_cast<std::int64_t>(data.size()) != shape.voxels())
        throw ShapeError("LabelMap: data length does not match shape " + shape.str());
    for (std::uint8_t v : data)
        if (v > LABEL_MAX)
            throw ValueError("LabelMap: invalid label value " + std::to_string(int(v)) +
                             " (labels must be in {0,1,2,3})");
}

LabelMap make_labelmap(Shape3 shape, Spacing3 spacing, std::uint8_t fill) {
    LabelMap m;
    m.shape = shape;
    m.spacing = spacing;
    m.data.assign(static_cast<std::size_t>(shape.voxels()), fill);
    m.validate();
    return m;
}

const char* modality_name(Modality m) {
    switch (m) {
    case Modality::T1: return "t1n";
    case Modality::T1Gd: return "t1c";
    case Modality::T2W: return "t2w";
    case Modality::T2Flair: return "t2f";
    }
    return "?";
}

void MultiModalImage::validate() const {
    for (const auto& ch : channels) ch.validate();
    for (int c = 1; c < NUM_MODALITIES; ++c) {
        if (!(channels[c].shape == channels[0].shape))
            throw ShapeError("MultiModalImage: channel shapes differ (" +
                             channels[0].shape.str() + " vs " + channels[c].shape.str() + ")");
        if (channels[c].spacing != channels[0].spacing)
            throw ShapeError("MultiModalImage: channel spacings differ");
    }
}

const char* region_name(Region r) {
    switch (r) {
    case Region::ET: return "ET";
    case Region::TC: return "TC";
    case Region::WT: return "WT";
    }
    return "?";
}

void RegionMasks::validate() const {
    check_shape_positive(shape, "RegionMasks");
    check_spacing_positive(spacing, "RegionMasks");
    for (const auto& m : masks) {
        if (static_cast<std::int64_t>(m.size()) != shape.voxels())
            throw ShapeError("RegionMasks: mask length does not match shape " + shape.str());
        for (std::uint8_t v : m)
            if (v > 1) throw ValueError("RegionMasks: masks must be binary");
    }
}

RegionMasks make_region_masks(Shape3 shape, Spacing3 spacing) {
    RegionMasks r;
    r.shape = shape;
    r.spacing = spacing;
    for (auto& m : r.masks) m.assign(static_cast<std::size_t>(shape.voxels()), 0);
    return r;
}

void RegionProbs::validate() const {
    for (const auto& ch : channels) ch.validate();
    for (int c = 1; c < NUM_REGIONS; ++c) {
        if (!(channels[c].shape == channels[0].shape) || channels[c].spacing != channels[0].spacing)
            throw ShapeError("RegionProbs: channels must share geometry");
    }
    if (kind == ProbKind::Probabilities) {
        for (const auto& ch : channels)
            for (float v : ch.data)
                if (!(v >= 0.0f && v <= 1.0f))
                    throw ValueError("RegionProbs: probability value outside [0,1]");
    }
}

RegionProbs make_region_probs(Shape3 shape, Spacing3 spacing, ProbKind kind) {
    RegionProbs p;
    for (auto& ch : p.channels) ch = make_volume(shape, spacing);
    p.kind = kind;
    return p;
}

void ChannelGrid::validate() const {
    check_shape_positive(shape, "ChannelGrid");
    check_spacing_positive(spacing, "ChannelGrid");
    if (channels <= 0) throw ShapeError("ChannelGrid: channel count must be positive");
    if (static_cast<std::int64_t>(data.size()) != channels * shape.voxels())
        throw ShapeError("ChannelGrid: data length does not match channels*shape");
}

ChannelGrid make_channel_grid(std::int64_t channels, Shape3 shape, Spacing3 spacing, float fill) {
    ChannelGrid g;
    g.channels = channels;
    g.shape = shape;
    g.spacing = spacing;
    g.data.assign(static_cast<std::size_t>(channels * shape.voxels()), fill);
    g.validate();
    return g;
}

ChannelGrid stack_modalities(const MultiModalImage& image) {
    image.validate();
    ChannelGrid g = make_channel_grid(NUM_MODALITIES, image.shape(), image.spacing());
    const std::int64_t n = g.voxels();
    for (int c = 0; c < NUM_MODALITIES; ++c)
        std::copy(image.channels[c].data.begin(), image.channels[c].data.end(),
                  g.data.begin() + c * n);
    return g;
}

ChannelGrid probs_to_grid(const RegionProbs& probs) {
    ChannelGrid g = make_channel_grid(NUM_REGIONS, probs.shape(), probs.spacing());
    const std::int64_t n = g.voxels();
    for (int c = 0; c < NUM_REGIONS; ++c)
        std::copy(probs.channels[c].data.begin(), probs.channels[c].data.end(),
                  g.data.begin() + c * n);
    return g;
}

RegionProbs grid_to_probs(const ChannelGrid& grid, ProbKind kind) {
    if (grid.channels != NUM_REGIONS)
        throw ShapeError("grid_to_probs: expected 3 channels, got " +
                         std::to_string(grid.channels));
    RegionProbs p = make_region_probs(grid.shape, grid.spacing, kind);
    const std::int64_t n = grid.voxels();
    for (int c = 0; c < NUM_REGIONS; ++c)
        std::copy(grid.data.begin() + c * n, grid.data.begin() + (c + 1) * n,
                  p.channels[c].data.begin());
    return p;
}

RegionMasks labels_to_regions(const LabelMap& labels) {
    labels.validate();
    RegionMasks out = make_region_masks(labels.shape, labels.spacing);
    auto& et = out.mask(Region::ET);
    auto& tc = out.mask(Region::TC);
    auto& wt = out.mask(Region::WT);
    const std::size_t n = labels.data.size();
    for (std::size_t i = 0; i < n; ++i) {
        switch (labels.data[i]) {
        case LABEL_BACKGROUND:
            break;
        case LABEL_NETC:
            tc[i] = 1;
            wt[i] = 1;
            break;
        case LABEL_SNFH:
            wt[i] = 1;
            break;
        case LABEL_ET:
            et[i] = 1;
            tc[i] = 1;
            wt[i] = 1;
            break;
        default:
            throw ValueError("labels_to_regions: invalid label value");
        }
    }
    return out;
}

RegionMasks enforce_hierarchy(const RegionMasks& masks) {
    masks.validate();
    RegionMasks out = masks;
    auto& et = out.mask(Region::ET);
    auto& tc = out.mask(Region::TC);
    auto& wt = out.mask(Region::WT);
    const std::size_t n = et.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (et[i]) tc[i] = 1;
        if (tc[i]) wt[i] = 1;
    }
    return out;
}

LabelMap regions_to_labels(const RegionMasks& masks) {
    RegionMasks nested = enforce_hierarchy(masks);
    LabelMap out = make_labelmap(nested.shape, nested.spacing);
    const auto& et = nested.mask(Region::ET);
    const auto& tc = nested.mask(Region::TC);
    const auto& wt = nested.mask(Region::WT);
    const std::size_t n = et.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (et[i])
            out.data[i] = LABEL_ET;
        else if (tc[i])
            out.data[i] = LABEL_NETC;
        else if (wt[i])
            out.data[i] = LABEL_SNFH;
    }
    return out;
}

} // namespace bts
