#include "bts/inference.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"

#include "bts/npy.hpp"
#include "bts/preprocess.hpp"
#include "geom_json.hpp"

namespace bts {

using json = nlohmann::ordered_json;

ChannelGrid ConstantPredictor::predict(const ChannelGrid& patch) const {
    if (!(patch.shape == window_))
        throw ShapeError("ConstantPredictor: patch shape " + patch.shape.str() +
                         " != window " + window_.str());
    ChannelGrid out = make_channel_grid(NUM_REGIONS, patch.shape, patch.spacing);
    const std::int64_t n = out.voxels();
    for (int c = 0; c < NUM_REGIONS; ++c)
        std::fill(out.data.begin() + c * n, out.data.begin() + (c + 1) * n, values_[c]);
    return out;
}

ChannelGrid VoxelwisePredictor::predict(const ChannelGrid& patch) const {
    if (patch.channels != 4)
        throw ShapeError("VoxelwisePredictor: expected 4 input channels");
    if (!(patch.shape == window_))
        throw ShapeError("VoxelwisePredictor: patch shape " + patch.shape.str() +
                         " != window " + window_.str());
    ChannelGrid out = make_channel_grid(NUM_REGIONS, patch.shape, patch.spacing);
    const std::int64_t n = patch.voxels();
    for (std::int64_t v = 0; v < n; ++v) {
        std::array<float, 4> in{patch.data[v], patch.data[n + v], patch.data[2 * n + v],
                                patch.data[3 * n + v]};
        std::array<float, NUM_REGIONS> p = fn_(in);
        for (int c = 0; c < NUM_REGIONS; ++c) out.data[c * n + v] = p[c];
    }
    return out;
}

MedNeXtPredictor::MedNeXtPredictor(ParamTree params, MedNeXtConfig config, Shape3 window)
    : params_(std::move(params)), config_(std::move(config)), window_(window) {
    config_.validate();
    const std::int64_t div = std::int64_t(1) << MedNeXtConfig::stages;
    for (int a = 0; a < 3; ++a)
        if (window_[a] % div != 0)
            throw ShapeError("MedNeXtPredictor: window extents must be divisible by " +
                             std::to_string(div));
}

ChannelGrid MedNeXtPredictor::predict(const ChannelGrid& patch) const {
    std::vector<ChannelGrid> logits = mednext_forward(params_, config_, patch);
    ChannelGrid out = std::move(logits.front()); // finest level
    for (float& v : out.data) v = static_cast<float>(stable_sigmoid(double(v)));
    return out;
}

const char* blend_mode_name(BlendMode m) {
    return m == BlendMode::Uniform ? "uniform" : "gaussian";
}

BlendMode blend_mode_from_name(const std::string& name) {
    if (name == "uniform") return BlendMode::Uniform;
    if (name == "gaussian") return BlendMode::Gaussian;
    throw ValueError("unknown blend mode '" + name + "' (expected uniform|gaussian)");
}

WindowPlan plan_windows(const Shape3& volume_shape, const Shape3& window, double overlap,
                        BlendMode blend) {
    if (!(overlap >= 0.0 && overlap < 1.0))
        throw ValueError("plan_windows: overlap must lie in [0,1)");
    for (int a = 0; a < 3; ++a) {
        if (window[a] <= 0) throw ValueError("plan_windows: window extents must be positive");
        if (volume_shape[a] <= 0) throw ValueError("plan_windows: volume extents must be positive");
    }

    WindowPlan plan;
    plan.window = window;
    plan.overlap = overlap;
    plan.blend = blend;

    std::array<std::vector<std::int64_t>, 3> axis_origins;
    for (int a = 0; a < 3; ++a) {
        std::int64_t extent = volume_shape[a];
        if (extent < window[a]) {
            std::int64_t total = window[a] - extent;
            plan.pad_lo[a] = total / 2;
            plan.pad_hi[a] = total - plan.pad_lo[a];
            extent = window[a];
        }
        plan.padded_extent[a] = extent;

        std::int64_t step =
            std::max<std::int64_t>(1, static_cast<std::int64_t>(std::floor(
                                          double(window[a]) * (1.0 - overlap))));
        std::vector<std::int64_t>& origins = axis_origins[a];
        for (std::int64_t o = 0; o + window[a] <= extent; o += step) origins.push_back(o);
        std::int64_t last = extent - window[a];
        if (origins.empty() || origins.back() != last) origins.push_back(last);
    }

    for (std::int64_t ox : axis_origins[0])
        for (std::int64_t oy : axis_origins[1])
            for (std::int64_t oz : axis_origins[2]) plan.origins.push_back({ox, oy, oz});
    return plan;
}

std::vector<float> blend_kernel(const Shape3& window, BlendMode mode) {
    const std::size_t n = static_cast<std::size_t>(window.voxels());
    if (mode == BlendMode::Uniform) return std::vector<float>(n, 1.0f);

    std::array<std::vector<double>, 3> axis;
    for (int a = 0; a < 3; ++a) {
        std::int64_t w = window[a];
        double center = double(w - 1) / 2.0;
        double sigma = double(w) / 8.0;
        axis[a].resize(static_cast<std::size_t>(w));
        for (std::int64_t t = 0; t < w; ++t) {
            double d = double(t) - center;
            axis[a][static_cast<std::size_t>(t)] = std::exp(-(d * d) / (2.0 * sigma * sigma));
        }
    }
    // normalize so the peak entry is exactly 1
    double max_val = 1.0;
    for (int a = 0; a < 3; ++a) {
        double m = 0.0;
        for (double v : axis[a]) m = std::max(m, v);
        max_val *= m;
    }
    std::vector<float> kernel(n);
    std::size_t i = 0;
    for (std::int64_t z = 0; z < window.nz; ++z)
        for (std::int64_t y = 0; y < window.ny; ++y)
            for (std::int64_t x = 0; x < window.nx; ++x) {
                double v = axis[0][static_cast<std::size_t>(x)] *
                           axis[1][static_cast<std::size_t>(y)] *
                           axis[2][static_cast<std::size_t>(z)] / max_val;
                kernel[i++] = static_cast<float>(std::max(v, 1e-6));
            }
    // kernel is built z-outer; re-index into x-fastest storage
    std::vector<float> out(n);
    i = 0;
    for (std::int64_t z = 0; z < window.nz; ++z)
        for (std::int64_t y = 0; y < window.ny; ++y)
            for (std::int64_t x = 0; x < window.nx; ++x)
                out[static_cast<std::size_t>(linear_index(window, x, y, z))] = kernel[i++];
    return out;
}

RegionProbs sliding_window_predict(const ChannelGrid& volume, const Predictor& predictor,
                                   const WindowPlan& plan) {
    volume.validate();
    if (volume.channels != 4)
        throw ShapeError("sliding_window_predict: expected a 4-channel volume");
    if (!(predictor.window_shape() == plan.window))
        throw ShapeError("sliding_window_predict: predictor window " +
                         predictor.window_shape().str() + " differs from plan window " +
                         plan.window.str());

    const Shape3 padded = plan.padded_extent;
    ChannelGrid work = make_channel_grid(4, padded, volume.spacing);
    for (int c = 0; c < 4; ++c)
        for (std::int64_t z = 0; z < volume.shape.nz; ++z)
            for (std::int64_t y = 0; y < volume.shape.ny; ++y) {
                const float* src = volume.channel_ptr(c) + linear_index(volume.shape, 0, y, z);
                float* dst = work.channel_ptr(c) +
                             linear_index(padded, plan.pad_lo[0], y + plan.pad_lo[1],
                                          z + plan.pad_lo[2]);
                std::copy(src, src + volume.shape.nx, dst);
            }

    const std::vector<float> kernel = blend_kernel(plan.window, plan.blend);
    const std::int64_t pn = padded.voxels();
    std::vector<double> sum_wp(static_cast<std::size_t>(NUM_REGIONS * pn), 0.0);
    std::vector<double> sum_w(static_cast<std::size_t>(pn), 0.0);

    ChannelGrid patch = make_channel_grid(4, plan.window, volume.spacing);
    const std::int64_t wn = plan.window.voxels();
    for (const auto& origin : plan.origins) {
        for (int c = 0; c < 4; ++c)
            for (std::int64_t z = 0; z < plan.window.nz; ++z)
                for (std::int64_t y = 0; y < plan.window.ny; ++y) {
                    const float* src =
                        work.channel_ptr(c) +
                        linear_index(padded, origin[0], origin[1] + y, origin[2] + z);
                    float* dst = patch.channel_ptr(c) + linear_index(plan.window, 0, y, z);
                    std::copy(src, src + plan.window.nx, dst);
                }
        ChannelGrid pred = predictor.predict(patch);
        if (pred.channels != NUM_REGIONS || !(pred.shape == plan.window))
            throw ShapeError("sliding_window_predict: predictor output has wrong shape");
        for (std::int64_t z = 0; z < plan.window.nz; ++z)
            for (std::int64_t y = 0; y < plan.window.ny; ++y)
                for (std::int64_t x = 0; x < plan.window.nx; ++x) {
                    std::int64_t widx = linear_index(plan.window, x, y, z);
                    std::int64_t gidx =
                        linear_index(padded, origin[0] + x, origin[1] + y, origin[2] + z);
                    double w = kernel[widx];
                    sum_w[gidx] += w;
                    for (int c = 0; c < NUM_REGIONS; ++c)
                        sum_wp[c * pn + gidx] += w * double(pred.data[c * wn + widx]);
                }
    }

    RegionProbs out = make_region_probs(volume.shape, volume.spacing, ProbKind::Probabilities);
    for (std::int64_t z = 0; z < volume.shape.nz; ++z)
        for (std::int64_t y = 0; y < volume.shape.ny; ++y)
            for (std::int64_t x = 0; x < volume.shape.nx; ++x) {
                std::int64_t gidx = linear_index(padded, x + plan.pad_lo[0], y + plan.pad_lo[1],
                                                 z + plan.pad_lo[2]);
                std::int64_t vidx = linear_index(volume.shape, x, y, z);
                double w = sum_w[gidx];
                if (!(w > 0.0))
                    throw Error("sliding_window_predict: voxel not covered by any window");
                for (int c = 0; c < NUM_REGIONS; ++c) {
                    double p = sum_wp[c * pn + gidx] / w;
                    out.channels[c].data[vidx] =
                        static_cast<float>(std::min(1.0, std::max(0.0, p)));
                }
            }
    return out;
}

RegionProbs ensemble_mean(std::span<const RegionProbs> maps) {
    if (maps.empty()) throw ValueError("ensemble_mean: empty map list");
    const Shape3 shape = maps[0].shape();
    const Spacing3 spacing = maps[0].spacing();
    for (const RegionProbs& m : maps) {
        if (m.kind != ProbKind::Probabilities)
            throw ValueError("ensemble_mean: all maps must hold probabilities");
        if (!(m.shape() == shape) || m.spacing() != spacing)
            throw ShapeError("ensemble_mean: maps must share geometry");
    }
    RegionProbs out = make_region_probs(shape, spacing, ProbKind::Probabilities);
    const double inv = 1.0 / double(maps.size());
    const std::size_t n = static_cast<std::size_t>(shape.voxels());
    for (int c = 0; c < NUM_REGIONS; ++c) {
        for (std::size_t v = 0; v < n; ++v) {
            double acc = 0.0;
            for (const RegionProbs& m : maps) acc += double(m.channels[c].data[v]);
            out.channels[c].data[v] =
                static_cast<float>(std::min(1.0, std::max(0.0, acc * inv)));
        }
    }
    for (int c = 0; c < NUM_REGIONS; ++c) out.channels[c].geom = maps[0].channels[c].geom;
    return out;
}

void write_probs(const RegionProbs& probs, const std::filesystem::path& stem,
                 const ProbsInfo& info) {
    probs.validate();
    const Shape3 s = probs.shape();
    ChannelGrid grid = probs_to_grid(probs);
    write_npy(std::filesystem::path(stem.string() + ".npy"), {NUM_REGIONS, s.nx, s.ny, s.nz},
              grid_to_file_order(grid));

    json j;
    j["kind"] = "probabilities";
    j["shape"] = {s.nx, s.ny, s.nz};
    j["spacing"] = {probs.spacing()[0], probs.spacing()[1], probs.spacing()[2]};
    j["plan"] = {{"window", {info.window.nx, info.window.ny, info.window.nz}},
                 {"overlap", info.overlap},
                 {"blend", info.blend}};
    j["model_ids"] = info.model_ids;
    if (probs.channels[0].geom) j["geometry"] = detail::geometry_to_json(*probs.channels[0].geom);
    std::ofstream f(stem.string() + ".json");
    if (!f) throw IoError("write_probs: cannot write sidecar for " + stem.string());
    f << j.dump(2) << "\n";
}

RegionProbs read_probs(const std::filesystem::path& stem, ProbsInfo* info) {
    NpyArray arr = read_npy(std::filesystem::path(stem.string() + ".npy"));
    if (arr.dtype != NpyDtype::Float32 || arr.shape.size() != 4 || arr.shape[0] != NUM_REGIONS)
        throw ParseError("read_probs: expected float32 (3, X, Y, Z) array");

    Spacing3 spacing = UNIT_SPACING;
    std::optional<GeometryInfo> geom;
    std::ifstream f(stem.string() + ".json");
    json j;
    if (f) {
        j = json::parse(std::string((std::istreambuf_iterator<char>(f)), {}));
        for (int a = 0; a < 3; ++a) spacing[a] = j.at("spacing")[a].get<float>();
        if (j.contains("geometry")) geom = detail::geometry_from_json(j.at("geometry"));
        if (info) {
            info->overlap = j.at("plan").at("overlap").get<double>();
            info->blend = j.at("plan").at("blend").get<std::string>();
            for (int a = 0; a < 3; ++a)
                info->window[a] = j.at("plan").at("window")[a].get<std::int64_t>();
            info->model_ids = j.at("model_ids").get<std::vector<std::string>>();
        }
    }
    ChannelGrid grid = grid_from_file_order(arr.shape, arr.f32(), spacing);
    RegionProbs probs = grid_to_probs(grid, ProbKind::Probabilities);
    if (geom)
        for (auto& ch : probs.channels) ch.geom = geom;
    return probs;
}

} // namespace bts
