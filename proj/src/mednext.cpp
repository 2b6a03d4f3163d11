#include "bts/mednext.hpp"

#include <cmath>

#include "json.hpp"

namespace bts {

using json = nlohmann::ordered_json;

MedNeXtConfig MedNeXtConfig::preset_b(int base_channels, int kernel_size) {
    MedNeXtConfig c;
    c.kernel_size = kernel_size;
    c.base_channels = base_channels;
    c.blocks_per_stage = {2, 2, 2, 2, 2, 2, 2, 2, 2};
    c.expansion_ratios = {2, 3, 4, 4, 4, 4, 4, 3, 2};
    c.preset = "B";
    return c;
}

MedNeXtConfig MedNeXtConfig::preset_m(int base_channels, int kernel_size) {
    MedNeXtConfig c;
    c.kernel_size = kernel_size;
    c.base_channels = base_channels;
    c.blocks_per_stage = {3, 4, 4, 4, 4, 4, 4, 4, 3};
    c.expansion_ratios = {2, 3, 4, 4, 4, 4, 4, 3, 2};
    c.preset = "M";
    return c;
}

MedNeXtConfig MedNeXtConfig::toy(int base_channels, int kernel_size) {
    MedNeXtConfig c;
    c.kernel_size = kernel_size;
    c.base_channels = base_channels;
    c.blocks_per_stage = {1, 1, 1, 1, 1, 1, 1, 1, 1};
    c.expansion_ratios = {2, 2, 2, 2, 2, 2, 2, 2, 2};
    c.preset = "toy";
    return c;
}

void MedNeXtConfig::validate() const {
    if (kernel_size < 1 || kernel_size % 2 == 0)
        throw ValueError("MedNeXtConfig: kernel_size must be odd and positive");
    if (base_channels < 1) throw ValueError("MedNeXtConfig: base_channels must be >= 1");
    for (int b : blocks_per_stage)
        if (b < 1) throw ValueError("MedNeXtConfig: block counts must be >= 1");
    for (int r : expansion_ratios)
        if (r < 1) throw ValueError("MedNeXtConfig: expansion ratios must be >= 1");
    if (deep_supervision_levels < 1 || deep_supervision_levels > 4)
        throw ValueError("MedNeXtConfig: deep_supervision_levels must be in 1..4");
    if (in_channels < 1 || out_channels < 1)
        throw ValueError("MedNeXtConfig: channel counts must be >= 1");
}

std::string MedNeXtConfig::to_json() const {
    json j;
    j["kernel_size"] = kernel_size;
    j["base_channels"] = base_channels;
    j["blocks_per_stage"] = blocks_per_stage;
    j["expansion_ratios"] = expansion_ratios;
    j["deep_supervision_levels"] = deep_supervision_levels;
    j["in_channels"] = in_channels;
    j["out_channels"] = out_channels;
    j["preset"] = preset;
    return j.dump();
}

MedNeXtConfig MedNeXtConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    MedNeXtConfig c;
    c.kernel_size = j.at("kernel_size").get<int>();
    c.base_channels = j.at("base_channels").get<int>();
    for (int i = 0; i < 9; ++i) {
        c.blocks_per_stage[i] = j.at("blocks_per_stage")[i].get<int>();
        c.expansion_ratios[i] = j.at("expansion_ratios")[i].get<int>();
    }
    c.deep_supervision_levels = j.at("deep_supervision_levels").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.preset = j.value("preset", "custom");
    c.validate();
    return c;
}

namespace {

void he_uniform(Param& p, std::int64_t fan_in, Rng& rng) {
    double bound = std::sqrt(6.0 / double(fan_in));
    for (float& v : p.values) v = static_cast<float>(rng.uniform(-bound, bound));
}

void ones(Param& p) {
    for (float& v : p.values) v = 1.0f;
}

// Parameter registration. Called in a fixed order by build_mednext so that
// initialization draws are reproducible; kind decides the init rule.
void add_conv(ParamTree& t, Rng& rng, const std::string& name, std::int64_t out_ch,
              std::int64_t in_per_group, int k) {
    Param& w = t.add(name + ".weight", {out_ch, in_per_group, k, k, k});
    he_uniform(w, in_per_group * std::int64_t(k) * k * k, rng);
    t.add(name + ".bias", {out_ch});
}

// Transposed convs store weights as (in, out_per_group, k, k, k).
void add_conv_transposed(ParamTree& t, Rng& rng, const std::string& name, std::int64_t in_ch,
                         std::int64_t out_per_group, int k) {
    Param& w = t.add(name + ".weight", {in_ch, out_per_group, k, k, k});
    std::int64_t fan_in = (out_per_group == 1 ? 1 : in_ch) * std::int64_t(k) * k * k;
    // depthwise transposed: one input channel feeds each output channel
    if (out_per_group == 1) fan_in = std::int64_t(k) * k * k;
    he_uniform(w, fan_in, rng);
    t.add(name + ".bias", {out_per_group == 1 ? in_ch : out_per_group});
}

void add_norm(ParamTree& t, const std::string& name, std::int64_t ch) {
    ones(t.add(name + ".gamma", {ch}));
    t.add(name + ".beta", {ch});
}

void add_block(ParamTree& t, Rng& rng, const std::string& prefix, std::int64_t ch, int ratio,
               int k) {
    add_conv(t, rng, prefix + ".dw", ch, 1, k);
    add_norm(t, prefix + ".norm", ch);
    add_conv(t, rng, prefix + ".expand", ratio * ch, ch, 1);
    add_conv(t, rng, prefix + ".compress", ch, ratio * ch, 1);
}

void add_down(ParamTree& t, Rng& rng, const std::string& prefix, std::int64_t ch, int ratio,
              int k) {
    add_conv(t, rng, prefix + ".dw", ch, 1, k); // applied with stride 2
    add_norm(t, prefix + ".norm", ch);
    add_conv(t, rng, prefix + ".expand", ratio * ch, ch, 1);
    add_conv(t, rng, prefix + ".compress", 2 * ch, ratio * ch, 1);
    add_conv(t, rng, prefix + ".res", 2 * ch, ch, 1); // stride-2 1x1x1 shortcut
}

void add_up(ParamTree& t, Rng& rng, const std::string& prefix, std::int64_t ch, int ratio, int k) {
    add_conv_transposed(t, rng, prefix + ".dw", ch, 1, k); // depthwise, stride 2
    add_norm(t, prefix + ".norm", ch);
    add_conv(t, rng, prefix + ".expand", ratio * ch, ch, 1);
    add_conv(t, rng, prefix + ".compress", ch / 2, ratio * ch, 1);
    // transposed 1x1x1 shortcut, weights (in, out, 1, 1, 1)
    Param& w = t.add(prefix + ".res.weight", {ch, ch / 2, 1, 1, 1});
    he_uniform(w, ch, rng);
    t.add(prefix + ".res.bias", {ch / 2});
}

// ---- forward primitives (double accumulation, fixed order) ----

ChannelGrid conv1x1(const ChannelGrid& x, const Param& w, const Param& b, std::int64_t out_ch) {
    const std::int64_t in_ch = x.channels;
    const std::int64_t n = x.voxels();
    ChannelGrid out = make_channel_grid(out_ch, x.shape, x.spacing);
    std::vector<double> acc(static_cast<std::size_t>(n));
    for (std::int64_t o = 0; o < out_ch; ++o) {
        std::fill(acc.begin(), acc.end(), double(b.values[o]));
        for (std::int64_t i = 0; i < in_ch; ++i) {
            const double wv = w.values[o * in_ch + i];
            const float* src = x.channel_ptr(i);
            for (std::int64_t v = 0; v < n; ++v) acc[v] += wv * double(src[v]);
        }
        float* dst = out.channel_ptr(o);
        for (std::int64_t v = 0; v < n; ++v) dst[v] = static_cast<float>(acc[v]);
    }
    return out;
}

Shape3 strided_shape(const Shape3& s) {
    return Shape3{(s.nx - 1) / 2 + 1, (s.ny - 1) / 2 + 1, (s.nz - 1) / 2 + 1};
}

ChannelGrid conv1x1_stride2(const ChannelGrid& x, const Param& w, const Param& b,
                            std::int64_t out_ch) {
    const std::int64_t in_ch = x.channels;
    const Shape3 os = strided_shape(x.shape);
    ChannelGrid out = make_channel_grid(out_ch, os, x.spacing);
    for (std::int64_t o = 0; o < out_ch; ++o) {
        float* dst = out.channel_ptr(o);
        for (std::int64_t z = 0; z < os.nz; ++z)
            for (std::int64_t y = 0; y < os.ny; ++y)
                for (std::int64_t xx = 0; xx < os.nx; ++xx) {
                    double acc = b.values[o];
                    std::int64_t src_idx = linear_index(x.shape, 2 * xx, 2 * y, 2 * z);
                    for (std::int64_t i = 0; i < in_ch; ++i)
                        acc += double(w.values[o * in_ch + i]) *
                               double(x.data[i * x.voxels() + src_idx]);
                    dst[linear_index(os, xx, y, z)] = static_cast<float>(acc);
                }
    }
    return out;
}

// Depthwise conv, zero padding k/2, stride 1 or 2. Weight layout
// (ch, 1, kx, ky, kz) with kz fastest.
ChannelGrid depthwise_conv(const ChannelGrid& x, const Param& w, const Param& b, int k,
                           int stride) {
    const Shape3 s = x.shape;
    const Shape3 os = stride == 1 ? s
                                  : Shape3{(s.nx - 1) / 2 + 1, (s.ny - 1) / 2 + 1,
                                           (s.nz - 1) / 2 + 1};
    const int half = k / 2;
    ChannelGrid out = make_channel_grid(x.channels, os, x.spacing);
    const std::int64_t n = x.voxels();
    for (std::int64_t c = 0; c < x.channels; ++c) {
        const float* src = x.data.data() + c * n;
        const float* ker = w.values.data() + c * k * k * k;
        float* dst = out.channel_ptr(c);
        for (std::int64_t z = 0; z < os.nz; ++z)
            for (std::int64_t y = 0; y < os.ny; ++y)
                for (std::int64_t xx = 0; xx < os.nx; ++xx) {
                    double acc = b.values[c];
                    const std::int64_t bx = stride * xx - half;
                    const std::int64_t by = stride * y - half;
                    const std::int64_t bz = stride * z - half;
                    for (int kx = 0; kx < k; ++kx) {
                        std::int64_t ix = bx + kx;
                        if (ix < 0 || ix >= s.nx) continue;
                        for (int ky = 0; ky < k; ++ky) {
                            std::int64_t iy = by + ky;
                            if (iy < 0 || iy >= s.ny) continue;
                            for (int kz = 0; kz < k; ++kz) {
                                std::int64_t iz = bz + kz;
                                if (iz < 0 || iz >= s.nz) continue;
                                acc += double(src[linear_index(s, ix, iy, iz)]) *
                                       double(ker[(kx * k + ky) * k + kz]);
                            }
                        }
                    }
                    dst[linear_index(os, xx, y, z)] = static_cast<float>(acc);
                }
    }
    return out;
}

// Transposed depthwise conv, stride 2, padding k/2: output extent 2n-1 per
// axis for odd k. Gather form: y[o] = sum over i with (o + half - 2i) in
// [0,k). Weight layout (ch, 1, kx, ky, kz).
ChannelGrid depthwise_conv_transposed(const ChannelGrid& x, const Param& w, const Param& b,
                                      int k) {
    const Shape3 s = x.shape;
    const Shape3 os{2 * s.nx - 1, 2 * s.ny - 1, 2 * s.nz - 1};
    const int half = k / 2;
    ChannelGrid out = make_channel_grid(x.channels, os, x.spacing);
    const std::int64_t n = x.voxels();

    auto taps = [&](std::int64_t o, std::int64_t extent, std::int64_t& i_lo, std::int64_t& i_hi) {
        // valid i: 0 <= o + half - 2i < k  and  0 <= i < extent
        std::int64_t lo = (o + half - (k - 1) + 1) / 2; // ceil((o+half-k+1)/2)
        if (2 * lo < o + half - (k - 1)) ++lo;
        std::int64_t hi = (o + half) / 2;
        i_lo = std::max<std::int64_t>(0, lo);
        i_hi = std::min(extent - 1, hi);
    };

    for (std::int64_t c = 0; c < x.channels; ++c) {
        const float* src = x.data.data() + c * n;
        const float* ker = w.values.data() + c * k * k * k;
        float* dst = out.channel_ptr(c);
        for (std::int64_t z = 0; z < os.nz; ++z) {
            std::int64_t zlo, zhi;
            taps(z, s.nz, zlo, zhi);
            for (std::int64_t y = 0; y < os.ny; ++y) {
                std::int64_t ylo, yhi;
                taps(y, s.ny, ylo, yhi);
                for (std::int64_t xx = 0; xx < os.nx; ++xx) {
                    std::int64_t xlo, xhi;
                    taps(xx, s.nx, xlo, xhi);
                    double acc = b.values[c];
                    for (std::int64_t ix = xlo; ix <= xhi; ++ix) {
                        std::int64_t mx = xx + half - 2 * ix;
                        for (std::int64_t iy = ylo; iy <= yhi; ++iy) {
                            std::int64_t my = y + half - 2 * iy;
                            for (std::int64_t iz = zlo; iz <= zhi; ++iz) {
                                std::int64_t mz = z + half - 2 * iz;
                                acc += double(src[linear_index(s, ix, iy, iz)]) *
                                       double(ker[(mx * k + my) * k + mz]);
                            }
                        }
                    }
                    dst[linear_index(os, xx, y, z)] = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

// Transposed 1x1x1 conv, stride 2: nonzero only where all output
// coordinates are even. Weight layout (in, out, 1, 1, 1); bias everywhere.
ChannelGrid conv1x1_transposed_stride2(const ChannelGrid& x, const Param& w, const Param& b,
                                       std::int64_t out_ch) {
    const Shape3 s = x.shape;
    const Shape3 os{2 * s.nx - 1, 2 * s.ny - 1, 2 * s.nz - 1};
    const std::int64_t in_ch = x.channels;
    ChannelGrid out = make_channel_grid(out_ch, os, x.spacing);
    for (std::int64_t o = 0; o < out_ch; ++o) {
        float* dst = out.channel_ptr(o);
        const float bias = b.values[o];
        for (std::int64_t z = 0; z < os.nz; ++z)
            for (std::int64_t y = 0; y < os.ny; ++y)
                for (std::int64_t xx = 0; xx < os.nx; ++xx) {
                    double acc = bias;
                    if ((xx % 2) == 0 && (y % 2) == 0 && (z % 2) == 0) {
                        std::int64_t src_idx = linear_index(s, xx / 2, y / 2, z / 2);
                        for (std::int64_t i = 0; i < in_ch; ++i)
                            acc += double(w.values[i * out_ch + o]) *
                                   double(x.data[i * x.voxels() + src_idx]);
                    }
                    dst[linear_index(os, xx, y, z)] = static_cast<float>(acc);
                }
    }
    return out;
}

// Per-channel GroupNorm (groups == channels), eps 1e-5, affine.
ChannelGrid group_norm_cw(const ChannelGrid& x, const Param& gamma, const Param& beta) {
    constexpr double eps = 1e-5;
    ChannelGrid out = make_channel_grid(x.channels, x.shape, x.spacing);
    const std::int64_t n = x.voxels();
    for (std::int64_t c = 0; c < x.channels; ++c) {
        const float* src = x.channel_ptr(c);
        double sum = 0.0, sumsq = 0.0;
        for (std::int64_t v = 0; v < n; ++v) {
            sum += src[v];
            sumsq += double(src[v]) * double(src[v]);
        }
        double mean = sum / double(n);
        double var = sumsq / double(n) - mean * mean;
        if (var < 0.0) var = 0.0;
        double inv = 1.0 / std::sqrt(var + eps);
        double g = gamma.values[c], bb = beta.values[c];
        float* dst = out.channel_ptr(c);
        for (std::int64_t v = 0; v < n; ++v)
            dst[v] = static_cast<float>((double(src[v]) - mean) * inv * g + bb);
    }
    return out;
}

void gelu_inplace(ChannelGrid& x) {
    for (float& v : x.data) v = static_cast<float>(gelu_exact(double(v)));
}

void add_inplace(ChannelGrid& a, const ChannelGrid& b) {
    if (a.channels != b.channels || !(a.shape == b.shape))
        throw ShapeError("mednext: residual shapes differ (" + a.shape.str() + " vs " +
                         b.shape.str() + ")");
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] += b.data[i];
}

// Zero-pad one voxel on the low side of each axis (matches the transposed
// stride-2 output alignment).
ChannelGrid pad_low_one(const ChannelGrid& x) {
    Shape3 os{x.shape.nx + 1, x.shape.ny + 1, x.shape.nz + 1};
    ChannelGrid out = make_channel_grid(x.channels, os, x.spacing);
    for (std::int64_t c = 0; c < x.channels; ++c) {
        const float* src = x.channel_ptr(c);
        float* dst = out.channel_ptr(c);
        for (std::int64_t z = 0; z < x.shape.nz; ++z)
            for (std::int64_t y = 0; y < x.shape.ny; ++y) {
                const float* row = src + linear_index(x.shape, 0, y, z);
                float* orow = dst + linear_index(os, 1, y + 1, z + 1);
                std::copy(row, row + x.shape.nx, orow);
            }
    }
    return out;
}

ChannelGrid block_core(const ParamTree& t, const std::string& prefix, const ChannelGrid& x,
                       int k, int ratio, int stride, bool transposed) {
    const std::int64_t ch = x.channels;
    ChannelGrid h = transposed
                        ? depthwise_conv_transposed(x, t.at(prefix + ".dw.weight"),
                                                    t.at(prefix + ".dw.bias"), k)
                        : depthwise_conv(x, t.at(prefix + ".dw.weight"), t.at(prefix + ".dw.bias"),
                                         k, stride);
    h = group_norm_cw(h, t.at(prefix + ".norm.gamma"), t.at(prefix + ".norm.beta"));
    h = conv1x1(h, t.at(prefix + ".expand.weight"), t.at(prefix + ".expand.bias"), ratio * ch);
    gelu_inplace(h);
    const Param& cw = t.at(prefix + ".compress.weight");
    h = conv1x1(h, cw, t.at(prefix + ".compress.bias"), cw.shape[0]);
    return h;
}

ChannelGrid down_block(const ParamTree& t, const std::string& prefix, const ChannelGrid& x,
                       int k, int ratio) {
    ChannelGrid h = block_core(t, prefix, x, k, ratio, 2, false);
    ChannelGrid res = conv1x1_stride2(x, t.at(prefix + ".res.weight"), t.at(prefix + ".res.bias"),
                                      t.at(prefix + ".res.weight").shape[0]);
    add_inplace(h, res);
    return h;
}

ChannelGrid up_block(const ParamTree& t, const std::string& prefix, const ChannelGrid& x, int k,
                     int ratio) {
    ChannelGrid h = pad_low_one(block_core(t, prefix, x, k, ratio, 2, true));
    const Param& rw = t.at(prefix + ".res.weight"); // (in, out, 1,1,1)
    ChannelGrid res =
        pad_low_one(conv1x1_transposed_stride2(x, rw, t.at(prefix + ".res.bias"), rw.shape[1]));
    add_inplace(h, res);
    return h;
}

ChannelGrid run_stage(const ParamTree& t, const std::string& stage, int blocks,
                      const ChannelGrid& x, int k, int ratio) {
    ChannelGrid h = x;
    for (int b = 0; b < blocks; ++b)
        h = mednext_block_forward(t, stage + ".b" + std::to_string(b), h, k, ratio);
    return h;
}

} // namespace

ParamTree build_mednext(const MedNeXtConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ParamTree t;
    const int k = config.kernel_size;

    add_conv(t, rng, "stem", config.base_channels, config.in_channels, 1);
    for (int i = 0; i < MedNeXtConfig::stages; ++i) {
        std::int64_t ch = config.channels_at(i);
        for (int b = 0; b < config.blocks_per_stage[i]; ++b)
            add_block(t, rng, "enc" + std::to_string(i) + ".b" + std::to_string(b), ch,
                      config.expansion_ratios[i], k);
        add_down(t, rng, "down" + std::to_string(i), ch, config.expansion_ratios[i + 1], k);
    }
    {
        std::int64_t ch = config.channels_at(4);
        for (int b = 0; b < config.blocks_per_stage[4]; ++b)
            add_block(t, rng, "bottleneck.b" + std::to_string(b), ch, config.expansion_ratios[4],
                      k);
    }
    for (int l = 3; l >= 0; --l) {
        std::int64_t ch = config.channels_at(l + 1); // up input channels
        int idx = 8 - l;
        add_up(t, rng, "up" + std::to_string(l), ch, config.expansion_ratios[idx], k);
        for (int b = 0; b < config.blocks_per_stage[idx]; ++b)
            add_block(t, rng, "dec" + std::to_string(l) + ".b" + std::to_string(b),
                      config.channels_at(l), config.expansion_ratios[idx], k);
    }
    for (int l = 0; l < 4; ++l)
        add_conv(t, rng, "head" + std::to_string(l), config.out_channels, config.channels_at(l),
                 1);
    return t;
}

ChannelGrid depthwise_forward(const ChannelGrid& x, const Param& weight, const Param& bias,
                              int kernel_size, int stride) {
    if (stride != 1 && stride != 2)
        throw ValueError("depthwise_forward: stride must be 1 or 2");
    return depthwise_conv(x, weight, bias, kernel_size, stride);
}

ChannelGrid mednext_block_forward(const ParamTree& tree, const std::string& prefix,
                                  const ChannelGrid& x, int kernel_size, int ratio) {
    ChannelGrid h = block_core(tree, prefix, x, kernel_size, ratio, 1, false);
    add_inplace(h, x);
    return h;
}

std::vector<ChannelGrid> mednext_forward(const ParamTree& tree, const MedNeXtConfig& config,
                                         const ChannelGrid& input) {
    config.validate();
    input.validate();
    if (input.channels != config.in_channels)
        throw ShapeError("mednext_forward: expected " + std::to_string(config.in_channels) +
                         " input channels, got " + std::to_string(input.channels));
    const std::int64_t div = std::int64_t(1) << MedNeXtConfig::stages;
    for (int a = 0; a < 3; ++a)
        if (input.shape[a] % div != 0)
            throw ShapeError("mednext_forward: spatial extents must be divisible by " +
                             std::to_string(div) + ", got " + input.shape.str());

    const int k = config.kernel_size;
    ChannelGrid x = conv1x1(input, tree.at("stem.weight"), tree.at("stem.bias"),
                            config.base_channels);

    std::array<ChannelGrid, 4> skips;
    for (int i = 0; i < 4; ++i) {
        x = run_stage(tree, "enc" + std::to_string(i), config.blocks_per_stage[i], x, k,
                      config.expansion_ratios[i]);
        skips[i] = x;
        x = down_block(tree, "down" + std::to_string(i), x, k, config.expansion_ratios[i + 1]);
    }
    x = run_stage(tree, "bottleneck", config.blocks_per_stage[4], x, k,
                  config.expansion_ratios[4]);

    std::array<ChannelGrid, 4> dec_out;
    for (int l = 3; l >= 0; --l) {
        int idx = 8 - l;
        x = up_block(tree, "up" + std::to_string(l), x, k, config.expansion_ratios[idx]);
        add_inplace(x, skips[l]); // additive skip
        x = run_stage(tree, "dec" + std::to_string(l), config.blocks_per_stage[idx], x, k,
                      config.expansion_ratios[idx]);
        dec_out[l] = x;
    }

    std::vector<ChannelGrid> outputs;
    for (int l = 0; l < config.deep_supervision_levels; ++l) {
        std::string head = "head" + std::to_string(l);
        outputs.push_back(conv1x1(dec_out[l], tree.at(head + ".weight"), tree.at(head + ".bias"),
                                  config.out_channels));
    }
    return outputs;
}

} // namespace bts
