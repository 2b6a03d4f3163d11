#include "bts/micromodel.hpp"

#include <cmath>

#include "json.hpp"

namespace bts {

using json = nlohmann::ordered_json;

void MicroModelConfig::validate() const {
    if (depth < 1) throw ValueError("MicroModelConfig: depth must be >= 1");
    if (hidden < 1) throw ValueError("MicroModelConfig: hidden must be >= 1");
    if (in_channels < 1 || out_channels < 1)
        throw ValueError("MicroModelConfig: channel counts must be >= 1");
}

std::string MicroModelConfig::to_json() const {
    json j;
    j["depth"] = depth;
    j["hidden"] = hidden;
    j["in_channels"] = in_channels;
    j["out_channels"] = out_channels;
    return j.dump();
}

MicroModelConfig MicroModelConfig::from_json(const std::string& text) {
    json j = json::parse(text);
    MicroModelConfig c;
    c.depth = j.at("depth").get<int>();
    c.hidden = j.at("hidden").get<int>();
    c.in_channels = j.at("in_channels").get<int>();
    c.out_channels = j.at("out_channels").get<int>();
    c.validate();
    return c;
}

ParamTree build_micromodel(const MicroModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng(seed);
    ParamTree t;
    for (int l = 0; l < config.depth; ++l) {
        std::int64_t in = config.layer_in(l), out = config.layer_out(l);
        Param& w = t.add("layer" + std::to_string(l) + ".weight", {out, in});
        double bound = std::sqrt(6.0 / double(in));
        for (float& v : w.values) v = static_cast<float>(rng.uniform(-bound, bound));
        t.add("layer" + std::to_string(l) + ".bias", {out});
    }
    return t;
}

namespace {

void check_input(const MicroModelConfig& config, const ChannelGrid& input) {
    if (input.channels != config.in_channels)
        throw ShapeError("micromodel: expected " + std::to_string(config.in_channels) +
                         " input channels, got " + std::to_string(input.channels));
}

} // namespace

ChannelGrid micromodel_forward(const ParamTree& tree, const MicroModelConfig& config,
                               const ChannelGrid& input) {
    MicroActivations acts;
    std::vector<double> logits = micromodel_forward_train(tree, config, input, acts);
    ChannelGrid out = make_channel_grid(config.out_channels, input.shape, input.spacing);
    for (std::size_t i = 0; i < logits.size(); ++i) out.data[i] = static_cast<float>(logits[i]);
    return out;
}

std::vector<double> micromodel_forward_train(const ParamTree& tree,
                                             const MicroModelConfig& config,
                                             const ChannelGrid& input, MicroActivations& acts) {
    config.validate();
    check_input(config, input);
    const std::int64_t n = input.voxels();
    acts.voxels = n;
    acts.pre.assign(static_cast<std::size_t>(config.depth), {});

    std::vector<double> cur(input.data.begin(), input.data.end()); // in_channels * n
    for (int l = 0; l < config.depth; ++l) {
        const std::int64_t in = config.layer_in(l), out = config.layer_out(l);
        const Param& w = tree.at("layer" + std::to_string(l) + ".weight");
        const Param& b = tree.at("layer" + std::to_string(l) + ".bias");
        std::vector<double> next(static_cast<std::size_t>(out * n));
        for (std::int64_t o = 0; o < out; ++o) {
            double bias = b.values[o];
            for (std::int64_t v = 0; v < n; ++v) {
                double acc = bias;
                for (std::int64_t i = 0; i < in; ++i)
                    acc += double(w.values[o * in + i]) * cur[i * n + v];
                next[o * n + v] = acc;
            }
        }
        acts.pre[static_cast<std::size_t>(l)] = next;
        if (l + 1 < config.depth)
            for (double& v : next) v = gelu_exact(v);
        cur = std::move(next);
    }
    return cur; // logits, no activation on the last layer
}

void micromodel_backward(const ParamTree& tree, const MicroModelConfig& config,
                         const ChannelGrid& input, const MicroActivations& acts,
                         std::span<const double> dlogits, GradMap& grads) {
    const std::int64_t n = acts.voxels;
    if (static_cast<std::int64_t>(dlogits.size()) != config.out_channels * n)
        throw ShapeError("micromodel_backward: gradient size mismatch");

    for (int l = 0; l < config.depth; ++l) {
        std::string wname = "layer" + std::to_string(l) + ".weight";
        std::string bname = "layer" + std::to_string(l) + ".bias";
        grads.try_emplace(wname, tree.at(wname).values.size(), 0.0);
        grads.try_emplace(bname, tree.at(bname).values.size(), 0.0);
    }

    std::vector<double> delta(dlogits.begin(), dlogits.end());
    for (int l = config.depth - 1; l >= 0; --l) {
        const std::int64_t in = config.layer_in(l), out = config.layer_out(l);
        const Param& w = tree.at("layer" + std::to_string(l) + ".weight");
        std::vector<double>& gw = grads.at("layer" + std::to_string(l) + ".weight");
        std::vector<double>& gb = grads.at("layer" + std::to_string(l) + ".bias");

        // input activation of this layer
        std::vector<double> a_in;
        if (l == 0) {
            a_in.assign(input.data.begin(), input.data.end());
        } else {
            a_in = acts.pre[static_cast<std::size_t>(l - 1)];
            for (double& v : a_in) v = gelu_exact(v);
        }

        for (std::int64_t o = 0; o < out; ++o)
            for (std::int64_t v = 0; v < n; ++v) {
                double d = delta[o * n + v];
                gb[o] += d;
                for (std::int64_t i = 0; i < in; ++i) gw[o * in + i] += d * a_in[i * n + v];
            }

        if (l == 0) break;
        std::vector<double> prev(static_cast<std::size_t>(in * n), 0.0);
        const std::vector<double>& pre_prev = acts.pre[static_cast<std::size_t>(l - 1)];
        for (std::int64_t i = 0; i < in; ++i)
            for (std::int64_t v = 0; v < n; ++v) {
                double acc = 0.0;
                for (std::int64_t o = 0; o < out; ++o)
                    acc += double(w.values[o * in + i]) * delta[o * n + v];
                prev[i * n + v] = acc * gelu_exact_grad(pre_prev[i * n + v]);
            }
        delta = std::move(prev);
    }
}

namespace {

class MicroPredictor : public Predictor {
public:
    MicroPredictor(ParamTree tree, MicroModelConfig config, Shape3 window)
        : tree_(std::move(tree)), config_(config), window_(window) {
        config_.validate();
    }
    Shape3 window_shape() const override { return window_; }
    ChannelGrid predict(const ChannelGrid& patch) const override {
        ChannelGrid logits = micromodel_forward(tree_, config_, patch);
        for (float& v : logits.data) v = static_cast<float>(stable_sigmoid(double(v)));
        return logits;
    }

private:
    ParamTree tree_;
    MicroModelConfig config_;
    Shape3 window_;
};

} // namespace

std::unique_ptr<Predictor> make_micromodel_predictor(ParamTree tree, MicroModelConfig config,
                                                     Shape3 window) {
    return std::make_unique<MicroPredictor>(std::move(tree), config, window);
}

} // namespace bts
