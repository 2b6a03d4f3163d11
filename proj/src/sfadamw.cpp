#include "bts/sfadamw.hpp"

#include <cmath>

namespace bts {

void SFAdamWConfig::validate() const {
    if (lr < 0.0) throw ValueError("SFAdamWConfig: lr must be >= 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ValueError("SFAdamWConfig: beta1 must be in [0,1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ValueError("SFAdamWConfig: beta2 must be in [0,1)");
    if (!(eps > 0.0)) throw ValueError("SFAdamWConfig: eps must be > 0");
    if (weight_decay < 0.0) throw ValueError("SFAdamWConfig: weight_decay must be >= 0");
    if (warmup_steps < 0) throw ValueError("SFAdamWConfig: warmup_steps must be >= 0");
}

SFAdamW::SFAdamW(const ParamTree& params, SFAdamWConfig cfg) : cfg_(cfg) {
    cfg_.validate();
    for (const std::string& name : params.names()) {
        const Param& p = params.at(name);
        if (p.frozen) continue;
        index_[name] = names_.size();
        names_.push_back(name);
        std::vector<double> init(p.values.begin(), p.values.end());
        z_.push_back(init);
        x_.push_back(init);
        v_.push_back(std::vector<double>(p.values.size(), 0.0));
    }
}

void SFAdamW::write_point(ParamTree& params, const std::vector<std::vector<double>>& src) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        Param& p = params.at(names_[i]);
        for (std::size_t e = 0; e < src[i].size(); ++e)
            p.values[e] = static_cast<float>(src[i][e]);
    }
}

void SFAdamW::write_averaged(ParamTree& params) const { write_point(params, x_); }
void SFAdamW::write_fast(ParamTree& params) const { write_point(params, z_); }

std::span<const double> SFAdamW::x_state(const std::string& name) const {
    return x_[index_.at(name)];
}
std::span<const double> SFAdamW::z_state(const std::string& name) const {
    return z_[index_.at(name)];
}

void SFAdamW::step(ParamTree& params, const GradFn& grad_fn) {
    ++t_;

    // y = (1 - beta1) z + beta1 x, evaluated in double, exposed as float
    std::vector<std::vector<double>> y(names_.size());
    for (std::size_t i = 0; i < names_.size(); ++i) {
        y[i].resize(z_[i].size());
        for (std::size_t e = 0; e < z_[i].size(); ++e)
            y[i][e] = (1.0 - cfg_.beta1) * z_[i][e] + cfg_.beta1 * x_[i][e];
    }
    write_point(params, y);

    std::unordered_map<std::string, std::vector<double>> grads = grad_fn(params);

    double lr_t = cfg_.lr;
    if (cfg_.warmup_steps > 0)
        lr_t *= std::min(1.0, double(t_) / double(cfg_.warmup_steps));
    double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    // The averaging weight uses the effective step size, i.e. the schedule
    // lr times the sqrt bias-correction factor baked into g/sqrt(vhat).
    // With a constant effective lr this reduces to the uniform running mean
    // of the z iterates.
    double lr_eff = lr_t * std::sqrt(bc2);
    lr_sq_sum_ += lr_eff * lr_eff;
    // with lr == 0 the weight sum stays 0 and x must not move
    double c = lr_sq_sum_ > 0.0 ? (lr_eff * lr_eff) / lr_sq_sum_ : 0.0;

    for (std::size_t i = 0; i < names_.size(); ++i) {
        auto it = grads.find(names_[i]);
        if (it == grads.end())
            throw ValueError("SFAdamW: grad_fn did not provide a gradient for '" + names_[i] +
                             "'");
        const std::vector<double>& g = it->second;
        if (g.size() != z_[i].size())
            throw ShapeError("SFAdamW: gradient size mismatch for '" + names_[i] + "'");
        for (std::size_t e = 0; e < g.size(); ++e) {
            if (!std::isfinite(g[e]))
                throw Error("SFAdamW: non-finite gradient for '" + names_[i] + "' at element " +
                            std::to_string(e) + " (step " + std::to_string(t_) + ")");
            v_[i][e] = cfg_.beta2 * v_[i][e] + (1.0 - cfg_.beta2) * g[e] * g[e];
            double vhat = v_[i][e] / bc2;
            double update = g[e] / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * y[i][e];
            z_[i][e] -= lr_t * update;
            x_[i][e] = (1.0 - c) * x_[i][e] + c * z_[i][e];
        }
    }
}

} // namespace bts
