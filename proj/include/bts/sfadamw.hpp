#ifndef BTS_SFADAMW_HPP
#define BTS_SFADAMW_HPP

#include <functional>
#include <span>
#include <unordered_map>
#include <vector>

#include "bts/params.hpp"

namespace bts {

// Schedule-free AdamW. No learning-rate schedule: the fast iterate z takes
// Adam steps while the averaged iterate x is an lr^2-weighted running
// average of z; gradients are evaluated at the interpolation
// y = (1-beta1) z + beta1 x, and inference uses x.
struct SFAdamWConfig {
    double lr = 0.0027;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    std::int64_t warmup_steps = 0;

    void validate() const;
};

class SFAdamW {
public:
    // Snapshots the trainable (non-frozen) parameters of `params` as the
    // initial z = x = theta0. Frozen parameters are never touched.
    SFAdamW(const ParamTree& params, SFAdamWConfig cfg);

    // Gradients for the trainable parameters, keyed by name, evaluated at
    // the parameter values currently held by the tree (the y point).
    using GradFn = std::function<std::unordered_map<std::string, std::vector<double>>(
        const ParamTree& at_y)>;

    // One update. `params` is left at the y point this step's gradients
    // were evaluated at; callers evaluating the model should first call
    // write_averaged. Throws on non-finite gradients.
    void step(ParamTree& params, const GradFn& grad_fn);

    // params <- x (averaged iterate) for the trainable entries.
    void write_averaged(ParamTree& params) const;
    // params <- z (fast iterate).
    void write_fast(ParamTree& params) const;

    std::int64_t step_count() const { return t_; }
    const std::vector<std::string>& trainable() const { return names_; }
    std::span<const double> x_state(const std::string& name) const;
    std::span<const double> z_state(const std::string& name) const;

private:
    void write_point(ParamTree& params, const std::vector<std::vector<double>>& src) const;

    SFAdamWConfig cfg_;
    std::vector<std::string> names_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::vector<double>> z_, x_, v_;
    std::int64_t t_ = 0;
    double lr_sq_sum_ = 0.0;
};

} // namespace bts

#endif
