#include "bts/trainkit.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bts {

std::vector<FoldSplit> kfold_split(std::vector<std::string> ids, int k, std::uint64_t seed) {
    if (k < 2) throw ValueError("kfold_split: k must be >= 2");
    if (static_cast<int>(ids.size()) < k)
        throw ValueError("kfold_split: need at least k ids, got " + std::to_string(ids.size()));
    std::sort(ids.begin(), ids.end());
    Rng rng(seed);
    for (std::size_t i = ids.size() - 1; i > 0; --i) {
        std::size_t j = static_cast<std::size_t>(rng.uniform_int(i + 1));
        std::swap(ids[i], ids[j]);
    }
    std::vector<std::vector<std::string>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < ids.size(); ++i) folds[i % k].push_back(ids[i]);

    std::vector<FoldSplit> out;
    for (int f = 0; f < k; ++f) {
        FoldSplit split;
        split.fold = f;
        split.val_ids = folds[static_cast<std::size_t>(f)];
        for (int g = 0; g < k; ++g)
            if (g != f)
                split.train_ids.insert(split.train_ids.end(),
                                       folds[static_cast<std::size_t>(g)].begin(),
                                       folds[static_cast<std::size_t>(g)].end());
        std::sort(split.val_ids.begin(), split.val_ids.end());
        std::sort(split.train_ids.begin(), split.train_ids.end());
        out.push_back(std::move(split));
    }
    return out;
}

NameSelector default_finetune_selector() {
    return [](const std::string& name) {
        return name.rfind("dec0.", 0) == 0 || name.rfind("head", 0) == 0;
    };
}

ParamTree finetune_plan(const ParamTree& model, FinetuneVariant variant,
                        const NameSelector& selector, const ParamTree* reinit_source) {
    if (variant == FinetuneVariant::ReinitWeights && reinit_source == nullptr)
        throw ValueError("finetune_plan: ReinitWeights requires a reinit source tree");

    ParamTree out;
    std::size_t matched = 0;
    for (const std::string& name : model.names()) {
        const Param& src = model.at(name);
        bool trainable = selector(name);
        Param& dst = out.add(name, src.shape, !trainable);
        dst.values = src.values;
        if (trainable) {
            ++matched;
            if (variant == FinetuneVariant::ReinitWeights) {
                const Param& fresh = reinit_source->at(name);
                if (fresh.shape != src.shape)
                    throw ShapeError("finetune_plan: reinit source shape mismatch for '" + name +
                                     "'");
                dst.values = fresh.values;
            }
        }
    }
    if (matched == 0) throw ValueError("finetune_plan: selector matched no parameters");
    return out;
}

CaseBundle synth_case(Rng& rng, Shape3 shape, const TumorSpec& spec, const std::string& case_id) {
    if (shape.nx < 16 || shape.ny < 16 || shape.nz < 16)
        throw ValueError("synth_case: shape must be at least 16^3");

    const double min_extent = double(std::min({shape.nx, shape.ny, shape.nz}));
    const double r_wt = spec.wt_radius_frac * min_extent;
    const double r_tc = spec.tc_frac * r_wt;
    const double r_et = spec.et_frac * r_wt;
    if (r_wt < 2.0) throw ValueError("synth_case: tumor radius too small to be painted");

    std::array<double, 3> center;
    if (spec.center_frac) {
        for (int a = 0; a < 3; ++a) center[a] = (*spec.center_frac)[a] * double(shape[a]);
    } else {
        for (int a = 0; a < 3; ++a) center[a] = rng.uniform(0.38, 0.62) * double(shape[a]);
    }
    for (int a = 0; a < 3; ++a)
        if (center[a] - r_wt < 0.0 || center[a] + r_wt > double(shape[a]) - 1.0)
            throw ValueError("synth_case: tumor sphere does not fit inside the volume");

    // per-modality base intensity and per-region multipliers (T1, T1Gd, T2W, T2F)
    const std::array<double, 4> base{900.0, 600.0, 450.0, 300.0};
    const std::array<double, 4> mult_edema{0.90, 0.95, 1.80, 2.00};
    const std::array<double, 4> mult_netc{0.60, 0.70, 1.50, 1.40};
    const std::array<double, 4> mult_et{1.10, 2.20, 1.20, 1.30};

    const std::array<double, 3> brain_c{double(shape.nx - 1) / 2.0, double(shape.ny - 1) / 2.0,
                                        double(shape.nz - 1) / 2.0};
    const std::array<double, 3> brain_axes{0.45 * double(shape.nx), 0.45 * double(shape.ny),
                                           0.45 * double(shape.nz)};

    CaseBundle bundle;
    bundle.case_id = case_id;
    LabelMap seg = make_labelmap(shape);
    for (int c = 0; c < NUM_MODALITIES; ++c)
        bundle.image.channels[c] = make_volume(shape, UNIT_SPACING, 0.0f);

    const std::int64_t n = shape.voxels();
    // 0 = background/brain, otherwise the label value of the tumor region
    std::vector<std::uint8_t> region(static_cast<std::size_t>(n), 0);
    std::vector<float> brain_profile(static_cast<std::size_t>(n), 0.0f);

    for (std::int64_t z = 0; z < shape.nz; ++z)
        for (std::int64_t y = 0; y < shape.ny; ++y)
            for (std::int64_t x = 0; x < shape.nx; ++x) {
                std::int64_t idx = linear_index(shape, x, y, z);
                double dx = double(x) - center[0];
                double dy = double(y) - center[1];
                double dz = double(z) - center[2];
                double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
                if (dist <= r_et)
                    region[idx] = LABEL_ET;
                else if (dist <= r_tc)
                    region[idx] = LABEL_NETC;
                else if (dist <= r_wt)
                    region[idx] = LABEL_SNFH;

                double bx = (double(x) - brain_c[0]) / brain_axes[0];
                double by = (double(y) - brain_c[1]) / brain_axes[1];
                double bz = (double(z) - brain_c[2]) / brain_axes[2];
                double r2 = bx * bx + by * by + bz * bz;
                if (r2 < 1.0)
                    brain_profile[idx] = static_cast<float>(0.55 + 0.45 * (1.0 - r2));
            }

    for (int c = 0; c < NUM_MODALITIES; ++c) {
        auto& data = bundle.image.channels[c].data;
        for (std::int64_t idx = 0; idx < n; ++idx) {
            double value = 0.0;
            switch (region[static_cast<std::size_t>(idx)]) {
            case LABEL_ET: value = base[c] * mult_et[c]; break;
            case LABEL_NETC: value = base[c] * mult_netc[c]; break;
            case LABEL_SNFH: value = base[c] * mult_edema[c]; break;
            default:
                if (brain_profile[static_cast<std::size_t>(idx)] > 0.0f)
                    value = base[c] * double(brain_profile[static_cast<std::size_t>(idx)]);
                break;
            }
            if (value != 0.0) value *= 1.0 + 0.05 * rng.uniform(-1.0, 1.0);
            data[static_cast<std::size_t>(idx)] = static_cast<float>(value);
        }
    }

    seg.data = region;
    bundle.seg = std::move(seg);
    bundle.validate();
    return bundle;
}

namespace {

struct PreparedCase {
    std::string id;
    PreprocessedCase pc;
};

} // namespace

TrainDemoResult train_demo(std::span<const CaseBundle> cases, const TrainDemoConfig& cfg) {
    if (cfg.folds < 2) throw ValueError("train_demo: need at least 2 folds");
    if (cfg.batch_size < 1) throw ValueError("train_demo: batch_size must be >= 1");
    if (static_cast<int>(cases.size()) < 2 * cfg.folds)
        throw ValueError("train_demo: need at least 2 cases per fold");
    cfg.loss.validate();
    cfg.postprocess.validate();

    std::vector<std::string> ids;
    std::unordered_map<std::string, const CaseBundle*> by_id;
    for (const CaseBundle& c : cases) {
        if (!c.seg) throw ValueError("train_demo: case '" + c.case_id + "' has no segmentation");
        ids.push_back(c.case_id);
        by_id[c.case_id] = &c;
    }

    PreprocessOptions popt;
    popt.fit_patch = false;

    std::vector<FoldSplit> splits = kfold_split(ids, cfg.folds, cfg.seed);

    TrainDemoResult result;
    double wt_sum = 0.0;
    int evaluated = 0;

    for (const FoldSplit& split : splits) {
        if (cfg.only_fold && *cfg.only_fold != split.fold) continue;

        std::vector<PreparedCase> train;
        for (const std::string& id : split.train_ids)
            train.push_back({id, preprocess_case(*by_id.at(id), popt)});

        ParamTree model = build_micromodel(cfg.model, cfg.seed + std::uint64_t(split.fold));
        SFAdamWConfig oc;
        oc.lr = cfg.lr;
        SFAdamW opt(model, oc);

        Rng rng(cfg.seed * 0x9E3779B97F4A7C15ull + std::uint64_t(split.fold) + 1);
        AugmentSpec aug;
        aug.crop_target = cfg.train_patch;

        FoldOutcome outcome;
        outcome.fold = split.fold;

        for (int step = 1; step <= cfg.steps; ++step) {
            std::vector<TrainSample> batch;
            for (int b = 0; b < cfg.batch_size; ++b) {
                const PreparedCase& pick =
                    train[static_cast<std::size_t>(rng.uniform_int(train.size()))];
                TrainSample sample{pick.pc.image, *pick.pc.regions};
                batch.push_back(augment(sample, rng, aug));
            }

            TrainStepRecord rec;
            rec.step = step;
            auto grad_fn = [&](const ParamTree& at_y) {
                LogitBatch lb;
                TargetBatch tb;
                std::vector<MicroActivations> acts(batch.size());
                for (std::size_t s = 0; s < batch.size(); ++s) {
                    LogitSample ls;
                    ls.shape = batch[s].image.shape;
                    ls.values = micromodel_forward_train(at_y, cfg.model, batch[s].image,
                                                         acts[s]);
                    lb.push_back(std::move(ls));
                    tb.push_back(targets_from_masks(batch[s].regions));
                }
                LossResult dice = batch_dice_loss(lb, tb, cfg.loss.dice_smooth);
                LossResult focal = focal_loss(lb, tb, cfg.loss.focal_gamma);
                rec.dice_term = dice.loss;
                rec.focal_term = focal.loss;
                rec.loss = cfg.loss.dice_weight * dice.loss + cfg.loss.focal_weight * focal.loss;

                GradMap grads;
                for (std::size_t s = 0; s < batch.size(); ++s) {
                    std::vector<double> dlogits(lb[s].values.size());
                    for (std::size_t e = 0; e < dlogits.size(); ++e)
                        dlogits[e] = cfg.loss.dice_weight * dice.grads[s][e] +
                                     cfg.loss.focal_weight * focal.grads[s][e];
                    micromodel_backward(at_y, cfg.model, batch[s].image, acts[s], dlogits,
                                        grads);
                }
                std::unordered_map<std::string, std::vector<double>> out;
                for (auto& [name, g] : grads) out.emplace(name, std::move(g));
                return out;
            };
            opt.step(model, grad_fn);
            outcome.history.push_back(rec);
        }

        opt.write_averaged(model);
        outcome.trained = model;

        for (const std::string& id : split.val_ids) {
            const CaseBundle& bundle = *by_id.at(id);
            PreprocessedCase pc = preprocess_case(bundle, popt);
            auto predictor = make_micromodel_predictor(model, cfg.model, cfg.train_patch);
            WindowPlan plan = plan_windows(pc.image.shape, cfg.train_patch, cfg.overlap,
                                           cfg.blend);
            RegionProbs probs = sliding_window_predict(pc.image, *predictor, plan);
            LabelMap pred = restore_geometry(postprocess(probs, cfg.postprocess), pc.meta);
            outcome.val_cases.push_back(evaluate_case(pred, *bundle.seg, {}, id));
        }
        outcome.val_report = aggregate(outcome.val_cases);
        wt_sum += outcome.val_report.mean_dice[static_cast<int>(Region::WT)];
        ++evaluated;
        result.folds.push_back(std::move(outcome));
    }

    if (evaluated == 0) throw ValueError("train_demo: no folds were run (bad only_fold?)");
    result.mean_val_wt_dice = wt_sum / double(evaluated);
    return result;
}

std::string history_to_csv(std::span<const TrainStepRecord> history) {
    std::ostringstream os;
    os << "step,loss,dice_term,focal_term\n";
    for (const TrainStepRecord& r : history)
        os << r.step << "," << r.loss << "," << r.dice_term << "," << r.focal_term << "\n";
    return os.str();
}

} // namespace bts
