#ifndef BTS_TRAINKIT_HPP
#define BTS_TRAINKIT_HPP

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bts/caseio.hpp"
#include "bts/inference.hpp"
#include "bts/losses.hpp"
#include "bts/metrics.hpp"
#include "bts/micromodel.hpp"
#include "bts/postprocess.hpp"
#include "bts/preprocess.hpp"
#include "bts/sfadamw.hpp"

namespace bts {

struct FoldSplit {
    int fold = 0;
    std::vector<std::string> train_ids;
    std::vector<std::string> val_ids;
};

// Sorted ids are shuffled by the seeded PRNG and dealt round-robin into k
// folds; fold i's validation set is fold i, training set is the rest.
std::vector<FoldSplit> kfold_split(std::vector<std::string> ids, int k, std::uint64_t seed);

enum class FinetuneVariant : int { KeepWeights = 0, ReinitWeights = 1 }; // paper's (a) / (b)

using NameSelector = std::function<bool(const std::string&)>;

// Finest decoder stage plus every deep-supervision head.
NameSelector default_finetune_selector();

// Freezes everything the selector does NOT match. Variant ReinitWeights
// additionally replaces the matched values with those from `reinit_source`
// (a freshly initialized tree of identical structure).
ParamTree finetune_plan(const ParamTree& model, FinetuneVariant variant,
                        const NameSelector& selector, const ParamTree* reinit_source = nullptr);

struct TumorSpec {
    double wt_radius_frac = 0.28; // of the smallest extent
    double tc_frac = 0.60;        // of the WT radius
    double et_frac = 0.32;        // of the WT radius
    std::optional<std::array<double, 3>> center_frac; // defaults to a seeded draw
};

// Deterministic synthetic case: a smooth brain-like ellipsoid with nested
// spherical tumor regions whose per-modality intensities are voxelwise
// separable, plus the matching label map.
CaseBundle synth_case(Rng& rng, Shape3 shape, const TumorSpec& spec, const std::string& case_id);

struct TrainDemoConfig {
    int folds = 4;
    std::optional<int> only_fold;
    int steps = 200;
    int batch_size = 2;
    double lr = 0.02;
    std::uint64_t seed = 0;
    MicroModelConfig model;
    Shape3 train_patch{16, 16, 16};
    LossConfig loss;
    PostprocessConfig postprocess{{0.5, 0.5, 0.5}, {0, 0, 0}, 26};
    double overlap = 0.5;
    BlendMode blend = BlendMode::Uniform;
};

struct TrainStepRecord {
    int step = 0;
    double loss = 0.0;
    double dice_term = 0.0;
    double focal_term = 0.0;
};

struct FoldOutcome {
    int fold = 0;
    std::vector<TrainStepRecord> history;
    ParamTree trained; // averaged iterate
    std::vector<CaseMetrics> val_cases;
    AggregateReport val_report;
};

struct TrainDemoResult {
    std::vector<FoldOutcome> folds;
    double mean_val_wt_dice = 0.0;
};

// Per fold: micro-model trained with schedule-free AdamW on the combined
// batch-Dice + focal loss (batch size 2), then evaluated on the held-out
// cases through the full inference -> postprocess -> metrics path.
TrainDemoResult train_demo(std::span<const CaseBundle> cases, const TrainDemoConfig& cfg);

std::string history_to_csv(std::span<const TrainStepRecord> history);

} // namespace bts

#endif
