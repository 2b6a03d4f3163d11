#include "bts/postprocess.hpp"

#include <algorithm>
#include <queue>
#include <sstream>

namespace bts {

void PostprocessConfig::validate() const {
    for (double t : thresholds)
        if (!(t > 0.0 && t < 1.0))
            throw ValueError("PostprocessConfig: thresholds must lie in (0,1)");
    for (std::int64_t s : min_sizes)
        if (s < 0) throw ValueError("PostprocessConfig: min_sizes must be >= 0");
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw ValueError("PostprocessConfig: connectivity must be 6, 18 or 26");
}

RegionMasks binarize(const RegionProbs& probs, const std::array<double, NUM_REGIONS>& thresholds) {
    probs.validate();
    if (probs.kind != ProbKind::Probabilities)
        throw ValueError("binarize: input must hold probabilities, not logits");
    for (double t : thresholds)
        if (!(t > 0.0 && t < 1.0)) throw ValueError("binarize: thresholds must lie in (0,1)");

    RegionMasks out = make_region_masks(probs.shape(), probs.spacing());
    for (int r = 0; r < NUM_REGIONS; ++r) {
        const auto& p = probs.channels[r].data;
        auto& m = out.masks[r];
        for (std::size_t i = 0; i < p.size(); ++i) m[i] = double(p[i]) >= thresholds[r] ? 1 : 0;
    }
    return out;
}

namespace {

// Neighbor offsets for 6/18/26 connectivity.
std::vector<std::array<std::int64_t, 3>> neighbor_offsets(int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw ValueError("connected_components: connectivity must be 6, 18 or 26");
    std::vector<std::array<std::int64_t, 3>> offs;
    for (std::int64_t dz = -1; dz <= 1; ++dz)
        for (std::int64_t dy = -1; dy <= 1; ++dy)
            for (std::int64_t dx = -1; dx <= 1; ++dx) {
                int nonzero = (dx != 0) + (dy != 0) + (dz != 0);
                if (nonzero == 0) continue;
                if (connectivity == 6 && nonzero > 1) continue;
                if (connectivity == 18 && nonzero > 2) continue;
                offs.push_back({dx, dy, dz});
            }
    return offs;
}

} // namespace

ComponentLabels connected_components(const std::vector<std::uint8_t>& mask, const Shape3& shape,
                                     int connectivity) {
    if (static_cast<std::int64_t>(mask.size()) != shape.voxels())
        throw ShapeError("connected_components: mask size does not match shape");
    auto offs = neighbor_offsets(connectivity);

    ComponentLabels out;
    out.labels.assign(mask.size(), 0);
    std::queue<std::int64_t> frontier;

    for (std::int64_t z = 0; z < shape.nz; ++z)
        for (std::int64_t y = 0; y < shape.ny; ++y)
            for (std::int64_t x = 0; x < shape.nx; ++x) {
                std::int64_t idx = linear_index(shape, x, y, z);
                if (!mask[idx] || out.labels[idx] != 0) continue;
                ++out.count;
                std::int64_t size = 0;
                out.labels[idx] = out.count;
                frontier.push(idx);
                while (!frontier.empty()) {
                    std::int64_t cur = frontier.front();
                    frontier.pop();
                    ++size;
                    std::int64_t cz = cur / (shape.nx * shape.ny);
                    std::int64_t rem = cur % (shape.nx * shape.ny);
                    std::int64_t cy = rem / shape.nx;
                    std::int64_t cx = rem % shape.nx;
                    for (const auto& o : offs) {
                        std::int64_t nx = cx + o[0], ny = cy + o[1], nz = cz + o[2];
                        if (nx < 0 || ny < 0 || nz < 0 || nx >= shape.nx || ny >= shape.ny ||
                            nz >= shape.nz)
                            continue;
                        std::int64_t nidx = linear_index(shape, nx, ny, nz);
                        if (!mask[nidx] || out.labels[nidx] != 0) continue;
                        out.labels[nidx] = out.count;
                        frontier.push(nidx);
                    }
                }
                out.sizes.push_back(size);
            }
    return out;
}

std::vector<std::uint8_t> filter_min_size(const std::vector<std::uint8_t>& mask,
                                          const Shape3& shape, std::int64_t min_size,
                                          int connectivity) {
    if (min_size < 0) throw ValueError("filter_min_size: min_size must be >= 0");
    if (min_size == 0) return mask;
    ComponentLabels cl = connected_components(mask, shape, connectivity);
    std::vector<std::uint8_t> out(mask.size(), 0);
    for (std::size_t i = 0; i < mask.size(); ++i) {
        std::int32_t lab = cl.labels[i];
        // strict rule: components with size < min_size are removed
        if (lab != 0 && cl.sizes[lab - 1] >= min_size) out[i] = 1;
    }
    return out;
}

LabelMap postprocess(const RegionProbs& probs, const PostprocessConfig& config) {
    config.validate();
    RegionMasks masks = binarize(probs, config.thresholds);
    for (int r = 0; r < NUM_REGIONS; ++r)
        masks.masks[r] =
            filter_min_size(masks.masks[r], masks.shape, config.min_sizes[r], config.connectivity);
    return regions_to_labels(enforce_hierarchy(masks));
}

std::vector<SweepRow> sweep_thresholds(std::span<const SweepCase> cases,
                                       std::span<const PostprocessConfig> grid,
                                       const MetricOpts& metric_opts) {
    if (cases.empty()) throw ValueError("sweep_thresholds: no cases");
    if (grid.empty()) throw ValueError("sweep_thresholds: empty config grid");

    std::vector<SweepRow> rows;
    rows.reserve(grid.size());
    for (const PostprocessConfig& cfg : grid) {
        cfg.validate();
        SweepRow row;
        row.config = cfg;
        std::vector<CaseMetrics> metrics;
        metrics.reserve(cases.size());
        for (const SweepCase& sc : cases) {
            LabelMap pred = postprocess(sc.probs, cfg);
            metrics.push_back(evaluate_case(pred, sc.gt, metric_opts));
        }
        AggregateReport agg = aggregate(metrics);
        row.dice = agg.mean_dice;
        row.hd95 = agg.mean_hd95;
        row.mean_dice = agg.overall_dice;
        row.mean_hd95 = agg.overall_hd95;
        rows.push_back(row);
    }
    std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        if (a.mean_dice != b.mean_dice) return a.mean_dice > b.mean_dice;
        return a.mean_hd95 < b.mean_hd95;
    });
    return rows;
}

std::string sweep_csv_header(bool with_group) {
    std::string h;
    if (with_group) h += "group,";
    h += "thr_et,thr_tc,thr_wt,min_et,min_tc,min_wt,"
         "dice_et,dice_tc,dice_wt,hd95_et,hd95_tc,hd95_wt,mean_dice,mean_hd95\n";
    return h;
}

std::string sweep_to_csv(std::span<const SweepRow> rows, const std::string& group) {
    std::ostringstream os;
    for (const SweepRow& r : rows) {
        if (!group.empty()) os << group << ",";
        os << r.config.thresholds[0] << "," << r.config.thresholds[1] << ","
           << r.config.thresholds[2] << "," << r.config.min_sizes[0] << ","
           << r.config.min_sizes[1] << "," << r.config.min_sizes[2] << "," << r.dice[0] << ","
           << r.dice[1] << "," << r.dice[2] << "," << r.hd95[0] << "," << r.hd95[1] << ","
           << r.hd95[2] << "," << r.mean_dice << "," << r.mean_hd95 << "\n";
    }
    return os.str();
}

} // namespace bts
