#include "bts/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "bts/postprocess.hpp"

namespace bts {

using json = nlohmann::ordered_json;

namespace {

constexpr double INF = std::numeric_limits<double>::infinity();

void check_same_shape(std::size_t a, std::size_t b, const Shape3& shape, const char* what) {
    std::size_t n = static_cast<std::size_t>(shape.voxels());
    if (a != n || b != n)
        throw ShapeError(std::string(what) + ": mask sizes do not match shape " + shape.str());
}

bool any_set(const std::vector<std::uint8_t>& m) {
    for (auto v : m)
        if (v) return true;
    return false;
}

// One pass of the 1D lower-envelope squared distance transform, sample
// positions i*step (mm). Slots with +inf are skipped.
void edt_1d(const double* f, double* d, std::int64_t n, std::int64_t stride, double step,
            std::vector<std::int64_t>& v, std::vector<double>& z, std::vector<double>& scratch) {
    for (std::int64_t i = 0; i < n; ++i) scratch[i] = f[i * stride];

    std::int64_t k = -1;
    for (std::int64_t q = 0; q < n; ++q) {
        if (scratch[q] == INF) continue;
        double pq = double(q) * step;
        double fq = scratch[q] + pq * pq;
        while (k >= 0) {
            double pr = double(v[k]) * step;
            double s = (fq - (scratch[v[k]] + pr * pr)) / (2.0 * (pq - pr));
            if (s <= z[k]) {
                --k;
            } else {
                ++k;
                v[k] = q;
                z[k] = s;
                z[k + 1] = INF;
                break;
            }
        }
        if (k < 0) {
            k = 0;
            v[0] = q;
            z[0] = -INF;
            z[1] = INF;
        }
    }
    if (k < 0) {
        for (std::int64_t q = 0; q < n; ++q) d[q * stride] = INF;
        return;
    }
    std::int64_t j = 0;
    for (std::int64_t q = 0; q < n; ++q) {
        double pq = double(q) * step;
        while (z[j + 1] < pq) ++j;
        double dp = pq - double(v[j]) * step;
        d[q * stride] = dp * dp + scratch[v[j]];
    }
}

} // namespace

double dice(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
            const Shape3& shape) {
    check_same_shape(pred.size(), gt.size(), shape, "dice");
    std::int64_t np = 0, ng = 0, inter = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        np += pred[i] != 0;
        ng += gt[i] != 0;
        inter += (pred[i] != 0) && (gt[i] != 0);
    }
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;
    return 2.0 * double(inter) / double(np + ng);
}

std::vector<std::uint8_t> surface_voxels(const std::vector<std::uint8_t>& mask,
                                         const Shape3& shape) {
    check_same_shape(mask.size(), mask.size(), shape, "surface_voxels");
    std::vector<std::uint8_t> out(mask.size(), 0);
    for (std::int64_t z = 0; z < shape.nz; ++z)
        for (std::int64_t y = 0; y < shape.ny; ++y)
            for (std::int64_t x = 0; x < shape.nx; ++x) {
                std::int64_t idx = linear_index(shape, x, y, z);
                if (!mask[idx]) continue;
                bool boundary =
                    x == 0 || x == shape.nx - 1 || y == 0 || y == shape.ny - 1 || z == 0 ||
                    z == shape.nz - 1 || !mask[idx - 1] || !mask[idx + 1] ||
                    !mask[idx - shape.nx] || !mask[idx + shape.nx] ||
                    !mask[idx - shape.nx * shape.ny] || !mask[idx + shape.nx * shape.ny];
                out[idx] = boundary ? 1 : 0;
            }
    return out;
}

std::vector<double> squared_distance_field(const std::vector<std::uint8_t>& feature,
                                           const Shape3& shape, const Spacing3& spacing) {
    std::vector<double> d(feature.size());
    for (std::size_t i = 0; i < feature.size(); ++i) d[i] = feature[i] ? 0.0 : INF;

    std::int64_t maxn = std::max({shape.nx, shape.ny, shape.nz});
    std::vector<std::int64_t> v(static_cast<std::size_t>(maxn));
    std::vector<double> z(static_cast<std::size_t>(maxn + 1));
    std::vector<double> scratch(static_cast<std::size_t>(maxn));

    // x lines
    for (std::int64_t zz = 0; zz < shape.nz; ++zz)
        for (std::int64_t yy = 0; yy < shape.ny; ++yy) {
            double* line = d.data() + linear_index(shape, 0, yy, zz);
            edt_1d(line, line, shape.nx, 1, spacing[0], v, z, scratch);
        }
    // y lines
    for (std::int64_t zz = 0; zz < shape.nz; ++zz)
        for (std::int64_t xx = 0; xx < shape.nx; ++xx) {
            double* line = d.data() + linear_index(shape, xx, 0, zz);
            edt_1d(line, line, shape.ny, shape.nx, spacing[1], v, z, scratch);
        }
    // z lines
    for (std::int64_t yy = 0; yy < shape.ny; ++yy)
        for (std::int64_t xx = 0; xx < shape.nx; ++xx) {
            double* line = d.data() + linear_index(shape, xx, yy, 0);
            edt_1d(line, line, shape.nz, shape.nx * shape.ny, spacing[2], v, z, scratch);
        }
    return d;
}

double percentile_linear(std::vector<double> values, double q) {
    if (values.empty()) throw ValueError("percentile_linear: empty sample");
    std::sort(values.begin(), values.end());
    if (values.size() == 1) return values[0];
    double rank = q / 100.0 * double(values.size() - 1);
    std::size_t lo = static_cast<std::size_t>(rank);
    if (lo >= values.size() - 1) return values.back();
    double frac = rank - double(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double hd95(const std::vector<std::uint8_t>& pred, const std::vector<std::uint8_t>& gt,
            const Shape3& shape, const Spacing3& spacing) {
    check_same_shape(pred.size(), gt.size(), shape, "hd95");
    bool pe = !any_set(pred), ge = !any_set(gt);
    if (pe && ge) return 0.0;
    if (pe || ge) return HD95_EMPTY_PENALTY;

    std::vector<std::uint8_t> sp = surface_voxels(pred, shape);
    std::vector<std::uint8_t> sg = surface_voxels(gt, shape);
    std::vector<double> dist_to_g = squared_distance_field(sg, shape, spacing);
    std::vector<double> dist_to_p = squared_distance_field(sp, shape, spacing);

    std::vector<double> combined;
    for (std::size_t i = 0; i < sp.size(); ++i) {
        if (sp[i]) combined.push_back(std::sqrt(dist_to_g[i]));
        if (sg[i]) combined.push_back(std::sqrt(dist_to_p[i]));
    }
    return percentile_linear(std::move(combined), 95.0);
}

LesionWiseResult lesionwise(const std::vector<std::uint8_t>& pred,
                            const std::vector<std::uint8_t>& gt, const Shape3& shape,
                            const Spacing3& spacing, const LesionWiseOpts& opts) {
    check_same_shape(pred.size(), gt.size(), shape, "lesionwise");

    auto keep_components = [&](const std::vector<std::uint8_t>& mask) {
        ComponentLabels cl = connected_components(mask, shape, opts.connectivity);
        std::vector<std::vector<std::uint8_t>> comps;
        for (std::int32_t k = 1; k <= cl.count; ++k) {
            if (cl.sizes[k - 1] <= opts.min_lesion_volume) continue;
            std::vector<std::uint8_t> m(mask.size(), 0);
            for (std::size_t i = 0; i < mask.size(); ++i)
                if (cl.labels[i] == k) m[i] = 1;
            comps.push_back(std::move(m));
        }
        return comps;
    };

    std::vector<std::vector<std::uint8_t>> gt_lesions = keep_components(gt);
    std::vector<std::vector<std::uint8_t>> pred_comps = keep_components(pred);

    LesionWiseResult res;
    res.gt_lesions = static_cast<int>(gt_lesions.size());
    if (gt_lesions.empty() && pred_comps.empty()) return res; // (1.0, 0.0)

    // 3x3x3 cube dilation, iterated; used for matching only
    auto dilate = [&](std::vector<std::uint8_t> m) {
        for (int it = 0; it < opts.dilation_iters; ++it) {
            std::vector<std::uint8_t> out = m;
            for (std::int64_t z = 0; z < shape.nz; ++z)
                for (std::int64_t y = 0; y < shape.ny; ++y)
                    for (std::int64_t x = 0; x < shape.nx; ++x) {
                        if (m[linear_index(shape, x, y, z)]) continue;
                        bool hit = false;
                        for (std::int64_t dz = -1; dz <= 1 && !hit; ++dz)
                            for (std::int64_t dy = -1; dy <= 1 && !hit; ++dy)
                                for (std::int64_t dx = -1; dx <= 1 && !hit; ++dx) {
                                    std::int64_t nx = x + dx, ny = y + dy, nz = z + dz;
                                    if (nx < 0 || ny < 0 || nz < 0 || nx >= shape.nx ||
                                        ny >= shape.ny || nz >= shape.nz)
                                        continue;
                                    hit = m[linear_index(shape, nx, ny, nz)] != 0;
                                }
                        if (hit) out[linear_index(shape, x, y, z)] = 1;
                    }
            m = std::move(out);
        }
        return m;
    };

    std::vector<bool> pred_matched(pred_comps.size(), false);
    std::vector<double> dices, hds;

    for (const auto& lesion : gt_lesions) {
        std::vector<std::uint8_t> halo = dilate(lesion);
        std::vector<std::uint8_t> matched_union(pred.size(), 0);
        bool matched = false;
        for (std::size_t j = 0; j < pred_comps.size(); ++j) {
            bool intersects = false;
            for (std::size_t i = 0; i < halo.size() && !intersects; ++i)
                intersects = halo[i] && pred_comps[j][i];
            if (!intersects) continue;
            matched = true;
            pred_matched[j] = true;
            for (std::size_t i = 0; i < matched_union.size(); ++i)
                if (pred_comps[j][i]) matched_union[i] = 1;
        }
        if (matched) {
            dices.push_back(dice(matched_union, lesion, shape));
            hds.push_back(hd95(matched_union, lesion, shape, spacing));
        } else {
            dices.push_back(0.0);
            hds.push_back(HD95_EMPTY_PENALTY);
        }
    }
    for (std::size_t j = 0; j < pred_comps.size(); ++j) {
        if (pred_matched[j]) continue;
        ++res.false_positives;
        dices.push_back(0.0);
        hds.push_back(HD95_EMPTY_PENALTY);
    }

    double sd = 0.0, sh = 0.0;
    for (double v : dices) sd += v;
    for (double v : hds) sh += v;
    res.dice = sd / double(dices.size());
    res.hd95 = sh / double(hds.size());
    return res;
}

CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt, const MetricOpts& opts,
                          const std::string& case_id) {
    if (!(pred.shape == gt.shape))
        throw ShapeError("evaluate_case: pred shape " + pred.shape.str() + " != gt shape " +
                         gt.shape.str());
    if (pred.spacing != gt.spacing)
        throw ShapeError("evaluate_case: pred and gt spacings differ");

    RegionMasks pr = labels_to_regions(pred);
    RegionMasks gr = labels_to_regions(gt);

    CaseMetrics cm;
    cm.case_id = case_id;
    for (int r = 0; r < NUM_REGIONS; ++r) {
        RegionMetric& m = cm.regions[r];
        const auto& pm = pr.masks[r];
        const auto& gm = gr.masks[r];
        m.pred_empty = !any_set(pm);
        m.gt_empty = !any_set(gm);
        m.dice = dice(pm, gm, pred.shape);
        m.hd95 = hd95(pm, gm, pred.shape, pred.spacing);
        if (opts.lesionwise) {
            LesionWiseResult lw = lesionwise(pm, gm, pred.shape, pred.spacing, opts.lw);
            m.lw_dice = lw.dice;
            m.lw_hd95 = lw.hd95;
        }
    }
    return cm;
}

AggregateReport aggregate(std::span<const CaseMetrics> cases) {
    if (cases.empty()) throw ValueError("aggregate: no cases");
    AggregateReport rep;
    rep.case_count = cases.size();

    bool all_lw = true;
    for (const auto& c : cases)
        for (const auto& r : c.regions) all_lw = all_lw && r.lw_dice.has_value();

    std::array<double, NUM_REGIONS> lwd{}, lwh{};
    for (const auto& c : cases)
        for (int r = 0; r < NUM_REGIONS; ++r) {
            rep.mean_dice[r] += c.regions[r].dice;
            rep.mean_hd95[r] += c.regions[r].hd95;
            if (all_lw) {
                lwd[r] += *c.regions[r].lw_dice;
                lwh[r] += *c.regions[r].lw_hd95;
            }
        }
    for (int r = 0; r < NUM_REGIONS; ++r) {
        rep.mean_dice[r] /= double(cases.size());
        rep.mean_hd95[r] /= double(cases.size());
        lwd[r] /= double(cases.size());
        lwh[r] /= double(cases.size());
    }
    rep.overall_dice = mean_of_region_means(rep.mean_dice);
    rep.overall_hd95 = mean_of_region_means(rep.mean_hd95);
    if (all_lw) {
        rep.mean_lw_dice = lwd;
        rep.mean_lw_hd95 = lwh;
    }
    return rep;
}

double mean_of_region_means(std::span<const double> region_means) {
    if (region_means.empty()) throw ValueError("mean_of_region_means: empty input");
    double s = 0.0;
    for (double v : region_means) s += v;
    return s / double(region_means.size());
}

namespace {

json region_metric_json(const RegionMetric& m) {
    json j;
    j["dice"] = m.dice;
    j["hd95"] = m.hd95;
    j["pred_empty"] = m.pred_empty;
    j["gt_empty"] = m.gt_empty;
    if (m.lw_dice) {
        j["lw_dice"] = *m.lw_dice;
        j["lw_hd95"] = *m.lw_hd95;
    }
    return j;
}

} // namespace

std::string report_to_json(std::span<const CaseMetrics> cases, const AggregateReport& agg,
                           const MetricOpts& opts) {
    json j;
    j["options"] = {{"lesionwise", opts.lesionwise},
                    {"lw_connectivity", opts.lw.connectivity},
                    {"lw_dilation_iters", opts.lw.dilation_iters},
                    {"lw_min_lesion_volume", opts.lw.min_lesion_volume}};
    json jc = json::array();
    std::vector<const CaseMetrics*> ordered;
    for (const auto& c : cases) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const CaseMetrics* a, const CaseMetrics* b) { return a->case_id < b->case_id; });
    for (const CaseMetrics* c : ordered) {
        json e;
        e["case_id"] = c->case_id;
        for (int r = 0; r < NUM_REGIONS; ++r)
            e[region_name(static_cast<Region>(r))] = region_metric_json(c->regions[r]);
        jc.push_back(e);
    }
    j["cases"] = jc;
    json ja;
    for (int r = 0; r < NUM_REGIONS; ++r) {
        const char* name = region_name(static_cast<Region>(r));
        ja["dice"][name] = agg.mean_dice[r];
        ja["hd95"][name] = agg.mean_hd95[r];
    }
    ja["dice"]["mean"] = agg.overall_dice;
    ja["hd95"]["mean"] = agg.overall_hd95;
    if (agg.mean_lw_dice) {
        for (int r = 0; r < NUM_REGIONS; ++r) {
            const char* name = region_name(static_cast<Region>(r));
            ja["lw_dice"][name] = (*agg.mean_lw_dice)[r];
            ja["lw_hd95"][name] = (*agg.mean_lw_hd95)[r];
        }
        ja["lw_dice"]["mean"] = mean_of_region_means(*agg.mean_lw_dice);
        ja["lw_hd95"]["mean"] = mean_of_region_means(*agg.mean_lw_hd95);
    }
    ja["case_count"] = agg.case_count;
    j["aggregate"] = ja;
    return j.dump(2);
}

std::string report_to_csv(std::span<const CaseMetrics> cases, const AggregateReport& agg,
                          const MetricOpts& opts) {
    std::ostringstream os;
    os << "case_id,region,dice,hd95";
    if (opts.lesionwise) os << ",lw_dice,lw_hd95";
    os << "\n";
    std::vector<const CaseMetrics*> ordered;
    for (const auto& c : cases) ordered.push_back(&c);
    std::sort(ordered.begin(), ordered.end(),
              [](const CaseMetrics* a, const CaseMetrics* b) { return a->case_id < b->case_id; });
    for (const CaseMetrics* c : ordered)
        for (int r = 0; r < NUM_REGIONS; ++r) {
            const RegionMetric& m = c->regions[r];
            os << c->case_id << "," << region_name(static_cast<Region>(r)) << "," << m.dice << ","
               << m.hd95;
            if (opts.lesionwise) os << "," << *m.lw_dice << "," << *m.lw_hd95;
            os << "\n";
        }
    // aggregate block in challenge table column order
    os << "\n";
    os << "dice_et,dice_tc,dice_wt,avg_dice,hd95_et,hd95_tc,hd95_wt,avg_hd95\n";
    os << agg.mean_dice[0] << "," << agg.mean_dice[1] << "," << agg.mean_dice[2] << ","
       << agg.overall_dice << "," << agg.mean_hd95[0] << "," << agg.mean_hd95[1] << ","
       << agg.mean_hd95[2] << "," << agg.overall_hd95 << "\n";
    return os.str();
}

} // namespace bts
