// bratskit: batch CLI for the brain-tumor segmentation toolkit. Wires the
// library modules into the preprocess -> infer -> ensemble -> postprocess
// -> evaluate pipeline plus synthetic-data, sweep and training-demo
// utilities. Every run writes a run.json provenance record into its output
// directory.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "bts/caseio.hpp"
#include "bts/inference.hpp"
#include "bts/mednext.hpp"
#include "bts/metrics.hpp"
#include "bts/micromodel.hpp"
#include "bts/nifti.hpp"
#include "bts/postprocess.hpp"
#include "bts/preprocess.hpp"
#include "bts/trainkit.hpp"

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;
using namespace bts;

namespace {

constexpr const char* BRATSKIT_VERSION = "0.1.0";

int g_verbosity = 1; // 0 quiet, 1 normal, 2 verbose

void log_info(const std::string& msg) {
    if (g_verbosity >= 1) std::cerr << "[bratskit] " << msg << "\n";
}
void log_debug(const std::string& msg) {
    if (g_verbosity >= 2) std::cerr << "[bratskit] " << msg << "\n";
}

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// JSON-backed CLI11 config: top-level keys are subcommand names, nested keys
// are option long names, e.g. {"infer": {"overlap": 0.7}}. Command-line
// flags always win over config values.
class JsonConfig : public CLI::Config {
public:
    std::string to_config(const CLI::App* app, bool default_also, bool, std::string) const override {
        json j = json::object();
        for (const CLI::Option* opt : app->get_options({})) {
            if (!opt->get_configurable() || opt->get_lnames().empty()) continue;
            std::string name = opt->get_lnames()[0];
            if (opt->reduced_results().size() == 1)
                j[name] = opt->reduced_results().at(0);
            else if (default_also)
                j[name] = opt->get_default_str();
        }
        return j.dump(2);
    }

    std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
        json j;
        try {
            input >> j;
        } catch (const std::exception& e) {
            throw CLI::FileError(std::string("invalid JSON config: ") + e.what());
        }
        return walk(j, "", {});
    }

private:
    std::vector<CLI::ConfigItem> walk(const json& j, const std::string& name,
                                      std::vector<std::string> parents) const {
        std::vector<CLI::ConfigItem> items;
        if (j.is_object()) {
            if (!name.empty()) parents.push_back(name);
            for (const auto& [key, value] : j.items()) {
                auto sub = walk(value, key, parents);
                items.insert(items.end(), sub.begin(), sub.end());
            }
            return items;
        }
        CLI::ConfigItem item;
        item.name = name;
        item.parents = std::move(parents);
        if (j.is_array()) {
            for (const auto& v : j)
                item.inputs.push_back(v.is_string() ? v.get<std::string>() : v.dump());
        } else if (j.is_string()) {
            item.inputs = {j.get<std::string>()};
        } else if (j.is_boolean()) {
            item.inputs = {j.get<bool>() ? "true" : "false"};
        } else {
            item.inputs = {j.dump()};
        }
        items.push_back(item);
        return items;
    }
};

// ---- small flag parsing helpers -------------------------------------------

Shape3 parse_shape_flag(const std::string& text, const char* what) {
    Shape3 s;
    if (std::sscanf(text.c_str(), "%ld,%ld,%ld", &s.nx, &s.ny, &s.nz) != 3 || s.nx <= 0 ||
        s.ny <= 0 || s.nz <= 0)
        throw UsageError(std::string(what) + ": expected three positive integers 'x,y,z', got '" +
                         text + "'");
    return s;
}

std::array<double, 3> parse_triple(const std::string& text, const char* what) {
    std::array<double, 3> v;
    if (std::sscanf(text.c_str(), "%lf,%lf,%lf", &v[0], &v[1], &v[2]) != 3)
        throw UsageError(std::string(what) + ": expected three comma-separated numbers, got '" +
                         text + "'");
    return v;
}

std::array<std::int64_t, 3> parse_int_triple(const std::string& text, const char* what) {
    std::array<std::int64_t, 3> v;
    if (std::sscanf(text.c_str(), "%ld,%ld,%ld", &v[0], &v[1], &v[2]) != 3)
        throw UsageError(std::string(what) + ": expected three comma-separated integers, got '" +
                         text + "'");
    return v;
}

// ---- provenance ------------------------------------------------------------

std::string hash_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) return "unreadable";
    std::vector<char> bytes((std::istreambuf_iterator<char>(f)), {});
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

// Directories are summarized by their sorted entry names and sizes; files by
// a content hash. Keeps provenance cheap but still change-sensitive.
json hash_input(const fs::path& p) {
    json j;
    j["path"] = p.string();
    if (fs::is_directory(p)) {
        std::vector<std::string> entries;
        for (const auto& e : fs::recursive_directory_iterator(p))
            if (e.is_regular_file())
                entries.push_back(e.path().lexically_relative(p).string() + ":" +
                                  std::to_string(e.file_size()));
        std::sort(entries.begin(), entries.end());
        std::string all;
        for (const auto& e : entries) all += e + "\n";
        char buf[20];
        std::snprintf(buf, sizeof(buf), "%016llx",
                      static_cast<unsigned long long>(fnv1a64(all.data(), all.size())));
        j["listing_fnv1a64"] = buf;
        j["files"] = entries.size();
    } else if (fs::is_regular_file(p)) {
        j["fnv1a64"] = hash_file(p);
    } else {
        j["missing"] = true;
    }
    return j;
}

void write_run_record(const fs::path& out_dir, const std::string& command, const json& config,
                      const std::vector<fs::path>& inputs) {
    fs::create_directories(out_dir);
    json j;
    j["command"] = command;
    j["version"] = BRATSKIT_VERSION;
    j["config"] = config;
    json in = json::array();
    for (const fs::path& p : inputs) in.push_back(hash_input(p));
    j["inputs"] = in;
    std::ofstream f(out_dir / "run.json");
    if (!f) throw IoError("cannot write run.json in " + out_dir.string());
    f << j.dump(2) << "\n";
}

// ---- shared option bundles ---------------------------------------------------

PostprocessConfig resolve_postprocess(const std::string& profile, const CLI::Option* thr_opt,
                                      const std::string& thr_flag, const CLI::Option* ms_opt,
                                      const std::string& ms_flag, int connectivity) {
    PostprocessConfig cfg;
    if (profile == "ssa") {
        cfg.thresholds = {0.7, 0.7, 0.5};
        cfg.min_sizes = {0, 0, 0};
    } else if (profile == "ped") {
        cfg.thresholds = {0.5, 0.5, 0.5};
        cfg.min_sizes = {50, 75, 250};
    } else if (!profile.empty()) {
        throw UsageError("unknown profile '" + profile + "' (expected ssa|ped)");
    }
    if (thr_opt && thr_opt->count() > 0) {
        auto t = parse_triple(thr_flag, "--thresholds");
        cfg.thresholds = {t[0], t[1], t[2]};
    }
    if (ms_opt && ms_opt->count() > 0) cfg.min_sizes = parse_int_triple(ms_flag, "--min-sizes");
    cfg.connectivity = connectivity;
    try {
        cfg.validate();
    } catch (const ValueError& e) {
        throw UsageError(e.what());
    }
    return cfg;
}

json postprocess_to_json(const PostprocessConfig& cfg) {
    json j;
    j["thresholds"] = cfg.thresholds;
    j["min_sizes"] = cfg.min_sizes;
    j["connectivity"] = cfg.connectivity;
    return j;
}

std::vector<std::string> discover_preprocessed(const fs::path& dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        const std::string suffix = "_img.npy";
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw IoError("no preprocessed cases (*_img.npy) found in " + dir.string());
    return ids;
}

std::vector<std::string> discover_probs(const fs::path& dir) {
    std::vector<std::string> ids;
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        const std::string suffix = "_probs.npy";
        if (name.size() > suffix.size() &&
            name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0)
            ids.push_back(name.substr(0, name.size() - suffix.size()));
    }
    std::sort(ids.begin(), ids.end());
    if (ids.empty()) throw IoError("no probability maps (*_probs.npy) found in " + dir.string());
    return ids;
}

std::unique_ptr<Predictor> predictor_from_checkpoint(const fs::path& ckpt_dir, Shape3 window) {
    LoadedCheckpoint ckpt = load_checkpoint(ckpt_dir);
    if (ckpt.meta.arch == "mednext") {
        MedNeXtConfig cfg = MedNeXtConfig::from_json(ckpt.meta.config_json);
        return std::make_unique<MedNeXtPredictor>(std::move(ckpt.params), cfg, window);
    }
    if (ckpt.meta.arch == "micromodel") {
        MicroModelConfig cfg = MicroModelConfig::from_json(ckpt.meta.config_json);
        return make_micromodel_predictor(std::move(ckpt.params), cfg, window);
    }
    throw ParseError("unknown checkpoint arch '" + ckpt.meta.arch + "' in " + ckpt_dir.string());
}

LabelMap read_labels_flexible(const fs::path& p) { return read_nifti_labels(p); }

// gt lookup: dataset root with case dirs ({id}/{id}-seg.nii.gz) or a flat
// directory of {id}-seg.nii[.gz] / {id}.nii[.gz].
fs::path find_gt(const fs::path& gt_root, const std::string& id, const std::string& seg_suffix) {
    std::vector<fs::path> candidates = {
        gt_root / id / (id + "-" + seg_suffix + ".nii.gz"),
        gt_root / id / (id + "-" + seg_suffix + ".nii"),
        gt_root / (id + "-" + seg_suffix + ".nii.gz"),
        gt_root / (id + "-" + seg_suffix + ".nii"),
        gt_root / (id + ".nii.gz"),
        gt_root / (id + ".nii"),
    };
    for (const fs::path& c : candidates)
        if (fs::exists(c)) return c;
    throw IoError("no ground-truth segmentation found for case '" + id + "' under " +
                  gt_root.string());
}

// ---- subcommand implementations ---------------------------------------------

struct SynthArgs {
    std::string out;
    int cases = 8;
    std::string shape = "32,32,32";
    std::uint64_t seed = 0;
    double wt_frac = 0.28;
    bool uncompressed = false;
};

int run_synth(const SynthArgs& a) {
    Shape3 shape = parse_shape_flag(a.shape, "--shape");
    fs::create_directories(a.out);
    Rng rng(a.seed);
    TumorSpec spec;
    spec.wt_radius_frac = a.wt_frac;
    for (int i = 0; i < a.cases; ++i) {
        char idbuf[32];
        std::snprintf(idbuf, sizeof(idbuf), "synth-%03d", i);
        CaseBundle bundle = synth_case(rng, shape, spec, idbuf);
        write_case(bundle, fs::path(a.out) / idbuf, {}, !a.uncompressed);
        log_debug(std::string("wrote case ") + idbuf);
    }
    json cfg;
    cfg["cases"] = a.cases;
    cfg["shape"] = {shape.nx, shape.ny, shape.nz};
    cfg["seed"] = a.seed;
    cfg["wt_radius_frac"] = a.wt_frac;
    write_run_record(a.out, "synth", cfg, {});
    log_info("synth: wrote " + std::to_string(a.cases) + " cases to " + a.out);
    return 0;
}

struct PreprocessArgs {
    std::string data, out;
    std::string patch = "128,160,112";
    bool no_fit = false;
    std::string suffixes, seg_suffix;
    int jobs = 1;
};

CaseNaming resolve_naming(const std::string& suffixes, const std::string& seg_suffix) {
    CaseNaming naming;
    if (!suffixes.empty()) {
        std::stringstream ss(suffixes);
        std::string tok;
        std::vector<std::string> parts;
        while (std::getline(ss, tok, ',')) parts.push_back(tok);
        if (parts.size() != 4)
            throw UsageError("--suffixes: expected four comma-separated modality suffixes");
        for (int i = 0; i < 4; ++i) naming.modality_suffixes[static_cast<std::size_t>(i)] = parts[static_cast<std::size_t>(i)];
    }
    if (!seg_suffix.empty()) naming.seg_suffix = seg_suffix;
    return naming;
}

int run_preprocess(const PreprocessArgs& a) {
    CaseNaming naming = resolve_naming(a.suffixes, a.seg_suffix);
    PreprocessOptions opt;
    opt.patch.target = parse_shape_flag(a.patch, "--patch");
    opt.fit_patch = !a.no_fit;

    std::vector<std::string> ids = list_cases(a.data, naming);
    log_info("preprocess: " + std::to_string(ids.size()) + " cases from " + a.data);
    fs::create_directories(a.out);

    parallel_for_indices(ids.size(), a.jobs, [&](std::size_t i) {
        CaseBundle bundle = load_case(fs::path(a.data) / ids[i], naming);
        PreprocessedCase pc = preprocess_case(bundle, opt);
        write_preprocessed(pc, a.out);
    });

    json cfg;
    cfg["patch"] = {opt.patch.target.nx, opt.patch.target.ny, opt.patch.target.nz};
    cfg["fit_patch"] = opt.fit_patch;
    cfg["cases"] = ids;
    write_run_record(a.out, "preprocess", cfg, {fs::path(a.data)});
    return 0;
}

struct InferArgs {
    std::string preproc, checkpoint, out;
    std::string window = "128,160,112";
    double overlap = 0.5;
    std::string blend = "uniform";
    int jobs = 1;
};

int run_infer(const InferArgs& a) {
    if (!(a.overlap == 0.5 || a.overlap == 0.7))
        log_info("note: overlap " + std::to_string(a.overlap) +
                 " is outside the study's {0.5, 0.7} settings");
    Shape3 window = parse_shape_flag(a.window, "--window");
    BlendMode blend = blend_mode_from_name(a.blend);
    std::unique_ptr<Predictor> predictor = predictor_from_checkpoint(a.checkpoint, window);

    std::vector<std::string> ids = discover_preprocessed(a.preproc);
    fs::create_directories(a.out);
    std::string model_id = fs::path(a.checkpoint).filename().string();

    parallel_for_indices(ids.size(), a.jobs, [&](std::size_t i) {
        const std::string& id = ids[i];
        PreprocessedCase pc = read_preprocessed(a.preproc, id);
        WindowPlan plan = plan_windows(pc.image.shape, window, a.overlap, blend);
        RegionProbs probs = sliding_window_predict(pc.image, *predictor, plan);
        RegionProbs full = restore_geometry(probs, pc.meta);
        ProbsInfo info;
        info.window = window;
        info.overlap = a.overlap;
        info.blend = a.blend;
        info.model_ids = {model_id};
        write_probs(full, fs::path(a.out) / (id + "_probs"), info);
    });

    json cfg;
    cfg["checkpoint"] = a.checkpoint;
    cfg["window"] = {window.nx, window.ny, window.nz};
    cfg["overlap"] = a.overlap;
    cfg["blend"] = a.blend;
    cfg["cases"] = ids;
    write_run_record(a.out, "infer", cfg, {fs::path(a.preproc), fs::path(a.checkpoint)});
    log_info("infer: wrote " + std::to_string(ids.size()) + " probability maps to " + a.out);
    return 0;
}

struct EnsembleArgs {
    std::vector<std::string> inputs;
    std::string out;
};

int run_ensemble(const EnsembleArgs& a) {
    if (a.inputs.empty()) throw UsageError("--inputs: at least one probability directory needed");
    std::vector<std::string> ids = discover_probs(a.inputs[0]);
    fs::create_directories(a.out);

    for (const std::string& id : ids) {
        std::vector<RegionProbs> maps;
        std::vector<std::string> model_ids;
        ProbsInfo first_info;
        for (const std::string& dir : a.inputs) {
            ProbsInfo info;
            maps.push_back(read_probs(fs::path(dir) / (id + "_probs"), &info));
            if (maps.size() == 1) first_info = info;
            model_ids.insert(model_ids.end(), info.model_ids.begin(), info.model_ids.end());
        }
        RegionProbs mean = ensemble_mean(maps);
        ProbsInfo info = first_info;
        info.model_ids = model_ids;
        write_probs(mean, fs::path(a.out) / (id + "_probs"), info);
    }

    json cfg;
    cfg["inputs"] = a.inputs;
    cfg["cases"] = ids;
    std::vector<fs::path> in_paths(a.inputs.begin(), a.inputs.end());
    write_run_record(a.out, "ensemble", cfg, in_paths);
    log_info("ensemble: averaged " + std::to_string(a.inputs.size()) + " model(s) over " +
             std::to_string(ids.size()) + " cases");
    return 0;
}

struct PostprocessArgs {
    std::string probs, out;
    std::string profile;
    std::string thresholds, min_sizes;
    const CLI::Option* thr_opt = nullptr;
    const CLI::Option* ms_opt = nullptr;
    int connectivity = 26;
};

int run_postprocess(const PostprocessArgs& a) {
    PostprocessConfig cfg = resolve_postprocess(a.profile, a.thr_opt, a.thresholds, a.ms_opt,
                                                a.min_sizes, a.connectivity);
    std::vector<std::string> ids = discover_probs(a.probs);
    fs::create_directories(a.out);

    for (const std::string& id : ids) {
        RegionProbs probs = read_probs(fs::path(a.probs) / (id + "_probs"));
        LabelMap labels = postprocess(probs, cfg);
        labels.geom = probs.channels[0].geom;
        write_nifti(labels, fs::path(a.out) / (id + "-pred.nii.gz"), true);
    }

    json jcfg = postprocess_to_json(cfg);
    jcfg["cases"] = ids;
    write_run_record(a.out, "postprocess", jcfg, {fs::path(a.probs)});
    log_info("postprocess: wrote " + std::to_string(ids.size()) + " label maps to " + a.out);
    return 0;
}

struct EvaluateArgs {
    std::string pred, gt, out;
    bool lesionwise = false;
    std::string seg_suffix = "seg";
};

int run_evaluate(const EvaluateArgs& a) {
    MetricOpts opts;
    opts.lesionwise = a.lesionwise;

    std::vector<CaseMetrics> cases;
    if (fs::is_regular_file(a.pred)) {
        LabelMap pred = read_labels_flexible(a.pred);
        LabelMap gt = read_labels_flexible(a.gt);
        cases.push_back(evaluate_case(pred, gt, opts, fs::path(a.pred).filename().string()));
    } else {
        for (const auto& e : fs::directory_iterator(a.pred)) {
            std::string name = e.path().filename().string();
            const std::string suffix = "-pred.nii.gz";
            if (name.size() <= suffix.size() ||
                name.compare(name.size() - suffix.size(), suffix.size(), suffix) != 0)
                continue;
            std::string id = name.substr(0, name.size() - suffix.size());
            LabelMap pred = read_labels_flexible(e.path());
            LabelMap gt = read_labels_flexible(find_gt(a.gt, id, a.seg_suffix));
            cases.push_back(evaluate_case(pred, gt, opts, id));
            log_debug("evaluated " + id);
        }
        if (cases.empty()) throw IoError("no *-pred.nii.gz files found in " + a.pred);
        std::sort(cases.begin(), cases.end(),
                  [](const CaseMetrics& x, const CaseMetrics& y) { return x.case_id < y.case_id; });
    }

    AggregateReport agg = aggregate(cases);
    fs::create_directories(a.out);
    {
        std::ofstream f(fs::path(a.out) / "report.json");
        f << report_to_json(cases, agg, opts);
    }
    {
        std::ofstream f(fs::path(a.out) / "report.csv");
        f << report_to_csv(cases, agg, opts);
    }

    json cfg;
    cfg["lesionwise"] = a.lesionwise;
    cfg["case_count"] = agg.case_count;
    write_run_record(a.out, "evaluate", cfg, {fs::path(a.pred), fs::path(a.gt)});

    std::ostringstream summary;
    summary << "evaluate: " << agg.case_count << " case(s); mean dice ET/TC/WT = "
            << agg.mean_dice[0] << "/" << agg.mean_dice[1] << "/" << agg.mean_dice[2]
            << " (avg " << agg.overall_dice << "), mean HD95 avg " << agg.overall_hd95;
    log_info(summary.str());
    std::cout << report_to_csv(cases, agg, opts);
    return 0;
}

struct SweepArgs {
    std::vector<std::string> probs_dirs;
    std::string gt, out;
    std::string thresholds_grid = "0.5,0.5,0.5";
    std::string min_sizes_grid = "0,0,0";
    int connectivity = 26;
    std::string seg_suffix = "seg";
};

int run_sweep(const SweepArgs& a) {
    // grids are ';'-separated triples; the config grid is their product
    auto split_grid = [](const std::string& text) {
        std::vector<std::string> out;
        std::stringstream ss(text);
        std::string tok;
        while (std::getline(ss, tok, ';'))
            if (!tok.empty()) out.push_back(tok);
        return out;
    };
    std::vector<PostprocessConfig> grid;
    for (const std::string& thr : split_grid(a.thresholds_grid))
        for (const std::string& ms : split_grid(a.min_sizes_grid)) {
            PostprocessConfig cfg;
            auto t = parse_triple(thr, "--thresholds-grid");
            cfg.thresholds = {t[0], t[1], t[2]};
            cfg.min_sizes = parse_int_triple(ms, "--min-sizes-grid");
            cfg.connectivity = a.connectivity;
            try {
                cfg.validate();
            } catch (const ValueError& e) {
                throw UsageError(e.what());
            }
            grid.push_back(cfg);
        }
    if (grid.empty()) throw UsageError("sweep: empty config grid");

    fs::create_directories(a.out);
    std::ostringstream csv;
    csv << sweep_csv_header(true);
    for (const std::string& dir : a.probs_dirs) {
        std::vector<std::string> ids = discover_probs(dir);
        std::vector<SweepCase> cases;
        for (const std::string& id : ids) {
            SweepCase sc;
            sc.probs = read_probs(fs::path(dir) / (id + "_probs"));
            sc.gt = read_nifti_labels(find_gt(a.gt, id, a.seg_suffix));
            cases.push_back(std::move(sc));
        }
        std::vector<SweepRow> rows = sweep_thresholds(cases, grid);
        csv << sweep_to_csv(rows, fs::path(dir).filename().string());
        log_info("sweep: group '" + fs::path(dir).filename().string() + "' best mean dice " +
                 std::to_string(rows.front().mean_dice));
    }
    {
        std::ofstream f(fs::path(a.out) / "sweep.csv");
        f << csv.str();
    }
    std::cout << csv.str();

    json cfg;
    cfg["thresholds_grid"] = a.thresholds_grid;
    cfg["min_sizes_grid"] = a.min_sizes_grid;
    cfg["connectivity"] = a.connectivity;
    cfg["groups"] = a.probs_dirs;
    std::vector<fs::path> inputs(a.probs_dirs.begin(), a.probs_dirs.end());
    inputs.push_back(a.gt);
    write_run_record(a.out, "sweep", cfg, inputs);
    return 0;
}

struct TrainDemoArgs {
    std::vector<std::string> data;
    std::string out;
    int folds = 4;
    int only_fold = -1;
    int steps = 200;
    int batch_size = 2;
    double lr = 0.02;
    std::uint64_t seed = 0;
    std::string patch = "16,16,16";
    int depth = 2;
    int hidden = 8;
};

int run_train_demo(const TrainDemoArgs& a) {
    // multiple --data roots are concatenated into one training set
    std::vector<CaseBundle> cases;
    for (const std::string& root : a.data)
        for (const std::string& id : list_cases(root))
            cases.push_back(load_case(fs::path(root) / id));

    TrainDemoConfig cfg;
    cfg.folds = a.folds;
    if (a.only_fold >= 0) cfg.only_fold = a.only_fold;
    cfg.steps = a.steps;
    cfg.batch_size = a.batch_size;
    cfg.lr = a.lr;
    cfg.seed = a.seed;
    cfg.train_patch = parse_shape_flag(a.patch, "--patch");
    cfg.model.depth = a.depth;
    cfg.model.hidden = a.hidden;

    log_info("train-demo: " + std::to_string(cases.size()) + " cases, " +
             std::to_string(a.folds) + " folds, " + std::to_string(a.steps) + " steps");
    TrainDemoResult res = train_demo(cases, cfg);

    fs::create_directories(a.out);
    json summary;
    summary["mean_val_wt_dice"] = res.mean_val_wt_dice;
    json jfolds = json::array();
    for (const FoldOutcome& fold : res.folds) {
        fs::path fold_dir = fs::path(a.out) / ("fold" + std::to_string(fold.fold));
        CheckpointMeta meta;
        meta.arch = "micromodel";
        meta.seed = cfg.seed + std::uint64_t(fold.fold);
        meta.config_json = cfg.model.to_json();
        save_checkpoint(fold_dir / "checkpoint", fold.trained, meta);
        {
            std::ofstream f(fold_dir / "history.csv");
            f << history_to_csv(fold.history);
        }
        MetricOpts mopts;
        AggregateReport agg = fold.val_report;
        {
            std::ofstream f(fold_dir / "val_report.json");
            f << report_to_json(fold.val_cases, agg, mopts);
        }
        json jf;
        jf["fold"] = fold.fold;
        jf["first_loss"] = fold.history.front().loss;
        jf["final_loss"] = fold.history.back().loss;
        jf["val_wt_dice"] = agg.mean_dice[static_cast<int>(Region::WT)];
        jfolds.push_back(jf);
        log_info("fold " + std::to_string(fold.fold) + ": loss " +
                 std::to_string(fold.history.front().loss) + " -> " +
                 std::to_string(fold.history.back().loss) + ", val WT dice " +
                 std::to_string(agg.mean_dice[static_cast<int>(Region::WT)]));
    }
    summary["folds"] = jfolds;
    {
        std::ofstream f(fs::path(a.out) / "summary.json");
        f << summary.dump(2) << "\n";
    }

    json cfgj;
    cfgj["folds"] = a.folds;
    cfgj["steps"] = a.steps;
    cfgj["batch_size"] = a.batch_size;
    cfgj["lr"] = a.lr;
    cfgj["seed"] = a.seed;
    cfgj["patch"] = a.patch;
    cfgj["model_depth"] = a.depth;
    cfgj["model_hidden"] = a.hidden;
    std::vector<fs::path> data_paths(a.data.begin(), a.data.end());
    write_run_record(a.out, "train-demo", cfgj, data_paths);
    std::cout << summary.dump(2) << "\n";
    return 0;
}

struct InitModelArgs {
    std::string out;
    std::string arch = "mednext";
    std::string preset = "toy";
    int base_channels = 0;
    int kernel = 3;
    int depth = 2, hidden = 8;
    std::uint64_t seed = 0;
};

int run_init_model(const InitModelArgs& a) {
    CheckpointMeta meta;
    meta.seed = a.seed;
    if (a.arch == "mednext") {
        MedNeXtConfig cfg;
        if (a.preset == "B")
            cfg = MedNeXtConfig::preset_b(a.base_channels > 0 ? a.base_channels : 32, a.kernel);
        else if (a.preset == "M")
            cfg = MedNeXtConfig::preset_m(a.base_channels > 0 ? a.base_channels : 32, a.kernel);
        else if (a.preset == "toy")
            cfg = MedNeXtConfig::toy(a.base_channels > 0 ? a.base_channels : 4, a.kernel);
        else
            throw UsageError("unknown preset '" + a.preset + "' (expected B|M|toy)");
        ParamTree tree = build_mednext(cfg, a.seed);
        meta.arch = "mednext";
        meta.config_json = cfg.to_json();
        save_checkpoint(a.out, tree, meta);
        log_info("init-model: mednext preset " + a.preset + " with " +
                 std::to_string(tree.total_values()) + " parameters -> " + a.out);
    } else if (a.arch == "micromodel") {
        MicroModelConfig cfg;
        cfg.depth = a.depth;
        cfg.hidden = a.hidden;
        ParamTree tree = build_micromodel(cfg, a.seed);
        meta.arch = "micromodel";
        meta.config_json = cfg.to_json();
        save_checkpoint(a.out, tree, meta);
        log_info("init-model: micromodel -> " + a.out);
    } else {
        throw UsageError("unknown arch '" + a.arch + "' (expected mednext|micromodel)");
    }
    json cfg;
    cfg["arch"] = a.arch;
    cfg["preset"] = a.preset;
    cfg["seed"] = a.seed;
    write_run_record(a.out, "init-model", cfg, {});
    return 0;
}

struct FinetuneArgs {
    std::string checkpoint, out;
    std::string variant = "a";
    std::uint64_t reinit_seed = 1;
};

int run_finetune(const FinetuneArgs& a) {
    LoadedCheckpoint ckpt = load_checkpoint(a.checkpoint);
    if (ckpt.meta.arch != "mednext")
        throw UsageError("finetune: only mednext checkpoints carry the default selector");
    FinetuneVariant variant;
    if (a.variant == "a")
        variant = FinetuneVariant::KeepWeights;
    else if (a.variant == "b")
        variant = FinetuneVariant::ReinitWeights;
    else
        throw UsageError("--variant must be 'a' (keep) or 'b' (reinit)");

    ParamTree plan;
    if (variant == FinetuneVariant::ReinitWeights) {
        MedNeXtConfig cfg = MedNeXtConfig::from_json(ckpt.meta.config_json);
        ParamTree fresh = build_mednext(cfg, a.reinit_seed);
        plan = finetune_plan(ckpt.params, variant, default_finetune_selector(), &fresh);
    } else {
        plan = finetune_plan(ckpt.params, variant, default_finetune_selector());
    }
    CheckpointMeta meta = ckpt.meta;
    save_checkpoint(a.out, plan, meta);

    json cfg;
    cfg["variant"] = a.variant;
    cfg["reinit_seed"] = a.reinit_seed;
    write_run_record(a.out, "finetune", cfg, {fs::path(a.checkpoint)});
    std::size_t trainable = 0;
    for (const auto& name : plan.names())
        if (!plan.at(name).frozen) ++trainable;
    log_info("finetune: " + std::to_string(trainable) + "/" +
             std::to_string(plan.names().size()) + " tensors trainable -> " + a.out);
    return 0;
}

struct PipelineArgs {
    std::string data, out;
    std::vector<std::string> checkpoints;
    std::string window = "128,160,112";
    double overlap = 0.5;
    std::string blend = "uniform";
    std::string profile;
    std::string thresholds, min_sizes;
    const CLI::Option* thr_opt = nullptr;
    const CLI::Option* ms_opt = nullptr;
    int connectivity = 26;
    bool lesionwise = false;
};

int run_pipeline(const PipelineArgs& a) {
    if (a.checkpoints.empty()) throw UsageError("pipeline: at least one --checkpoint required");
    fs::path work(a.out);

    PreprocessArgs pre;
    pre.data = a.data;
    pre.out = (work / "preproc").string();
    pre.no_fit = true; // sliding windows run over the cropped full volume
    run_preprocess(pre);

    std::vector<std::string> prob_dirs;
    for (std::size_t m = 0; m < a.checkpoints.size(); ++m) {
        InferArgs inf;
        inf.preproc = pre.out;
        inf.checkpoint = a.checkpoints[m];
        inf.out = (work / ("probs_m" + std::to_string(m))).string();
        inf.window = a.window;
        inf.overlap = a.overlap;
        inf.blend = a.blend;
        run_infer(inf);
        prob_dirs.push_back(inf.out);
    }

    EnsembleArgs ens;
    ens.inputs = prob_dirs;
    ens.out = (work / "ensemble").string();
    run_ensemble(ens);

    PostprocessArgs post;
    post.probs = ens.out;
    post.out = (work / "pred").string();
    post.profile = a.profile;
    post.thresholds = a.thresholds;
    post.min_sizes = a.min_sizes;
    post.thr_opt = a.thr_opt;
    post.ms_opt = a.ms_opt;
    post.connectivity = a.connectivity;
    run_postprocess(post);

    // evaluate only when ground truth exists
    bool has_gt = true;
    try {
        std::vector<std::string> ids = list_cases(a.data);
        for (const std::string& id : ids) find_gt(a.data, id, "seg");
    } catch (const IoError&) {
        has_gt = false;
    }
    if (has_gt) {
        EvaluateArgs ev;
        ev.pred = post.out;
        ev.gt = a.data;
        ev.out = (work / "report").string();
        ev.lesionwise = a.lesionwise;
        run_evaluate(ev);
    } else {
        log_info("pipeline: no ground truth found, skipping evaluation");
    }

    json cfg;
    cfg["checkpoints"] = a.checkpoints;
    cfg["window"] = a.window;
    cfg["overlap"] = a.overlap;
    cfg["blend"] = a.blend;
    cfg["profile"] = a.profile;
    write_run_record(work, "pipeline", cfg, {fs::path(a.data)});
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"bratskit: brain-tumor segmentation toolkit (preprocess, sliding-window "
                 "inference, ensembling, postprocess, challenge metrics, training demo)"};
    app.require_subcommand(1);
    app.set_config("--config", "", "JSON config file; command-line flags override its values");
    app.config_formatter(std::make_shared<JsonConfig>());
    app.allow_config_extras(true);
    bool quiet = false, verbose = false;
    app.add_flag("--quiet", quiet, "suppress log output");
    app.add_flag("--verbose", verbose, "chatty log output");

    SynthArgs synth;
    CLI::App* c_synth = app.add_subcommand("synth", "generate synthetic cases");
    c_synth->add_option("--out", synth.out, "output dataset root")->required();
    c_synth->add_option("--cases", synth.cases, "number of cases");
    c_synth->add_option("--shape", synth.shape, "volume shape x,y,z");
    c_synth->add_option("--seed", synth.seed, "random seed");
    c_synth->add_option("--wt-frac", synth.wt_frac, "whole-tumor radius fraction");
    c_synth->add_flag("--uncompressed", synth.uncompressed, "write .nii instead of .nii.gz");

    PreprocessArgs pre;
    CLI::App* c_pre = app.add_subcommand("preprocess", "crop, normalize, stack and cache cases");
    c_pre->add_option("--data", pre.data, "dataset root")->required();
    c_pre->add_option("--out", pre.out, "cache directory")->required();
    c_pre->add_option("--patch", pre.patch, "training patch shape x,y,z");
    c_pre->add_flag("--no-fit", pre.no_fit, "keep the cropped volume (inference mode)");
    c_pre->add_option("--suffixes", pre.suffixes, "modality suffixes, default t1n,t1c,t2w,t2f");
    c_pre->add_option("--seg-suffix", pre.seg_suffix, "segmentation suffix, default seg");
    c_pre->add_option("--jobs", pre.jobs, "parallel workers across cases");

    InferArgs inf;
    CLI::App* c_inf = app.add_subcommand("infer", "sliding-window probability maps");
    c_inf->add_option("--preproc", inf.preproc, "preprocessed cache directory")->required();
    c_inf->add_option("--checkpoint", inf.checkpoint, "model checkpoint directory")->required();
    c_inf->add_option("--out", inf.out, "output directory")->required();
    c_inf->add_option("--window", inf.window, "window shape x,y,z");
    c_inf->add_option("--overlap", inf.overlap, "window overlap fraction (0.5 or 0.7)");
    c_inf->add_option("--blend", inf.blend, "uniform|gaussian");
    c_inf->add_option("--jobs", inf.jobs, "parallel workers across cases");

    EnsembleArgs ens;
    CLI::App* c_ens = app.add_subcommand("ensemble", "average probability maps across models");
    c_ens->add_option("--inputs", ens.inputs, "probability directories")->required();
    c_ens->add_option("--out", ens.out, "output directory")->required();

    PostprocessArgs post;
    CLI::App* c_post = app.add_subcommand("postprocess", "binarize, size-filter and label");
    c_post->add_option("--probs", post.probs, "probability directory")->required();
    c_post->add_option("--out", post.out, "output directory")->required();
    c_post->add_option("--profile", post.profile, "ssa|ped parameter profile");
    post.thr_opt = c_post->add_option("--thresholds", post.thresholds, "ET,TC,WT in (0,1)");
    post.ms_opt = c_post->add_option("--min-sizes,--min-size", post.min_sizes,
                                     "ET,TC,WT voxel counts");
    c_post->add_option("--connectivity", post.connectivity, "6|18|26");

    EvaluateArgs ev;
    CLI::App* c_ev = app.add_subcommand("evaluate", "Dice/HD95 (optionally lesion-wise) reports");
    c_ev->add_option("--pred", ev.pred, "prediction file or directory")->required();
    c_ev->add_option("--gt", ev.gt, "ground-truth file, dataset root or directory")->required();
    c_ev->add_option("--out", ev.out, "report directory")->required();
    c_ev->add_flag("--lesionwise", ev.lesionwise, "also compute lesion-wise metrics");
    c_ev->add_option("--seg-suffix", ev.seg_suffix, "gt suffix, default seg");

    SweepArgs sweep;
    CLI::App* c_sweep = app.add_subcommand("sweep", "grid-search postprocessing parameters");
    c_sweep->add_option("--probs", sweep.probs_dirs, "probability directories (one per group)")
        ->required();
    c_sweep->add_option("--gt", sweep.gt, "ground-truth root")->required();
    c_sweep->add_option("--out", sweep.out, "output directory")->required();
    c_sweep->add_option("--thresholds-grid", sweep.thresholds_grid,
                        "';'-separated ET,TC,WT triples");
    c_sweep->add_option("--min-sizes-grid", sweep.min_sizes_grid,
                        "';'-separated ET,TC,WT triples, e.g. 100,150,500;50,75,250");
    c_sweep->add_option("--connectivity", sweep.connectivity, "6|18|26");
    c_sweep->add_option("--seg-suffix", sweep.seg_suffix, "gt suffix, default seg");

    TrainDemoArgs td;
    CLI::App* c_td = app.add_subcommand("train-demo", "micro-model cross-validation training");
    c_td->add_option("--data", td.data,
                     "dataset root with segmentations (repeatable, roots are concatenated)")
        ->required();
    c_td->add_option("--out", td.out, "output directory")->required();
    c_td->add_option("--folds", td.folds, "fold count");
    c_td->add_option("--fold", td.only_fold, "run a single fold index");
    c_td->add_option("--steps", td.steps, "optimizer steps per fold");
    c_td->add_option("--batch-size", td.batch_size, "samples per step");
    c_td->add_option("--lr", td.lr, "learning rate");
    c_td->add_option("--seed", td.seed, "random seed");
    c_td->add_option("--patch", td.patch, "training crop shape x,y,z");
    c_td->add_option("--depth", td.depth, "micro-model depth");
    c_td->add_option("--hidden", td.hidden, "micro-model hidden width");

    InitModelArgs im;
    CLI::App* c_im = app.add_subcommand("init-model", "write a freshly initialized checkpoint");
    c_im->add_option("--out", im.out, "checkpoint directory")->required();
    c_im->add_option("--arch", im.arch, "mednext|micromodel");
    c_im->add_option("--preset", im.preset, "B|M|toy (mednext)");
    c_im->add_option("--base-channels", im.base_channels, "override stem width");
    c_im->add_option("--kernel", im.kernel, "depthwise kernel size (odd)");
    c_im->add_option("--depth", im.depth, "micromodel depth");
    c_im->add_option("--hidden", im.hidden, "micromodel hidden width");
    c_im->add_option("--seed", im.seed, "init seed");

    FinetuneArgs ft;
    CLI::App* c_ft = app.add_subcommand("finetune", "freeze all but the final decoder + heads");
    c_ft->add_option("--checkpoint", ft.checkpoint, "input checkpoint")->required();
    c_ft->add_option("--out", ft.out, "output checkpoint")->required();
    c_ft->add_option("--variant", ft.variant, "a (keep weights) | b (reinitialize)");
    c_ft->add_option("--reinit-seed", ft.reinit_seed, "seed for variant b");

    PipelineArgs pipe;
    CLI::App* c_pipe = app.add_subcommand(
        "pipeline", "preprocess -> infer (per checkpoint) -> ensemble -> postprocess -> evaluate");
    c_pipe->add_option("--data", pipe.data, "dataset root")->required();
    c_pipe->add_option("--out", pipe.out, "working directory")->required();
    c_pipe->add_option("--checkpoint", pipe.checkpoints, "checkpoint directory (repeatable)")
        ->required();
    c_pipe->add_option("--window", pipe.window, "window shape x,y,z");
    c_pipe->add_option("--overlap", pipe.overlap, "window overlap fraction");
    c_pipe->add_option("--blend", pipe.blend, "uniform|gaussian");
    c_pipe->add_option("--profile", pipe.profile, "ssa|ped postprocess profile");
    pipe.thr_opt = c_pipe->add_option("--thresholds", pipe.thresholds, "ET,TC,WT in (0,1)");
    pipe.ms_opt = c_pipe->add_option("--min-sizes,--min-size", pipe.min_sizes,
                                     "ET,TC,WT voxel counts");
    c_pipe->add_option("--connectivity", pipe.connectivity, "6|18|26");
    c_pipe->add_flag("--lesionwise", pipe.lesionwise, "lesion-wise metrics in the final report");

    for (CLI::App* sc : app.get_subcommands([](const CLI::App*) { return true; })) {
        sc->add_flag("--quiet", quiet, "suppress log output");
        sc->add_flag("--verbose", verbose, "chatty log output");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e); // prints the message
        return 1;    // usage error
    }
    if (quiet) g_verbosity = 0;
    if (verbose) g_verbosity = 2;

    try {
        if (*c_synth) return run_synth(synth);
        if (*c_pre) return run_preprocess(pre);
        if (*c_inf) return run_infer(inf);
        if (*c_ens) return run_ensemble(ens);
        if (*c_post) return run_postprocess(post);
        if (*c_ev) return run_evaluate(ev);
        if (*c_sweep) return run_sweep(sweep);
        if (*c_td) return run_train_demo(td);
        if (*c_im) return run_init_model(im);
        if (*c_ft) return run_finetune(ft);
        if (*c_pipe) return run_pipeline(pipe);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
