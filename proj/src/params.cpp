#include "bts/params.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

#include "bts/npy.hpp"

namespace bts {

using json = nlohmann::ordered_json;

Param& ParamTree::add(const std::string& name, std::vector<std::int64_t> shape, bool frozen) {
    if (index_.count(name)) throw ValueError("ParamTree: duplicate parameter name '" + name + "'");
    Param p;
    p.shape = std::move(shape);
    std::int64_t n = 1;
    for (auto d : p.shape) {
        if (d <= 0) throw ValueError("ParamTree: non-positive dimension in '" + name + "'");
        n *= d;
    }
    p.values.assign(static_cast<std::size_t>(n), 0.0f);
    p.frozen = frozen;
    index_[name] = params_.size();
    order_.push_back(name);
    params_.push_back(std::move(p));
    return params_.back();
}

Param& ParamTree::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("ParamTree: unknown parameter '" + name + "'");
    return params_[it->second];
}

const Param& ParamTree::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ValueError("ParamTree: unknown parameter '" + name + "'");
    return params_[it->second];
}

std::int64_t ParamTree::total_values() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.count();
    return n;
}

bool ParamTree::same_values(const ParamTree& other) const {
    if (order_ != other.order_) return false;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].shape != other.params_[i].shape) return false;
        if (std::memcmp(params_[i].values.data(), other.params_[i].values.data(),
                        params_[i].values.size() * 4) != 0)
            return false;
    }
    return true;
}

std::string sanitize_param_name(const std::string& name) {
    std::string out;
    for (char c : name) {
        bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') ||
                  c == '-' || c == '_';
        out += ok ? c : '_';
    }
    return out;
}

void save_checkpoint(const std::filesystem::path& dir, const ParamTree& tree,
                     const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);
    json manifest;
    manifest["format"] = "bratskit-checkpoint-v1";
    manifest["arch"] = meta.arch;
    manifest["seed"] = meta.seed;
    manifest["config"] = json::parse(meta.config_json.empty() ? "{}" : meta.config_json);

    json params = json::array();
    std::size_t idx = 0;
    for (const std::string& name : tree.names()) {
        const Param& p = tree.at(name);
        std::ostringstream fn;
        fn << "p" << std::setw(4) << std::setfill('0') << idx << "_" << sanitize_param_name(name)
           << ".npy";
        write_npy(dir / fn.str(), p.shape, p.values);
        params.push_back({{"name", name},
                          {"file", fn.str()},
                          {"shape", p.shape},
                          {"frozen", p.frozen}});
        ++idx;
    }
    manifest["params"] = params;

    std::ofstream f(dir / "manifest.json");
    if (!f) throw IoError("save_checkpoint: cannot write manifest in " + dir.string());
    f << manifest.dump(2) << "\n";
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream f(dir / "manifest.json");
    if (!f) throw IoError("load_checkpoint: missing manifest.json in " + dir.string());
    json manifest = json::parse(std::string((std::istreambuf_iterator<char>(f)), {}));

    if (manifest.value("format", "") != "bratskit-checkpoint-v1")
        throw ParseError("load_checkpoint: unknown checkpoint format in " + dir.string());

    LoadedCheckpoint out;
    out.meta.arch = manifest.at("arch").get<std::string>();
    out.meta.seed = manifest.value("seed", std::uint64_t(0));
    out.meta.config_json = manifest.at("config").dump();

    for (const auto& e : manifest.at("params")) {
        std::string name = e.at("name").get<std::string>();
        std::vector<std::int64_t> shape = e.at("shape").get<std::vector<std::int64_t>>();
        Param& p = out.params.add(name, shape, e.value("frozen", false));
        NpyArray arr = read_npy(dir / e.at("file").get<std::string>());
        if (arr.dtype != NpyDtype::Float32)
            throw ParseError("load_checkpoint: parameter '" + name + "' is not float32");
        if (arr.shape != shape)
            throw ShapeError("load_checkpoint: shape mismatch for parameter '" + name + "'");
        p.values = arr.f32();
    }
    return out;
}

} // namespace bts
