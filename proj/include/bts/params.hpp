#ifndef BTS_PARAMS_HPP
#define BTS_PARAMS_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "bts/common.hpp"

namespace bts {

struct Param {
    std::vector<std::int64_t> shape;
    std::vector<float> values;
    bool frozen = false;

    std::int64_t count() const {
        std::int64_t n = 1;
        for (auto d : shape) n *= d;
        return n;
    }
};

// Ordered name -> parameter map holding all learnable weights of a model.
// Names are dotted role paths ("enc0.b1.dw.weight"); insertion order is
// stable and defines serialization and optimizer traversal order.
class ParamTree {
public:
    Param& add(const std::string& name, std::vector<std::int64_t> shape, bool frozen = false);
    bool has(const std::string& name) const { return index_.count(name) != 0; }
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    const std::vector<std::string>& names() const { return order_; }
    std::size_t size() const { return order_.size(); }

    std::int64_t total_values() const;
    bool same_values(const ParamTree& other) const; // bitwise comparison

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<Param> params_;
};

// Checkpoint directory: manifest.json plus one NPY file per parameter.
struct CheckpointMeta {
    std::string arch;       // "mednext" | "micromodel"
    std::uint64_t seed = 0; // build seed, informational
    std::string config_json; // arch-specific config blob
};

void save_checkpoint(const std::filesystem::path& dir, const ParamTree& tree,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
    ParamTree params;
    CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Filesystem-safe parameter file stem (dots and other separators replaced).
std::string sanitize_param_name(const std::string& name);

} // namespace bts

#endif
