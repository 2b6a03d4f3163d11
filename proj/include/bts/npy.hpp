#ifndef BTS_NPY_HPP
#define BTS_NPY_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "bts/common.hpp"

namespace bts {

// NPY v1.0 support, restricted to the dtypes the pipeline caches:
// little-endian float32 ('<f4') and uint8 ('|u1'), C-contiguous, rank >= 1.
enum class NpyDtype : int { Float32 = 0, Uint8 = 1 };

struct NpyArray {
    std::vector<std::int64_t> shape;
    NpyDtype dtype = NpyDtype::Float32;
    std::variant<std::vector<float>, std::vector<std::uint8_t>> data;

    std::int64_t elements() const;
    const std::vector<float>& f32() const { return std::get<std::vector<float>>(data); }
    const std::vector<std::uint8_t>& u8() const {
        return std::get<std::vector<std::uint8_t>>(data);
    }
};

NpyArray read_npy(const std::filesystem::path& path);

void write_npy(const std::filesystem::path& path, const std::vector<std::int64_t>& shape,
               const std::vector<float>& values);
void write_npy(const std::filesystem::path& path, const std::vector<std::int64_t>& shape,
               const std::vector<std::uint8_t>& values);
void write_npy(const std::filesystem::path& path, const NpyArray& array);

} // namespace bts

#endif
