#ifndef BTS_NIFTI_HPP
#define BTS_NIFTI_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "bts/volume.hpp"

namespace bts {

// NIfTI-1 single-file (.nii / .nii.gz) reader and writer covering the subset
// BraTS distributions use: little-endian, 3D (or 4D with nt==1), datatypes
// uint8 / int16 / float32. Anything else is rejected with a ParseError
// rather than coerced. Writers emit vox_offset=352, scl_slope=1,
// scl_inter=0, magic "n+1".

// As Volume3: int16 and uint8 payloads are widened to float32.
Volume3 read_nifti_volume(const std::filesystem::path& path);

// As LabelMap: requires a uint8 payload with values in {0,1,2,3}.
LabelMap read_nifti_labels(const std::filesystem::path& path);

// compress selects gzip output; a path ending in ".gz" also enables it.
void write_nifti(const Volume3& vol, const std::filesystem::path& path, bool compress = false);
void write_nifti(const LabelMap& labels, const std::filesystem::path& path,
                 bool compress = false);

// RFC 1952 stream helpers (zlib-backed), exposed for tests.
std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& raw);
std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& gz);
bool looks_gzipped(const std::vector<std::uint8_t>& bytes);

} // namespace bts

#endif
