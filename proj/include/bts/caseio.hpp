#ifndef BTS_CASEIO_HPP
#define BTS_CASEIO_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "bts/volume.hpp"

namespace bts {

// BraTS 2023/2024 case layout: a directory per case holding
// {id}-t1n / {id}-t1c / {id}-t2w / {id}-t2f (+ optional {id}-seg)
// as .nii or .nii.gz. Suffixes are configurable.
struct CaseNaming {
    std::array<std::string, NUM_MODALITIES> modality_suffixes = {"t1n", "t1c", "t2w", "t2f"};
    std::string seg_suffix = "seg";
};

struct CaseBundle {
    std::string case_id;
    MultiModalImage image;
    std::optional<LabelMap> seg;

    void validate() const;
};

CaseBundle load_case(const std::filesystem::path& case_dir, const CaseNaming& naming = {});

// Sorted ids of all case directories under a dataset root.
std::vector<std::string> list_cases(const std::filesystem::path& root,
                                    const CaseNaming& naming = {});

void write_case(const CaseBundle& bundle, const std::filesystem::path& case_dir,
                const CaseNaming& naming = {}, bool compress = true);

} // namespace bts

#endif
