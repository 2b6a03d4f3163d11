#include "bts/caseio.hpp"

#include <algorithm>

#include "bts/nifti.hpp"

namespace bts {

namespace fs = std::filesystem;

namespace {

// Accepts plain and gzipped variants, preferring .nii.gz.
std::optional<fs::path> find_nifti(const fs::path& dir, const std::string& stem) {
    fs::path gz = dir / (stem + ".nii.gz");
    if (fs::exists(gz)) return gz;
    fs::path plain = dir / (stem + ".nii");
    if (fs::exists(plain)) return plain;
    return std::nullopt;
}

} // namespace

void CaseBundle::validate() const {
    image.validate();
    if (seg) {
        seg->validate();
        if (!(seg->shape == image.shape()))
            throw ShapeError("CaseBundle '" + case_id + "': seg shape " + seg->shape.str() +
                             " does not match image shape " + image.shape().str());
        if (seg->spacing != image.spacing())
            throw ShapeError("CaseBundle '" + case_id + "': seg spacing differs from image");
    }
}

CaseBundle load_case(const fs::path& case_dir, const CaseNaming& naming) {
    if (!fs::is_directory(case_dir))
        throw IoError("load_case: not a directory: " + case_dir.string());
    CaseBundle bundle;
    bundle.case_id = case_dir.filename().string();

    for (int c = 0; c < NUM_MODALITIES; ++c) {
        std::string stem = bundle.case_id + "-" + naming.modality_suffixes[c];
        auto path = find_nifti(case_dir, stem);
        if (!path)
            throw IoError("load_case: missing modality file '" + stem + ".nii[.gz]' in " +
                          case_dir.string());
        bundle.image.channels[c] = read_nifti_volume(*path);
    }
    auto seg_path = find_nifti(case_dir, bundle.case_id + "-" + naming.seg_suffix);
    if (seg_path) bundle.seg = read_nifti_labels(*seg_path);

    bundle.validate();
    return bundle;
}

std::vector<std::string> list_cases(const fs::path& root, const CaseNaming& naming) {
    if (!fs::is_directory(root))
        throw IoError("list_cases: not a directory: " + root.string());
    std::vector<std::string> ids;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (!entry.is_directory()) continue;
        std::string id = entry.path().filename().string();
        bool complete = true;
        for (int c = 0; c < NUM_MODALITIES && complete; ++c)
            complete = find_nifti(entry.path(), id + "-" + naming.modality_suffixes[c]).has_value();
        if (complete) ids.push_back(id);
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

void write_case(const CaseBundle& bundle, const fs::path& case_dir, const CaseNaming& naming,
                bool compress) {
    bundle.validate();
    fs::create_directories(case_dir);
    std::string ext = compress ? ".nii.gz" : ".nii";
    for (int c = 0; c < NUM_MODALITIES; ++c) {
        fs::path p = case_dir / (bundle.case_id + "-" + naming.modality_suffixes[c] + ext);
        write_nifti(bundle.image.channels[c], p, compress);
    }
    if (bundle.seg) {
        fs::path p = case_dir / (bundle.case_id + "-" + naming.seg_suffix + ext);
        write_nifti(*bundle.seg, p, compress);
    }
}

} // namespace bts
