#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "duv/classifier.hpp"
#include "duv/denoiser.hpp"
#include "duv/diffusion.hpp"
#include "duv/fusion.hpp"

namespace duv {

// Flat key=value run configuration. Every experiment is reproducible from
// (config, seed) alone; see kConfigSchema for the documented keys.
struct RunConfig {
    // corpus
    int corpus_benign = 24;
    int corpus_malignant = 36;
    int wsi_size = 128;
    int patch_size = 32;

    DiffusionConfig diffusion;
    DenoiserArch denoiser;  // input_shape derived from patch_size when empty
    TrainConfig train;
    GbtConfig gbt;

    FeatureKind features = FeatureKind::kStats;

    AugmentKind augment = AugmentKind::kNone;
    int augment_count = 1000;     // diffusion: total synthesized patches
    int affine_multiplier = 3;    // affine: copies per real patch

    double fusion_threshold = kDefaultFusionThreshold;
    ImportanceKind importance = ImportanceKind::kUniform;
    std::string importance_csv;

    int cv_folds = 5;
    int cv_repeats = 10;
    double real_fraction = 1.0;

    std::uint64_t seed = 0;
    int workers = 1;
    std::string out_dir = "out";

    void validate() const;

    // Resolved helpers.
    DenoiserArch resolved_arch() const;
    CvConfig cv_config(AugmentKind mode) const;

    // Canonical serialization: sorted key=value lines, one per key.
    std::string to_kv() const;

    static RunConfig from_kv(const std::map<std::string, std::string>& kv);
    static RunConfig load(const std::string& path);
};

// Parse "key=value" lines ('#' comments, blank lines ignored).
std::map<std::string, std::string> parse_kv_file(const std::string& path);
std::map<std::string, std::string> parse_kv_text(const std::string& text);

// One line per key: "name<TAB>default<TAB>description".
extern const char* const kConfigSchema;

}  // namespace duv
