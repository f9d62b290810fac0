#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "duv/classifier.hpp"
#include "duv/diffusion.hpp"
#include "duv/patches.hpp"

namespace duv {

constexpr double kDefaultFusionThreshold = 0.25;

// Thresholded regional importance: 0 when r < threshold, else r.
double patch_weight(double r, double threshold = kDefaultFusionThreshold);

// Weighted majority vote over patch labels in {-1,+1}; the tie (weighted
// sum exactly 0) resolves to malignant (+1).
int fuse(const std::vector<int>& y, const std::vector<double>& w);

enum class ImportanceKind { kUniform, kSaliency, kFile };
std::string importance_name(ImportanceKind k);
ImportanceKind importance_from_name(const std::string& s);

std::vector<double> importance_uniform(std::size_t n);

// |score| per patch, min-max scaled to [0,1] across one WSI; a constant
// score profile maps to all ones so the WSI stays votable.
std::vector<double> importance_saliency(const std::vector<double>& scores);

// Sidecar CSV: wsi_id,row,col,r. Loading aligns rows to `patches` by
// (wsi_id,row,col); any missing or surplus entry is a format error.
void write_importance_csv(const std::vector<Patch>& patches, const std::vector<double>& r,
                          const std::string& path);
std::vector<double> load_importance_csv(const std::vector<Patch>& patches,
                                        const std::string& path);

struct Confusion {
    int tp = 0;
    int tn = 0;
    int fp = 0;
    int fn = 0;

    int total() const { return tp + tn + fp + fn; }
    double accuracy() const;
    std::optional<double> sensitivity() const;  // TP/(TP+FN), absent on 0/0
    std::optional<double> specificity() const;  // TN/(TN+FP), absent on 0/0
};

// Confusion counts with +1 (malignant) as the positive class.
Confusion compute_metrics(const std::vector<int>& preds, const std::vector<int>& labels);

struct Stat {
    double mean = 0.0;
    double stddev = 0.0;  // sample standard deviation across repeats
};

struct FoldEntry {
    int repeat = 0;
    int fold = 0;
    Confusion confusion;
};

struct EvalReport {
    int repeats = 0;
    int folds = 0;
    std::vector<FoldEntry> entries;

    // Confusion counts pooled over the folds of one repeat.
    std::vector<Confusion> per_repeat() const;
    Stat accuracy_stat() const;
    std::optional<Stat> sensitivity_stat() const;
    std::optional<Stat> specificity_stat() const;

    std::string to_json() const;
    static EvalReport from_json(const std::string& text);
};

// Summary table: one metric per row, one named report per column.
void write_table_csv(const std::vector<std::pair<std::string, EvalReport>>& columns,
                     const std::string& path);

enum class AugmentKind { kNone, kAffine, kDiffusion };
std::string augment_name(AugmentKind k);
AugmentKind augment_from_name(const std::string& s);

struct CvConfig {
    int folds = 5;
    int repeats = 10;
    std::uint64_t seed = 0;
    int patch_size = 32;
    double real_fraction = 1.0;  // fraction of real training patches kept
    double fusion_threshold = kDefaultFusionThreshold;

    AugmentKind augment = AugmentKind::kNone;
    int affine_multiplier = 3;
    int n_synth = 100;  // total synthesized patches, split evenly per class

    FeatureKind features = FeatureKind::kStats;
    GbtConfig gbt;

    // Diffusion arm: a fresh denoiser per (repeat, fold), trained on that
    // fold's training patches only.
    DiffusionConfig diffusion;
    DenoiserArch denoiser_arch;
    TrainConfig denoiser_train;

    ImportanceKind importance = ImportanceKind::kUniform;
    std::string importance_csv;

    int workers = 1;

    void validate() const;
};

// Repeated stratified WSI-level cross-validation. `scorer_override`, when
// set, replaces GBT training + scoring (used for oracle stubs in tests).
EvalReport cross_validate(const Corpus& corpus, const CvConfig& cfg,
                          const std::function<double(const Patch&)>& scorer_override = {});

}  // namespace duv
