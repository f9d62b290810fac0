#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duv/denoiser.hpp"
#include "duv/patches.hpp"

namespace duv {

enum class FeatureKind { kStats, kDenoiserEncoder };

// `stats`: per channel mean, variance and an 8-bin histogram, plus
// gradient-magnitude mean/variance (D = 32). `denoiser-encoder`: pooled
// deepest-level activations of a trained denoiser.
std::vector<double> extract_features(const Patch& patch, FeatureKind kind,
                                     const DenoiserModel* encoder = nullptr);

struct GbtConfig {
    int n_trees = 100;
    int max_depth = 3;
    double learning_rate = 0.1;
    double lambda = 1.0;
    double base_score = 0.0;  // logit

    void validate() const;
};

struct TreeNode {
    bool leaf = true;
    int feature = -1;
    double threshold = 0.0;
    int left = -1;   // children index into the tree's node list
    int right = -1;  // goes right when x[feature] >= threshold
    double value = 0.0;
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // node 0 is the root
    double predict(const std::vector<double>& x) const;
};

struct GbtModel {
    GbtConfig cfg;
    std::vector<RegressionTree> trees;

    // raw additive score (logit); class is +1 iff score >= 0
    double score(const std::vector<double>& x) const;
    int predict(const std::vector<double>& x) const;

    void save_json(const std::string& path) const;
    static GbtModel load_json(const std::string& path);
};

// Boosting on logistic loss with second-order leaf weights; labels are
// {-1,+1}. Deterministic: split ties break toward the lowest feature
// index, then the lowest threshold.
GbtModel gbt_train(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                   const GbtConfig& cfg);

// Mean logistic loss of the model's scores on (x, y).
double gbt_logistic_loss(const GbtModel& model, const std::vector<std::vector<double>>& x,
                         const std::vector<int>& y);

void write_feature_csv(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                       const std::string& path);

}  // namespace duv
