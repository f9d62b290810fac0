#include "duv/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "duv/errors.hpp"
#include "json.hpp"

namespace duv {

namespace {

void channel_stats(const double* p, int n, double& mean, double& var) {
    double s = 0, s2 = 0;
    for (int i = 0; i < n; ++i) {
        s += p[i];
        s2 += p[i] * p[i];
    }
    mean = s / n;
    var = s2 / n - mean * mean;
}

}  // namespace

std::vector<double> extract_features(const Patch& patch, FeatureKind kind,
                                     const DenoiserModel* encoder) {
    if (kind == FeatureKind::kDenoiserEncoder) {
        if (!encoder) throw ConfigError("denoiser-encoder features need a trained model");
        Tensor input = encoder->arch().mode == DenoiserMode::kVector ? flatten_patch(patch.pixels)
                                                                     : patch.pixels;
        return encoder->encode(input);
    }
    if (kind != FeatureKind::kStats) throw ConfigError("unknown feature kind");

    int s = patch.pixels.shape[1];
    int n = s * s;
    std::vector<double> f;
    f.reserve(32);
    for (int ch = 0; ch < 3; ++ch) {
        const double* p = patch.pixels.data.data() + static_cast<std::size_t>(ch) * n;
        double mean, var;
        channel_stats(p, n, mean, var);
        f.push_back(mean);
        f.push_back(var);
        double hist[8] = {0};
        for (int i = 0; i < n; ++i) {
            int bin = std::min(7, static_cast<int>(p[i] * 8.0));
            hist[bin] += 1.0 / n;
        }
        f.insert(f.end(), hist, hist + 8);
    }
    // central-difference gradient magnitude on the channel-mean image;
    // central differences keep the feature exactly flip/rotation invariant
    std::vector<double> gray(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        gray[static_cast<std::size_t>(i)] =
            (patch.pixels.data[i] + patch.pixels.data[n + i] + patch.pixels.data[2 * n + i]) / 3.0;
    }
    double gsum = 0, gsum2 = 0;
    int gcount = 0;
    for (int y = 1; y + 1 < s; ++y) {
        for (int x = 1; x + 1 < s; ++x) {
            double gx = (gray[static_cast<std::size_t>(y) * s + x + 1] -
                         gray[static_cast<std::size_t>(y) * s + x - 1]) /
                        2.0;
            double gy = (gray[static_cast<std::size_t>(y + 1) * s + x] -
                         gray[static_cast<std::size_t>(y - 1) * s + x]) /
                        2.0;
            double mag = std::sqrt(gx * gx + gy * gy);
            gsum += mag;
            gsum2 += mag * mag;
            ++gcount;
        }
    }
    double gmean = gcount > 0 ? gsum / gcount : 0.0;
    double gvar = gcount > 0 ? gsum2 / gcount - gmean * gmean : 0.0;
    f.push_back(gmean);
    f.push_back(gvar);
    return f;
}

void GbtConfig::validate() const {
    if (n_trees < 0) throw ConfigError("n_trees must be >= 0");
    if (max_depth < 1) throw ConfigError("max_depth must be >= 1");
    if (learning_rate <= 0) throw ConfigError("learning_rate must be > 0");
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
}

double RegressionTree::predict(const std::vector<double>& x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].leaf) {
        const TreeNode& node = nodes[static_cast<std::size_t>(i)];
        if (node.feature >= static_cast<int>(x.size())) {
            throw ContractError("feature dimension smaller than tree expects");
        }
        i = x[static_cast<std::size_t>(node.feature)] >= node.threshold ? node.right : node.left;
    }
    return nodes[static_cast<std::size_t>(i)].value;
}

double GbtModel::score(const std::vector<double>& x) const {
    double s = cfg.base_score;
    for (const RegressionTree& t : trees) s += cfg.learning_rate * t.predict(x);
    return s;
}

int GbtModel::predict(const std::vector<double>& x) const {
    // tie at exactly 0 resolves to malignant
    return score(x) >= 0.0 ? +1 : -1;
}

namespace {

struct SplitChoice {
    bool found = false;
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
};

double leaf_weight(double g, double h, double lambda) { return -g / (h + lambda); }

double half_score(double g, double h, double lambda) { return g * g / (h + lambda); }

// Greedy exact split search. Candidates are midpoints between consecutive
// distinct feature values; ties in gain resolve to the lowest feature
// index, then the lowest threshold (scan order guarantees both).
SplitChoice best_split(const std::vector<std::vector<double>>& x, const std::vector<double>& grad,
                       const std::vector<double>& hess, const std::vector<int>& rows,
                       double lambda) {
    SplitChoice best;
    if (rows.size() < 2) return best;
    double g_total = 0, h_total = 0;
    for (int r : rows) {
        g_total += grad[static_cast<std::size_t>(r)];
        h_total += hess[static_cast<std::size_t>(r)];
    }
    double parent = half_score(g_total, h_total, lambda);
    std::size_t dim = x[0].size();
    std::vector<int> order(rows);
    for (std::size_t feat = 0; feat < dim; ++feat) {
        std::sort(order.begin(), order.end(), [&](int a, int b) {
            double va = x[static_cast<std::size_t>(a)][feat];
            double vb = x[static_cast<std::size_t>(b)][feat];
            return va < vb || (va == vb && a < b);
        });
        double g_left = 0, h_left = 0;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            int r = order[i];
            g_left += grad[static_cast<std::size_t>(r)];
            h_left += hess[static_cast<std::size_t>(r)];
            double v = x[static_cast<std::size_t>(r)][feat];
            double v_next = x[static_cast<std::size_t>(order[i + 1])][feat];
            if (v == v_next) continue;
            double gain = 0.5 * (half_score(g_left, h_left, lambda) +
                                 half_score(g_total - g_left, h_total - h_left, lambda) - parent);
            if (gain > best.gain + 1e-12) {
                best.found = true;
                best.feature = static_cast<int>(feat);
                best.threshold = (v + v_next) / 2.0;
                best.gain = gain;
            }
        }
    }
    return best;
}

int build_node(RegressionTree& tree, const std::vector<std::vector<double>>& x,
               const std::vector<double>& grad, const std::vector<double>& hess,
               const std::vector<int>& rows, int depth, const GbtConfig& cfg) {
    SplitChoice split;
    if (depth < cfg.max_depth) split = best_split(x, grad, hess, rows, cfg.lambda);
    int idx = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (!split.found) {
        double g = 0, h = 0;
        for (int r : rows) {
            g += grad[static_cast<std::size_t>(r)];
            h += hess[static_cast<std::size_t>(r)];
        }
        tree.nodes[static_cast<std::size_t>(idx)].value = leaf_weight(g, h, cfg.lambda);
        return idx;
    }
    std::vector<int> left_rows, right_rows;
    for (int r : rows) {
        if (x[static_cast<std::size_t>(r)][static_cast<std::size_t>(split.feature)] >=
            split.threshold) {
            right_rows.push_back(r);
        } else {
            left_rows.push_back(r);
        }
    }
    tree.nodes[static_cast<std::size_t>(idx)].leaf = false;
    tree.nodes[static_cast<std::size_t>(idx)].feature = split.feature;
    tree.nodes[static_cast<std::size_t>(idx)].threshold = split.threshold;
    int left = build_node(tree, x, grad, hess, left_rows, depth + 1, cfg);
    int right = build_node(tree, x, grad, hess, right_rows, depth + 1, cfg);
    tree.nodes[static_cast<std::size_t>(idx)].left = left;
    tree.nodes[static_cast<std::size_t>(idx)].right = right;
    return idx;
}

}  // namespace

GbtModel gbt_train(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                   const GbtConfig& cfg) {
    cfg.validate();
    if (x.size() != y.size() || x.size() < 2) {
        throw ContractError("gbt_train: need |X| == |y| >= 2");
    }
    bool has_pos = false, has_neg = false;
    for (int label : y) {
        if (label == +1) has_pos = true;
        else if (label == -1) has_neg = true;
        else throw ContractError("gbt_train: labels must be -1 or +1");
    }
    if (!has_pos || !has_neg) throw ContractError("gbt_train: both classes must be present");
    std::size_t dim = x[0].size();
    for (const auto& row : x) {
        if (row.size() != dim) throw DimensionError("gbt_train: ragged feature matrix");
    }

    GbtModel model;
    model.cfg = cfg;
    std::vector<double> score(x.size(), cfg.base_score);
    std::vector<double> grad(x.size()), hess(x.size());
    std::vector<int> all(x.size());
    std::iota(all.begin(), all.end(), 0);
    for (int round = 0; round < cfg.n_trees; ++round) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            double p = 1.0 / (1.0 + std::exp(-score[i]));
            double target = y[i] > 0 ? 1.0 : 0.0;
            grad[i] = p - target;
            hess[i] = p * (1.0 - p);
        }
        RegressionTree tree;
        build_node(tree, x, grad, hess, all, 0, cfg);
        for (std::size_t i = 0; i < x.size(); ++i) {
            score[i] += cfg.learning_rate * tree.predict(x[i]);
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

double gbt_logistic_loss(const GbtModel& model, const std::vector<std::vector<double>>& x,
                         const std::vector<int>& y) {
    double loss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        double margin = (y[i] > 0 ? 1.0 : -1.0) * model.score(x[i]);
        loss += std::log1p(std::exp(-margin));
    }
    return loss / static_cast<double>(x.size());
}

void GbtModel::save_json(const std::string& path) const {
    nlohmann::json j;
    j["format"] = "duv-gbt-v1";
    j["n_trees"] = cfg.n_trees;
    j["max_depth"] = cfg.max_depth;
    j["learning_rate"] = cfg.learning_rate;
    j["lambda"] = cfg.lambda;
    j["base_score"] = cfg.base_score;
    nlohmann::json jtrees = nlohmann::json::array();
    for (const RegressionTree& t : trees) {
        nlohmann::json jt = nlohmann::json::array();
        for (const TreeNode& n : t.nodes) {
            jt.push_back({{"leaf", n.leaf},
                          {"feature", n.feature},
                          {"threshold", n.threshold},
                          {"left", n.left},
                          {"right", n.right},
                          {"value", n.value}});
        }
        jtrees.push_back(std::move(jt));
    }
    j["trees"] = std::move(jtrees);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write model: " + path);
    out << j.dump() << '\n';
}

GbtModel GbtModel::load_json(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read model: " + path);
    nlohmann::json j;
    in >> j;
    if (j.value("format", "") != "duv-gbt-v1") throw FormatError("unknown model format in " + path);
    GbtModel model;
    model.cfg.n_trees = j.at("n_trees").get<int>();
    model.cfg.max_depth = j.at("max_depth").get<int>();
    model.cfg.learning_rate = j.at("learning_rate").get<double>();
    model.cfg.lambda = j.at("lambda").get<double>();
    model.cfg.base_score = j.at("base_score").get<double>();
    for (const auto& jt : j.at("trees")) {
        RegressionTree tree;
        for (const auto& jn : jt) {
            TreeNode n;
            n.leaf = jn.at("leaf").get<bool>();
            n.feature = jn.at("feature").get<int>();
            n.threshold = jn.at("threshold").get<double>();
            n.left = jn.at("left").get<int>();
            n.right = jn.at("right").get<int>();
            n.value = jn.at("value").get<double>();
            tree.nodes.push_back(n);
        }
        model.trees.push_back(std::move(tree));
    }
    return model;
}

void write_feature_csv(const std::vector<std::vector<double>>& x, const std::vector<int>& y,
                       const std::string& path) {
    if (x.size() != y.size()) throw ContractError("feature csv: |X| != |y|");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write features: " + path);
    out.precision(17);
    for (std::size_t i = 0; i < x.size(); ++i) {
        out << y[i];
        for (double v : x[i]) out << ',' << v;
        out << '\n';
    }
}

}  // namespace duv
