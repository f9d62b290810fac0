#include "duv/config.hpp"

#include <fstream>
#include <sstream>

#include "duv/errors.hpp"

namespace duv {

namespace {

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

int to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        int out = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + v + "'");
    }
}

double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        double out = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + v + "'");
    }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        std::uint64_t out = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError("config: bad unsigned integer for " + key + ": '" + v + "'");
    }
}

}  // namespace

std::map<std::string, std::string> parse_kv_text(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value");
        }
        std::string key = trim(s.substr(0, eq));
        std::string value = trim(s.substr(eq + 1));
        if (key.empty()) throw ConfigError("config: empty key on line " + std::to_string(lineno));
        if (kv.count(key)) throw ConfigError("config: duplicate key " + key);
        kv[key] = value;
    }
    return kv;
}

std::map<std::string, std::string> parse_kv_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("config: cannot read " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kv_text(buf.str());
}

const char* const kConfigSchema =
    "corpus.benign\t24\tbenign WSI count in the generated corpus\n"
    "corpus.malignant\t36\tmalignant WSI count in the generated corpus\n"
    "corpus.wsi_size\t128\tWSI side length in pixels\n"
    "corpus.patch_size\t32\tpatch side length in pixels\n"
    "diffusion.steps\t1000\tdiffusion step count T\n"
    "diffusion.beta_start\t1e-4\tfirst beta of the linear schedule\n"
    "diffusion.beta_end\t0.02\tlast beta of the linear schedule\n"
    "diffusion.schedule\tlinear\tnoise schedule: linear | cosine\n"
    "denoiser.mode\timage\tdenoiser backbone: image | vector\n"
    "denoiser.base_channels\t16\tchannels at the first level (hidden width in vector mode)\n"
    "denoiser.blocks\t2\tresidual blocks per level\n"
    "denoiser.levels\t2\tresolution levels\n"
    "denoiser.embed_dim\t32\ttime/class embedding width\n"
    "train.learning_rate\t1e-4\tSGD learning rate\n"
    "train.epochs\t1\tpasses over the training patches\n"
    "train.batch_size\t32\tminibatch size\n"
    "train.weight_vlb\t0\tweight of the variational term in the loss\n"
    "gbt.trees\t100\tboosting rounds\n"
    "gbt.depth\t3\tmaximum tree depth\n"
    "gbt.learning_rate\t0.1\tboosting shrinkage\n"
    "gbt.lambda\t1.0\tleaf L2 regularization\n"
    "features\tstats\tpatch features: stats | denoiser-encoder\n"
    "augment.mode\tnone\taugmentation arm: none | affine | diffusion\n"
    "augment.count\t1000\ttotal synthesized patches (diffusion arm, split per class)\n"
    "augment.multiplier\t3\tcopies per real patch (affine arm)\n"
    "fusion.threshold\t0.25\timportance cutoff for patch votes\n"
    "importance.kind\tuniform\timportance provider: uniform | classifier-saliency | file\n"
    "importance.csv\t\tsidecar CSV path when importance.kind=file\n"
    "cv.folds\t5\tcross-validation folds k\n"
    "cv.repeats\t10\tindependent cross-validation repeats\n"
    "cv.real_fraction\t1.0\tfraction of real training patches kept per class\n"
    "seed\t0\tmaster random seed\n"
    "workers\t1\tworker threads for independent (repeat, fold) jobs\n"
    "out\tout\toutput directory\n";

RunConfig RunConfig::from_kv(const std::map<std::string, std::string>& kv) {
    RunConfig c;
    for (const auto& [key, v] : kv) {
        if (key == "corpus.benign") c.corpus_benign = to_int(key, v);
        else if (key == "corpus.malignant") c.corpus_malignant = to_int(key, v);
        else if (key == "corpus.wsi_size") c.wsi_size = to_int(key, v);
        else if (key == "corpus.patch_size") c.patch_size = to_int(key, v);
        else if (key == "diffusion.steps") c.diffusion.steps = to_int(key, v);
        else if (key == "diffusion.beta_start") c.diffusion.beta_start = to_double(key, v);
        else if (key == "diffusion.beta_end") c.diffusion.beta_end = to_double(key, v);
        else if (key == "diffusion.schedule") {
            if (v == "linear") c.diffusion.schedule_kind = ScheduleKind::kLinear;
            else if (v == "cosine") c.diffusion.schedule_kind = ScheduleKind::kCosine;
            else throw ConfigError("config: unknown schedule '" + v + "'");
        } else if (key == "denoiser.mode") {
            if (v == "image") c.denoiser.mode = DenoiserMode::kImage;
            else if (v == "vector") c.denoiser.mode = DenoiserMode::kVector;
            else throw ConfigError("config: unknown denoiser mode '" + v + "'");
        } else if (key == "denoiser.base_channels") c.denoiser.base_channels = to_int(key, v);
        else if (key == "denoiser.blocks") c.denoiser.blocks_per_level = to_int(key, v);
        else if (key == "denoiser.levels") c.denoiser.levels = to_int(key, v);
        else if (key == "denoiser.embed_dim") c.denoiser.embed_dim = to_int(key, v);
        else if (key == "train.learning_rate") c.train.learning_rate = to_double(key, v);
        else if (key == "train.epochs") c.train.epochs = to_int(key, v);
        else if (key == "train.batch_size") c.train.batch_size = to_int(key, v);
        else if (key == "train.weight_vlb") c.train.weight_vlb = to_double(key, v);
        else if (key == "gbt.trees") c.gbt.n_trees = to_int(key, v);
        else if (key == "gbt.depth") c.gbt.max_depth = to_int(key, v);
        else if (key == "gbt.learning_rate") c.gbt.learning_rate = to_double(key, v);
        else if (key == "gbt.lambda") c.gbt.lambda = to_double(key, v);
        else if (key == "features") {
            if (v == "stats") c.features = FeatureKind::kStats;
            else if (v == "denoiser-encoder") c.features = FeatureKind::kDenoiserEncoder;
            else throw ConfigError("config: unknown features '" + v + "'");
        } else if (key == "augment.mode") c.augment = augment_from_name(v);
        else if (key == "augment.count") c.augment_count = to_int(key, v);
        else if (key == "augment.multiplier") c.affine_multiplier = to_int(key, v);
        else if (key == "fusion.threshold") c.fusion_threshold = to_double(key, v);
        else if (key == "importance.kind") c.importance = importance_from_name(v);
        else if (key == "importance.csv") c.importance_csv = v;
        else if (key == "cv.folds") c.cv_folds = to_int(key, v);
        else if (key == "cv.repeats") c.cv_repeats = to_int(key, v);
        else if (key == "cv.real_fraction") c.real_fraction = to_double(key, v);
        else if (key == "seed") c.seed = to_u64(key, v);
        else if (key == "workers") c.workers = to_int(key, v);
        else if (key == "out") c.out_dir = v;
        else throw ConfigError("config: unknown key '" + key + "'");
    }
    return c;
}

RunConfig RunConfig::load(const std::string& path) { return from_kv(parse_kv_file(path)); }

void RunConfig::validate() const {
    if (corpus_benign < 1 || corpus_malignant < 1) {
        throw ConfigError("corpus class counts must be >= 1");
    }
    if (wsi_size < 1 || patch_size < 1 || patch_size > wsi_size) {
        throw ConfigError("need 1 <= patch_size <= wsi_size");
    }
    diffusion.validate();
    train.validate();
    gbt.validate();
    resolved_arch().validate();
    if (fusion_threshold < 0.0 || fusion_threshold > 1.0) {
        throw ConfigError("fusion.threshold must lie in [0,1]");
    }
    if (cv_folds < 2 || cv_repeats < 1) throw ConfigError("need cv.folds >= 2, cv.repeats >= 1");
    if (real_fraction <= 0.0 || real_fraction > 1.0) {
        throw ConfigError("cv.real_fraction must lie in (0,1]");
    }
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (out_dir.empty()) throw ConfigError("out must not be empty");
}

DenoiserArch RunConfig::resolved_arch() const {
    DenoiserArch arch = denoiser;
    if (arch.input_shape.empty()) {
        arch.input_shape = arch.mode == DenoiserMode::kVector
                               ? std::vector<int>{3 * patch_size * patch_size}
                               : std::vector<int>{3, patch_size, patch_size};
    }
    return arch;
}

CvConfig RunConfig::cv_config(AugmentKind mode) const {
    CvConfig cv;
    cv.folds = cv_folds;
    cv.repeats = cv_repeats;
    cv.seed = seed;
    cv.patch_size = patch_size;
    cv.real_fraction = real_fraction;
    cv.fusion_threshold = fusion_threshold;
    cv.augment = mode;
    cv.affine_multiplier = affine_multiplier;
    cv.n_synth = augment_count;
    cv.features = features;
    cv.gbt = gbt;
    cv.diffusion = diffusion;
    cv.denoiser_arch = resolved_arch();
    cv.denoiser_train = train;
    cv.importance = importance;
    cv.importance_csv = importance_csv;
    cv.workers = workers;
    return cv;
}

std::string RunConfig::to_kv() const {
    std::ostringstream out;
    out.precision(17);
    out << "augment.count=" << augment_count << '\n';
    out << "augment.mode=" << augment_name(augment) << '\n';
    out << "augment.multiplier=" << affine_multiplier << '\n';
    out << "corpus.benign=" << corpus_benign << '\n';
    out << "corpus.malignant=" << corpus_malignant << '\n';
    out << "corpus.patch_size=" << patch_size << '\n';
    out << "corpus.wsi_size=" << wsi_size << '\n';
    out << "cv.folds=" << cv_folds << '\n';
    out << "cv.real_fraction=" << real_fraction << '\n';
    out << "cv.repeats=" << cv_repeats << '\n';
    out << "denoiser.base_channels=" << denoiser.base_channels << '\n';
    out << "denoiser.blocks=" << denoiser.blocks_per_level << '\n';
    out << "denoiser.embed_dim=" << denoiser.embed_dim << '\n';
    out << "denoiser.levels=" << denoiser.levels << '\n';
    out << "denoiser.mode=" << (denoiser.mode == DenoiserMode::kImage ? "image" : "vector")
        << '\n';
    out << "diffusion.beta_end=" << diffusion.beta_end << '\n';
    out << "diffusion.beta_start=" << diffusion.beta_start << '\n';
    out << "diffusion.schedule="
        << (diffusion.schedule_kind == ScheduleKind::kLinear ? "linear" : "cosine") << '\n';
    out << "diffusion.steps=" << diffusion.steps << '\n';
    out << "features=" << (features == FeatureKind::kStats ? "stats" : "denoiser-encoder")
        << '\n';
    out << "fusion.threshold=" << fusion_threshold << '\n';
    out << "gbt.depth=" << gbt.max_depth << '\n';
    out << "gbt.lambda=" << gbt.lambda << '\n';
    out << "gbt.learning_rate=" << gbt.learning_rate << '\n';
    out << "gbt.trees=" << gbt.n_trees << '\n';
    out << "importance.csv=" << importance_csv << '\n';
    out << "importance.kind=" << importance_name(importance) << '\n';
    out << "out=" << out_dir << '\n';
    out << "seed=" << seed << '\n';
    out << "train.batch_size=" << train.batch_size << '\n';
    out << "train.epochs=" << train.epochs << '\n';
    out << "train.learning_rate=" << train.learning_rate << '\n';
    out << "train.weight_vlb=" << train.weight_vlb << '\n';
    out << "workers=" << workers << '\n';
    return out.str();
}

}  // namespace duv
