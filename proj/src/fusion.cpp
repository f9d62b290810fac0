#include "duv/fusion.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "duv/errors.hpp"
#include "duv/rng.hpp"
#include "json.hpp"

namespace duv {

double patch_weight(double r, double threshold) {
    if (r < 0.0 || r > 1.0) throw ContractError("patch_weight: importance must lie in [0,1]");
    if (threshold < 0.0 || threshold > 1.0) {
        throw ContractError("patch_weight: threshold must lie in [0,1]");
    }
    return r < threshold ? 0.0 : r;
}

int fuse(const std::vector<int>& y, const std::vector<double>& w) {
    if (y.size() != w.size()) throw ContractError("fuse: label/weight length mismatch");
    if (y.empty()) throw ContractError("fuse: empty vote");
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != kBenign && y[i] != kMalignant) throw ContractError("fuse: label outside {-1,+1}");
        if (w[i] < 0.0) throw ContractError("fuse: negative weight");
        s += w[i] * y[i];
    }
    return s >= 0.0 ? kMalignant : kBenign;
}

std::string importance_name(ImportanceKind k) {
    switch (k) {
        case ImportanceKind::kUniform: return "uniform";
        case ImportanceKind::kSaliency: return "classifier-saliency";
        case ImportanceKind::kFile: return "file";
    }
    throw ConfigError("unknown importance kind");
}

ImportanceKind importance_from_name(const std::string& s) {
    if (s == "uniform") return ImportanceKind::kUniform;
    if (s == "classifier-saliency") return ImportanceKind::kSaliency;
    if (s == "file") return ImportanceKind::kFile;
    throw ConfigError("unknown importance kind: " + s);
}

std::vector<double> importance_uniform(std::size_t n) { return std::vector<double>(n, 1.0); }

std::vector<double> importance_saliency(const std::vector<double>& scores) {
    if (scores.empty()) throw ContractError("importance_saliency: no scores");
    std::vector<double> r(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) r[i] = std::abs(scores[i]);
    auto [lo_it, hi_it] = std::minmax_element(r.begin(), r.end());
    double lo = *lo_it, hi = *hi_it;
    if (hi == lo) return std::vector<double>(scores.size(), 1.0);
    for (double& v : r) v = (v - lo) / (hi - lo);
    return r;
}

void write_importance_csv(const std::vector<Patch>& patches, const std::vector<double>& r,
                          const std::string& path) {
    if (patches.size() != r.size()) throw ContractError("importance csv: length mismatch");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write importance sidecar: " + path);
    out.precision(17);
    out << "wsi_id,row,col,r\n";
    for (std::size_t i = 0; i < patches.size(); ++i) {
        out << patches[i].wsi_id << ',' << patches[i].row << ',' << patches[i].col << ',' << r[i]
            << '\n';
    }
}

std::vector<double> load_importance_csv(const std::vector<Patch>& patches,
                                        const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot read importance sidecar: " + path);
    std::string line;
    if (!std::getline(in, line) || line != "wsi_id,row,col,r") {
        throw FormatError("importance sidecar: bad header in " + path);
    }
    std::map<std::tuple<std::string, int, int>, double> table;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string id, row_s, col_s, r_s;
        if (!std::getline(ss, id, ',') || !std::getline(ss, row_s, ',') ||
            !std::getline(ss, col_s, ',') || !std::getline(ss, r_s)) {
            throw FormatError("importance sidecar: bad row '" + line + "'");
        }
        table[{id, std::stoi(row_s), std::stoi(col_s)}] = std::stod(r_s);
    }
    if (table.size() != patches.size()) {
        throw FormatError("importance sidecar: entry count does not match patch count");
    }
    std::vector<double> r;
    r.reserve(patches.size());
    for (const Patch& p : patches) {
        auto it = table.find({p.wsi_id, p.row, p.col});
        if (it == table.end()) {
            throw FormatError("importance sidecar: no entry for patch " + p.wsi_id);
        }
        r.push_back(it->second);
    }
    return r;
}

double Confusion::accuracy() const {
    if (total() == 0) throw ContractError("accuracy of an empty confusion");
    return static_cast<double>(tp + tn) / total();
}

std::optional<double> Confusion::sensitivity() const {
    if (tp + fn == 0) return std::nullopt;
    return static_cast<double>(tp) / (tp + fn);
}

std::optional<double> Confusion::specificity() const {
    if (tn + fp == 0) return std::nullopt;
    return static_cast<double>(tn) / (tn + fp);
}

Confusion compute_metrics(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size()) throw ContractError("compute_metrics: length mismatch");
    if (preds.empty()) throw ContractError("compute_metrics: empty input");
    Confusion c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if ((preds[i] != kBenign && preds[i] != kMalignant) ||
            (labels[i] != kBenign && labels[i] != kMalignant)) {
            throw ContractError("compute_metrics: labels must be -1 or +1");
        }
        if (labels[i] == kMalignant) {
            (preds[i] == kMalignant ? c.tp : c.fn)++;
        } else {
            (preds[i] == kBenign ? c.tn : c.fp)++;
        }
    }
    return c;
}

std::vector<Confusion> EvalReport::per_repeat() const {
    std::vector<Confusion> out(static_cast<std::size_t>(repeats));
    for (const FoldEntry& e : entries) {
        Confusion& c = out[static_cast<std::size_t>(e.repeat)];
        c.tp += e.confusion.tp;
        c.tn += e.confusion.tn;
        c.fp += e.confusion.fp;
        c.fn += e.confusion.fn;
    }
    return out;
}

namespace {

Stat stat_of(const std::vector<double>& v) {
    double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    double sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size() - 1)) : 0.0;
    return {mean, sd};
}

}  // namespace

Stat EvalReport::accuracy_stat() const {
    std::vector<double> v;
    for (const Confusion& c : per_repeat()) v.push_back(c.accuracy());
    if (v.empty()) throw ContractError("accuracy over an empty report");
    return stat_of(v);
}

std::optional<Stat> EvalReport::sensitivity_stat() const {
    std::vector<double> v;
    for (const Confusion& c : per_repeat()) {
        if (auto s = c.sensitivity()) v.push_back(*s);
    }
    if (v.empty()) return std::nullopt;
    return stat_of(v);
}

std::optional<Stat> EvalReport::specificity_stat() const {
    std::vector<double> v;
    for (const Confusion& c : per_repeat()) {
        if (auto s = c.specificity()) v.push_back(*s);
    }
    if (v.empty()) return std::nullopt;
    return stat_of(v);
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    j["repeats"] = repeats;
    j["folds"] = folds;
    nlohmann::json jentries = nlohmann::json::array();
    for (const FoldEntry& e : entries) {
        jentries.push_back({{"repeat", e.repeat},
                            {"fold", e.fold},
                            {"tp", e.confusion.tp},
                            {"tn", e.confusion.tn},
                            {"fp", e.confusion.fp},
                            {"fn", e.confusion.fn}});
    }
    j["entries"] = std::move(jentries);
    Stat acc = accuracy_stat();
    j["accuracy"] = {{"mean", acc.mean}, {"std", acc.stddev}};
    if (auto s = sensitivity_stat()) {
        j["sensitivity"] = {{"mean", s->mean}, {"std", s->stddev}};
    } else {
        j["sensitivity"] = nullptr;
    }
    if (auto s = specificity_stat()) {
        j["specificity"] = {{"mean", s->mean}, {"std", s->stddev}};
    } else {
        j["specificity"] = nullptr;
    }
    return j.dump(2);
}

EvalReport EvalReport::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    EvalReport r;
    r.repeats = j.at("repeats").get<int>();
    r.folds = j.at("folds").get<int>();
    for (const auto& je : j.at("entries")) {
        FoldEntry e;
        e.repeat = je.at("repeat").get<int>();
        e.fold = je.at("fold").get<int>();
        e.confusion.tp = je.at("tp").get<int>();
        e.confusion.tn = je.at("tn").get<int>();
        e.confusion.fp = je.at("fp").get<int>();
        e.confusion.fn = je.at("fn").get<int>();
        r.entries.push_back(e);
    }
    return r;
}

void write_table_csv(const std::vector<std::pair<std::string, EvalReport>>& columns,
                     const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot write summary table: " + path);
    auto cell = [](const std::optional<Stat>& s) {
        if (!s) return std::string("n/a");
        char buf[64];
        std::snprintf(buf, sizeof buf, "%.4f +/- %.4f", s->mean, s->stddev);
        return std::string(buf);
    };
    out << "metric";
    for (const auto& [name, report] : columns) out << ',' << name;
    out << '\n';
    const char* metrics[] = {"accuracy", "sensitivity", "specificity"};
    for (int m = 0; m < 3; ++m) {
        out << metrics[m];
        for (const auto& [name, report] : columns) {
            std::optional<Stat> s;
            if (m == 0) s = report.accuracy_stat();
            else if (m == 1) s = report.sensitivity_stat();
            else s = report.specificity_stat();
            out << ',' << cell(s);
        }
        out << '\n';
    }
}

std::string augment_name(AugmentKind k) {
    switch (k) {
        case AugmentKind::kNone: return "none";
        case AugmentKind::kAffine: return "affine";
        case AugmentKind::kDiffusion: return "diffusion";
    }
    throw ConfigError("unknown augmentation kind");
}

AugmentKind augment_from_name(const std::string& s) {
    if (s == "none") return AugmentKind::kNone;
    if (s == "affine") return AugmentKind::kAffine;
    if (s == "diffusion") return AugmentKind::kDiffusion;
    throw ConfigError("unknown augmentation kind: " + s);
}

void CvConfig::validate() const {
    if (folds < 2) throw ConfigError("folds must be >= 2");
    if (repeats < 1) throw ConfigError("repeats must be >= 1");
    if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
    if (real_fraction <= 0.0 || real_fraction > 1.0) {
        throw ConfigError("real_fraction must lie in (0,1]");
    }
    if (fusion_threshold < 0.0 || fusion_threshold > 1.0) {
        throw ConfigError("fusion_threshold must lie in [0,1]");
    }
    if (affine_multiplier < 1) throw ConfigError("affine_multiplier must be >= 1");
    if (n_synth < 2 || n_synth % 2 != 0) throw ConfigError("n_synth must be even and >= 2");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    gbt.validate();
}

namespace {

// Stratified assignment: each class is shuffled and dealt floor(n/k) or
// ceil(n/k) per fold; each class places its remainder on the folds with the
// smallest running totals, so fold sizes also differ by at most one.
std::vector<int> stratified_folds(const Corpus& corpus, int k, Rng& rng) {
    std::vector<std::size_t> benign, malignant;
    for (std::size_t i = 0; i < corpus.wsis.size(); ++i) {
        (corpus.wsis[i].label == kBenign ? benign : malignant).push_back(i);
    }
    if (static_cast<int>(benign.size()) < k || static_cast<int>(malignant.size()) < k) {
        throw ContractError("cross_validate: need at least k WSIs per class");
    }
    std::vector<int> fold(corpus.wsis.size(), -1);
    std::vector<int> totals(static_cast<std::size_t>(k), 0);
    for (auto* group : {&benign, &malignant}) {
        std::shuffle(group->begin(), group->end(), rng.engine());
        int n = static_cast<int>(group->size());
        std::vector<int> quota(static_cast<std::size_t>(k), n / k);
        std::vector<int> order(static_cast<std::size_t>(k));
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            return totals[static_cast<std::size_t>(a)] < totals[static_cast<std::size_t>(b)];
        });
        for (int i = 0; i < n % k; ++i) quota[static_cast<std::size_t>(order[i])]++;
        std::size_t cursor = 0;
        for (int f = 0; f < k; ++f) {
            for (int q = 0; q < quota[static_cast<std::size_t>(f)]; ++q) {
                fold[(*group)[cursor++]] = f;
            }
            totals[static_cast<std::size_t>(f)] += quota[static_cast<std::size_t>(f)];
        }
    }
    return fold;
}

// Deterministic per-class subsample keeping ceil(fraction * n) patches.
std::vector<Patch> retain_fraction(std::vector<Patch> patches, double fraction, Rng& rng) {
    if (fraction >= 1.0) return patches;
    std::vector<std::size_t> benign, malignant;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        (patches[i].label == kBenign ? benign : malignant).push_back(i);
    }
    std::vector<Patch> kept;
    for (auto* group : {&benign, &malignant}) {
        std::shuffle(group->begin(), group->end(), rng.engine());
        std::size_t keep = static_cast<std::size_t>(
            std::ceil(fraction * static_cast<double>(group->size())));
        keep = std::max<std::size_t>(keep, group->empty() ? 0 : 1);
        group->resize(std::min(keep, group->size()));
        std::sort(group->begin(), group->end());
        for (std::size_t i : *group) kept.push_back(std::move(patches[i]));
    }
    return kept;
}

struct FoldJob {
    int repeat;
    int fold;
    const std::vector<int>* fold_of;  // per-WSI fold id for this repeat
};

Confusion run_fold(const Corpus& corpus, const CvConfig& cfg, const FoldJob& job,
                   const std::function<double(const Patch&)>& scorer_override) {
    Rng rng = Rng::derive(cfg.seed, 0xF01D, static_cast<std::uint64_t>(job.repeat),
                          static_cast<std::uint64_t>(job.fold));

    std::vector<Patch> train_patches;
    std::vector<const WsiRecord*> test_wsis;
    std::vector<std::string> train_ids;
    for (std::size_t i = 0; i < corpus.wsis.size(); ++i) {
        if ((*job.fold_of)[i] == job.fold) {
            test_wsis.push_back(&corpus.wsis[i]);
        } else {
            auto tiled = tile_wsi(corpus.wsis[i], cfg.patch_size);
            train_patches.insert(train_patches.end(), tiled.begin(), tiled.end());
            train_ids.push_back(corpus.wsis[i].id);
        }
    }
    train_patches = retain_fraction(std::move(train_patches), cfg.real_fraction, rng);

    DenoiserModel* encoder = nullptr;
    std::unique_ptr<DenoiserModel> denoiser;
    NoiseSchedule sched;
    if (cfg.augment == AugmentKind::kDiffusion || cfg.features == FeatureKind::kDenoiserEncoder) {
        sched = make_schedule(cfg.diffusion);
        DenoiserArch arch = cfg.denoiser_arch;
        if (arch.input_shape.empty()) {
            arch.mode = DenoiserMode::kVector;
            arch.input_shape = {3 * cfg.patch_size * cfg.patch_size};
        }
        denoiser = std::make_unique<DenoiserModel>(
            arch, Rng::mix(cfg.seed, 0xD0, static_cast<std::uint64_t>(job.repeat),
                           static_cast<std::uint64_t>(job.fold)));
        std::vector<LabeledTensor> dataset;
        dataset.reserve(train_patches.size());
        for (const Patch& p : train_patches) {
            dataset.push_back({arch.mode == DenoiserMode::kVector ? flatten_patch(p.pixels)
                                                                  : p.pixels,
                               p.label == kBenign ? 0 : 1});
        }
        TrainConfig tc = cfg.denoiser_train;
        tc.seed = Rng::mix(cfg.seed, 0xD1, static_cast<std::uint64_t>(job.repeat),
                           static_cast<std::uint64_t>(job.fold));
        train_denoiser(*denoiser, dataset, tc, sched);
        encoder = denoiser.get();
    }

    if (cfg.augment == AugmentKind::kAffine) {
        auto extra = affine_augment(
            train_patches,
            Rng::mix(cfg.seed, 0xAF, static_cast<std::uint64_t>(job.repeat),
                     static_cast<std::uint64_t>(job.fold)),
            cfg.affine_multiplier);
        train_patches.insert(train_patches.end(), std::make_move_iterator(extra.begin()),
                             std::make_move_iterator(extra.end()));
    } else if (cfg.augment == AugmentKind::kDiffusion) {
        auto extra = diffusion_augment(
            *denoiser, sched, cfg.n_synth,
            Rng::mix(cfg.seed, 0x5A, static_cast<std::uint64_t>(job.repeat),
                     static_cast<std::uint64_t>(job.fold)),
            cfg.patch_size);
        train_patches.insert(train_patches.end(), std::make_move_iterator(extra.begin()),
                             std::make_move_iterator(extra.end()));
    }

    std::function<double(const Patch&)> scorer;
    GbtModel model;
    if (scorer_override) {
        scorer = scorer_override;
    } else {
        std::vector<std::vector<double>> x;
        std::vector<int> y;
        x.reserve(train_patches.size());
        for (const Patch& p : train_patches) {
            x.push_back(extract_features(p, cfg.features, encoder));
            y.push_back(p.label);
        }
        model = gbt_train(x, y, cfg.gbt);
        scorer = [&model, &cfg, encoder](const Patch& p) {
            return model.score(extract_features(p, cfg.features, encoder));
        };
    }

    std::vector<double> file_importance;
    std::vector<Patch> all_test_patches;
    if (cfg.importance == ImportanceKind::kFile) {
        for (const WsiRecord* wsi : test_wsis) {
            auto tiled = tile_wsi(*wsi, cfg.patch_size);
            all_test_patches.insert(all_test_patches.end(), tiled.begin(), tiled.end());
        }
    }

    std::vector<int> preds, truths;
    std::size_t sidecar_cursor = 0;
    for (const WsiRecord* wsi : test_wsis) {
        auto patches = tile_wsi(*wsi, cfg.patch_size);
        for (const Patch& p : patches) {
            // leakage guard: held-out folds must contain real patches from
            // held-out slides only
            if (p.origin != PatchOrigin::kReal ||
                std::find(train_ids.begin(), train_ids.end(), p.wsi_id) != train_ids.end()) {
                throw ContractError("cross_validate: augmentation leakage into test fold");
            }
        }
        std::vector<int> votes;
        std::vector<double> scores;
        for (const Patch& p : patches) {
            double s = scorer(p);
            scores.push_back(s);
            votes.push_back(s >= 0.0 ? kMalignant : kBenign);
        }
        std::vector<double> r;
        switch (cfg.importance) {
            case ImportanceKind::kUniform: r = importance_uniform(patches.size()); break;
            case ImportanceKind::kSaliency: r = importance_saliency(scores); break;
            case ImportanceKind::kFile: {
                if (file_importance.empty()) {
                    file_importance = load_importance_csv(all_test_patches, cfg.importance_csv);
                }
                r.assign(file_importance.begin() + static_cast<std::ptrdiff_t>(sidecar_cursor),
                         file_importance.begin() +
                             static_cast<std::ptrdiff_t>(sidecar_cursor + patches.size()));
                sidecar_cursor += patches.size();
                break;
            }
        }
        std::vector<double> w(r.size());
        for (std::size_t i = 0; i < r.size(); ++i) w[i] = patch_weight(r[i], cfg.fusion_threshold);
        preds.push_back(fuse(votes, w));
        truths.push_back(wsi->label);
    }
    return compute_metrics(preds, truths);
}

}  // namespace

EvalReport cross_validate(const Corpus& corpus, const CvConfig& cfg,
                          const std::function<double(const Patch&)>& scorer_override) {
    cfg.validate();
    if (cfg.importance == ImportanceKind::kFile && cfg.importance_csv.empty()) {
        throw ConfigError("file importance requires importance_csv");
    }

    // fold assignments drawn up front (cheap and serial) so workers only
    // handle independent jobs
    std::vector<std::vector<int>> fold_of(static_cast<std::size_t>(cfg.repeats));
    for (int r = 0; r < cfg.repeats; ++r) {
        Rng rng = Rng::derive(cfg.seed, 0x5F0, static_cast<std::uint64_t>(r));
        fold_of[static_cast<std::size_t>(r)] = stratified_folds(corpus, cfg.folds, rng);
    }

    std::vector<FoldJob> jobs;
    for (int r = 0; r < cfg.repeats; ++r) {
        for (int f = 0; f < cfg.folds; ++f) {
            jobs.push_back({r, f, &fold_of[static_cast<std::size_t>(r)]});
        }
    }

    std::vector<Confusion> results(jobs.size());
    std::exception_ptr failure;
    std::mutex failure_mutex;
    int n_workers = std::min<int>(cfg.workers, static_cast<int>(jobs.size()));
    if (n_workers <= 1) {
        for (std::size_t i = 0; i < jobs.size(); ++i) {
            results[i] = run_fold(corpus, cfg, jobs[i], scorer_override);
        }
    } else {
        std::atomic<std::size_t> next{0};
        auto work = [&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                try {
                    results[i] = run_fold(corpus, cfg, jobs[i], scorer_override);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int t = 0; t < n_workers; ++t) pool.emplace_back(work);
        for (std::thread& t : pool) t.join();
        if (failure) std::rethrow_exception(failure);
    }

    EvalReport report;
    report.repeats = cfg.repeats;
    report.folds = cfg.folds;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        report.entries.push_back({jobs[i].repeat, jobs[i].fold, results[i]});
    }
    return report;
}

}  // namespace duv
