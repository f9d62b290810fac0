#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "duv/checkpoint.hpp"
#include "duv/config.hpp"
#include "duv/errors.hpp"
#include "duv/image_io.hpp"
#include "duv/rng.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace duv;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::string out_override;
    bool seed_set = false;
    std::uint64_t seed = 0;
    int workers = 0;  // 0 = not overridden
};

void add_global_options(CLI::App* cmd, GlobalArgs& g) {
    cmd->add_option("--config", g.config_path, "run configuration file (key=value lines)");
    cmd->add_option("--seed", g.seed, "master random seed override")
        ->each([&g](const std::string&) { g.seed_set = true; });
    cmd->add_option("--workers", g.workers, "worker threads for independent jobs");
    cmd->add_option("--out", g.out_override, "output directory override");
}

RunConfig resolve_config(const GlobalArgs& g) {
    RunConfig cfg = g.config_path.empty() ? RunConfig{} : RunConfig::load(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    if (g.workers > 0) cfg.workers = g.workers;
    if (!g.out_override.empty()) cfg.out_dir = g.out_override;
    cfg.validate();
    return cfg;
}

// Provenance record plus a copy of the resolved config; both byte-stable
// given identical inputs so reruns can be diffed.
void write_provenance(const RunConfig& cfg, const std::string& command) {
    fs::create_directories(cfg.out_dir);
    std::ofstream kv(fs::path(cfg.out_dir) / "config.kv", std::ios::binary);
    kv << cfg.to_kv();
    nlohmann::json j;
    j["command"] = command;
    j["seed"] = cfg.seed;
    j["workers"] = cfg.workers;
    j["out"] = cfg.out_dir;
    j["config"] = nlohmann::json::parse("{}");
    for (const auto& [key, value] : parse_kv_text(cfg.to_kv())) j["config"][key] = value;
    std::ofstream run(fs::path(cfg.out_dir) / "run.json", std::ios::binary);
    run << j.dump(2) << '\n';
}

std::string corpus_dir(const RunConfig& cfg) {
    return (fs::path(cfg.out_dir) / "corpus").string();
}

Corpus load_corpus_checked(const RunConfig& cfg) {
    std::string dir = corpus_dir(cfg);
    if (!fs::exists(dir)) {
        throw ConfigError("no corpus at " + dir + " (run gen-corpus first)");
    }
    return load_corpus(dir);
}

std::vector<Patch> tile_corpus(const Corpus& corpus, int patch_size) {
    std::vector<Patch> patches;
    for (const WsiRecord& wsi : corpus.wsis) {
        auto tiled = tile_wsi(wsi, patch_size);
        patches.insert(patches.end(), std::make_move_iterator(tiled.begin()),
                       std::make_move_iterator(tiled.end()));
    }
    return patches;
}

void write_patches(const std::vector<Patch>& patches, const fs::path& dir,
                   const std::string& manifest_name, const RunConfig& cfg) {
    fs::create_directories(dir);
    std::vector<std::string> paths;
    char name[160];
    for (const Patch& p : patches) {
        std::snprintf(name, sizeof name, "%s_%03d_%03d_%s.ppm", p.wsi_id.c_str(), p.row, p.col,
                      origin_name(p.origin).c_str());
        fs::path file = dir / name;
        write_ppm(p.pixels, file.string());
        paths.push_back(fs::relative(file, cfg.out_dir).string());
    }
    write_patch_manifest(patches, paths, (fs::path(cfg.out_dir) / manifest_name).string());
}

int cmd_gen_corpus(const RunConfig& cfg) {
    write_provenance(cfg, "gen-corpus");
    Corpus corpus =
        make_synthetic_corpus(cfg.seed, cfg.corpus_benign, cfg.corpus_malignant, cfg.wsi_size,
                              cfg.patch_size);
    save_corpus(corpus, corpus_dir(cfg));
    auto patches = tile_corpus(corpus, cfg.patch_size);
    write_patches(patches, fs::path(cfg.out_dir) / "patches", "manifest.csv", cfg);
    std::cout << "corpus: " << corpus.wsis.size() << " WSIs (" << cfg.corpus_benign << " benign, "
              << cfg.corpus_malignant << " malignant), " << patches.size() << " patches\n";
    return 0;
}

std::vector<LabeledTensor> to_dataset(const std::vector<Patch>& patches,
                                      const DenoiserArch& arch) {
    std::vector<LabeledTensor> dataset;
    dataset.reserve(patches.size());
    for (const Patch& p : patches) {
        dataset.push_back({arch.mode == DenoiserMode::kVector ? flatten_patch(p.pixels) : p.pixels,
                           p.label == kBenign ? 0 : 1});
    }
    return dataset;
}

int cmd_train_dpm(const RunConfig& cfg, bool resume) {
    write_provenance(cfg, "train-dpm");
    Corpus corpus = load_corpus_checked(cfg);
    auto patches = tile_corpus(corpus, cfg.patch_size);
    DenoiserArch arch = cfg.resolved_arch();

    fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint.json";
    DenoiserModel model = resume && fs::exists(ckpt)
                              ? load_checkpoint(ckpt.string())
                              : DenoiserModel(arch, Rng::mix(cfg.seed, 0xD9));
    long step_base = model.trained_steps();

    NoiseSchedule sched = make_schedule(cfg.diffusion);
    sched.dump_csv((fs::path(cfg.out_dir) / "schedule.csv").string());

    std::ofstream log(fs::path(cfg.out_dir) / "loss_log.csv",
                      resume ? std::ios::app : std::ios::trunc);
    if (!resume) log << "step,loss,wall_time\n";
    log.precision(17);

    auto t0 = std::chrono::steady_clock::now();
    long step = step_base;
    for (int epoch = 0; epoch < cfg.train.epochs; ++epoch) {
        TrainConfig tc = cfg.train;
        tc.epochs = 1;
        tc.seed = Rng::mix(cfg.seed, 0xE9, static_cast<std::uint64_t>(step));
        auto losses = train_denoiser(model, to_dataset(patches, arch), tc, sched);
        double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        for (double loss : losses) log << ++step << ',' << loss << ',' << elapsed << '\n';
    }
    save_checkpoint(model, ckpt.string());
    std::cout << "trained " << (step - step_base) << " steps (total " << step << "), checkpoint "
              << ckpt.string() << '\n';
    return 0;
}

int cmd_sample(const RunConfig& cfg, const std::string& label_name, int n) {
    write_provenance(cfg, "sample");
    if (n < 1) throw ConfigError("sample: need --count >= 1");
    int cls = label_name == "benign" ? 0 : label_name == "malignant"
                                               ? 1
                                               : throw ConfigError("sample: --label must be "
                                                                   "benign or malignant");
    fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint.json";
    if (!fs::exists(ckpt)) throw ConfigError("no checkpoint at " + ckpt.string());
    DenoiserModel model = load_checkpoint(ckpt.string());
    NoiseSchedule sched = make_schedule(cfg.diffusion);

    auto samples = sample(model, sched, cls, n, Rng::mix(cfg.seed, 0x5E));
    fs::path dir = fs::path(cfg.out_dir) / "samples";
    fs::create_directories(dir);
    std::vector<Tensor> tiles;
    char name[64];
    for (int i = 0; i < n; ++i) {
        Tensor img = model.arch().mode == DenoiserMode::kVector
                         ? unflatten_patch(samples[static_cast<std::size_t>(i)], cfg.patch_size)
                         : samples[static_cast<std::size_t>(i)];
        for (double& v : img.data) v = std::min(1.0, std::max(0.0, v));
        std::snprintf(name, sizeof name, "%s_%04d.ppm", label_name.c_str(), i);
        write_ppm(img, (dir / name).string());
        tiles.push_back(std::move(img));
    }
    int m = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(n))));
    while (static_cast<int>(tiles.size()) < m * m) tiles.push_back(Tensor::zeros(tiles[0].shape));
    std::snprintf(name, sizeof name, "grid_%s.ppm", label_name.c_str());
    write_ppm(contact_sheet(tiles), (dir / name).string());
    std::cout << n << " samples for class " << label_name << " -> " << dir.string() << '\n';
    return 0;
}

int cmd_augment(const RunConfig& cfg) {
    write_provenance(cfg, "augment");
    Corpus corpus = load_corpus_checked(cfg);
    auto real = tile_corpus(corpus, cfg.patch_size);
    std::vector<Patch> extra;
    if (cfg.augment == AugmentKind::kAffine) {
        extra = affine_augment(real, Rng::mix(cfg.seed, 0xAF), cfg.affine_multiplier);
    } else if (cfg.augment == AugmentKind::kDiffusion) {
        fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint.json";
        if (!fs::exists(ckpt)) throw ConfigError("no checkpoint at " + ckpt.string());
        DenoiserModel model = load_checkpoint(ckpt.string());
        NoiseSchedule sched = make_schedule(cfg.diffusion);
        extra = diffusion_augment(model, sched, cfg.augment_count, Rng::mix(cfg.seed, 0x5A),
                                  cfg.patch_size);
    } else {
        throw ConfigError("augment: augment.mode is 'none'");
    }
    write_patches(extra, fs::path(cfg.out_dir) / "augmented", "augmented.csv", cfg);
    std::cout << extra.size() << " " << augment_name(cfg.augment) << " patches\n";
    return 0;
}

int cmd_train_clf(const RunConfig& cfg) {
    write_provenance(cfg, "train-clf");
    Corpus corpus = load_corpus_checked(cfg);
    auto patches = tile_corpus(corpus, cfg.patch_size);

    std::unique_ptr<DenoiserModel> encoder;
    if (cfg.features == FeatureKind::kDenoiserEncoder) {
        fs::path ckpt = fs::path(cfg.out_dir) / "checkpoint.json";
        if (!fs::exists(ckpt)) throw ConfigError("no checkpoint at " + ckpt.string());
        encoder = std::make_unique<DenoiserModel>(load_checkpoint(ckpt.string()));
    }
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (const Patch& p : patches) {
        x.push_back(extract_features(p, cfg.features, encoder.get()));
        y.push_back(p.label);
    }
    GbtModel model = gbt_train(x, y, cfg.gbt);
    model.save_json((fs::path(cfg.out_dir) / "gbt.json").string());
    write_feature_csv(x, y, (fs::path(cfg.out_dir) / "features.csv").string());
    std::cout << "trained " << model.trees.size() << " trees on " << x.size()
              << " patches, training loss " << gbt_logistic_loss(model, x, y) << '\n';
    return 0;
}

int cmd_evaluate(const RunConfig& cfg, const std::string& modes_arg) {
    write_provenance(cfg, "evaluate");
    Corpus corpus = load_corpus_checked(cfg);

    std::vector<AugmentKind> modes;
    std::string token;
    std::istringstream ss(modes_arg);
    while (std::getline(ss, token, ',')) {
        if (!token.empty()) modes.push_back(augment_from_name(token));
    }
    if (modes.empty()) throw ConfigError("evaluate: no augmentation modes given");

    std::vector<std::pair<std::string, EvalReport>> columns;
    for (AugmentKind mode : modes) {
        EvalReport report = cross_validate(corpus, cfg.cv_config(mode));
        std::ofstream out(fs::path(cfg.out_dir) / ("report_" + augment_name(mode) + ".json"),
                          std::ios::binary);
        out << report.to_json() << '\n';
        Stat acc = report.accuracy_stat();
        std::cout << augment_name(mode) << ": accuracy " << acc.mean << " +/- " << acc.stddev
                  << '\n';
        columns.emplace_back(augment_name(mode), std::move(report));
    }
    write_table_csv(columns, (fs::path(cfg.out_dir) / "table.csv").string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-conditional diffusion augmentation and WSI fusion pipeline"};
    app.require_subcommand(1);

    GlobalArgs g;
    bool resume = false;
    std::string sample_label = "benign";
    int sample_count = 4;
    std::string modes = "none,affine,diffusion";

    CLI::App* gen = app.add_subcommand("gen-corpus", "generate the synthetic WSI corpus");
    add_global_options(gen, g);
    CLI::App* dpm = app.add_subcommand("train-dpm", "train the class-conditional denoiser");
    add_global_options(dpm, g);
    dpm->add_flag("--resume", resume, "continue from an existing checkpoint");
    CLI::App* smp = app.add_subcommand("sample", "draw class-conditional samples");
    add_global_options(smp, g);
    smp->add_option("--label", sample_label, "benign or malignant");
    smp->add_option("--count", sample_count, "number of samples");
    CLI::App* aug = app.add_subcommand("augment", "write augmented patches");
    add_global_options(aug, g);
    CLI::App* clf = app.add_subcommand("train-clf", "train the patch classifier");
    add_global_options(clf, g);
    CLI::App* ev = app.add_subcommand("evaluate", "repeated cross-validation comparison");
    add_global_options(ev, g);
    ev->add_option("--modes", modes, "comma-separated augmentation arms");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = resolve_config(g);
        if (gen->parsed()) return cmd_gen_corpus(cfg);
        if (dpm->parsed()) return cmd_train_dpm(cfg, resume);
        if (smp->parsed()) return cmd_sample(cfg, sample_label, sample_count);
        if (aug->parsed()) return cmd_augment(cfg);
        if (clf->parsed()) return cmd_train_clf(cfg);
        if (ev->parsed()) return cmd_evaluate(cfg, modes);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 2;
}
