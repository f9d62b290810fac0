#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "duv/diffusion.hpp"
#include "duv/errors.hpp"
#include "duv/patches.hpp"
#include "duv/rng.hpp"

using namespace duv;

namespace {

WsiRecord ramp_wsi(int h, int w, const std::string& id = "ramp", int label = kBenign) {
    WsiRecord wsi;
    wsi.id = id;
    wsi.label = label;
    wsi.pixels = Tensor::zeros({3, h, w});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                wsi.pixels.data[static_cast<std::size_t>((c * h + y) * w + x)] =
                    (c + 1) * 0.001 * (y * w + x) / (h * w);
            }
        }
    }
    return wsi;
}

}  // namespace

TEST_CASE("tiling produces the expected grid and drops remainders") {
    auto p64 = tile_wsi(ramp_wsi(64, 64), 16);
    CHECK(p64.size() == 16);
    auto p70 = tile_wsi(ramp_wsi(70, 70), 16);
    CHECK(p70.size() == 16);  // remainder 6 pixels per axis dropped

    std::set<std::pair<int, int>> coords;
    for (const auto& p : p64) {
        CHECK(p.pixels.shape == std::vector<int>{3, 16, 16});
        CHECK(p.wsi_id == "ramp");
        CHECK(p.label == kBenign);
        CHECK(p.origin == PatchOrigin::kReal);
        coords.insert({p.row, p.col});
    }
    CHECK(coords.size() == 16);
    CHECK(coords.count({0, 0}) == 1);
    CHECK(coords.count({3, 3}) == 1);

    // patch (row,col) holds wsi[., row*S + y, col*S + x]
    const WsiRecord wsi = ramp_wsi(64, 64);
    for (const auto& p : p64) {
        double want = wsi.pixels.data[static_cast<std::size_t>(p.row) * 16 * 64 +
                                      static_cast<std::size_t>(p.col) * 16];
        CHECK(p.pixels.data[0] == want);
    }

    CHECK_THROWS_AS(tile_wsi(ramp_wsi(8, 8), 0), ContractError);
    CHECK_THROWS_AS(tile_wsi(ramp_wsi(8, 8), 9), ContractError);
}

TEST_CASE("tile then assemble is a bit-exact round trip") {
    WsiRecord wsi = ramp_wsi(48, 48);
    auto patches = tile_wsi(wsi, 16);
    Tensor back = assemble_patches(patches, 16);
    REQUIRE(back.shape == wsi.pixels.shape);
    for (std::size_t i = 0; i < back.data.size(); ++i) CHECK(back.data[i] == wsi.pixels.data[i]);

    // 70x70 round trip covers only the cropped 64x64 field of view
    WsiRecord big = ramp_wsi(70, 70);
    Tensor cropped = assemble_patches(tile_wsi(big, 16), 16);
    CHECK(cropped.shape == std::vector<int>{3, 64, 64});
    for (int c = 0; c < 3; ++c) {
        for (int y = 0; y < 64; ++y) {
            for (int x = 0; x < 64; ++x) {
                CHECK(cropped.data[static_cast<std::size_t>((c * 64 + y) * 64 + x)] ==
                      big.pixels.data[static_cast<std::size_t>((c * 70 + y) * 70 + x)]);
            }
        }
    }
}

TEST_CASE("synthetic corpus: counts, determinism and class statistics") {
    Corpus corpus = make_synthetic_corpus(7, 24, 36, 64, 16);
    REQUIRE(corpus.wsis.size() == 60);
    int benign = 0, malignant = 0;
    for (const auto& w : corpus.wsis) {
        CHECK(w.pixels.shape == std::vector<int>{3, 64, 64});
        CHECK(w.pixels.all_finite());
        for (double v : w.pixels.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        (w.label == kBenign ? benign : malignant)++;
    }
    CHECK(benign == 24);
    CHECK(malignant == 36);

    Corpus again = make_synthetic_corpus(7, 24, 36, 64, 16);
    for (std::size_t i = 0; i < corpus.wsis.size(); ++i) {
        CHECK(again.wsis[i].id == corpus.wsis[i].id);
        CHECK(again.wsis[i].pixels.data == corpus.wsis[i].pixels.data);
    }
    Corpus other = make_synthetic_corpus(8, 24, 36, 64, 16);
    CHECK(other.wsis[0].pixels.data != corpus.wsis[0].pixels.data);

    // malignant WSIs are red-dominant, benign green-dominant, on average
    auto channel_mean = [](const WsiRecord& w, int c) {
        double s = 0;
        int n = w.pixels.shape[1] * w.pixels.shape[2];
        for (int i = 0; i < n; ++i) s += w.pixels.data[static_cast<std::size_t>(c * n + i)];
        return s / n;
    };
    double benign_red = 0, benign_green = 0, malig_red = 0, malig_green = 0;
    for (const auto& w : corpus.wsis) {
        if (w.label == kBenign) {
            benign_red += channel_mean(w, 0) / 24;
            benign_green += channel_mean(w, 1) / 24;
        } else {
            malig_red += channel_mean(w, 0) / 36;
            malig_green += channel_mean(w, 1) / 36;
        }
    }
    CHECK(benign_green > benign_red);
    CHECK(malig_red > malig_green);
    CHECK(malig_red > benign_red + 0.15);
}

TEST_CASE("affine transforms satisfy the expected group identities") {
    Rng rng(11);
    Tensor img = Tensor::randn({3, 8, 8}, rng);

    Tensor r90 = apply_affine(img, AffineTransform::kRot90);
    Tensor r180 = apply_affine(img, AffineTransform::kRot180);
    Tensor r270 = apply_affine(img, AffineTransform::kRot270);
    CHECK(apply_affine(r90, AffineTransform::kRot90).data == r180.data);
    CHECK(apply_affine(r180, AffineTransform::kRot90).data == r270.data);
    CHECK(apply_affine(r270, AffineTransform::kRot90).data == img.data);

    Tensor fh = apply_affine(img, AffineTransform::kFlipH);
    Tensor fv = apply_affine(img, AffineTransform::kFlipV);
    CHECK(apply_affine(fh, AffineTransform::kFlipH).data == img.data);
    CHECK(apply_affine(fv, AffineTransform::kFlipV).data == img.data);
    CHECK(apply_affine(fh, AffineTransform::kFlipV).data == r180.data);

    // spot-check orientation: rot90 maps (y, x) -> (x, H-1-y) source
    Tensor tiny = Tensor::zeros({3, 2, 2});
    tiny.data[1] = 1.0;  // channel 0, (0,1)
    Tensor t90 = apply_affine(tiny, AffineTransform::kRot90);
    int hot = -1;
    for (int i = 0; i < 4; ++i) {
        if (t90.data[static_cast<std::size_t>(i)] == 1.0) hot = i;
    }
    CHECK(hot >= 0);
    CHECK(hot != 1);
}

TEST_CASE("affine augmentation yields the requested count with correct metadata") {
    auto patches = tile_wsi(ramp_wsi(32, 32, "w0", kMalignant), 16);
    auto aug = affine_augment(patches, 5, 3);
    CHECK(aug.size() == patches.size() * 3);
    for (const auto& p : aug) {
        CHECK(p.origin == PatchOrigin::kAffine);
        CHECK(p.label == kMalignant);
        CHECK(p.wsi_id == "w0");
        CHECK(p.pixels.shape == std::vector<int>{3, 16, 16});
    }
    auto again = affine_augment(patches, 5, 3);
    for (std::size_t i = 0; i < aug.size(); ++i) CHECK(again[i].pixels.data == aug[i].pixels.data);
}

TEST_CASE("diffusion augmentation: counts, labels, clamping, parity contract") {
    DenoiserArch arch;
    arch.mode = DenoiserMode::kVector;
    arch.input_shape = {3 * 4 * 4};
    arch.base_channels = 8;
    arch.blocks_per_level = 1;
    arch.levels = 1;
    arch.embed_dim = 8;
    DenoiserModel model(arch, 99);
    DiffusionConfig dc;
    dc.steps = 60;
    dc.beta_end = 0.3;
    NoiseSchedule sched = make_schedule(dc);

    auto aug = diffusion_augment(model, sched, 10, 21, 4);
    REQUIRE(aug.size() == 10);
    int benign = 0, malignant = 0;
    for (const auto& p : aug) {
        CHECK(p.origin == PatchOrigin::kDiffusion);
        CHECK(p.pixels.shape == std::vector<int>{3, 4, 4});
        for (double v : p.pixels.data) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
        (p.label == kBenign ? benign : malignant)++;
    }
    CHECK(benign == 5);
    CHECK(malignant == 5);

    auto again = diffusion_augment(model, sched, 10, 21, 4);
    for (std::size_t i = 0; i < aug.size(); ++i) CHECK(again[i].pixels.data == aug[i].pixels.data);

    CHECK_THROWS_AS(diffusion_augment(model, sched, 7, 21, 4), ContractError);
    CHECK_THROWS_AS(diffusion_augment(model, sched, 0, 21, 4), ContractError);
}

TEST_CASE("flatten/unflatten round trip") {
    Rng rng(3);
    Tensor img = Tensor::randn({3, 5, 5}, rng);
    Tensor flat = flatten_patch(img);
    CHECK(flat.shape == std::vector<int>{75});
    Tensor back = unflatten_patch(flat, 5);
    CHECK(back.shape == img.shape);
    CHECK(back.data == img.data);
}

TEST_CASE("corpus save/load round trip and manifest format") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "duv_test_corpus";
    fs::remove_all(dir);

    Corpus corpus = make_synthetic_corpus(5, 2, 3, 32, 16);
    save_corpus(corpus, dir.string());
    Corpus loaded = load_corpus(dir.string());
    REQUIRE(loaded.wsis.size() == corpus.wsis.size());
    for (std::size_t i = 0; i < corpus.wsis.size(); ++i) {
        CHECK(loaded.wsis[i].id == corpus.wsis[i].id);
        CHECK(loaded.wsis[i].label == corpus.wsis[i].label);
        // pixels pass through 8-bit quantization once
        for (std::size_t k = 0; k < corpus.wsis[i].pixels.data.size(); ++k) {
            CHECK(std::abs(loaded.wsis[i].pixels.data[k] - corpus.wsis[i].pixels.data[k]) <=
                  0.5 / 255.0 + 1e-12);
        }
    }

    auto patches = tile_wsi(corpus.wsis[0], 16);
    std::vector<std::string> paths;
    for (std::size_t i = 0; i < patches.size(); ++i) {
        paths.push_back("patches/p" + std::to_string(i) + ".ppm");
    }
    fs::path csv = dir / "manifest.csv";
    write_patch_manifest(patches, paths, csv.string());
    std::ifstream in(csv);
    std::string line;
    REQUIRE(std::getline(in, line));
    CHECK(line == "wsi_id,row,col,label,origin,path");
    int rows = 0;
    while (std::getline(in, line)) {
        if (!line.empty()) ++rows;
        if (rows == 1) {
            CHECK(line.find(patches[0].wsi_id) == 0);
            CHECK(line.find(",real,") != std::string::npos);
        }
    }
    CHECK(rows == static_cast<int>(patches.size()));

    fs::remove_all(dir);
}
