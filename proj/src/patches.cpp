#include "duv/patches.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "duv/errors.hpp"
#include "duv/image_io.hpp"
#include "json.hpp"

namespace duv {

namespace fs = std::filesystem;

std::string origin_name(PatchOrigin o) {
    switch (o) {
        case PatchOrigin::kReal: return "real";
        case PatchOrigin::kDiffusion: return "diffusion";
        case PatchOrigin::kAffine: return "affine";
    }
    return "?";
}

PatchOrigin origin_from_name(const std::string& s) {
    if (s == "real") return PatchOrigin::kReal;
    if (s == "diffusion") return PatchOrigin::kDiffusion;
    if (s == "affine") return PatchOrigin::kAffine;
    throw FormatError("unknown patch origin: " + s);
}

std::vector<Patch> tile_wsi(const WsiRecord& wsi, int patch_size) {
    if (patch_size < 1) throw ContractError("tile_wsi: patch size must be >= 1");
    int h = wsi.pixels.shape[1], w = wsi.pixels.shape[2];
    if (patch_size > std::min(h, w)) {
        throw ContractError("tile_wsi: patch size " + std::to_string(patch_size) +
                            " exceeds WSI extent " + std::to_string(std::min(h, w)));
    }
    int rows = h / patch_size, cols = w / patch_size;
    std::vector<Patch> out;
    out.reserve(static_cast<std::size_t>(rows) * cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            Patch p;
            p.wsi_id = wsi.id;
            p.row = r;
            p.col = c;
            p.label = wsi.label;
            p.origin = PatchOrigin::kReal;
            p.pixels = Tensor::zeros({3, patch_size, patch_size});
            for (int ch = 0; ch < 3; ++ch) {
                for (int y = 0; y < patch_size; ++y) {
                    const double* src = wsi.pixels.data.data() +
                                        (static_cast<std::size_t>(ch) * h + r * patch_size + y) * w +
                                        c * patch_size;
                    std::copy_n(src, patch_size,
                                p.pixels.data.begin() +
                                    (static_cast<std::size_t>(ch) * patch_size + y) * patch_size);
                }
            }
            out.push_back(std::move(p));
        }
    }
    return out;
}

Tensor assemble_patches(const std::vector<Patch>& patches, int patch_size) {
    if (patches.empty()) throw ContractError("assemble_patches: no patches");
    int rows = 0, cols = 0;
    for (const Patch& p : patches) {
        rows = std::max(rows, p.row + 1);
        cols = std::max(cols, p.col + 1);
    }
    Tensor img = Tensor::zeros({3, rows * patch_size, cols * patch_size});
    int w = cols * patch_size, h = rows * patch_size;
    for (const Patch& p : patches) {
        for (int ch = 0; ch < 3; ++ch) {
            for (int y = 0; y < patch_size; ++y) {
                std::copy_n(p.pixels.data.begin() +
                                (static_cast<std::size_t>(ch) * patch_size + y) * patch_size,
                            patch_size,
                            img.data.begin() +
                                (static_cast<std::size_t>(ch) * h + p.row * patch_size + y) * w +
                                p.col * patch_size);
            }
        }
    }
    return img;
}

namespace {

double clamp01(double v) { return std::min(std::max(v, 0.0), 1.0); }

// Coarse noise grid bilinearly upsampled: a cheap low-pass texture.
Tensor smooth_noise(int size, int cell, double amplitude, Rng& rng) {
    int grid = size / cell + 2;
    std::vector<double> nodes(static_cast<std::size_t>(grid) * grid);
    for (double& v : nodes) v = rng.normal(0.0, amplitude);
    Tensor out = Tensor::zeros({size, size});
    for (int y = 0; y < size; ++y) {
        for (int x = 0; x < size; ++x) {
            double fy = static_cast<double>(y) / cell, fx = static_cast<double>(x) / cell;
            int gy = static_cast<int>(fy), gx = static_cast<int>(fx);
            double ty = fy - gy, tx = fx - gx;
            double v00 = nodes[static_cast<std::size_t>(gy) * grid + gx];
            double v01 = nodes[static_cast<std::size_t>(gy) * grid + gx + 1];
            double v10 = nodes[static_cast<std::size_t>(gy + 1) * grid + gx];
            double v11 = nodes[static_cast<std::size_t>(gy + 1) * grid + gx + 1];
            out.data[static_cast<std::size_t>(y) * size + x] =
                (1 - ty) * ((1 - tx) * v00 + tx * v01) + ty * ((1 - tx) * v10 + tx * v11);
        }
    }
    return out;
}

WsiRecord make_benign_wsi(const std::string& id, int size, Rng& rng) {
    WsiRecord wsi;
    wsi.id = id;
    wsi.label = kBenign;
    wsi.pixels = Tensor::zeros({3, size, size});
    double base[3] = {rng.normal(0.22, 0.04), rng.normal(0.58, 0.05), rng.normal(0.28, 0.04)};
    for (int ch = 0; ch < 3; ++ch) {
        Tensor tex = smooth_noise(size, 8, 0.10, rng);
        for (int i = 0; i < size * size; ++i) {
            wsi.pixels.data[static_cast<std::size_t>(ch) * size * size + i] =
                clamp01(base[ch] + tex.data[static_cast<std::size_t>(i)]);
        }
    }
    return wsi;
}

WsiRecord make_malignant_wsi(const std::string& id, int size, Rng& rng) {
    WsiRecord wsi;
    wsi.id = id;
    wsi.label = kMalignant;
    wsi.pixels = Tensor::zeros({3, size, size});
    double base[3] = {rng.normal(0.58, 0.05), rng.normal(0.26, 0.04), rng.normal(0.42, 0.05)};
    for (int ch = 0; ch < 3; ++ch) {
        for (int i = 0; i < size * size; ++i) {
            wsi.pixels.data[static_cast<std::size_t>(ch) * size * size + i] =
                clamp01(base[ch] + rng.normal(0.0, 0.12));
        }
    }
    // bright nucleus-like blobs
    int blobs = std::max(1, size * size / 256);
    for (int bi = 0; bi < blobs; ++bi) {
        int cy = static_cast<int>(rng.uniform_int(0, size - 1));
        int cx = static_cast<int>(rng.uniform_int(0, size - 1));
        double radius = rng.uniform(1.0, 3.0);
        double gain = rng.uniform(0.25, 0.4);
        int reach = static_cast<int>(std::ceil(3 * radius));
        for (int dy = -reach; dy <= reach; ++dy) {
            for (int dx = -reach; dx <= reach; ++dx) {
                int y = cy + dy, x = cx + dx;
                if (y < 0 || y >= size || x < 0 || x >= size) continue;
                double fall = std::exp(-(dy * dy + dx * dx) / (2.0 * radius * radius));
                for (int ch = 0; ch < 3; ++ch) {
                    double& v =
                        wsi.pixels.data[(static_cast<std::size_t>(ch) * size + y) * size + x];
                    v = clamp01(v + gain * fall * (ch == 1 ? 0.5 : 1.0));
                }
            }
        }
    }
    return wsi;
}

}  // namespace

Corpus make_synthetic_corpus(std::uint64_t seed, int n_benign, int n_malignant, int wsi_size,
                             int patch_size) {
    if (n_benign < 1 || n_malignant < 1) throw ContractError("corpus: class counts must be >= 1");
    if (wsi_size < patch_size) throw ContractError("corpus: wsi_size must be >= patch_size");
    Corpus corpus;
    char id[32];
    for (int i = 0; i < n_benign; ++i) {
        Rng rng = Rng::derive(seed, 0xB, static_cast<std::uint64_t>(i));
        std::snprintf(id, sizeof id, "benign-%03d", i);
        corpus.wsis.push_back(make_benign_wsi(id, wsi_size, rng));
    }
    for (int i = 0; i < n_malignant; ++i) {
        Rng rng = Rng::derive(seed, 0xA1, static_cast<std::uint64_t>(i));
        std::snprintf(id, sizeof id, "malignant-%03d", i);
        corpus.wsis.push_back(make_malignant_wsi(id, wsi_size, rng));
    }
    return corpus;
}

Tensor apply_affine(const Tensor& pixels, AffineTransform t) {
    int s = pixels.shape[1];
    Tensor out = Tensor::zeros(pixels.shape);
    auto src = [&](int ch, int y, int x) {
        return pixels.data[(static_cast<std::size_t>(ch) * s + y) * s + x];
    };
    for (int ch = 0; ch < 3; ++ch) {
        for (int y = 0; y < s; ++y) {
            for (int x = 0; x < s; ++x) {
                double v;
                switch (t) {
                    case AffineTransform::kRot90: v = src(ch, x, s - 1 - y); break;
                    case AffineTransform::kRot180: v = src(ch, s - 1 - y, s - 1 - x); break;
                    case AffineTransform::kRot270: v = src(ch, s - 1 - x, y); break;
                    case AffineTransform::kFlipH: v = src(ch, y, s - 1 - x); break;
                    case AffineTransform::kFlipV: v = src(ch, s - 1 - y, x); break;
                    default: v = 0;
                }
                out.data[(static_cast<std::size_t>(ch) * s + y) * s + x] = v;
            }
        }
    }
    return out;
}

std::vector<Patch> affine_augment(const std::vector<Patch>& patches, std::uint64_t seed,
                                  int multiplier) {
    if (multiplier < 1) throw ContractError("affine_augment: multiplier must be >= 1");
    Rng rng = Rng::derive(seed, 0xAFF);
    std::vector<Patch> out;
    out.reserve(patches.size() * static_cast<std::size_t>(multiplier));
    for (int m = 0; m < multiplier; ++m) {
        for (const Patch& p : patches) {
            Patch q = p;
            q.origin = PatchOrigin::kAffine;
            q.pixels = apply_affine(p.pixels, static_cast<AffineTransform>(rng.uniform_int(0, 4)));
            out.push_back(std::move(q));
        }
    }
    return out;
}

Tensor flatten_patch(const Tensor& pixels) {
    Tensor flat = pixels;
    flat.shape = {static_cast<int>(pixels.size())};
    return flat;
}

Tensor unflatten_patch(const Tensor& flat, int patch_size) {
    if (flat.size() != static_cast<std::size_t>(3 * patch_size * patch_size)) {
        throw DimensionError("unflatten_patch: length " + std::to_string(flat.size()) +
                             " is not 3*" + std::to_string(patch_size) + "^2");
    }
    Tensor pixels = flat;
    pixels.shape = {3, patch_size, patch_size};
    return pixels;
}

std::vector<Patch> diffusion_augment(const DenoiserModel& model, const NoiseSchedule& sched,
                                     int n_total, std::uint64_t seed, int patch_size) {
    if (n_total < 2 || n_total % 2 != 0) {
        throw ContractError("diffusion_augment: n_total must be even and >= 2");
    }
    std::vector<Patch> out;
    out.reserve(static_cast<std::size_t>(n_total));
    char id[48];
    for (int cls = 0; cls < 2; ++cls) {
        auto samples = sample(model, sched, cls, n_total / 2, Rng::mix(seed, 0xD1F, cls));
        for (std::size_t i = 0; i < samples.size(); ++i) {
            Patch p;
            std::snprintf(id, sizeof id, "dpm-%s-%04zu", cls == 0 ? "benign" : "malignant", i);
            p.wsi_id = id;
            p.label = cls == 0 ? kBenign : kMalignant;
            p.origin = PatchOrigin::kDiffusion;
            Tensor pix = model.arch().mode == DenoiserMode::kVector
                             ? unflatten_patch(samples[i], patch_size)
                             : samples[i];
            for (double& v : pix.data) v = clamp01(v);
            p.pixels = std::move(pix);
            out.push_back(std::move(p));
        }
    }
    return out;
}

void save_corpus(const Corpus& corpus, const std::string& dir) {
    fs::create_directories(dir);
    for (const WsiRecord& wsi : corpus.wsis) {
        fs::path wdir = fs::path(dir) / wsi.id;
        fs::create_directories(wdir);
        write_ppm(wsi.pixels, (wdir / "wsi.ppm").string());
        nlohmann::json meta;
        meta["id"] = wsi.id;
        meta["label"] = wsi.label;
        meta["height"] = wsi.pixels.shape[1];
        meta["width"] = wsi.pixels.shape[2];
        std::ofstream out(wdir / "meta.json", std::ios::binary);
        out << meta.dump() << '\n';
    }
}

Corpus load_corpus(const std::string& dir) {
    Corpus corpus;
    std::vector<fs::path> dirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) dirs.push_back(entry.path());
    }
    std::sort(dirs.begin(), dirs.end());
    for (const fs::path& wdir : dirs) {
        std::ifstream in(wdir / "meta.json", std::ios::binary);
        if (!in) throw FormatError("missing meta.json in " + wdir.string());
        nlohmann::json meta;
        in >> meta;
        WsiRecord wsi;
        wsi.id = meta.at("id").get<std::string>();
        wsi.label = meta.at("label").get<int>();
        wsi.pixels = read_ppm((wdir / "wsi.ppm").string());
        corpus.wsis.push_back(std::move(wsi));
    }
    if (corpus.wsis.empty()) throw FormatError("no WSI directories under " + dir);
    return corpus;
}

void write_patch_manifest(const std::vector<Patch>& patches,
                          const std::vector<std::string>& paths, const std::string& csv_path) {
    if (!paths.empty() && paths.size() != patches.size()) {
        throw ContractError("manifest: path count does not match patch count");
    }
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw FormatError("cannot write manifest: " + csv_path);
    out << "wsi_id,row,col,label,origin,path\n";
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const Patch& p = patches[i];
        out << p.wsi_id << ',' << p.row << ',' << p.col << ',' << p.label << ','
            << origin_name(p.origin) << ',' << (paths.empty() ? "" : paths[i]) << '\n';
    }
}

}  // namespace duv
