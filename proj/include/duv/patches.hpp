#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duv/denoiser.hpp"
#include "duv/tensor.hpp"

namespace duv {

constexpr int kBenign = -1;
constexpr int kMalignant = +1;

enum class PatchOrigin { kReal, kDiffusion, kAffine };

std::string origin_name(PatchOrigin o);
PatchOrigin origin_from_name(const std::string& s);

// One whole-surface image. Pixels are [3,H,W] floats in [0,1].
struct WsiRecord {
    std::string id;
    Tensor pixels;
    int label = kBenign;  // -1 benign, +1 malignant
};

struct Patch {
    std::string wsi_id;
    int row = 0;
    int col = 0;
    Tensor pixels;  // [3,S,S]
    int label = kBenign;
    PatchOrigin origin = PatchOrigin::kReal;
};

struct Corpus {
    std::vector<WsiRecord> wsis;
};

// Regular non-overlapping grid; trailing remainder pixels are dropped.
std::vector<Patch> tile_wsi(const WsiRecord& wsi, int patch_size);

// Inverse of tile_wsi over the cropped field of view.
Tensor assemble_patches(const std::vector<Patch>& patches, int patch_size);

// Procedural two-class corpus: benign WSIs are low-frequency green-dominant
// textures, malignant ones high-frequency red/magenta textures with bright
// nucleus-like blobs. Deterministic in the seed.
Corpus make_synthetic_corpus(std::uint64_t seed, int n_benign, int n_malignant, int wsi_size,
                             int patch_size);

// Rotation/flip copies; multiplier new patches per input patch.
std::vector<Patch> affine_augment(const std::vector<Patch>& patches, std::uint64_t seed,
                                  int multiplier);

enum class AffineTransform { kRot90, kRot180, kRot270, kFlipH, kFlipV };
Tensor apply_affine(const Tensor& pixels, AffineTransform t);

// n_total/2 class-conditional samples per class, clamped to [0,1].
std::vector<Patch> diffusion_augment(const DenoiserModel& model, const NoiseSchedule& sched,
                                     int n_total, std::uint64_t seed, int patch_size);

// Patch pixels <-> flat model input for vector-mode denoisers.
Tensor flatten_patch(const Tensor& pixels);
Tensor unflatten_patch(const Tensor& flat, int patch_size);

// On-disk layout: <dir>/<wsi_id>/wsi.ppm + meta.json per record.
void save_corpus(const Corpus& corpus, const std::string& dir);
Corpus load_corpus(const std::string& dir);

// CSV manifest: wsi_id,row,col,label,origin,path
void write_patch_manifest(const std::vector<Patch>& patches,
                          const std::vector<std::string>& paths, const std::string& csv_path);

}  // namespace duv
