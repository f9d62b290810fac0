#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "duv/diffusion.hpp"
#include "duv/tensor.hpp"

namespace duv {

// Training diverged (non-finite loss).
struct TrainingError : std::runtime_error {
    explicit TrainingError(const std::string& msg) : std::runtime_error(msg) {}
};

// Sinusoidal step embedding: pairs (sin(t w_k), cos(t w_k)) with
// geometrically spaced frequencies from 1 down toward 1e-4.
std::vector<double> time_embedding(int t, int dim);

enum class DenoiserMode { kImage, kVector };

struct DenoiserArch {
    DenoiserMode mode = DenoiserMode::kImage;
    std::vector<int> input_shape;  // [C,H,W] for image mode, [D] for vector mode
    int base_channels = 16;        // hidden width in vector mode
    int blocks_per_level = 2;
    int levels = 2;
    int embed_dim = 32;
    int class_count = 2;

    void validate() const;
    std::size_t input_size() const;
};

struct TrainConfig {
    double learning_rate = 1e-4;
    int epochs = 1;
    int batch_size = 32;
    std::uint64_t seed = 0;
    double weight_vlb = 0.0;

    void validate() const;
};

// Class- and time-conditional noise predictor. Conditioning enters each
// residual block as an additive projection of the time+class embedding.
class DenoiserModel {
  public:
    DenoiserModel(DenoiserArch arch, std::uint64_t init_seed);

    const DenoiserArch& arch() const { return arch_; }
    std::vector<std::pair<std::string, Tensor>>& params() { return params_; }
    const std::vector<std::pair<std::string, Tensor>>& params() const { return params_; }
    Tensor& param(const std::string& name);
    const Tensor& param(const std::string& name) const;

    long trained_steps() const { return trained_steps_; }
    void set_trained_steps(long n) { trained_steps_ = n; }

    // Forward pass on a batch; xt is [N, ...input_shape], t and c give the
    // per-item step and class. Records through g so it is differentiable.
    Graph::NodeId forward(Graph& g, Graph::NodeId xt, const std::vector<int>& t,
                          const std::vector<int>& c) const;

    // Inference-only convenience for a single item or batch.
    Tensor predict_noise(const Tensor& xt, int t, int c) const;
    Tensor predict_noise_batch(const Tensor& xt, const std::vector<int>& t,
                               const std::vector<int>& c) const;

    // Mean-pooled deepest-level activations at t = 0 (learned feature map).
    std::vector<double> encode(const Tensor& x) const;

    void zero_grads();
    void sgd_step(double learning_rate);

  private:
    void register_param(const std::string& name, Tensor t);
    Graph::NodeId cond_vector(Graph& g, const std::vector<int>& t, const std::vector<int>& c,
                              std::map<std::string, Graph::NodeId>& pnodes) const;
    Graph::NodeId forward_image(Graph& g, Graph::NodeId xt, Graph::NodeId cond,
                                std::map<std::string, Graph::NodeId>& pnodes,
                                Graph::NodeId* deepest) const;
    Graph::NodeId forward_vector(Graph& g, Graph::NodeId xt, Graph::NodeId cond,
                                 std::map<std::string, Graph::NodeId>& pnodes,
                                 Graph::NodeId* deepest) const;
    Graph::NodeId forward_impl(Graph& g, Graph::NodeId xt, const std::vector<int>& t,
                               const std::vector<int>& c, Graph::NodeId* deepest) const;
    Graph::NodeId pnode(Graph& g, std::map<std::string, Graph::NodeId>& pnodes,
                        const std::string& name) const;

    DenoiserArch arch_;
    std::vector<std::pair<std::string, Tensor>> params_;
    std::map<std::string, std::size_t> index_;
    long trained_steps_ = 0;
};

struct LabeledTensor {
    Tensor x;
    int label = 0;
};

// One SGD pass over the dataset per epoch; returns per-step loss history.
std::vector<double> train_denoiser(DenoiserModel& model, const std::vector<LabeledTensor>& dataset,
                                   const TrainConfig& cfg, const NoiseSchedule& sched);

// Ancestral sampling: n chains for class c, each chain on its own random
// substream of (seed, chain index); the model is evaluated batched.
std::vector<Tensor> sample(const DenoiserModel& model, const NoiseSchedule& sched, int c, int n,
                           std::uint64_t seed);

}  // namespace duv
