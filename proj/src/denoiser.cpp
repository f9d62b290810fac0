#include "duv/denoiser.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "duv/errors.hpp"

namespace duv {

std::vector<double> time_embedding(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw ContractError("time_embedding: dim must be even and >= 2");
    std::vector<double> e(static_cast<std::size_t>(dim));
    int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double omega = std::pow(10.0, -4.0 * k / half);
        e[static_cast<std::size_t>(2 * k)] = std::sin(t * omega);
        e[static_cast<std::size_t>(2 * k + 1)] = std::cos(t * omega);
    }
    return e;
}

void DenoiserArch::validate() const {
    if (class_count < 1) throw ConfigError("class_count must be >= 1");
    if (embed_dim < 2 || embed_dim % 2 != 0) throw ConfigError("embed_dim must be even and >= 2");
    if (base_channels < 1 || blocks_per_level < 1 || levels < 1) {
        throw ConfigError("architecture sizes must be >= 1");
    }
    if (mode == DenoiserMode::kImage) {
        if (input_shape.size() != 3) throw ConfigError("image mode expects input shape [C,H,W]");
        int down = 1 << (levels - 1);
        if (input_shape[1] % down != 0 || input_shape[2] % down != 0) {
            throw ConfigError("spatial extents must be divisible by 2^(levels-1)");
        }
    } else {
        if (input_shape.size() != 1) throw ConfigError("vector mode expects input shape [D]");
    }
}

std::size_t DenoiserArch::input_size() const { return shape_product(input_shape); }

namespace {

int level_channels(const DenoiserArch& a, int level) { return a.base_channels << level; }

std::string block_name(const char* stage, int level, int block) {
    return std::string(stage) + "." + std::to_string(level) + "." + std::to_string(block);
}

}  // namespace

DenoiserModel::DenoiserModel(DenoiserArch arch, std::uint64_t init_seed) : arch_(std::move(arch)) {
    arch_.validate();
    Rng rng = Rng::derive(init_seed, 0xD0DE);
    auto kaiming = [&](std::vector<int> shape, int fan_in) {
        return Tensor::randn(std::move(shape), rng, std::sqrt(2.0 / fan_in), true);
    };
    const int e = arch_.embed_dim;
    register_param("embed.class", kaiming({arch_.class_count, e}, e));
    register_param("embed.time.w", kaiming({e, e}, e));
    register_param("embed.time.b", Tensor::zeros({e}, true));

    auto block_params = [&](const char* stage, int level, int block, int ch) {
        std::string base = block_name(stage, level, block);
        if (arch_.mode == DenoiserMode::kImage) {
            register_param(base + ".k1", kaiming({ch, ch, 3, 3}, ch * 9));
            // zero second conv: each block starts as the identity map
            register_param(base + ".k2", Tensor::zeros({ch, ch, 3, 3}, true));
        } else {
            register_param(base + ".w1", kaiming({ch, ch}, ch));
            register_param(base + ".b1", Tensor::zeros({ch}, true));
            // zero second linear: each block starts as the identity map
            register_param(base + ".w2", Tensor::zeros({ch, ch}, true));
            register_param(base + ".b2", Tensor::zeros({ch}, true));
        }
        register_param(base + ".wc", kaiming({e, ch}, e));
        register_param(base + ".bc", Tensor::zeros({ch}, true));
    };

    if (arch_.mode == DenoiserMode::kImage) {
        int c_in = arch_.input_shape[0];
        register_param("stem.k", kaiming({arch_.base_channels, c_in, 3, 3}, c_in * 9));
        for (int l = 0; l < arch_.levels; ++l) {
            int ch = level_channels(arch_, l);
            for (int b = 0; b < arch_.blocks_per_level; ++b) block_params("enc", l, b, ch);
            if (l + 1 < arch_.levels) {
                register_param("down." + std::to_string(l) + ".k",
                               kaiming({level_channels(arch_, l + 1), ch, 3, 3}, ch * 9));
            }
        }
        for (int l = arch_.levels - 2; l >= 0; --l) {
            int ch = level_channels(arch_, l);
            register_param("up." + std::to_string(l) + ".k",
                           kaiming({ch, level_channels(arch_, l + 1), 3, 3},
                                   level_channels(arch_, l + 1) * 9));
            for (int b = 0; b < arch_.blocks_per_level; ++b) block_params("dec", l, b, ch);
        }
        // zero-initialized head: the untrained model predicts zero noise
        register_param("head.k", Tensor::zeros({c_in, arch_.base_channels, 3, 3}, true));
    } else {
        int d = arch_.input_shape[0];
        int h = arch_.base_channels;
        register_param("stem.w", kaiming({d, h}, d));
        register_param("stem.b", Tensor::zeros({h}, true));
        int blocks = arch_.blocks_per_level * arch_.levels;
        for (int b = 0; b < blocks; ++b) block_params("blk", 0, b, h);
        register_param("head.w", Tensor::zeros({h, d}, true));
        register_param("head.b", Tensor::zeros({d}, true));
    }
}

void DenoiserModel::register_param(const std::string& name, Tensor t) {
    index_[name] = params_.size();
    params_.emplace_back(name, std::move(t));
}

Tensor& DenoiserModel::param(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return params_[it->second].second;
}

const Tensor& DenoiserModel::param(const std::string& name) const {
    return const_cast<DenoiserModel*>(this)->param(name);
}

Graph::NodeId DenoiserModel::pnode(Graph& g, std::map<std::string, Graph::NodeId>& pnodes,
                                   const std::string& name) const {
    auto it = pnodes.find(name);
    if (it != pnodes.end()) return it->second;
    Graph::NodeId id = g.param(const_cast<DenoiserModel*>(this)->param(name));
    pnodes[name] = id;
    return id;
}

Graph::NodeId DenoiserModel::cond_vector(Graph& g, const std::vector<int>& t,
                                         const std::vector<int>& c,
                                         std::map<std::string, Graph::NodeId>& pnodes) const {
    int n = static_cast<int>(t.size());
    const int e = arch_.embed_dim;
    Tensor temb = Tensor::zeros({n, e});
    for (int i = 0; i < n; ++i) {
        if (c[static_cast<std::size_t>(i)] < 0 ||
            c[static_cast<std::size_t>(i)] >= arch_.class_count) {
            throw ContractError("class id " + std::to_string(c[static_cast<std::size_t>(i)]) +
                                " outside [0, " + std::to_string(arch_.class_count) + ")");
        }
        std::vector<double> row = time_embedding(t[static_cast<std::size_t>(i)], e);
        std::copy(row.begin(), row.end(), temb.data.begin() + static_cast<std::size_t>(i) * e);
    }
    Graph::NodeId te = g.silu(g.linear(g.value(std::move(temb)), pnode(g, pnodes, "embed.time.w"),
                                       pnode(g, pnodes, "embed.time.b")));
    Graph::NodeId ce = g.rows(pnode(g, pnodes, "embed.class"), c);
    return g.add(te, ce);
}

Graph::NodeId DenoiserModel::forward_image(Graph& g, Graph::NodeId xt, Graph::NodeId cond,
                                           std::map<std::string, Graph::NodeId>& pnodes,
                                           Graph::NodeId* deepest) const {
    auto resblock = [&](Graph::NodeId h, const char* stage, int level, int block) {
        std::string base = block_name(stage, level, block);
        Graph::NodeId u = g.conv2d(h, pnode(g, pnodes, base + ".k1"), 1, 1);
        Graph::NodeId bias =
            g.linear(cond, pnode(g, pnodes, base + ".wc"), pnode(g, pnodes, base + ".bc"));
        u = g.silu(g.bias_hw(u, bias));
        u = g.conv2d(u, pnode(g, pnodes, base + ".k2"), 1, 1);
        return g.add(h, u);
    };

    Graph::NodeId h = g.conv2d(xt, pnode(g, pnodes, "stem.k"), 1, 1);
    std::vector<Graph::NodeId> skips;
    for (int l = 0; l < arch_.levels; ++l) {
        for (int b = 0; b < arch_.blocks_per_level; ++b) h = resblock(h, "enc", l, b);
        if (l + 1 < arch_.levels) {
            skips.push_back(h);
            h = g.conv2d(h, pnode(g, pnodes, "down." + std::to_string(l) + ".k"), 2, 1);
        }
    }
    if (deepest) *deepest = h;
    for (int l = arch_.levels - 2; l >= 0; --l) {
        h = g.upsample2x(h);
        h = g.conv2d(h, pnode(g, pnodes, "up." + std::to_string(l) + ".k"), 1, 1);
        h = g.add(h, skips[static_cast<std::size_t>(l)]);
        for (int b = 0; b < arch_.blocks_per_level; ++b) h = resblock(h, "dec", l, b);
    }
    return g.conv2d(h, pnode(g, pnodes, "head.k"), 1, 1);
}

Graph::NodeId DenoiserModel::forward_vector(Graph& g, Graph::NodeId xt, Graph::NodeId cond,
                                            std::map<std::string, Graph::NodeId>& pnodes,
                                            Graph::NodeId* deepest) const {
    Graph::NodeId h =
        g.linear(xt, pnode(g, pnodes, "stem.w"), pnode(g, pnodes, "stem.b"));
    int blocks = arch_.blocks_per_level * arch_.levels;
    for (int b = 0; b < blocks; ++b) {
        std::string base = block_name("blk", 0, b);
        Graph::NodeId u = g.add(
            g.linear(h, pnode(g, pnodes, base + ".w1"), pnode(g, pnodes, base + ".b1")),
            g.linear(cond, pnode(g, pnodes, base + ".wc"), pnode(g, pnodes, base + ".bc")));
        u = g.silu(u);
        u = g.linear(u, pnode(g, pnodes, base + ".w2"), pnode(g, pnodes, base + ".b2"));
        h = g.add(h, u);
    }
    if (deepest) *deepest = h;
    return g.linear(h, pnode(g, pnodes, "head.w"), pnode(g, pnodes, "head.b"));
}

Graph::NodeId DenoiserModel::forward_impl(Graph& g, Graph::NodeId xt, const std::vector<int>& t,
                                          const std::vector<int>& c,
                                          Graph::NodeId* deepest) const {
    const Tensor& xv = g.val(xt);
    std::vector<int> expect = {static_cast<int>(t.size())};
    expect.insert(expect.end(), arch_.input_shape.begin(), arch_.input_shape.end());
    if (xv.shape != expect || t.size() != c.size()) {
        throw DimensionError("denoiser input " + shape_string(xv.shape) + " does not match " +
                             shape_string(expect));
    }
    std::map<std::string, Graph::NodeId> pnodes;
    Graph::NodeId cond = cond_vector(g, t, c, pnodes);
    if (arch_.mode == DenoiserMode::kImage) {
        return forward_image(g, xt, cond, pnodes, deepest);
    }
    return forward_vector(g, xt, cond, pnodes, deepest);
}

Graph::NodeId DenoiserModel::forward(Graph& g, Graph::NodeId xt, const std::vector<int>& t,
                                     const std::vector<int>& c) const {
    return forward_impl(g, xt, t, c, nullptr);
}

Tensor DenoiserModel::predict_noise_batch(const Tensor& xt, const std::vector<int>& t,
                                          const std::vector<int>& c) const {
    Graph g;
    Graph::NodeId out = forward(g, g.value(xt), t, c);
    return g.val(out);
}

Tensor DenoiserModel::predict_noise(const Tensor& xt, int t, int c) const {
    Tensor batched = xt;
    batched.shape.insert(batched.shape.begin(), 1);
    Tensor out = predict_noise_batch(batched, {t}, {c});
    out.shape.erase(out.shape.begin());
    return out;
}

std::vector<double> DenoiserModel::encode(const Tensor& x) const {
    Tensor batched = x;
    batched.shape.insert(batched.shape.begin(), 1);
    Graph g;
    Graph::NodeId deepest = -1;
    forward_impl(g, g.value(std::move(batched)), {0}, {0}, &deepest);
    const Tensor& act = g.val(deepest);
    if (arch_.mode == DenoiserMode::kVector) {
        return std::vector<double>(act.data.begin(), act.data.end());
    }
    int ch = act.shape[1];
    int hw = act.shape[2] * act.shape[3];
    std::vector<double> pooled(static_cast<std::size_t>(ch), 0.0);
    for (int ci = 0; ci < ch; ++ci) {
        const double* p = act.data.data() + static_cast<std::size_t>(ci) * hw;
        for (int i = 0; i < hw; ++i) pooled[static_cast<std::size_t>(ci)] += p[i];
        pooled[static_cast<std::size_t>(ci)] /= hw;
    }
    return pooled;
}

void DenoiserModel::zero_grads() {
    for (auto& [name, p] : params_) p.zero_grad();
}

void DenoiserModel::sgd_step(double learning_rate) {
    for (auto& [name, p] : params_) {
        for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] -= learning_rate * p.grad[i];
    }
}

void TrainConfig::validate() const {
    if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (weight_vlb < 0.0) throw ContractError("weight_vlb must be >= 0");
}

std::vector<double> train_denoiser(DenoiserModel& model, const std::vector<LabeledTensor>& dataset,
                                   const TrainConfig& cfg, const NoiseSchedule& sched) {
    cfg.validate();
    if (dataset.empty()) throw ContractError("train: dataset is empty");
    const std::vector<int>& item_shape = model.arch().input_shape;
    for (const LabeledTensor& item : dataset) {
        if (item.x.shape != item_shape) {
            throw DimensionError("train: item shape " + shape_string(item.x.shape) +
                                 " does not match model input " + shape_string(item_shape));
        }
        if (item.label < 0 || item.label >= model.arch().class_count) {
            throw ContractError("train: label " + std::to_string(item.label) + " out of range");
        }
    }

    Rng rng = Rng::derive(cfg.seed, 0x7124);
    std::size_t item_size = model.arch().input_size();
    std::vector<double> history;
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    long step = model.trained_steps();
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng.engine());
        for (std::size_t base = 0; base < order.size(); base += static_cast<std::size_t>(cfg.batch_size)) {
            std::size_t bsz = std::min<std::size_t>(cfg.batch_size, order.size() - base);
            std::vector<int> shape = {static_cast<int>(bsz)};
            shape.insert(shape.end(), item_shape.begin(), item_shape.end());
            Tensor xt = Tensor::zeros(shape);
            Tensor eps = Tensor::zeros(shape);
            std::vector<int> ts(bsz), cs(bsz);
            std::vector<double> sqw(bsz);
            bool weighted = cfg.weight_vlb > 0.0;
            for (std::size_t i = 0; i < bsz; ++i) {
                const LabeledTensor& item = dataset[order[base + i]];
                int t = static_cast<int>(rng.uniform_int(0, sched.steps - 1));
                ts[i] = t;
                cs[i] = item.label;
                Tensor e = Tensor::zeros(item_shape);
                for (double& v : e.data) v = rng.normal();
                Tensor noisy = forward_sample(item.x, t, e, sched);
                std::copy(noisy.data.begin(), noisy.data.end(), xt.data.begin() + i * item_size);
                std::copy(e.data.begin(), e.data.end(), eps.data.begin() + i * item_size);
                sqw[i] = weighted ? std::sqrt(1.0 + cfg.weight_vlb * vlb_step_weight(sched, t))
                                  : 1.0;
            }

            Graph g;
            Graph::NodeId pred = model.forward(g, g.value(std::move(xt)), ts, cs);
            Graph::NodeId target = g.value(std::move(eps));
            Graph::NodeId loss;
            if (weighted) {
                // per-item sqrt weights fold the t-dependent variational
                // reweighting into a single mean-squared error
                Tensor wfull = Tensor::zeros(shape);
                for (std::size_t i = 0; i < bsz; ++i) {
                    std::fill_n(wfull.data.begin() + i * item_size, item_size, sqw[i]);
                }
                Graph::NodeId w1 = g.value(wfull);
                Graph::NodeId w2 = g.value(std::move(wfull));
                loss = g.mse(g.mul(pred, w1), g.mul(target, w2));
            } else {
                loss = g.mse(pred, target);
            }

            double loss_value = g.val(loss).data[0];
            if (!std::isfinite(loss_value)) {
                throw TrainingError("non-finite loss " + std::to_string(loss_value) +
                                    " at step " + std::to_string(step));
            }
            model.zero_grads();
            g.backward(loss);
            model.sgd_step(cfg.learning_rate);
            history.push_back(loss_value);
            ++step;
        }
    }
    model.set_trained_steps(step);
    return history;
}

std::vector<Tensor> sample(const DenoiserModel& model, const NoiseSchedule& sched, int c, int n,
                           std::uint64_t seed) {
    if (n < 0) throw ContractError("sample: n must be >= 0");
    if (c < 0 || c >= model.arch().class_count) {
        throw ContractError("sample: class id out of range");
    }
    std::vector<Tensor> out;
    if (n == 0) return out;

    const std::vector<int>& item_shape = model.arch().input_shape;
    std::size_t item_size = model.arch().input_size();
    std::vector<int> shape = {n};
    shape.insert(shape.end(), item_shape.begin(), item_shape.end());

    std::vector<Rng> chains;
    chains.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) chains.push_back(Rng::derive(seed, 0x5A3F, static_cast<std::uint64_t>(i)));

    Tensor x = Tensor::zeros(shape);
    for (int i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < item_size; ++j) {
            x.data[static_cast<std::size_t>(i) * item_size + j] = chains[static_cast<std::size_t>(i)].normal();
        }
    }

    std::vector<int> ts(static_cast<std::size_t>(n)), cs(static_cast<std::size_t>(n), c);
    for (int t = sched.steps - 1; t >= 0; --t) {
        std::fill(ts.begin(), ts.end(), t);
        Tensor eps_pred = model.predict_noise_batch(x, ts, cs);
        Tensor z = Tensor::zeros(shape);
        if (t > 0) {
            for (int i = 0; i < n; ++i) {
                for (std::size_t j = 0; j < item_size; ++j) {
                    z.data[static_cast<std::size_t>(i) * item_size + j] =
                        chains[static_cast<std::size_t>(i)].normal();
                }
            }
        }
        x = reverse_step(x, t, eps_pred, sched, z);
    }

    out.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Tensor item = Tensor::zeros(item_shape);
        std::copy_n(x.data.begin() + static_cast<std::size_t>(i) * item_size, item_size,
                    item.data.begin());
        out.push_back(std::move(item));
    }
    return out;
}

}  // namespace duv
