#include "duv/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "duv/kernels.hpp"

namespace duv {

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t p = 1;
    for (int e : shape) p *= static_cast<std::size_t>(e);
    return p;
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape_, std::vector<double> data_, bool requires_grad_)
    : shape(std::move(shape_)), data(std::move(data_)), requires_grad(requires_grad_) {
    for (int e : shape) {
        if (e <= 0) throw DimensionError("tensor extent must be positive, got " + shape_string(shape));
    }
    if (shape_product(shape) != data.size()) {
        throw DimensionError("tensor shape " + shape_string(shape) + " does not match data length " +
                             std::to_string(data.size()));
    }
    if (requires_grad) grad.assign(data.size(), 0.0);
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::vector<double> d(shape_product(shape), 0.0);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    std::vector<double> d(shape_product(shape), value);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::randn(std::vector<int> shape, Rng& rng, double stddev, bool requires_grad) {
    std::vector<double> d(shape_product(shape));
    for (double& v : d) v = rng.normal(0.0, stddev);
    return Tensor(std::move(shape), std::move(d), requires_grad);
}

void Tensor::zero_grad() {
    grad.assign(data.size(), 0.0);
}

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape) + " and " +
                             shape_string(b.shape) + " differ");
    }
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Graph::NodeId Graph::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size()) - 1;
}

Graph::Node& Graph::at(NodeId id) { return nodes_.at(static_cast<std::size_t>(id)); }
const Graph::Node& Graph::at(NodeId id) const { return nodes_.at(static_cast<std::size_t>(id)); }

const Tensor& Graph::val(NodeId id) const { return at(id).value; }

Graph::NodeId Graph::value(Tensor t) {
    Node n;
    n.op = Op::kValue;
    n.value = std::move(t);
    return push(std::move(n));
}

Graph::NodeId Graph::param(Tensor& p) {
    if (!p.requires_grad) throw ContractError("param tensor must have requires_grad set");
    Node n;
    n.op = Op::kParam;
    n.value = p;  // snapshot of current values
    n.bound = &p;
    return push(std::move(n));
}

Graph::NodeId Graph::linear(NodeId x, NodeId w, NodeId b) {
    const Tensor& xv = val(x);
    const Tensor& wv = val(w);
    const Tensor& bv = val(b);
    if (xv.shape.size() != 2 || wv.shape.size() != 2 || bv.shape.size() != 1 ||
        xv.shape[1] != wv.shape[0] || wv.shape[1] != bv.shape[0]) {
        throw DimensionError("linear: x " + shape_string(xv.shape) + ", w " + shape_string(wv.shape) +
                             ", b " + shape_string(bv.shape) + " do not conform");
    }
    int n = xv.shape[0], d_in = xv.shape[1], d_out = wv.shape[1];
    Tensor out = Tensor::zeros({n, d_out});
    kernels::matmul(xv.data.data(), wv.data.data(), out.data.data(), n, d_in, d_out);
    for (int r = 0; r < n; ++r) {
        for (int j = 0; j < d_out; ++j) out.data[r * d_out + j] += bv.data[j];
    }
    Node node;
    node.op = Op::kLinear;
    node.value = std::move(out);
    node.inputs = {x, w, b};
    return push(std::move(node));
}

Graph::NodeId Graph::conv2d(NodeId x, NodeId k, int stride, int pad) {
    const Tensor& xv = val(x);
    const Tensor& kv = val(k);
    if (stride != 1 && stride != 2) throw ContractError("conv2d: stride must be 1 or 2");
    if (pad != 0 && pad != 1) throw ContractError("conv2d: pad must be 0 or 1");
    if (xv.shape.size() != 4 || kv.shape.size() != 4 || kv.shape[2] != 3 || kv.shape[3] != 3 ||
        kv.shape[1] != xv.shape[1]) {
        throw DimensionError("conv2d: x " + shape_string(xv.shape) + " and kernel " +
                             shape_string(kv.shape) + " do not conform (3x3 kernels only)");
    }
    int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    int f = kv.shape[0];
    int ho = kernels::conv2d_out_extent(h, stride, pad);
    int wo = kernels::conv2d_out_extent(w, stride, pad);
    if (ho < 1 || wo < 1) {
        throw DimensionError("conv2d: output size would be " + std::to_string(ho) + "x" +
                             std::to_string(wo));
    }
    Tensor out = Tensor::zeros({n, f, ho, wo});
    kernels::conv2d(xv.data.data(), kv.data.data(), out.data.data(), n, c, h, w, f, stride, pad,
                    ho, wo);
    Node node;
    node.op = Op::kConv2d;
    node.value = std::move(out);
    node.inputs = {x, k};
    node.stride = stride;
    node.pad = pad;
    return push(std::move(node));
}

Graph::NodeId Graph::add(NodeId a, NodeId b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    Tensor out;
    if (av.shape == bv.shape) {
        out = av;
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += bv.data[i];
    } else if (av.shape.size() == bv.shape.size() + 1 &&
               std::equal(bv.shape.begin(), bv.shape.end(), av.shape.begin() + 1)) {
        // broadcast b over the leading batch axis of a
        out = av;
        std::size_t stride = bv.data.size();
        for (int r = 0; r < av.shape[0]; ++r) {
            for (std::size_t i = 0; i < stride; ++i) out.data[r * stride + i] += bv.data[i];
        }
    } else {
        throw DimensionError("add: shapes " + shape_string(av.shape) + " and " +
                             shape_string(bv.shape) + " are incompatible");
    }
    Node node;
    node.op = Op::kAdd;
    node.value = std::move(out);
    node.inputs = {a, b};
    return push(std::move(node));
}

Graph::NodeId Graph::mul(NodeId a, NodeId b) {
    const Tensor& av = val(a);
    const Tensor& bv = val(b);
    require_same_shape(av, bv, "mul");
    Tensor out = av;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    Node node;
    node.op = Op::kMul;
    node.value = std::move(out);
    node.inputs = {a, b};
    return push(std::move(node));
}

Graph::NodeId Graph::silu(NodeId x) {
    Tensor out = val(x);
    for (double& v : out.data) v = v * sigmoid(v);
    Node node;
    node.op = Op::kSilu;
    node.value = std::move(out);
    node.inputs = {x};
    return push(std::move(node));
}

Graph::NodeId Graph::scale(NodeId x, double factor) {
    Tensor out = val(x);
    for (double& v : out.data) v *= factor;
    Node node;
    node.op = Op::kScale;
    node.value = std::move(out);
    node.inputs = {x};
    node.factor = factor;
    return push(std::move(node));
}

Graph::NodeId Graph::bias_hw(NodeId x, NodeId b) {
    const Tensor& xv = val(x);
    const Tensor& bv = val(b);
    if (xv.shape.size() != 4 || bv.shape.size() != 2 || xv.shape[0] != bv.shape[0] ||
        xv.shape[1] != bv.shape[1]) {
        throw DimensionError("bias_hw: x " + shape_string(xv.shape) + " and b " +
                             shape_string(bv.shape) + " do not conform");
    }
    int n = xv.shape[0], c = xv.shape[1];
    int hw = xv.shape[2] * xv.shape[3];
    Tensor out = xv;
    for (int ni = 0; ni < n; ++ni) {
        for (int ci = 0; ci < c; ++ci) {
            double bias = bv.data[ni * c + ci];
            double* p = out.data.data() + (static_cast<std::size_t>(ni) * c + ci) * hw;
            for (int i = 0; i < hw; ++i) p[i] += bias;
        }
    }
    Node node;
    node.op = Op::kBiasHW;
    node.value = std::move(out);
    node.inputs = {x, b};
    return push(std::move(node));
}

Graph::NodeId Graph::rows(NodeId table, std::vector<int> indices) {
    const Tensor& tv = val(table);
    if (tv.shape.size() != 2) throw DimensionError("rows: table must be 2-D");
    int k = tv.shape[0], d = tv.shape[1];
    for (int idx : indices) {
        if (idx < 0 || idx >= k) throw ContractError("rows: index " + std::to_string(idx) + " out of range");
    }
    Tensor out = Tensor::zeros({static_cast<int>(indices.size()), d});
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy_n(tv.data.begin() + static_cast<std::size_t>(indices[r]) * d, d,
                    out.data.begin() + r * d);
    }
    Node node;
    node.op = Op::kRows;
    node.value = std::move(out);
    node.inputs = {table};
    node.indices = std::move(indices);
    return push(std::move(node));
}

Graph::NodeId Graph::upsample2x(NodeId x) {
    const Tensor& xv = val(x);
    if (xv.shape.size() != 4) throw DimensionError("upsample2x: expected [N,C,H,W]");
    int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
    Tensor out = Tensor::zeros({n, c, 2 * h, 2 * w});
    for (int p = 0; p < n * c; ++p) {
        const double* src = xv.data.data() + static_cast<std::size_t>(p) * h * w;
        double* dst = out.data.data() + static_cast<std::size_t>(p) * 4 * h * w;
        for (int y = 0; y < 2 * h; ++y) {
            for (int x2 = 0; x2 < 2 * w; ++x2) {
                dst[y * 2 * w + x2] = src[(y / 2) * w + (x2 / 2)];
            }
        }
    }
    Node node;
    node.op = Op::kUpsample2x;
    node.value = std::move(out);
    node.inputs = {x};
    return push(std::move(node));
}

Graph::NodeId Graph::mse(NodeId pred, NodeId target) {
    const Tensor& pv = val(pred);
    const Tensor& tv = val(target);
    require_same_shape(pv, tv, "mse");
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.data.size(); ++i) {
        double d = pv.data[i] - tv.data[i];
        acc += d * d;
    }
    Node node;
    node.op = Op::kMse;
    node.value = Tensor::scalar(acc / static_cast<double>(pv.data.size()));
    node.inputs = {pred, target};
    return push(std::move(node));
}

void Graph::accumulate(Node& node, const std::vector<double>& g) {
    if (node.grad.empty()) node.grad.assign(node.value.data.size(), 0.0);
    for (std::size_t i = 0; i < g.size(); ++i) node.grad[i] += g[i];
}

void Graph::backward(NodeId loss) {
    Node& top = at(loss);
    if (top.value.size() != 1) throw ContractError("backward: loss must be scalar");
    accumulate(top, {1.0});
    for (NodeId id = loss; id >= 0; --id) backward_node(id);
    // flush param grads into their bound tensors
    for (Node& n : nodes_) {
        if (n.op == Op::kParam && !n.grad.empty()) {
            for (std::size_t i = 0; i < n.grad.size(); ++i) n.bound->grad[i] += n.grad[i];
            n.grad.clear();
        }
    }
}

void Graph::backward_node(NodeId id) {
    Node& node = at(id);
    if (node.grad.empty()) return;  // not on a path to the loss
    const std::vector<double>& g = node.grad;
    switch (node.op) {
        case Op::kValue:
        case Op::kParam:
            return;
        case Op::kLinear: {
            const Tensor& xv = val(node.inputs[0]);
            const Tensor& wv = val(node.inputs[1]);
            int n = xv.shape[0], d_in = xv.shape[1], d_out = wv.shape[1];
            std::vector<double> gx(xv.data.size());
            kernels::matmul_a_bt(g.data(), wv.data.data(), gx.data(), n, d_in, d_out);
            accumulate(at(node.inputs[0]), gx);
            std::vector<double> gw(wv.data.size());
            kernels::matmul_at_b(xv.data.data(), g.data(), gw.data(), n, d_in, d_out);
            accumulate(at(node.inputs[1]), gw);
            std::vector<double> gb(static_cast<std::size_t>(d_out), 0.0);
            for (int r = 0; r < n; ++r) {
                for (int j = 0; j < d_out; ++j) gb[j] += g[r * d_out + j];
            }
            accumulate(at(node.inputs[2]), gb);
            return;
        }
        case Op::kConv2d: {
            const Tensor& xv = val(node.inputs[0]);
            const Tensor& kv = val(node.inputs[1]);
            int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
            int f = kv.shape[0];
            int ho = node.value.shape[2], wo = node.value.shape[3];
            std::vector<double> gx(xv.data.size(), 0.0);
            kernels::conv2d_grad_input(g.data(), kv.data.data(), gx.data(), n, c, h, w, f,
                                       node.stride, node.pad, ho, wo);
            accumulate(at(node.inputs[0]), gx);
            std::vector<double> gk(kv.data.size(), 0.0);
            kernels::conv2d_grad_kernel(xv.data.data(), g.data(), gk.data(), n, c, h, w, f,
                                        node.stride, node.pad, ho, wo);
            accumulate(at(node.inputs[1]), gk);
            return;
        }
        case Op::kAdd: {
            accumulate(at(node.inputs[0]), g);
            Node& b = at(node.inputs[1]);
            if (b.value.shape == node.value.shape) {
                accumulate(b, g);
            } else {
                std::size_t stride = b.value.data.size();
                std::vector<double> gb(stride, 0.0);
                for (std::size_t r = 0; r < g.size() / stride; ++r) {
                    for (std::size_t i = 0; i < stride; ++i) gb[i] += g[r * stride + i];
                }
                accumulate(b, gb);
            }
            return;
        }
        case Op::kMul: {
            const Tensor& av = val(node.inputs[0]);
            const Tensor& bv = val(node.inputs[1]);
            std::vector<double> ga(g.size()), gb(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                ga[i] = g[i] * bv.data[i];
                gb[i] = g[i] * av.data[i];
            }
            accumulate(at(node.inputs[0]), ga);
            accumulate(at(node.inputs[1]), gb);
            return;
        }
        case Op::kSilu: {
            const Tensor& xv = val(node.inputs[0]);
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) {
                double s = sigmoid(xv.data[i]);
                gx[i] = g[i] * s * (1.0 + xv.data[i] * (1.0 - s));
            }
            accumulate(at(node.inputs[0]), gx);
            return;
        }
        case Op::kScale: {
            std::vector<double> gx(g.size());
            for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * node.factor;
            accumulate(at(node.inputs[0]), gx);
            return;
        }
        case Op::kBiasHW: {
            accumulate(at(node.inputs[0]), g);
            const Tensor& xv = val(node.inputs[0]);
            int n = xv.shape[0], c = xv.shape[1];
            int hw = xv.shape[2] * xv.shape[3];
            std::vector<double> gb(static_cast<std::size_t>(n) * c, 0.0);
            for (int p = 0; p < n * c; ++p) {
                const double* gp = g.data() + static_cast<std::size_t>(p) * hw;
                for (int i = 0; i < hw; ++i) gb[p] += gp[i];
            }
            accumulate(at(node.inputs[1]), gb);
            return;
        }
        case Op::kRows: {
            const Tensor& tv = val(node.inputs[0]);
            int d = tv.shape[1];
            std::vector<double> gt(tv.data.size(), 0.0);
            for (std::size_t r = 0; r < node.indices.size(); ++r) {
                for (int j = 0; j < d; ++j) {
                    gt[static_cast<std::size_t>(node.indices[r]) * d + j] += g[r * d + j];
                }
            }
            accumulate(at(node.inputs[0]), gt);
            return;
        }
        case Op::kUpsample2x: {
            const Tensor& xv = val(node.inputs[0]);
            int n = xv.shape[0], c = xv.shape[1], h = xv.shape[2], w = xv.shape[3];
            std::vector<double> gx(xv.data.size(), 0.0);
            for (int p = 0; p < n * c; ++p) {
                const double* gp = g.data() + static_cast<std::size_t>(p) * 4 * h * w;
                double* xp = gx.data() + static_cast<std::size_t>(p) * h * w;
                for (int y = 0; y < 2 * h; ++y) {
                    for (int x2 = 0; x2 < 2 * w; ++x2) {
                        xp[(y / 2) * w + (x2 / 2)] += gp[y * 2 * w + x2];
                    }
                }
            }
            accumulate(at(node.inputs[0]), gx);
            return;
        }
        case Op::kMse: {
            const Tensor& pv = val(node.inputs[0]);
            const Tensor& tv = val(node.inputs[1]);
            double go = g[0];
            double inv_m = 1.0 / static_cast<double>(pv.data.size());
            std::vector<double> gp(pv.data.size()), gt(pv.data.size());
            for (std::size_t i = 0; i < pv.data.size(); ++i) {
                double d = 2.0 * (pv.data[i] - tv.data[i]) * inv_m * go;
                gp[i] = d;
                gt[i] = -d;
            }
            accumulate(at(node.inputs[0]), gp);
            accumulate(at(node.inputs[1]), gt);
            return;
        }
    }
}

}  // namespace duv
