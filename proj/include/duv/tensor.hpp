#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "duv/errors.hpp"
#include "duv/rng.hpp"

namespace duv {

// Dense row-major tensor of 64-bit floats.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // same length as data when requires_grad

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<double> data_, bool requires_grad_ = false);

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);
    static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    std::size_t size() const { return data.size(); }
    int extent(std::size_t axis) const { return shape.at(axis); }
    void zero_grad();
    bool all_finite() const;
};

std::size_t shape_product(const std::vector<int>& shape);
std::string shape_string(const std::vector<int>& shape);

// Append-only operation tape. Node ids are indices into the tape;
// backward() walks it in strict reverse append order. One Graph serves
// one forward/backward pass; parameters persist outside the graph and
// receive accumulated gradients through param() nodes.
class Graph {
  public:
    using NodeId = int;

    // Constant leaf; no gradient is propagated into it.
    NodeId value(Tensor t);

    // Leaf bound to an external parameter. backward() accumulates into
    // p.grad (p must outlive the graph and have requires_grad set).
    NodeId param(Tensor& p);

    NodeId linear(NodeId x, NodeId w, NodeId b);
    NodeId conv2d(NodeId x, NodeId k, int stride, int pad);
    NodeId add(NodeId a, NodeId b);  // b may omit the leading batch axis
    NodeId mul(NodeId a, NodeId b);
    NodeId silu(NodeId x);
    NodeId scale(NodeId x, double factor);
    // x: [N,C,H,W] plus per-sample channel bias b: [N,C]
    NodeId bias_hw(NodeId x, NodeId b);
    // Gather rows of table [K,D] -> [N,D]
    NodeId rows(NodeId table, std::vector<int> indices);
    // Nearest-neighbour 2x spatial upsample of [N,C,H,W]
    NodeId upsample2x(NodeId x);
    NodeId mse(NodeId pred, NodeId target);

    const Tensor& val(NodeId id) const;
    void backward(NodeId loss);

    std::size_t node_count() const { return nodes_.size(); }

  private:
    enum class Op {
        kValue,
        kParam,
        kLinear,
        kConv2d,
        kAdd,
        kMul,
        kSilu,
        kScale,
        kBiasHW,
        kRows,
        kUpsample2x,
        kMse,
    };

    struct Node {
        Op op;
        Tensor value;
        std::vector<NodeId> inputs;
        std::vector<double> grad;  // lazily sized during backward
        Tensor* bound = nullptr;   // kParam only
        double factor = 0.0;       // kScale
        int stride = 1, pad = 0;   // kConv2d
        std::vector<int> indices;  // kRows
    };

    NodeId push(Node n);
    Node& at(NodeId id);
    const Node& at(NodeId id) const;
    void accumulate(Node& node, const std::vector<double>& g);
    void backward_node(NodeId id);

    std::vector<Node> nodes_;
};

}  // namespace duv
