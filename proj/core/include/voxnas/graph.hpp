#pragma once

// Define-by-run reverse-mode autodiff tape over Tensor5. Each builder method
// validates shapes, runs the forward kernel immediately, and records enough
// state to replay the op backwards. Creation order is topological order, so
// backward() is a single reverse sweep.
//
// A graph is meant to be built, run backward once, read, and discarded; it
// does not support re-running forward with new leaf values.

#include <cstdint>
#include <vector>

#include "voxnas/ops.hpp"
#include "voxnas/tensor.hpp"

namespace voxnas {

using NodeId = int32_t;

enum class OpKind {
    kLeaf,
    kConv3d,
    kPool3d,
    kInstanceNorm,
    kActivation,
    kTanh,
    kSigmoid,
    kResize,
    kAdd,
    kMul,
    kScale,
    kConcatChannels,
    kSliceChannels,
    kSumAll,
    kDiceLoss,
    kLogProbCat,
    kEntropyCat,
};

template <typename T>
class Graph {
  public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;
    Graph(Graph&&) = default;
    Graph& operator=(Graph&&) = default;

    NodeId leaf(Tensor5<T> value, bool requires_grad);

    // x:(n,ci,d,h,w) * kernel:(co,ci,kd,kh,kw) + bias:(1,co,1,1,1), stride 1,
    // zero "same" padding, odd kernel extents in {1,3}, per-axis dilation.
    NodeId conv3d(NodeId x, NodeId kernel, NodeId bias, Axes3 dilation = {});
    // window == stride, each axis in {1,2}; output extents floor(in/stride).
    NodeId pool3d(NodeId x, PoolKind kind, Axes3 stride);
    // gamma/beta:(1,c,1,1,1); statistics per (n,c) over the spatial volume.
    NodeId instance_norm(NodeId x, NodeId gamma, NodeId beta, T eps = T(1e-5));
    NodeId activation(NodeId x, ActKind kind);
    NodeId tanh(NodeId x);
    NodeId sigmoid(NodeId x);
    // Trilinear, align-corners; degenerate axes replicate.
    NodeId resize_trilinear(NodeId x, int64_t d, int64_t h, int64_t w);
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId scale(NodeId x, T factor);
    NodeId concat_channels(NodeId a, NodeId b);
    NodeId slice_channels(NodeId x, int64_t begin, int64_t count);
    NodeId sum_all(NodeId x);
    // Soft dice loss averaged over (n,c); gradient flows to pred only.
    NodeId dice_loss(NodeId pred, NodeId target, T eps = T(1e-5));
    // logits:(1,k,1,1,1) -> scalar log softmax(logits)[action].
    NodeId log_prob_categorical(NodeId logits, int64_t action);
    // logits:(1,k,1,1,1) -> scalar entropy of softmax(logits).
    NodeId entropy_categorical(NodeId logits);

    const Tensor5<T>& value(NodeId id) const;
    // Gradient of the backward() loss w.r.t. this node; ShapeError if
    // backward has not run or the node did not require grad.
    const Tensor5<T>& grad(NodeId id) const;
    bool requires_grad(NodeId id) const;

    // loss must be scalar-shaped (1,1,1,1,1).
    void backward(NodeId loss);

    size_t size() const { return nodes_.size(); }

  private:
    struct Node {
        OpKind kind = OpKind::kLeaf;
        NodeId in0 = -1, in1 = -1, in2 = -1;
        bool requires_grad = false;
        Tensor5<T> value;
        Tensor5<T> grad;
        bool has_grad = false;
        Axes3 axes;              // conv dilation, pool stride, resize target
        PoolKind pool = PoolKind::kMax;
        ActKind act = ActKind::kRelu;
        T scalar = T(0);         // scale factor, norm/dice eps
        int64_t i0 = 0, i1 = 0;  // slice begin/count, categorical action
        std::vector<T> aux;      // saved stats / partial sums / probs
        std::vector<int64_t> aux_idx;  // pool argmax
    };

    Node& at(NodeId id);
    const Node& at(NodeId id) const;
    NodeId push(Node&& n);
    void check(NodeId id, const char* where) const;
    void backward_node(Node& n);
    Tensor5<T>* grad_of(NodeId id);  // null when input does not require grad

    std::vector<Node> nodes_;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace voxnas
