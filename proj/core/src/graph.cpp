#include "voxnas/graph.hpp"

#include <string>

#include "kernels.hpp"
#include "voxnas/errors.hpp"

namespace voxnas {

namespace {

std::string axes_str(Axes3 a) {
    return "(" + std::to_string(a.d) + "," + std::to_string(a.h) + "," + std::to_string(a.w) + ")";
}

constexpr Shape5 kScalarShape{1, 1, 1, 1, 1};

}  // namespace

template <typename T>
typename Graph<T>::Node& Graph<T>::at(NodeId id) {
    return nodes_[static_cast<size_t>(id)];
}

template <typename T>
const typename Graph<T>::Node& Graph<T>::at(NodeId id) const {
    return nodes_[static_cast<size_t>(id)];
}

template <typename T>
void Graph<T>::check(NodeId id, const char* where) const {
    if (id < 0 || static_cast<size_t>(id) >= nodes_.size())
        throw ArgumentError(std::string(where) + ": invalid node id " + std::to_string(id));
}

template <typename T>
NodeId Graph<T>::push(Node&& n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

template <typename T>
NodeId Graph<T>::leaf(Tensor5<T> value, bool requires_grad) {
    Node n;
    n.kind = OpKind::kLeaf;
    n.requires_grad = requires_grad;
    n.value = std::move(value);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::conv3d(NodeId x, NodeId kernel, NodeId bias, Axes3 dilation) {
    check(x, "conv3d");
    check(kernel, "conv3d");
    check(bias, "conv3d");
    const auto& xs = at(x).value.shape;
    const auto& ks = at(kernel).value.shape;
    const auto& bs = at(bias).value.shape;
    auto ok_extent = [](int64_t e) { return e == 1 || e == 3; };
    if (!ok_extent(ks.d) || !ok_extent(ks.h) || !ok_extent(ks.w))
        throw ShapeError("conv3d: kernel extents must be 1 or 3, got " + ks.str());
    if (ks.c != xs.c)
        throw ShapeError("conv3d: kernel expects " + std::to_string(ks.c) + " input channels, input is " + xs.str());
    if (!(bs == Shape5{1, ks.n, 1, 1, 1}))
        throw ShapeError("conv3d: bias must be (1," + std::to_string(ks.n) + ",1,1,1), got " + bs.str());
    if (dilation.d < 1 || dilation.h < 1 || dilation.w < 1)
        throw ArgumentError("conv3d: dilation must be >= 1, got " + axes_str(dilation));

    Node n;
    n.kind = OpKind::kConv3d;
    n.in0 = x;
    n.in1 = kernel;
    n.in2 = bias;
    n.requires_grad = at(x).requires_grad || at(kernel).requires_grad || at(bias).requires_grad;
    n.axes = dilation;
    n.value = Tensor5<T>(Shape5{xs.n, ks.n, xs.d, xs.h, xs.w});
    kernels::conv3d_fwd(at(x).value, at(kernel).value, at(bias).value, dilation, n.value);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::pool3d(NodeId x, PoolKind kind, Axes3 stride) {
    check(x, "pool3d");
    const auto& xs = at(x).value.shape;
    auto ok = [](int64_t s) { return s == 1 || s == 2; };
    if (!ok(stride.d) || !ok(stride.h) || !ok(stride.w))
        throw ArgumentError("pool3d: stride must be 1 or 2 per axis, got " + axes_str(stride));
    if (xs.d < stride.d || xs.h < stride.h || xs.w < stride.w)
        throw ShapeError("pool3d: input " + xs.str() + " smaller than stride " + axes_str(stride));

    Node n;
    n.kind = OpKind::kPool3d;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.axes = stride;
    n.pool = kind;
    n.value = Tensor5<T>(Shape5{xs.n, xs.c, xs.d / stride.d, xs.h / stride.h, xs.w / stride.w});
    kernels::pool3d_fwd(at(x).value, kind, stride, n.value, kind == PoolKind::kMax ? &n.aux_idx : nullptr);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::instance_norm(NodeId x, NodeId gamma, NodeId beta, T eps) {
    check(x, "instance_norm");
    check(gamma, "instance_norm");
    check(beta, "instance_norm");
    const auto& xs = at(x).value.shape;
    const Shape5 want{1, xs.c, 1, 1, 1};
    if (!(at(gamma).value.shape == want))
        throw ShapeError("instance_norm: gamma must be " + want.str() + ", got " + at(gamma).value.shape.str());
    if (!(at(beta).value.shape == want))
        throw ShapeError("instance_norm: beta must be " + want.str() + ", got " + at(beta).value.shape.str());
    if (eps <= T(0)) throw ArgumentError("instance_norm: eps must be positive");

    Node n;
    n.kind = OpKind::kInstanceNorm;
    n.in0 = x;
    n.in1 = gamma;
    n.in2 = beta;
    n.requires_grad = at(x).requires_grad || at(gamma).requires_grad || at(beta).requires_grad;
    n.scalar = eps;
    n.value = Tensor5<T>(xs);
    kernels::instnorm_fwd(at(x).value, at(gamma).value, at(beta).value, eps, n.value, n.aux);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::activation(NodeId x, ActKind kind) {
    check(x, "activation");
    Node n;
    n.kind = OpKind::kActivation;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.act = kind;
    n.value = Tensor5<T>(at(x).value.shape);
    kernels::act_fwd(at(x).value, kind, n.value);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::tanh(NodeId x) {
    check(x, "tanh");
    Node n;
    n.kind = OpKind::kTanh;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.value = Tensor5<T>(at(x).value.shape);
    kernels::tanh_fwd(at(x).value, n.value);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::sigmoid(NodeId x) {
    check(x, "sigmoid");
    Node n;
    n.kind = OpKind::kSigmoid;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.value = Tensor5<T>(at(x).value.shape);
    kernels::sigmoid_fwd(at(x).value, n.value);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::resize_trilinear(NodeId x, int64_t d, int64_t h, int64_t w) {
    check(x, "resize_trilinear");
    if (d < 1 || h < 1 || w < 1)
        throw ArgumentError("resize_trilinear: target extents must be >= 1, got " + axes_str({d, h, w}));
    const auto& xs = at(x).value.shape;
    Node n;
    n.kind = OpKind::kResize;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.axes = {d, h, w};
    n.value = Tensor5<T>(Shape5{xs.n, xs.c, d, h, w});
    kernels::resize_trilinear_fwd(at(x).value, n.value);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
    check(a, "add");
    check(b, "add");
    require_shape(at(b).value.shape, at(a).value.shape, "add");
    Node n;
    n.kind = OpKind::kAdd;
    n.in0 = a;
    n.in1 = b;
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    n.value = Tensor5<T>(at(a).value.shape);
    const auto& va = at(a).value;
    const auto& vb = at(b).value;
    for (int64_t i = 0; i < va.numel(); ++i)
        n.value.data[static_cast<size_t>(i)] = va.data[static_cast<size_t>(i)] + vb.data[static_cast<size_t>(i)];
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
    check(a, "mul");
    check(b, "mul");
    require_shape(at(b).value.shape, at(a).value.shape, "mul");
    Node n;
    n.kind = OpKind::kMul;
    n.in0 = a;
    n.in1 = b;
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    n.value = Tensor5<T>(at(a).value.shape);
    const auto& va = at(a).value;
    const auto& vb = at(b).value;
    for (int64_t i = 0; i < va.numel(); ++i)
        n.value.data[static_cast<size_t>(i)] = va.data[static_cast<size_t>(i)] * vb.data[static_cast<size_t>(i)];
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::scale(NodeId x, T factor) {
    check(x, "scale");
    Node n;
    n.kind = OpKind::kScale;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.scalar = factor;
    n.value = Tensor5<T>(at(x).value.shape);
    const auto& vx = at(x).value;
    for (int64_t i = 0; i < vx.numel(); ++i) n.value.data[static_cast<size_t>(i)] = factor * vx.data[static_cast<size_t>(i)];
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::concat_channels(NodeId a, NodeId b) {
    check(a, "concat_channels");
    check(b, "concat_channels");
    const auto& as = at(a).value.shape;
    const auto& bs = at(b).value.shape;
    if (as.n != bs.n || as.d != bs.d || as.h != bs.h || as.w != bs.w)
        throw ShapeError("concat_channels: " + as.str() + " vs " + bs.str());

    Node n;
    n.kind = OpKind::kConcatChannels;
    n.in0 = a;
    n.in1 = b;
    n.requires_grad = at(a).requires_grad || at(b).requires_grad;
    n.value = Tensor5<T>(Shape5{as.n, as.c + bs.c, as.d, as.h, as.w});
    const int64_t V = as.spatial();
    for (int64_t i = 0; i < as.n; ++i) {
        std::copy_n(at(a).value.ptr() + i * as.c * V, as.c * V, n.value.ptr() + i * (as.c + bs.c) * V);
        std::copy_n(at(b).value.ptr() + i * bs.c * V, bs.c * V, n.value.ptr() + i * (as.c + bs.c) * V + as.c * V);
    }
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::slice_channels(NodeId x, int64_t begin, int64_t count) {
    check(x, "slice_channels");
    const auto& xs = at(x).value.shape;
    if (begin < 0 || count < 1 || begin + count > xs.c)
        throw ArgumentError("slice_channels: range [" + std::to_string(begin) + "," + std::to_string(begin + count) +
                            ") out of " + std::to_string(xs.c) + " channels");

    Node n;
    n.kind = OpKind::kSliceChannels;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.i0 = begin;
    n.i1 = count;
    n.value = Tensor5<T>(Shape5{xs.n, count, xs.d, xs.h, xs.w});
    const int64_t V = xs.spatial();
    for (int64_t i = 0; i < xs.n; ++i)
        std::copy_n(at(x).value.ptr() + (i * xs.c + begin) * V, count * V, n.value.ptr() + i * count * V);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::sum_all(NodeId x) {
    check(x, "sum_all");
    Node n;
    n.kind = OpKind::kSumAll;
    n.in0 = x;
    n.requires_grad = at(x).requires_grad;
    n.value = Tensor5<T>(kScalarShape);
    T acc = T(0);
    const auto& vx = at(x).value;
    for (int64_t i = 0; i < vx.numel(); ++i) acc += vx.data[static_cast<size_t>(i)];
    n.value.data[0] = acc;
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::dice_loss(NodeId pred, NodeId target, T eps) {
    check(pred, "dice_loss");
    check(target, "dice_loss");
    require_shape(at(target).value.shape, at(pred).value.shape, "dice_loss");
    if (eps <= T(0)) throw ArgumentError("dice_loss: eps must be positive");

    Node n;
    n.kind = OpKind::kDiceLoss;
    n.in0 = pred;
    n.in1 = target;
    n.requires_grad = at(pred).requires_grad;
    n.scalar = eps;
    n.value = Tensor5<T>(kScalarShape);
    n.value.data[0] = kernels::dice_loss_fwd(at(pred).value, at(target).value, eps, n.aux);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::log_prob_categorical(NodeId logits, int64_t action) {
    check(logits, "log_prob_categorical");
    const auto& ls = at(logits).value.shape;
    if (ls.n != 1 || ls.d != 1 || ls.h != 1 || ls.w != 1 || ls.c < 1)
        throw ShapeError("log_prob_categorical: logits must be (1,k,1,1,1), got " + ls.str());
    if (action < 0 || action >= ls.c)
        throw ArgumentError("log_prob_categorical: action " + std::to_string(action) + " out of " +
                            std::to_string(ls.c) + " choices");

    Node n;
    n.kind = OpKind::kLogProbCat;
    n.in0 = logits;
    n.requires_grad = at(logits).requires_grad;
    n.i0 = action;
    n.value = Tensor5<T>(kScalarShape);
    n.value.data[0] = kernels::log_prob_cat_fwd(at(logits).value, action, n.aux);
    return push(std::move(n));
}

template <typename T>
NodeId Graph<T>::entropy_categorical(NodeId logits) {
    check(logits, "entropy_categorical");
    const auto& ls = at(logits).value.shape;
    if (ls.n != 1 || ls.d != 1 || ls.h != 1 || ls.w != 1 || ls.c < 1)
        throw ShapeError("entropy_categorical: logits must be (1,k,1,1,1), got " + ls.str());

    Node n;
    n.kind = OpKind::kEntropyCat;
    n.in0 = logits;
    n.requires_grad = at(logits).requires_grad;
    n.value = Tensor5<T>(kScalarShape);
    n.value.data[0] = kernels::entropy_cat_fwd(at(logits).value, n.aux);
    return push(std::move(n));
}

template <typename T>
const Tensor5<T>& Graph<T>::value(NodeId id) const {
    check(id, "value");
    return at(id).value;
}

template <typename T>
const Tensor5<T>& Graph<T>::grad(NodeId id) const {
    check(id, "grad");
    if (!at(id).has_grad)
        throw ShapeError("grad: node " + std::to_string(id) + " has no gradient (backward not run, or grad not required)");
    return at(id).grad;
}

template <typename T>
bool Graph<T>::requires_grad(NodeId id) const {
    check(id, "requires_grad");
    return at(id).requires_grad;
}

template <typename T>
Tensor5<T>* Graph<T>::grad_of(NodeId id) {
    if (id < 0) return nullptr;
    Node& n = at(id);
    return n.requires_grad ? &n.grad : nullptr;
}

template <typename T>
void Graph<T>::backward(NodeId loss) {
    check(loss, "backward");
    Node& ln = at(loss);
    if (!(ln.value.shape == kScalarShape))
        throw ShapeError("backward: loss must be scalar-shaped, got " + ln.value.shape.str());
    if (!ln.requires_grad) throw ArgumentError("backward: loss does not depend on any grad-requiring leaf");

    for (Node& n : nodes_) {
        if (!n.requires_grad) continue;
        n.grad = Tensor5<T>(n.value.shape);
        n.has_grad = true;
    }
    ln.grad.data[0] = T(1);

    for (size_t i = nodes_.size(); i-- > 0;) {
        Node& n = nodes_[i];
        if (n.requires_grad && n.kind != OpKind::kLeaf) backward_node(n);
    }
}

template <typename T>
void Graph<T>::backward_node(Node& n) {
    const Tensor5<T>& g = n.grad;
    switch (n.kind) {
        case OpKind::kConv3d: {
            if (auto* gx = grad_of(n.in0)) kernels::conv3d_bwd_input(g, at(n.in1).value, n.axes, *gx);
            if (auto* gk = grad_of(n.in1)) kernels::conv3d_bwd_kernel(g, at(n.in0).value, n.axes, *gk);
            if (auto* gb = grad_of(n.in2)) kernels::conv3d_bwd_bias(g, *gb);
            break;
        }
        case OpKind::kPool3d: {
            if (auto* gx = grad_of(n.in0))
                kernels::pool3d_bwd(g, at(n.in0).value.shape, n.pool, n.axes, n.aux_idx, *gx);
            break;
        }
        case OpKind::kInstanceNorm: {
            kernels::instnorm_bwd(g, at(n.in0).value, at(n.in1).value, n.aux, grad_of(n.in0), grad_of(n.in1),
                                  grad_of(n.in2));
            break;
        }
        case OpKind::kActivation: {
            if (auto* gx = grad_of(n.in0)) kernels::act_bwd(g, at(n.in0).value, n.value, n.act, *gx);
            break;
        }
        case OpKind::kTanh: {
            if (auto* gx = grad_of(n.in0))
                for (int64_t i = 0; i < g.numel(); ++i) {
                    const T y = n.value.data[static_cast<size_t>(i)];
                    gx->data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * (T(1) - y * y);
                }
            break;
        }
        case OpKind::kSigmoid: {
            if (auto* gx = grad_of(n.in0))
                for (int64_t i = 0; i < g.numel(); ++i) {
                    const T y = n.value.data[static_cast<size_t>(i)];
                    gx->data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * y * (T(1) - y);
                }
            break;
        }
        case OpKind::kResize: {
            if (auto* gx = grad_of(n.in0)) kernels::resize_trilinear_bwd(g, at(n.in0).value.shape, *gx);
            break;
        }
        case OpKind::kAdd: {
            if (auto* ga = grad_of(n.in0))
                for (int64_t i = 0; i < g.numel(); ++i) ga->data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
            if (auto* gb = grad_of(n.in1))
                for (int64_t i = 0; i < g.numel(); ++i) gb->data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
            break;
        }
        case OpKind::kMul: {
            if (auto* ga = grad_of(n.in0)) {
                const auto& vb = at(n.in1).value;
                for (int64_t i = 0; i < g.numel(); ++i)
                    ga->data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * vb.data[static_cast<size_t>(i)];
            }
            if (auto* gb = grad_of(n.in1)) {
                const auto& va = at(n.in0).value;
                for (int64_t i = 0; i < g.numel(); ++i)
                    gb->data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)] * va.data[static_cast<size_t>(i)];
            }
            break;
        }
        case OpKind::kScale: {
            if (auto* gx = grad_of(n.in0))
                for (int64_t i = 0; i < g.numel(); ++i)
                    gx->data[static_cast<size_t>(i)] += n.scalar * g.data[static_cast<size_t>(i)];
            break;
        }
        case OpKind::kConcatChannels: {
            const auto& as = at(n.in0).value.shape;
            const auto& bs = at(n.in1).value.shape;
            const int64_t V = as.spatial(), C = as.c + bs.c;
            if (auto* ga = grad_of(n.in0))
                for (int64_t i = 0; i < as.n; ++i) {
                    const T* src = g.ptr() + i * C * V;
                    T* dst = ga->ptr() + i * as.c * V;
                    for (int64_t j = 0; j < as.c * V; ++j) dst[j] += src[j];
                }
            if (auto* gb = grad_of(n.in1))
                for (int64_t i = 0; i < as.n; ++i) {
                    const T* src = g.ptr() + i * C * V + as.c * V;
                    T* dst = gb->ptr() + i * bs.c * V;
                    for (int64_t j = 0; j < bs.c * V; ++j) dst[j] += src[j];
                }
            break;
        }
        case OpKind::kSliceChannels: {
            if (auto* gx = grad_of(n.in0)) {
                const auto& xs = at(n.in0).value.shape;
                const int64_t V = xs.spatial();
                for (int64_t i = 0; i < xs.n; ++i) {
                    const T* src = g.ptr() + i * n.i1 * V;
                    T* dst = gx->ptr() + (i * xs.c + n.i0) * V;
                    for (int64_t j = 0; j < n.i1 * V; ++j) dst[j] += src[j];
                }
            }
            break;
        }
        case OpKind::kSumAll: {
            if (auto* gx = grad_of(n.in0)) {
                const T gv = g.data[0];
                for (int64_t i = 0; i < gx->numel(); ++i) gx->data[static_cast<size_t>(i)] += gv;
            }
            break;
        }
        case OpKind::kDiceLoss: {
            if (auto* gp = grad_of(n.in0))
                kernels::dice_loss_bwd(g.data[0], at(n.in0).value, at(n.in1).value, n.scalar, n.aux, *gp);
            break;
        }
        case OpKind::kLogProbCat: {
            if (auto* gl = grad_of(n.in0)) kernels::log_prob_cat_bwd(g.data[0], n.i0, n.aux, *gl);
            break;
        }
        case OpKind::kEntropyCat: {
            if (auto* gl = grad_of(n.in0)) kernels::entropy_cat_bwd(g.data[0], n.value.data[0], n.aux, *gl);
            break;
        }
        case OpKind::kLeaf:
            break;
    }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace voxnas
