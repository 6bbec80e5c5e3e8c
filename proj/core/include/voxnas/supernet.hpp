#pragma once

// The shared-weight child network: a 4-stage encoder/decoder with bottleneck,
// fixed per-stage channel-halving link convs, six searchable skip edges with
// feature matching, and deep supervision over decoder stages 1-3. Every
// parameter is allocated once at construction; any architecture choice only
// selects which parameters participate in a forward pass, never their shapes.

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "voxnas/graph.hpp"
#include "voxnas/ops.hpp"
#include "voxnas/search_space.hpp"

namespace voxnas {

template <typename T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<Tensor5<T>> tensors;

    size_t add(std::string name, Tensor5<T> t) {
        names.push_back(std::move(name));
        tensors.push_back(std::move(t));
        return tensors.size() - 1;
    }
    size_t index_of(const std::string& name) const;
    int64_t total_elements() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }
    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        out.names = names;
        out.tensors.reserve(tensors.size());
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }
};

struct SupernetConfig {
    int64_t base_channels = 8;  // stage-1 width; must be even and >= 2
    int64_t in_channels = 1;
    int64_t out_channels = 1;
};

// The six searchable encoder->decoder skip edges, in decision order.
inline constexpr size_t kSkipEdgeCount = 6;
inline constexpr std::array<std::pair<int, int>, kSkipEdgeCount> kSkipEdges = {
    {{1, 2}, {1, 3}, {1, 4}, {2, 3}, {2, 4}, {3, 4}}};

struct ArchRealization {
    int64_t patch_d = 0, patch_hw = 0;
    std::array<Axes3, 4> stage_stride;   // pooling stride per stage
    std::array<int64_t, 4> dilation;     // encoder conv dilation (stage 1 always 1)
    PoolKind pool = PoolKind::kMax;
    ActKind act = ActKind::kRelu;
    std::array<bool, kSkipEdgeCount> skip{};
};

// Decodes a validated choice against the schema into concrete settings.
ArchRealization resolve(const DecisionSchema& schema, const ArchChoice& choice);

template <typename T>
struct ForwardResult {
    NodeId logits = -1;
    // (param index, leaf node) for every parameter the pass consumed; the
    // trainer reads gradients and steps exactly these.
    std::vector<std::pair<size_t, NodeId>> params;
};

template <typename T>
class Supernet {
  public:
    // Allocates and He-uniform-initializes every parameter; deterministic
    // per seed. Throws ArgumentError for odd or < 2 base_channels.
    Supernet(SupernetConfig config, const DecisionSchema& schema, uint64_t seed);

    // Wraps an existing store (e.g. a double-cast of trained float weights).
    Supernet(SupernetConfig config, const DecisionSchema& schema, ParamStore<T> store);

    const SupernetConfig& config() const { return cfg_; }
    ParamStore<T>& params() { return store_; }
    const ParamStore<T>& params() const { return store_; }

    // Builds the full forward graph on x (shape (n, in_channels, d, h, w),
    // spatial extents divisible by the realization's cumulative strides).
    // Output: pre-sigmoid logits with out_channels and x's spatial shape.
    // train=true makes every consumed parameter leaf require grad.
    ForwardResult<T> forward(Graph<T>& g, NodeId x, const ArchRealization& r, bool train) const;

    // Gradient-check variant: consumes caller-created leaves (one per store
    // tensor, in store order) instead of minting its own.
    NodeId forward_with_leaves(Graph<T>& g, NodeId x, const ArchRealization& r,
                               const std::vector<NodeId>& param_leaves) const;

    // The skip-edge feature matching block: the edge's 1x1x1 conv followed by
    // a trilinear resize to the target spatial extents.
    NodeId matching(Graph<T>& g, NodeId feature, size_t edge, Axes3 target_spatial, bool train,
                    std::vector<std::pair<size_t, NodeId>>* leaves) const;

    // Indices of every parameter forward() consumes under this realization
    // (all fixed-path parameters plus the active skip-edge convs).
    std::vector<size_t> active_param_ids(const ArchRealization& r) const;

    int64_t stage_width(int s) const { return cfg_.base_channels << (s - 1); }  // s in 1..4
    int64_t bottleneck_width() const { return cfg_.base_channels * 16; }

  private:
    struct ParamIds {
        // Per encoder stage / bottleneck / decoder stage: conv kernel+bias and
        // instance-norm gamma+beta for each of the two conv blocks.
        struct Block {
            size_t k1, b1, g1, be1, k2, b2, g2, be2;
        };
        std::array<Block, 4> enc, dec;
        Block bneck;
        std::array<size_t, 4> link_k, link_b;
        std::array<size_t, kSkipEdgeCount> skip_k, skip_b;
        std::array<size_t, 3> head_k, head_b;
        size_t final_k, final_b;
    };

    // Bundles how parameter leaves are minted during one graph build: fresh
    // leaves (train controls requires_grad) or caller-provided ones.
    struct BindCtx {
        bool train = false;
        std::vector<std::pair<size_t, NodeId>>* leaves = nullptr;
        const std::vector<NodeId>* external = nullptr;
    };

    void allocate(uint64_t seed);
    void index_params();

    NodeId build_forward(Graph<T>& g, NodeId x, const ArchRealization& r, BindCtx ctx) const;
    NodeId pleaf(Graph<T>& g, size_t param, BindCtx& ctx) const;
    NodeId conv_block(Graph<T>& g, NodeId x, const typename ParamIds::Block& ids, int64_t dilation, ActKind act,
                      BindCtx& ctx) const;
    NodeId match_node(Graph<T>& g, NodeId feature, size_t edge, Axes3 target_spatial, BindCtx& ctx) const;

    SupernetConfig cfg_;
    ParamStore<T> store_;
    ParamIds ids_;
};

extern template class Supernet<float>;
extern template class Supernet<double>;
extern template struct ParamStore<float>;
extern template struct ParamStore<double>;

}  // namespace voxnas
