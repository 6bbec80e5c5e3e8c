#pragma once

// Construction of the ordered 17-decision search space from dataset
// statistics: patch-size candidate lists, per-stage stride sets with the
// thin-axis restriction, pooling type, per-stage encoder dilation,
// activation, and the six searchable encoder->decoder skip edges.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace voxnas {

struct TaskStats {
    int64_t median_d = 0, median_h = 0, median_w = 0;
    int64_t min_d = 0, min_h = 0, min_w = 0;
    int64_t in_channels = 1, out_channels = 1;
};

// Throws ArgumentError when extents/channels are non-positive or min > median.
void validate_stats(const TaskStats& stats);

// Allowed pooling strides per stage (index 0 = stage 1) and axis, descending
// order, each a subset of {2,1}. Stages 1-2 are fixed (singletons); stages
// 3-4 are searchable. divisor_* is the product of per-stage maxima.
struct StrideRule {
    std::array<std::vector<int64_t>, 4> depth, hw;
    int64_t divisor_d = 1, divisor_hw = 1;
};

struct Decision {
    std::string name;
    bool numeric = true;
    std::vector<int64_t> ints;      // used when numeric
    std::vector<std::string> strs;  // used otherwise
    size_t size() const { return numeric ? ints.size() : strs.size(); }
    std::string choice_repr(size_t i) const { return numeric ? std::to_string(ints[i]) : strs[i]; }
};

// The fixed decision order: patch_hw, patch_d, stride3_d, stride3_hw,
// stride4_d, stride4_hw, pool, dilation2, dilation3, dilation4, activation,
// skip_1_2, skip_1_3, skip_1_4, skip_2_3, skip_2_4, skip_3_4.
inline constexpr size_t kDecisionCount = 17;

struct DecisionSchema {
    std::vector<Decision> decisions;
    // Fixed (non-searched) stage-1/2 strides from the restriction walk.
    int64_t stride1_d = 2, stride1_hw = 2, stride2_d = 2, stride2_hw = 2;
    int64_t divisor_d = 1, divisor_hw = 1;
    int64_t in_channels = 1, out_channels = 1;
};

struct ArchChoice {
    std::vector<int64_t> indices;  // one per schema decision
    bool operator==(const ArchChoice& o) const { return indices == o.indices; }
};

// Candidate patch extents floor(m/divisor)*divisor - divisor*k for k in 0..4,
// filtered to >= divisor, descending; m = max median over h/w (or median_d).
// Throws ConfigError when no candidate survives (dataset too small).
std::vector<int64_t> patch_hw_candidates(const TaskStats& stats, int64_t divisor);
std::vector<int64_t> patch_d_candidates(const TaskStats& stats, int64_t divisor);

// Walks stages 1..4 per axis with the dataset-minimum extent: stride 2 is
// admissible only while the incoming extent is >= 4 (fixed stages demote to
// 1 below that); the extent advances by floor-division with the maximum
// allowed stride.
StrideRule restrict_strides(const TaskStats& stats);

DecisionSchema build_schema(const TaskStats& stats);

// Throws ArgumentError naming the offending decision.
void validate_choice(const DecisionSchema& schema, const ArchChoice& choice);

// Largest patches, stride 2 wherever allowed, max pooling, dilation 1, first
// activation, every skip edge connected.
ArchChoice max_architecture(const DecisionSchema& schema);

uint64_t schema_space_size(const DecisionSchema& schema);

// JSON round-trip; serialization is deterministic (identical schema ->
// identical bytes). Parse failures throw FormatError.
std::string schema_to_json(const DecisionSchema& schema);
DecisionSchema schema_from_json(const std::string& text);
std::string choice_to_json(const ArchChoice& choice);
ArchChoice choice_from_json(const std::string& text);

}  // namespace voxnas
