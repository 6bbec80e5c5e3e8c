#pragma once

// Finite-difference gradient checking in double precision: build the loss
// twice per probed element (central differences, step h) and compare against
// the analytic gradients from one backward pass.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxnas/graph.hpp"

namespace voxnas {

// Builds a scalar loss node from the given leaves (one per input tensor).
using LossBuilder = std::function<NodeId(Graph<double>&, const std::vector<NodeId>&)>;

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t checked = 0;
};

// Probes every element of every input, unless max_elems_per_input > 0, in
// which case a seeded sample of that many elements per input is probed.
// Relative error denominator is max(|analytic|, |numeric|, 1e-6).
GradCheckReport grad_check(const std::vector<Tensor5<double>>& inputs, const LossBuilder& build, double h = 1e-4,
                           int64_t max_elems_per_input = 0, uint64_t seed = 0);

struct GradCheckCase {
    std::string name;
    GradCheckReport report;
};

// The standard battery over every differentiable op plus the feature-matching
// block and a small end-to-end network forward. sample_per_tensor limits FD
// probes per tensor (0 = exhaustive for the op-level cases; the network case
// always samples a bounded number per tensor). Deterministic per seed.
std::vector<GradCheckCase> gradcheck_battery(uint64_t seed, int64_t sample_per_tensor = 0);

}  // namespace voxnas
