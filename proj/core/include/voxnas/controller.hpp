#pragma once

// Recurrent stochastic policy over the decision schema: a single LSTM cell
// whose step-t input is the embedding of the previous action plus a learned
// per-step offset (a learned start token at step 0), with one linear head
// per decision. Trained by REINFORCE with a moving-average baseline and
// entropy regularization.

#include <cstdint>
#include <vector>

#include "voxnas/adam.hpp"
#include "voxnas/rng.hpp"
#include "voxnas/search_space.hpp"
#include "voxnas/supernet.hpp"

namespace voxnas {

struct ControllerConfig {
    int64_t hidden = 64;
    int64_t embed = 32;
    double lr = 1e-3;
    double weight_decay = 1e-6;
    double entropy_coef = 1e-4;
    double baseline_decay = 0.95;
};

struct Rollout {
    ArchChoice actions;
    std::vector<double> log_probs;  // one per decision, each <= 0
    std::vector<double> entropies;  // one per decision, in [0, ln k]
};

struct UpdateStats {
    double mean_reward = 0.0;
    double mean_entropy = 0.0;  // mean over rollouts of mean per-step entropy
    double loss = 0.0;
    double baseline = 0.0;  // value used for advantages (pre-decay)
};

class Controller {
  public:
    // Head weights start at zero, so the initial policy is exactly uniform
    // over every decision.
    Controller(ControllerConfig cfg, const DecisionSchema& schema, uint64_t seed);

    Rollout sample(Rng& rng) const;
    ArchChoice greedy() const;      // argmax per step, ties to the lowest index
    Rollout greedy_rollout() const;  // greedy actions plus their log-probs/entropies

    // loss = mean_r [ -(R_r - b) * sum_t log pi_t  -  beta * sum_t H_t ],
    // one Adam step, then b <- decay*b + (1-decay)*mean(R). The baseline is
    // initialized to the first batch's mean reward.
    UpdateStats reinforce_update(const std::vector<Rollout>& rollouts, const std::vector<double>& rewards);

    const ControllerConfig& config() const { return cfg_; }
    const DecisionSchema& schema() const { return schema_; }

    // Checkpoint access.
    ParamStore<float>& params() { return store_; }
    const ParamStore<float>& params() const { return store_; }
    Adam<float>& adam() { return adam_; }
    const Adam<float>& adam() const { return adam_; }
    double baseline() const { return baseline_; }
    bool baseline_initialized() const { return baseline_init_; }
    void restore_baseline(double value, bool initialized) {
        baseline_ = value;
        baseline_init_ = initialized;
    }

  private:
    struct StepTrace {
        NodeId logits;
        std::vector<double> probs;
    };
    // Runs the recurrent policy once; `actions` null means follow `pick`
    // (sample/greedy), otherwise replay the given actions on the graph.
    // `memo` maps param index -> leaf node and persists across unrolls that
    // share a graph, so every use of a parameter hits one leaf.
    template <typename Pick>
    std::vector<StepTrace> unroll(Graph<float>& g, bool train, const std::vector<int64_t>* actions, Pick pick,
                                  std::vector<std::pair<size_t, NodeId>>* leaves, std::vector<NodeId>& memo,
                                  std::vector<int64_t>& taken) const;

    NodeId pleaf(Graph<float>& g, size_t param, bool train, std::vector<std::pair<size_t, NodeId>>* leaves) const;

    ControllerConfig cfg_;
    DecisionSchema schema_;
    ParamStore<float> store_;
    Adam<float> adam_;
    double baseline_ = 0.0;
    bool baseline_init_ = false;

    size_t wx_, wh_, b_, start_;
    std::vector<size_t> offset_;               // per decision
    std::vector<std::vector<size_t>> embed_;   // per decision, per choice
    std::vector<size_t> head_k_, head_b_;      // per decision
};

}  // namespace voxnas
