#pragma once

// Search orchestration: the episode loop over controller rollouts,
// shared-weight child training, whole-volume dice evaluation, JSONL/CSV
// logging, and binary checkpointing.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "voxnas/adam.hpp"
#include "voxnas/controller.hpp"
#include "voxnas/data_io.hpp"
#include "voxnas/rng.hpp"
#include "voxnas/search_space.hpp"
#include "voxnas/supernet.hpp"

namespace voxnas {

// Surrogate reward for controller testing: a planted action vector scores
// `hit`, everything else `miss`.
struct BanditSpec {
    std::vector<int64_t> target;
    double hit = 1.0;
    double miss = 0.1;
};

struct ExperimentConfig {
    std::string dataset;  // manifest directory (required in dice mode)
    int64_t fold = 0;
    int64_t fold_count = 5;
    int64_t episodes = 40;
    int64_t rollouts_per_episode = 20;
    int64_t child_epochs_per_episode = 3;
    double child_lr = 1e-3;
    double child_weight_decay = 1e-5;
    double controller_lr = 1e-3;
    double controller_weight_decay = 1e-6;
    double entropy_coef = 1e-4;
    int64_t batch_size = 2;
    int64_t base_channels = 8;
    uint64_t seed = 0;
    // When false, episode logs carry no wall-clock field, so identical runs
    // serialize byte-identically.
    bool log_timing = true;
    std::string reward_mode = "dice";  // "dice" | "bandit"
    BanditSpec bandit;
    std::string resume;  // optional checkpoint path to continue from
};

// Strict parsing: unknown keys are ConfigErrors so typos cannot silently
// fall back to defaults.
ExperimentConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const ExperimentConfig& c);
ExperimentConfig load_config(const std::string& path);
void validate_config(const ExperimentConfig& c);

struct EpisodeLog {
    int64_t episode = 0;
    std::vector<double> rewards;  // one per rollout (episode 0: the bootstrap dice)
    double mean_reward = 0.0;
    double max_reward = 0.0;
    double entropy = 0.0;  // mean controller entropy for the episode
    ArchChoice greedy;     // architecture trained this episode
    double duration_seconds = 0.0;  // serialized only when log_timing is on
};

// One JSON object, no trailing newline; deterministic key order.
std::string episode_log_to_jsonl(const EpisodeLog& log, bool log_timing);
std::string episode_csv_header();
std::string episode_log_to_csv(const EpisodeLog& log);

// Frequency of the modal greedy architecture over the last `window` logs.
double convergence_report(const std::vector<EpisodeLog>& logs, int64_t window);

// Symmetric zero-pad each axis to the next multiple of the realization's
// cumulative stride product, one forward pass, crop back to the input shape.
Tensor5<float> one_shot_infer(const Supernet<float>& net, const ArchRealization& r,
                              const Tensor5<float>& image);

// Hard patient-wise dice of one prediction: sigmoid(logit) >= 0.5 binarizes
// (equivalently logit >= 0), per-channel 2|P∩G|/(|P|+|G|) with empty-empty
// defined as 1, then the mean over channels. Counts are integer-exact.
double hard_dice(const Tensor5<float>& logits, const Tensor5<float>& label);

// Mean hard dice of one_shot_infer over the validation cases.
double evaluate_dice(const Supernet<float>& net, const ArchRealization& r,
                     const std::vector<Case>& validation);

// Reads only the config embedded in a checkpoint header (magic + version +
// config JSON), without touching the rest of the file.
ExperimentConfig checkpoint_peek_config(const std::string& path);

struct SearchResult {
    ArchChoice final_greedy;
    std::vector<EpisodeLog> logs;         // episodes run by this call
    std::string checkpoint_path;          // empty when no out_dir was given
};

class Engine {
  public:
    // Builds the full search state from the config: dataset split and
    // preprocessing, schema from training-fold stats, supernet, controller,
    // and seeded rng streams; then applies cfg.resume if set. Bandit mode
    // without a dataset requires an explicit schema.
    explicit Engine(const ExperimentConfig& cfg);
    Engine(const ExperimentConfig& cfg, const DecisionSchema& schema);

    // Runs episodes until cfg.episodes, appending logs (and a checkpoint
    // after every episode) under out_dir when non-empty.
    SearchResult run(const std::string& out_dir);

    void save_checkpoint(const std::string& path) const;
    // Loads into temporaries and commits only after full validation, so a
    // corrupt file never leaves partial state behind.
    void load_checkpoint(const std::string& path);

    const ExperimentConfig& config() const { return cfg_; }
    const DecisionSchema& schema() const { return schema_; }
    Controller& controller() { return *ctrl_; }
    Supernet<float>& supernet();  // ArgumentError when the mode has none
    const std::vector<Case>& training_cases() const { return train_; }
    const std::vector<Case>& validation_cases() const { return val_; }
    int64_t next_episode() const { return next_episode_; }

  private:
    void init(const DecisionSchema* schema_override);
    EpisodeLog run_episode();
    void child_train(const ArchRealization& r);
    double reward_of(const ArchChoice& choice) const;

    ExperimentConfig cfg_;
    DecisionSchema schema_;
    std::vector<Case> train_, val_;
    std::optional<Supernet<float>> net_;
    Adam<float> child_adam_;
    std::optional<Controller> ctrl_;
    Rng data_rng_, ctrl_rng_;
    int64_t next_episode_ = 0;
};

}  // namespace voxnas
