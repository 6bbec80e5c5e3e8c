#include "voxnas/engine.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>

#include "json.hpp"

#include "voxnas/errors.hpp"
#include "voxnas/graph.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace voxnas {

namespace {

json must_parse(const std::string& text, const char* what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw FormatError(std::string(what) + ": " + e.what());
    }
}

}  // namespace

ExperimentConfig config_from_json_text(const std::string& text) {
    const json j = must_parse(text, "config");
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    ExperimentConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "dataset") c.dataset = value.get<std::string>();
            else if (key == "fold") c.fold = value.get<int64_t>();
            else if (key == "fold_count") c.fold_count = value.get<int64_t>();
            else if (key == "episodes") c.episodes = value.get<int64_t>();
            else if (key == "rollouts_per_episode") c.rollouts_per_episode = value.get<int64_t>();
            else if (key == "child_epochs_per_episode") c.child_epochs_per_episode = value.get<int64_t>();
            else if (key == "child_lr") c.child_lr = value.get<double>();
            else if (key == "child_weight_decay") c.child_weight_decay = value.get<double>();
            else if (key == "controller_lr") c.controller_lr = value.get<double>();
            else if (key == "controller_weight_decay") c.controller_weight_decay = value.get<double>();
            else if (key == "entropy_coef") c.entropy_coef = value.get<double>();
            else if (key == "batch_size") c.batch_size = value.get<int64_t>();
            else if (key == "base_channels") c.base_channels = value.get<int64_t>();
            else if (key == "seed") c.seed = value.get<uint64_t>();
            else if (key == "log_timing") c.log_timing = value.get<bool>();
            else if (key == "reward_mode") c.reward_mode = value.get<std::string>();
            else if (key == "bandit_target") c.bandit.target = value.get<std::vector<int64_t>>();
            else if (key == "bandit_hit") c.bandit.hit = value.get<double>();
            else if (key == "bandit_miss") c.bandit.miss = value.get<double>();
            else if (key == "resume") c.resume = value.get<std::string>();
            else throw ConfigError("unknown config key: " + key);
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

std::string config_to_json_text(const ExperimentConfig& c) {
    json j;
    j["dataset"] = c.dataset;
    j["fold"] = c.fold;
    j["fold_count"] = c.fold_count;
    j["episodes"] = c.episodes;
    j["rollouts_per_episode"] = c.rollouts_per_episode;
    j["child_epochs_per_episode"] = c.child_epochs_per_episode;
    j["child_lr"] = c.child_lr;
    j["child_weight_decay"] = c.child_weight_decay;
    j["controller_lr"] = c.controller_lr;
    j["controller_weight_decay"] = c.controller_weight_decay;
    j["entropy_coef"] = c.entropy_coef;
    j["batch_size"] = c.batch_size;
    j["base_channels"] = c.base_channels;
    j["seed"] = c.seed;
    j["log_timing"] = c.log_timing;
    j["reward_mode"] = c.reward_mode;
    j["bandit_target"] = c.bandit.target;
    j["bandit_hit"] = c.bandit.hit;
    j["bandit_miss"] = c.bandit.miss;
    j["resume"] = c.resume;
    return j.dump(2);
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return config_from_json_text(text);
}

void validate_config(const ExperimentConfig& c) {
    if (c.fold_count < 2) throw ConfigError("fold_count must be >= 2");
    if (c.fold < 0 || c.fold >= c.fold_count)
        throw ConfigError("fold must be in [0, " + std::to_string(c.fold_count) + ")");
    if (c.episodes < 1) throw ConfigError("episodes must be >= 1");
    if (c.rollouts_per_episode < 1) throw ConfigError("rollouts_per_episode must be >= 1");
    if (c.child_epochs_per_episode < 1) throw ConfigError("child_epochs_per_episode must be >= 1");
    if (c.batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (c.base_channels < 2 || c.base_channels % 2 != 0)
        throw ConfigError("base_channels must be even and >= 2");
    if (!(c.child_lr > 0.0) || !(c.controller_lr > 0.0))
        throw ConfigError("learning rates must be positive");
    if (c.child_weight_decay < 0.0 || c.controller_weight_decay < 0.0 || c.entropy_coef < 0.0)
        throw ConfigError("weight decays and entropy_coef must be >= 0");
    if (c.reward_mode != "dice" && c.reward_mode != "bandit")
        throw ConfigError("reward_mode must be \"dice\" or \"bandit\"");
    if (c.reward_mode == "bandit") {
        if (!std::isfinite(c.bandit.hit) || !std::isfinite(c.bandit.miss) || c.bandit.hit < 0.0 ||
            c.bandit.hit > 1.0 || c.bandit.miss < 0.0 || c.bandit.miss > 1.0)
            throw ConfigError("bandit rewards must lie in [0, 1]");
    }
}

std::string episode_log_to_jsonl(const EpisodeLog& log, bool log_timing) {
    json j;
    j["episode"] = log.episode;
    j["rewards"] = log.rewards;
    j["mean_reward"] = log.mean_reward;
    j["max_reward"] = log.max_reward;
    j["entropy"] = log.entropy;
    j["greedy"] = log.greedy.indices;
    if (log_timing) j["duration_seconds"] = log.duration_seconds;
    return j.dump();
}

std::string episode_csv_header() { return "episode,mean_reward,max_reward,entropy"; }

std::string episode_log_to_csv(const EpisodeLog& log) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g", static_cast<long long>(log.episode),
                  log.mean_reward, log.max_reward, log.entropy);
    return buf;
}

double convergence_report(const std::vector<EpisodeLog>& logs, int64_t window) {
    if (window < 1) throw ArgumentError("convergence_report: window must be >= 1");
    if (window > static_cast<int64_t>(logs.size()))
        throw ArgumentError("convergence_report: window exceeds log count");
    std::map<std::vector<int64_t>, int64_t> counts;
    for (size_t i = logs.size() - static_cast<size_t>(window); i < logs.size(); ++i)
        ++counts[logs[i].greedy.indices];
    int64_t best = 0;
    for (const auto& [arch, n] : counts) best = std::max(best, n);
    return static_cast<double>(best) / static_cast<double>(window);
}

namespace {

int64_t next_multiple(int64_t e, int64_t div) { return ((e + div - 1) / div) * div; }

Tensor5<float> pad_symmetric(const Tensor5<float>& t, int64_t nd, int64_t nh, int64_t nw) {
    const Shape5& s = t.shape;
    if (nd == s.d && nh == s.h && nw == s.w) return t;
    const int64_t oz = (nd - s.d) / 2, oy = (nh - s.h) / 2, ox = (nw - s.w) / 2;
    Tensor5<float> out(Shape5{s.n, s.c, nd, nh, nw}, 0.0f);
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t z = 0; z < s.d; ++z)
                for (int64_t y = 0; y < s.h; ++y) {
                    const float* src = t.ptr() + (((n * s.c + c) * s.d + z) * s.h + y) * s.w;
                    float* dst =
                        out.ptr() + ((((n * s.c + c) * nd + z + oz) * nh + y + oy) * nw) + ox;
                    std::copy(src, src + s.w, dst);
                }
    return out;
}

Tensor5<float> crop_center(const Tensor5<float>& t, int64_t nd, int64_t nh, int64_t nw) {
    const Shape5& s = t.shape;
    if (nd == s.d && nh == s.h && nw == s.w) return t;
    const int64_t oz = (s.d - nd) / 2, oy = (s.h - nh) / 2, ox = (s.w - nw) / 2;
    Tensor5<float> out(Shape5{s.n, s.c, nd, nh, nw});
    for (int64_t n = 0; n < s.n; ++n)
        for (int64_t c = 0; c < s.c; ++c)
            for (int64_t z = 0; z < nd; ++z)
                for (int64_t y = 0; y < nh; ++y) {
                    const float* src =
                        t.ptr() + ((((n * s.c + c) * s.d + z + oz) * s.h + y + oy) * s.w) + ox;
                    float* dst = out.ptr() + (((n * s.c + c) * nd + z) * nh + y) * nw;
                    std::copy(src, src + nw, dst);
                }
    return out;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

Tensor5<float> one_shot_infer(const Supernet<float>& net, const ArchRealization& r,
                              const Tensor5<float>& image) {
    Axes3 div{1, 1, 1};
    for (const Axes3& s : r.stage_stride) {
        div.d *= s.d;
        div.h *= s.h;
        div.w *= s.w;
    }
    const Shape5& s = image.shape;
    Tensor5<float> padded = pad_symmetric(image, next_multiple(s.d, div.d),
                                          next_multiple(s.h, div.h), next_multiple(s.w, div.w));
    Graph<float> g;
    const NodeId x = g.leaf(std::move(padded), false);
    const ForwardResult<float> fr = net.forward(g, x, r, false);
    return crop_center(g.value(fr.logits), s.d, s.h, s.w);
}

double hard_dice(const Tensor5<float>& logits, const Tensor5<float>& label) {
    if (logits.shape.n != label.shape.n || logits.shape.c != label.shape.c ||
        logits.shape.d != label.shape.d || logits.shape.h != label.shape.h ||
        logits.shape.w != label.shape.w)
        throw ShapeError("hard_dice: prediction " + logits.shape.str() + " vs label " +
                         label.shape.str());
    const int64_t vol = logits.shape.spatial();
    const int64_t planes = logits.shape.n * logits.shape.c;
    double sum = 0.0;
    for (int64_t p = 0; p < planes; ++p) {
        const float* lp = logits.ptr() + p * vol;
        const float* gp = label.ptr() + p * vol;
        int64_t np = 0, ng = 0, ni = 0;
        for (int64_t i = 0; i < vol; ++i) {
            // sigmoid(x) >= 0.5 exactly when x >= 0
            const bool pred = lp[i] >= 0.0f;
            const bool gt = gp[i] > 0.5f;
            np += pred;
            ng += gt;
            ni += pred && gt;
        }
        sum += (np + ng == 0) ? 1.0
                              : (2.0 * static_cast<double>(ni)) / static_cast<double>(np + ng);
    }
    return sum / static_cast<double>(planes);
}

double evaluate_dice(const Supernet<float>& net, const ArchRealization& r,
                     const std::vector<Case>& validation) {
    if (validation.empty()) throw ArgumentError("evaluate_dice: no validation cases");
    double sum = 0.0;
    for (const Case& c : validation) sum += hard_dice(one_shot_infer(net, r, c.image), c.label);
    return sum / static_cast<double>(validation.size());
}

namespace {

TaskStats stats_from_cases(const std::vector<Case>& train, const std::vector<Case>& val) {
    std::vector<int64_t> ds, hs, ws;
    const int64_t in_c = train.front().image.shape.c;
    const int64_t out_c = train.front().label.shape.c;
    auto check_channels = [&](const Case& c) {
        if (c.image.shape.c != in_c || c.label.shape.c != out_c)
            throw ConfigError("case " + c.id + " has inconsistent channel counts");
    };
    for (const Case& c : train) {
        check_channels(c);
        ds.push_back(c.image.shape.d);
        hs.push_back(c.image.shape.h);
        ws.push_back(c.image.shape.w);
    }
    for (const Case& c : val) check_channels(c);
    std::sort(ds.begin(), ds.end());
    std::sort(hs.begin(), hs.end());
    std::sort(ws.begin(), ws.end());
    TaskStats s;
    s.median_d = ds[(ds.size() - 1) / 2];
    s.median_h = hs[(hs.size() - 1) / 2];
    s.median_w = ws[(ws.size() - 1) / 2];
    s.min_d = ds.front();
    s.min_h = hs.front();
    s.min_w = ws.front();
    s.in_channels = in_c;
    s.out_channels = out_c;
    return s;
}

}  // namespace

Engine::Engine(const ExperimentConfig& cfg) : cfg_(cfg) { init(nullptr); }

Engine::Engine(const ExperimentConfig& cfg, const DecisionSchema& schema) : cfg_(cfg) {
    init(&schema);
}

void Engine::init(const DecisionSchema* schema_override) {
    validate_config(cfg_);
    const bool dice = cfg_.reward_mode == "dice";
    if (dice) {
        if (cfg_.dataset.empty()) throw ConfigError("dice mode requires a dataset");
        const DatasetManifest manifest = load_manifest(cfg_.dataset);
        for (const CaseInfo& info : manifest.cases) {
            Case c = load_case(info.dir);
            nonzero_crop(c);
            zscore_normalize(c.image);
            const bool is_val =
                static_cast<int64_t>(fnv1a64(c.id) % static_cast<uint64_t>(cfg_.fold_count)) ==
                cfg_.fold;
            (is_val ? val_ : train_).push_back(std::move(c));
        }
        if (train_.empty() || val_.empty())
            throw ConfigError("fold " + std::to_string(cfg_.fold) + "/" +
                              std::to_string(cfg_.fold_count) +
                              " leaves an empty training or validation split (" +
                              std::to_string(train_.size()) + " train, " +
                              std::to_string(val_.size()) + " val)");
        schema_ = schema_override ? *schema_override : build_schema(stats_from_cases(train_, val_));
        net_.emplace(SupernetConfig{cfg_.base_channels, schema_.in_channels, schema_.out_channels},
                     schema_, cfg_.seed);
        AdamConfig ac;
        ac.lr = cfg_.child_lr;
        ac.weight_decay = cfg_.child_weight_decay;
        child_adam_ = Adam<float>(ac, net_->params().tensors.size());
    } else {
        if (schema_override) {
            schema_ = *schema_override;
        } else if (!cfg_.dataset.empty()) {
            schema_ = build_schema(load_manifest(cfg_.dataset).stats());
        } else {
            throw ConfigError("bandit mode without a dataset requires an explicit schema");
        }
        if (cfg_.bandit.target.size() != schema_.decisions.size())
            throw ConfigError("bandit_target has " + std::to_string(cfg_.bandit.target.size()) +
                              " entries, schema has " + std::to_string(schema_.decisions.size()));
        validate_choice(schema_, ArchChoice{cfg_.bandit.target});
    }

    ControllerConfig cc;
    cc.lr = cfg_.controller_lr;
    cc.weight_decay = cfg_.controller_weight_decay;
    cc.entropy_coef = cfg_.entropy_coef;
    ctrl_.emplace(cc, schema_, cfg_.seed + 1);
    data_rng_.seed(cfg_.seed + 2);
    ctrl_rng_.seed(cfg_.seed + 3);

    if (!cfg_.resume.empty()) load_checkpoint(cfg_.resume);
}

Supernet<float>& Engine::supernet() {
    if (!net_) throw ArgumentError("no supernet in reward mode " + cfg_.reward_mode);
    return *net_;
}

double Engine::reward_of(const ArchChoice& choice) const {
    return choice.indices == cfg_.bandit.target ? cfg_.bandit.hit : cfg_.bandit.miss;
}

void Engine::child_train(const ArchRealization& r) {
    const Axes3 patch{r.patch_d, r.patch_hw, r.patch_hw};
    const int64_t in_c = schema_.in_channels;
    const int64_t out_c = schema_.out_channels;
    const int64_t n_cases = static_cast<int64_t>(train_.size());
    for (int64_t epoch = 0; epoch < cfg_.child_epochs_per_episode; ++epoch) {
        std::vector<int64_t> order(static_cast<size_t>(n_cases));
        std::iota(order.begin(), order.end(), 0);
        for (int64_t i = n_cases - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(data_rng_.uniform_int(i + 1))]);
        for (int64_t begin = 0; begin < n_cases; begin += cfg_.batch_size) {
            const int64_t bsz = std::min(cfg_.batch_size, n_cases - begin);
            Tensor5<float> img(Shape5{bsz, in_c, patch.d, patch.h, patch.w});
            Tensor5<float> lab(Shape5{bsz, out_c, patch.d, patch.h, patch.w});
            for (int64_t b = 0; b < bsz; ++b) {
                const Case& c = train_[static_cast<size_t>(order[static_cast<size_t>(begin + b)])];
                auto [pi, pl] = sample_patch(c, patch, data_rng_);
                axial_hflip(pi, pl, data_rng_);
                std::copy(pi.ptr(), pi.ptr() + pi.numel(), img.ptr() + b * pi.numel());
                std::copy(pl.ptr(), pl.ptr() + pl.numel(), lab.ptr() + b * pl.numel());
            }
            Graph<float> g;
            const NodeId x = g.leaf(std::move(img), false);
            const ForwardResult<float> fr = net_->forward(g, x, r, true);
            const NodeId pred = g.sigmoid(fr.logits);
            const NodeId target = g.leaf(std::move(lab), false);
            const NodeId loss = g.dice_loss(pred, target);
            const float lv = g.value(loss).ptr()[0];
            if (!std::isfinite(lv))
                throw NumericError("episode " + std::to_string(next_episode_) +
                                   ": non-finite dice loss");
            g.backward(loss);
            for (const auto& [idx, leaf] : fr.params)
                child_adam_.step(idx, net_->params().tensors[idx], g.grad(leaf));
        }
    }
}

EpisodeLog Engine::run_episode() {
    const auto t0 = std::chrono::steady_clock::now();
    EpisodeLog log;
    log.episode = next_episode_;
    const bool dice = cfg_.reward_mode == "dice";

    if (dice && next_episode_ == 0) {
        // Bootstrap: train the maximal architecture so shared weights start
        // from the superset path, and log its validation dice as the reward.
        const ArchChoice mc = max_architecture(schema_);
        const ArchRealization r = resolve(schema_, mc);
        child_train(r);
        const double d = evaluate_dice(*net_, r, val_);
        log.rewards = {d};
        log.mean_reward = d;
        log.max_reward = d;
        log.entropy = mean_of(ctrl_->greedy_rollout().entropies);
        log.greedy = mc;
    } else {
        std::vector<Rollout> rollouts;
        std::vector<double> rewards;
        rollouts.reserve(static_cast<size_t>(cfg_.rollouts_per_episode));
        for (int64_t i = 0; i < cfg_.rollouts_per_episode; ++i) {
            Rollout ro = ctrl_->sample(ctrl_rng_);
            const double reward = dice ? evaluate_dice(*net_, resolve(schema_, ro.actions), val_)
                                       : reward_of(ro.actions);
            rewards.push_back(reward);
            rollouts.push_back(std::move(ro));
        }
        const UpdateStats stats = ctrl_->reinforce_update(rollouts, rewards);
        if (!std::isfinite(stats.loss))
            throw NumericError("episode " + std::to_string(next_episode_) +
                               ": non-finite controller loss");
        log.rewards = rewards;
        log.mean_reward = stats.mean_reward;
        log.max_reward = *std::max_element(rewards.begin(), rewards.end());
        log.entropy = stats.mean_entropy;
        log.greedy = ctrl_->greedy();
        if (dice) child_train(resolve(schema_, log.greedy));
    }

    log.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ++next_episode_;
    return log;
}

SearchResult Engine::run(const std::string& out_dir) {
    std::ofstream jsonl, csv;
    std::string ckpt_path;
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
        const bool fresh = next_episode_ == 0;
        const auto mode = std::ios::out | (fresh ? std::ios::trunc : std::ios::app);
        jsonl.open(out_dir + "/episodes.jsonl", mode);
        csv.open(out_dir + "/episodes.csv", mode);
        if (!jsonl || !csv) throw IoError("cannot open log files under " + out_dir);
        if (fresh) csv << episode_csv_header() << "\n";
        ckpt_path = out_dir + "/checkpoint.bin";
    }

    SearchResult result;
    while (next_episode_ < cfg_.episodes) {
        EpisodeLog log = run_episode();
        if (jsonl.is_open()) {
            jsonl << episode_log_to_jsonl(log, cfg_.log_timing) << "\n";
            jsonl.flush();
            csv << episode_log_to_csv(log) << "\n";
            csv.flush();
            if (!jsonl || !csv) throw IoError("short write to logs under " + out_dir);
        }
        if (!ckpt_path.empty()) {
            const std::string tmp = ckpt_path + ".tmp";
            save_checkpoint(tmp);
            std::error_code ec;
            fs::rename(tmp, ckpt_path, ec);
            if (ec) throw IoError("cannot move checkpoint into place: " + ec.message());
        }
        result.logs.push_back(std::move(log));
    }
    result.final_greedy = ctrl_->greedy();
    result.checkpoint_path = ckpt_path;
    return result;
}

}  // namespace voxnas
