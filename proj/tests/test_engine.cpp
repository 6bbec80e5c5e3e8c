#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "voxnas/engine.hpp"

using namespace voxnas;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
    static int counter = 0;
    const fs::path p = fs::temp_directory_path() / ("voxnas_eng_" + tag + "_" + std::to_string(counter++));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DecisionSchema cube16_schema() {
    TaskStats s;
    s.median_d = s.median_h = s.median_w = 16;
    s.min_d = s.min_h = s.min_w = 16;
    return build_schema(s);
}

ExperimentConfig bandit_cfg(uint64_t seed = 1) {
    ExperimentConfig c;
    c.reward_mode = "bandit";
    c.episodes = 2;
    c.rollouts_per_episode = 3;
    c.controller_lr = 0.02;
    c.log_timing = false;
    c.seed = seed;
    c.bandit.target = std::vector<int64_t>(kDecisionCount, 0);
    c.bandit.hit = 1.0;
    c.bandit.miss = 0.1;
    return c;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("experiment config json round trip and strictness") {
    ExperimentConfig c = bandit_cfg(9);
    c.dataset = "/data/foo";
    c.entropy_coef = 5e-4;
    c.base_channels = 4;

    const ExperimentConfig back = config_from_json_text(config_to_json_text(c));
    CHECK(back.dataset == c.dataset);
    CHECK(back.episodes == c.episodes);
    CHECK(back.rollouts_per_episode == c.rollouts_per_episode);
    CHECK(back.entropy_coef == c.entropy_coef);
    CHECK(back.base_channels == c.base_channels);
    CHECK(back.seed == c.seed);
    CHECK(back.log_timing == c.log_timing);
    CHECK(back.reward_mode == c.reward_mode);
    CHECK(back.bandit.target == c.bandit.target);
    CHECK(back.bandit.hit == c.bandit.hit);

    CHECK_THROWS_AS(config_from_json_text(R"({"episoeds": 3})"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text("[1,2]"), ConfigError);
    CHECK_THROWS_AS(config_from_json_text("{"), FormatError);
}

TEST_CASE("validate_config rejections") {
    auto bad = [](auto mutate) {
        ExperimentConfig c;
        c.dataset = "x";
        mutate(c);
        return c;
    };
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) { c.fold_count = 1; })), ConfigError);
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) { c.fold = 7; })), ConfigError);
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) { c.episodes = 0; })), ConfigError);
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) { c.base_channels = 3; })), ConfigError);
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) { c.child_lr = 0.0; })), ConfigError);
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) { c.entropy_coef = -1.0; })), ConfigError);
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) { c.reward_mode = "glory"; })), ConfigError);
    CHECK_THROWS_AS(validate_config(bad([](ExperimentConfig& c) {
                        c.reward_mode = "bandit";
                        c.bandit.hit = 1.5;
                    })),
                    ConfigError);
    ExperimentConfig ok;
    ok.dataset = "x";
    CHECK_NOTHROW(validate_config(ok));
}

TEST_CASE("episode log serialization") {
    EpisodeLog log;
    log.episode = 3;
    log.rewards = {0.25, 0.5};
    log.mean_reward = 0.375;
    log.max_reward = 0.5;
    log.entropy = 1.25;
    log.greedy.indices = {0, 1, 2};
    log.duration_seconds = 9.5;

    const std::string timed = episode_log_to_jsonl(log, true);
    const std::string plain = episode_log_to_jsonl(log, false);
    CHECK(timed.find("duration_seconds") != std::string::npos);
    CHECK(plain.find("duration_seconds") == std::string::npos);
    CHECK(plain.find("\"episode\":3") != std::string::npos);
    CHECK(plain.find("\"greedy\":[0,1,2]") != std::string::npos);
    CHECK(episode_log_to_jsonl(log, false) == plain);  // byte-stable

    CHECK(episode_csv_header() == "episode,mean_reward,max_reward,entropy");
    const std::string csv = episode_log_to_csv(log);
    CHECK(csv.substr(0, 2) == "3,");
    CHECK(csv.find("0.375") != std::string::npos);
}

TEST_CASE("convergence_report counts the modal greedy architecture") {
    auto with_greedy = [](std::vector<int64_t> g) {
        EpisodeLog l;
        l.greedy.indices = std::move(g);
        return l;
    };
    std::vector<EpisodeLog> logs;
    logs.push_back(with_greedy({9, 9}));  // outside the window
    logs.push_back(with_greedy({1, 2}));
    logs.push_back(with_greedy({1, 2}));
    logs.push_back(with_greedy({3, 4}));
    logs.push_back(with_greedy({1, 2}));
    CHECK(convergence_report(logs, 4) == doctest::Approx(0.75));
    CHECK(convergence_report(logs, 5) == doctest::Approx(0.6));
    CHECK_THROWS_AS(convergence_report(logs, 0), ArgumentError);
    CHECK_THROWS_AS(convergence_report(logs, 6), ArgumentError);
}

TEST_CASE("hard_dice oracle") {
    auto lg = [](std::vector<float> v, Shape5 s) {
        Tensor5<float> t(s);
        t.data = std::move(v);
        return t;
    };
    const Shape5 s2{1, 1, 1, 1, 2};

    // Logits {+1,+1} vs label {1,0}: |P|=2, |G|=1, |I|=1.
    CHECK(hard_dice(lg({1.0f, 1.0f}, s2), lg({1.0f, 0.0f}, s2)) == doctest::Approx(2.0 / 3.0));
    // Zero logit binarizes to foreground (sigmoid(0) = 0.5 >= 0.5).
    CHECK(hard_dice(lg({0.0f, -1.0f}, s2), lg({1.0f, 1.0f}, s2)) == doctest::Approx(2.0 / 3.0));
    // Empty prediction and label count as a perfect match.
    CHECK(hard_dice(lg({-1.0f, -1.0f}, s2), lg({0.0f, 0.0f}, s2)) == 1.0);
    // Channels average: first channel dice 2/3, second channel 1.
    const Shape5 s22{1, 2, 1, 1, 2};
    CHECK(hard_dice(lg({1, 1, -1, -1}, s22), lg({1, 0, 0, 0}, s22)) == doctest::Approx((2.0 / 3.0 + 1.0) / 2.0));

    CHECK_THROWS_AS(hard_dice(lg({1, 1}, s2), lg({1, 0, 0, 0}, s22)), ShapeError);
}

TEST_CASE("one_shot_infer pads to stride multiples and crops back") {
    const DecisionSchema schema = cube16_schema();
    SupernetConfig sc;
    sc.base_channels = 2;
    const Supernet<float> net(sc, schema, 3);
    const ArchRealization r = resolve(schema, max_architecture(schema));

    Tensor5<float> image(Shape5{1, 1, 6, 7, 9});
    Rng rng(5);
    for (auto& v : image.data) v = static_cast<float>(rng.uniform(-1.0, 1.0));

    const Tensor5<float> out = one_shot_infer(net, r, image);
    CHECK(out.shape == Shape5{1, 1, 6, 7, 9});
    CHECK(out.all_finite());

    // Already-divisible input goes straight through the same path.
    Tensor5<float> image2(Shape5{1, 1, 8, 8, 8}, 0.25f);
    CHECK(one_shot_infer(net, r, image2).shape == Shape5{1, 1, 8, 8, 8});
}

TEST_CASE("evaluate_dice equals a voxel-set brute force") {
    const DecisionSchema schema = cube16_schema();
    SupernetConfig sc;
    sc.base_channels = 2;
    const Supernet<float> net(sc, schema, 7);
    const ArchRealization r = resolve(schema, max_architecture(schema));

    Rng rng(11);
    std::vector<Case> val;
    for (int i = 0; i < 3; ++i) {
        Case c;
        c.id = "v" + std::to_string(i);
        const int64_t d = 4 + 2 * rng.uniform_int(3);
        c.image = Tensor5<float>(Shape5{1, 1, d, 10, 12});
        c.label = Tensor5<float>(Shape5{1, 1, d, 10, 12});
        for (auto& v : c.image.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
        for (auto& v : c.label.data) v = rng.uniform() < 0.3 ? 1.0f : 0.0f;
        val.push_back(std::move(c));
    }

    double acc = 0.0;
    for (const Case& c : val) {
        const Tensor5<float> logits = one_shot_infer(net, r, c.image);
        std::set<int64_t> pred, truth;
        for (int64_t i = 0; i < logits.numel(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-static_cast<double>(logits.data[static_cast<size_t>(i)])));
            if (p >= 0.5) pred.insert(i);
            if (c.label.data[static_cast<size_t>(i)] > 0.5f) truth.insert(i);
        }
        std::set<int64_t> inter;
        for (int64_t i : pred)
            if (truth.count(i)) inter.insert(i);
        const double dice = (pred.empty() && truth.empty())
                                ? 1.0
                                : 2.0 * static_cast<double>(inter.size()) /
                                      static_cast<double>(pred.size() + truth.size());
        acc += dice;
    }
    CHECK(evaluate_dice(net, r, val) == acc / 3.0);

    CHECK_THROWS_AS(evaluate_dice(net, r, {}), ArgumentError);
}

TEST_CASE("bandit engine runs, logs, and reports") {
    ExperimentConfig cfg = bandit_cfg(1);
    Engine eng(cfg, cube16_schema());
    CHECK(eng.next_episode() == 0);
    CHECK_THROWS_AS(eng.supernet(), ArgumentError);

    const SearchResult res = eng.run("");
    REQUIRE(res.logs.size() == 2);
    CHECK(res.checkpoint_path.empty());
    CHECK(eng.next_episode() == 2);
    for (size_t i = 0; i < res.logs.size(); ++i) {
        const EpisodeLog& l = res.logs[i];
        CHECK(l.episode == static_cast<int64_t>(i));
        REQUIRE(l.rewards.size() == 3);
        for (double rw : l.rewards) CHECK((rw == 1.0 || rw == 0.1));
        CHECK(l.mean_reward >= 0.1);
        CHECK(l.max_reward <= 1.0);
        CHECK(l.entropy > 0.0);
        CHECK(l.greedy.indices.size() == kDecisionCount);
    }
    CHECK(res.final_greedy.indices.size() == kDecisionCount);

    // Bandit mode without dataset or schema cannot start.
    CHECK_THROWS_AS(Engine(bandit_cfg(1)), ConfigError);
    ExperimentConfig wrong = bandit_cfg(1);
    wrong.bandit.target.pop_back();
    CHECK_THROWS_AS(Engine(wrong, cube16_schema()), ConfigError);
}

TEST_CASE("identical bandit runs serialize identically") {
    const fs::path d1 = fresh_dir("rep1"), d2 = fresh_dir("rep2");
    Engine a(bandit_cfg(5), cube16_schema());
    Engine b(bandit_cfg(5), cube16_schema());
    const SearchResult ra = a.run(d1.string());
    const SearchResult rb = b.run(d2.string());

    CHECK(slurp(d1 / "episodes.jsonl") == slurp(d2 / "episodes.jsonl"));
    CHECK(slurp(d1 / "episodes.csv") == slurp(d2 / "episodes.csv"));
    CHECK(!slurp(d1 / "episodes.jsonl").empty());
    CHECK(ra.final_greedy == rb.final_greedy);
    CHECK(fs::exists(ra.checkpoint_path));
    fs::remove_all(d1);
    fs::remove_all(d2);
}

TEST_CASE("checkpoint save, peek, resume") {
    const fs::path dir = fresh_dir("ckpt");

    // Run one episode, checkpoint, then compare a resumed engine against the
    // uninterrupted one on the following episode.
    ExperimentConfig cfg = bandit_cfg(3);
    cfg.episodes = 1;
    Engine a(cfg, cube16_schema());
    a.run(dir.string());
    const std::string ckpt = (dir / "checkpoint.bin").string();
    REQUIRE(fs::exists(ckpt));

    const ExperimentConfig peeked = checkpoint_peek_config(ckpt);
    CHECK(peeked.reward_mode == "bandit");
    CHECK(peeked.seed == 3);
    CHECK(peeked.rollouts_per_episode == 3);

    ExperimentConfig rcfg = bandit_cfg(3);
    rcfg.episodes = 2;
    rcfg.resume = ckpt;
    Engine resumed(rcfg, cube16_schema());
    CHECK(resumed.next_episode() == 1);

    // The resumed controller state matches the saved one bitwise.
    REQUIRE(resumed.controller().params().tensors.size() == a.controller().params().tensors.size());
    for (size_t i = 0; i < a.controller().params().tensors.size(); ++i)
        CHECK(resumed.controller().params().tensors[i].data == a.controller().params().tensors[i].data);
    CHECK(resumed.controller().baseline() == a.controller().baseline());

    // The resumed engine's next episode must match what an uninterrupted
    // two-episode run would have produced.
    ExperimentConfig acfg = bandit_cfg(3);
    acfg.episodes = 2;
    Engine uninterrupted(acfg, cube16_schema());
    const SearchResult full = uninterrupted.run("");
    const SearchResult r2 = resumed.run("");
    REQUIRE(r2.logs.size() == 1);
    CHECK(r2.logs[0].episode == 1);
    REQUIRE(full.logs.size() == 2);
    CHECK(episode_log_to_jsonl(r2.logs[0], false) == episode_log_to_jsonl(full.logs[1], false));

    fs::remove_all(dir);
}

TEST_CASE("checkpoint loading is strict") {
    const fs::path dir = fresh_dir("strict");
    ExperimentConfig cfg = bandit_cfg(4);
    cfg.episodes = 1;
    Engine eng(cfg, cube16_schema());
    eng.run(dir.string());
    const fs::path ckpt = dir / "checkpoint.bin";

    SUBCASE("truncated file") {
        const auto size = fs::file_size(ckpt);
        fs::resize_file(ckpt, size / 2);
        Engine fresh(cfg, cube16_schema());
        CHECK_THROWS_AS(fresh.load_checkpoint(ckpt.string()), FormatError);
        CHECK(fresh.next_episode() == 0);  // failed load leaves state untouched
    }

    SUBCASE("not a checkpoint at all") {
        std::ofstream(ckpt) << "junk";
        Engine fresh(cfg, cube16_schema());
        CHECK_THROWS_AS(fresh.load_checkpoint(ckpt.string()), FormatError);
    }

    SUBCASE("schema mismatch") {
        TaskStats other;
        other.median_d = other.min_d = 32;
        other.median_h = other.median_w = 32;
        other.min_h = other.min_w = 32;
        Engine fresh(cfg, build_schema(other));
        CHECK_THROWS_AS(fresh.load_checkpoint(ckpt.string()), ConfigError);
    }

    SUBCASE("reward mode mismatch") {
        // A dice-mode engine cannot adopt a bandit checkpoint.
        ExperimentConfig dice_cfg = bandit_cfg(4);
        dice_cfg.reward_mode = "dice";
        dice_cfg.bandit.target.clear();
        const fs::path data = fresh_dir("strict_data");
        SynthSpec spec;
        spec.cases = 6;
        spec.depth_min = 8;
        spec.depth_max = 10;
        spec.hw_min = 16;
        spec.hw_max = 16;
        spec.seed = 2;
        synth_generate(spec, data.string());
        dice_cfg.dataset = data.string();
        dice_cfg.fold_count = 2;
        dice_cfg.base_channels = 2;
        bool made = false;
        for (int64_t f = 0; f < 2 && !made; ++f) {
            dice_cfg.fold = f;
            try {
                Engine fresh(dice_cfg);
                made = true;
                CHECK_THROWS_AS(fresh.load_checkpoint(ckpt.string()), ConfigError);
            } catch (const ConfigError&) {
                // this fold left one side of the split empty; try the other
            }
        }
        CHECK(made);
        fs::remove_all(data);
    }

    fs::remove_all(dir);
}

TEST_CASE("dice engine end to end on a synthetic dataset") {
    const fs::path data = fresh_dir("dice_data");
    const fs::path out = fresh_dir("dice_out");

    SynthSpec spec;
    spec.cases = 8;
    spec.depth_min = 8;
    spec.depth_max = 10;
    spec.hw_min = 24;
    spec.hw_max = 24;
    spec.seed = 6;
    synth_generate(spec, data.string());

    ExperimentConfig cfg;
    cfg.dataset = data.string();
    cfg.fold_count = 2;
    cfg.episodes = 2;
    cfg.rollouts_per_episode = 2;
    cfg.child_epochs_per_episode = 1;
    cfg.batch_size = 2;
    cfg.base_channels = 2;
    cfg.seed = 5;
    cfg.log_timing = false;

    // Pick a fold that leaves both sides of the id-hash split non-empty.
    std::optional<Engine> eng;
    for (int64_t f = 0; f < 2 && !eng; ++f) {
        cfg.fold = f;
        try {
            eng.emplace(cfg);
        } catch (const ConfigError&) {
        }
    }
    REQUIRE(eng.has_value());
    CHECK(!eng->training_cases().empty());
    CHECK(!eng->validation_cases().empty());
    CHECK(eng->schema().decisions.size() == kDecisionCount);
    CHECK(eng->supernet().config().base_channels == 2);

    const SearchResult res = eng->run(out.string());
    REQUIRE(res.logs.size() == 2);
    // Episode 0 is the bootstrap: one reward, the maximal architecture.
    CHECK(res.logs[0].rewards.size() == 1);
    CHECK(res.logs[0].greedy == max_architecture(eng->schema()));
    // Episode 1 scores sampled rollouts.
    CHECK(res.logs[1].rewards.size() == 2);
    for (const EpisodeLog& l : res.logs)
        for (double r : l.rewards) {
            CHECK(r >= 0.0);
            CHECK(r <= 1.0);
        }

    const std::string jsonl = slurp(out / "episodes.jsonl");
    CHECK(std::count(jsonl.begin(), jsonl.end(), '\n') == 2);
    const std::string csv = slurp(out / "episodes.csv");
    CHECK(csv.substr(0, csv.find('\n')) == episode_csv_header());
    CHECK(fs::exists(res.checkpoint_path));

    fs::remove_all(data);
    fs::remove_all(out);
}
