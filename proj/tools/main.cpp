// voxnas command-line front end: dataset synthesis, search-space inspection,
// the architecture search itself, checkpoint evaluation, single-case
// inference, and the gradient-check battery.
//
// Exit codes: 0 success, 1 usage/argument error, 2 data/config error,
// 3 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "voxnas/data_io.hpp"
#include "voxnas/engine.hpp"
#include "voxnas/errors.hpp"
#include "voxnas/grad_check.hpp"
#include "voxnas/search_space.hpp"
#include "voxnas/supernet.hpp"

namespace {

using namespace voxnas;

template <typename F>
int guarded(F&& body) {
    try {
        return body();
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const ArgumentError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const NumericError& e) {
        std::cerr << "numeric abort: " << e.what() << "\n";
        return 3;
    } catch (const std::runtime_error& e) {  // Format/Io/Config
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}

void write_mask(const std::string& dir, const std::string& id, const Tensor5<float>& mask) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
    nlohmann::json meta;
    meta["id"] = id;
    meta["shape"] = {mask.shape.c, mask.shape.d, mask.shape.h, mask.shape.w};
    meta["label_channels"] = mask.shape.c;
    meta["dtype"] = "f32le";
    std::ofstream mj(dir + "/meta.json", std::ios::trunc);
    if (!mj) throw IoError("cannot open " + dir + "/meta.json");
    mj << meta.dump(2) << "\n";
    std::ofstream raw(dir + "/mask.raw", std::ios::binary | std::ios::trunc);
    if (!raw) throw IoError("cannot open " + dir + "/mask.raw");
    raw.write(reinterpret_cast<const char*>(mask.ptr()),
              mask.numel() * static_cast<int64_t>(sizeof(float)));
    if (!raw) throw IoError("short write to " + dir + "/mask.raw");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Resource-frugal architecture search for anisotropic 3D segmentation"};
    app.require_subcommand(1);

    // synth
    SynthSpec synth_spec;
    std::string synth_out;
    auto* synth = app.add_subcommand("synth", "Generate a seeded synthetic dataset");
    synth->add_option("--out", synth_out, "Output dataset directory")->required();
    synth->add_option("--seed", synth_spec.seed, "Generator seed");
    synth->add_option("--cases", synth_spec.cases, "Number of cases");
    synth->add_option("--channels", synth_spec.channels, "Image channels");
    synth->add_option("--classes", synth_spec.classes, "Label channels");
    synth->add_option("--depth-min", synth_spec.depth_min, "Minimum depth");
    synth->add_option("--depth-max", synth_spec.depth_max, "Maximum depth");
    synth->add_option("--hw-min", synth_spec.hw_min, "Minimum in-plane extent");
    synth->add_option("--hw-max", synth_spec.hw_max, "Maximum in-plane extent");

    // inspect-space
    std::string space_data;
    TaskStats space_stats;
    auto* space = app.add_subcommand("inspect-space", "Print the decision schema as JSON");
    space->add_option("--data", space_data, "Dataset directory (stats from its manifest)");
    space->add_option("--median-d", space_stats.median_d, "Median depth");
    space->add_option("--median-h", space_stats.median_h, "Median height");
    space->add_option("--median-w", space_stats.median_w, "Median width");
    space->add_option("--min-d", space_stats.min_d, "Minimum depth (defaults to median)");
    space->add_option("--min-h", space_stats.min_h, "Minimum height (defaults to median)");
    space->add_option("--min-w", space_stats.min_w, "Minimum width (defaults to median)");
    space->add_option("--in-channels", space_stats.in_channels, "Image channels");
    space->add_option("--out-channels", space_stats.out_channels, "Label channels");

    // search
    std::string search_config, search_data, search_out, search_resume;
    uint64_t search_seed = 0;
    int64_t search_fold = 0, search_episodes = 0;
    auto* search = app.add_subcommand("search", "Run the architecture search");
    search->add_option("--config", search_config, "Experiment config JSON");
    search->add_option("--data", search_data, "Dataset directory (overrides config)");
    search->add_option("--out", search_out, "Directory for logs and the checkpoint");
    search->add_option("--seed", search_seed, "Seed (overrides config)");
    search->add_option("--fold", search_fold, "Validation fold (overrides config)");
    search->add_option("--episodes", search_episodes, "Episode count (overrides config)");
    search->add_option("--resume", search_resume, "Checkpoint to resume from");

    // eval
    std::string eval_ckpt, eval_data;
    int64_t eval_fold = 0;
    auto* eval = app.add_subcommand("eval", "Validation dice of a checkpoint's greedy architecture");
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
    eval->add_option("--data", eval_data, "Dataset directory (overrides checkpoint config)");
    eval->add_option("--fold", eval_fold, "Validation fold (overrides checkpoint config)");

    // infer
    std::string infer_ckpt, infer_case, infer_out, infer_data;
    auto* infer = app.add_subcommand("infer", "Predict a mask for one case");
    infer->add_option("--checkpoint", infer_ckpt, "Checkpoint file")->required();
    infer->add_option("--case", infer_case, "Case directory")->required();
    infer->add_option("--out", infer_out, "Output directory for the mask")->required();
    infer->add_option("--data", infer_data, "Dataset directory (overrides checkpoint config)");

    // gradcheck
    uint64_t gc_seed = 0;
    int64_t gc_sample = 0;
    auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference battery");
    gradcheck->add_option("--seed", gc_seed, "Battery seed");
    gradcheck->add_option("--sample", gc_sample, "FD probes per tensor (0 = exhaustive)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (app.got_subcommand(synth)) {
        return guarded([&] {
            const DatasetManifest m = synth_generate(synth_spec, synth_out);
            std::printf("wrote %zu cases to %s\n", m.cases.size(), m.root.c_str());
            return 0;
        });
    }

    if (app.got_subcommand(space)) {
        return guarded([&] {
            TaskStats st = space_stats;
            if (!space_data.empty()) {
                st = load_manifest(space_data).stats();
            } else {
                if (st.min_d == 0) st.min_d = st.median_d;
                if (st.min_h == 0) st.min_h = st.median_h;
                if (st.min_w == 0) st.min_w = st.median_w;
            }
            std::printf("%s\n", schema_to_json(build_schema(st)).c_str());
            return 0;
        });
    }

    if (app.got_subcommand(search)) {
        return guarded([&] {
            ExperimentConfig cfg;
            if (!search_config.empty()) cfg = load_config(search_config);
            if (!search_data.empty()) cfg.dataset = search_data;
            if (search->count("--seed")) cfg.seed = search_seed;
            if (search->count("--fold")) cfg.fold = search_fold;
            if (search->count("--episodes")) cfg.episodes = search_episodes;
            if (!search_resume.empty()) cfg.resume = search_resume;
            if (cfg.reward_mode == "dice" && cfg.dataset.empty()) {
                std::cerr << "error: search needs a dataset (--data or config)\n"
                          << search->help();
                return 1;
            }
            Engine engine(cfg);
            const SearchResult res = engine.run(search_out);
            std::printf("ran %zu episodes (through %lld of %lld)\n", res.logs.size(),
                        static_cast<long long>(engine.next_episode()),
                        static_cast<long long>(cfg.episodes));
            if (!res.logs.empty())
                std::printf("last episode mean reward %.6f, entropy %.6f\n",
                            res.logs.back().mean_reward, res.logs.back().entropy);
            std::printf("final greedy architecture: %s\n",
                        choice_to_json(res.final_greedy).c_str());
            if (!res.checkpoint_path.empty())
                std::printf("checkpoint: %s\n", res.checkpoint_path.c_str());
            return 0;
        });
    }

    if (app.got_subcommand(eval)) {
        return guarded([&] {
            ExperimentConfig cfg = checkpoint_peek_config(eval_ckpt);
            if (!eval_data.empty()) cfg.dataset = eval_data;
            if (eval->count("--fold")) cfg.fold = eval_fold;
            cfg.resume = eval_ckpt;
            Engine engine(cfg);
            const ArchChoice greedy = engine.controller().greedy();
            const double dice = evaluate_dice(engine.supernet(), resolve(engine.schema(), greedy),
                                              engine.validation_cases());
            nlohmann::json j;
            j["dice"] = dice;
            j["architecture"] = greedy.indices;
            j["fold"] = cfg.fold;
            std::printf("%s\n", j.dump().c_str());
            return 0;
        });
    }

    if (app.got_subcommand(infer)) {
        return guarded([&] {
            ExperimentConfig cfg = checkpoint_peek_config(infer_ckpt);
            if (!infer_data.empty()) cfg.dataset = infer_data;
            cfg.resume = infer_ckpt;
            Engine engine(cfg);
            Case c = load_case(infer_case);
            zscore_normalize(c.image);
            const ArchRealization r = resolve(engine.schema(), engine.controller().greedy());
            const Tensor5<float> logits = one_shot_infer(engine.supernet(), r, c.image);
            Tensor5<float> mask(logits.shape);
            for (int64_t i = 0; i < logits.numel(); ++i)
                mask.ptr()[i] = logits.ptr()[i] >= 0.0f ? 1.0f : 0.0f;
            write_mask(infer_out, c.id + "_pred", mask);
            std::printf("wrote %s/mask.raw (%s)\n", infer_out.c_str(), mask.shape.str().c_str());
            return 0;
        });
    }

    if (app.got_subcommand(gradcheck)) {
        return guarded([&] {
            const auto cases = gradcheck_battery(gc_seed, gc_sample);
            double worst = 0.0;
            for (const GradCheckCase& c : cases) {
                std::printf("%-28s checked %6lld  max_rel_err %.3e\n", c.name.c_str(),
                            static_cast<long long>(c.report.checked), c.report.max_rel_err);
                worst = std::max(worst, c.report.max_rel_err);
            }
            std::printf("worst max_rel_err %.3e\n", worst);
            if (worst >= 1e-4) throw NumericError("gradient check exceeded 1e-4");
            return 0;
        });
    }

    return 1;
}
