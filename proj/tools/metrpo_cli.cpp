#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "metrpo/checkpoint.hpp"
#include "metrpo/driver.hpp"

namespace {

using metrpo::RunConfig;

std::vector<std::string> split_csv(const std::string& text)
{
    std::vector<std::string> out;
    std::string item;
    std::stringstream ss(text);
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(item);
    return out;
}

void apply_set_overrides(RunConfig& cfg, const std::vector<std::string>& pairs)
{
    for (const std::string& pair : pairs) {
        const auto eq = pair.find('=');
        if (eq == std::string::npos)
            throw CLI::ValidationError("--set expects key=value, got '" + pair + "'");
        cfg.apply(pair.substr(0, eq), pair.substr(eq + 1));
    }
}

void print_records(const metrpo::RunResult& result)
{
    for (const auto& rec : result.records)
        std::printf("iter %3d  steps %8lld  return %10.2f +- %.2f  inner %d\n",
                    rec.iteration, static_cast<long long>(rec.cumulative_real_steps),
                    rec.real_return_mean, rec.real_return_stderr, rec.inner_updates);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Model-ensemble trust-region policy optimization experiments"};
    app.require_subcommand(1);

    // Shared options filled per subcommand.
    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    std::string env_id, algorithm, optimizer, sampling_mode, validation_mode;
    int models = 0, iterations = -1;
    std::vector<std::string> set_pairs;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Key=value config file");
        cmd->add_option("--seed", seed, "Master seed");
        cmd->add_option("--env", env_id, "Environment id (pendulum, cartpole_swingup, pointmass)");
        cmd->add_option("--models,-K", models, "Ensemble size K");
        cmd->add_option("--sampling-mode", sampling_mode,
                        "step_rand | model_mean_std | model_mean | model_med | eps_rand | one_model");
        cmd->add_option("--validation-mode", validation_mode,
                        "ensemble | one_model | real | trpo_mean | no_early_50 | no_early_5");
        cmd->add_option("--algorithm", algorithm, "metrpo | vanilla_bptt | real_trpo");
        cmd->add_option("--optimizer", optimizer, "trpo | vpg | bptt");
        cmd->add_option("--iterations", iterations, "Outer iteration budget");
        cmd->add_option("--set", set_pairs, "Extra key=value config overrides")
            ->take_all();
    };

    auto build_config = [&](CLI::App* cmd) {
        RunConfig cfg;
        if (!config_path.empty())
            cfg = RunConfig::from_file(config_path);
        if (cmd->count("--seed"))
            cfg.seed = seed;
        if (cmd->count("--env"))
            cfg.env_id = env_id;
        if (cmd->count("--models"))
            cfg.num_models = models;
        if (cmd->count("--sampling-mode"))
            cfg.sampling_mode = sampling_mode;
        if (cmd->count("--validation-mode"))
            cfg.validation_mode = validation_mode;
        if (cmd->count("--algorithm"))
            cfg.algorithm = metrpo::algorithm_from_name(algorithm);
        if (cmd->count("--optimizer"))
            cfg.optimizer = optimizer;
        if (cmd->count("--iterations"))
            cfg.outer_iterations = iterations;
        apply_set_overrides(cfg, set_pairs);
        return cfg;
    };

    // ---- train ----
    auto* train = app.add_subcommand("train", "Run one training experiment");
    add_common(train);
    train->add_option("--out", out_dir, "Output directory")->required();
    train->callback([&] {
        RunConfig cfg = build_config(train);
        metrpo::RunResult result = metrpo::run_experiment(cfg, out_dir);
        print_records(result);
        std::cout << "wrote " << out_dir << "/run.csv (final return "
                  << result.final_return_mean() << ")\n";
    });

    // ---- ablate ----
    auto* ablate = app.add_subcommand("ablate", "Cross-product ablation over one config axis");
    add_common(ablate);
    std::string axis, values_csv, seeds_csv = "0,1,2";
    ablate->add_option("--axis", axis, "optimizer | K | sampling_mode | validation_mode")
        ->required();
    ablate->add_option("--values", values_csv, "Comma-separated axis values")->required();
    ablate->add_option("--seeds", seeds_csv, "Comma-separated seeds (default 0,1,2)");
    ablate->add_option("--out", out_dir, "Output directory")->required();
    ablate->callback([&] {
        RunConfig cfg = build_config(ablate);
        std::vector<std::uint64_t> seeds_list;
        for (const std::string& s : split_csv(seeds_csv))
            seeds_list.push_back(std::stoull(s));
        metrpo::AblationResult result =
            metrpo::run_ablation(cfg, axis, split_csv(values_csv), seeds_list, out_dir);
        for (const auto& [value, mean] : result.aggregate())
            std::printf("%s=%s  mean final return %.2f\n", axis.c_str(), value.c_str(), mean);
        int failed = 0;
        for (const auto& cell : result.cells)
            failed += cell.failed ? 1 : 0;
        if (failed)
            std::cout << failed << " cell(s) failed; see " << out_dir << "/summary.csv\n";
    });

    // ---- eval ----
    auto* eval = app.add_subcommand("eval", "Evaluate a policy checkpoint on the real system");
    std::string checkpoint;
    int episodes = 10;
    bool deterministic = false;
    eval->add_option("--checkpoint", checkpoint,
                     "Checkpoint base path (e.g. runs/x/checkpoints/policy)")
        ->required();
    eval->add_option("--env", env_id, "Environment id (default: from checkpoint metadata)");
    eval->add_option("--episodes", episodes, "Episode count");
    eval->add_option("--seed", seed, "Evaluation seed");
    eval->add_flag("--deterministic", deterministic, "Use the mean action");
    eval->callback([&] {
        metrpo::GaussianPolicy policy = metrpo::GaussianPolicy::load(checkpoint);
        std::string env_name = env_id;
        if (env_name.empty()) {
            metrpo::Checkpoint ckpt = metrpo::load_checkpoint(checkpoint);
            env_name = ckpt.meta.value("env", "");
        }
        if (env_name.empty())
            throw CLI::ValidationError("no environment id in checkpoint; pass --env");
        metrpo::EnvSpec env = metrpo::make_env(env_name);
        metrpo::Rng rng(seed);
        metrpo::ReturnStats stats =
            metrpo::evaluate_real_return(env, policy, episodes, rng, deterministic);
        std::printf("%s: return %.4f +- %.4f over %d episodes\n", env_name.c_str(),
                    stats.mean, stats.stderr_mean, stats.episodes);
    });

    // ---- demo-bias ----
    auto* demo = app.add_subcommand("demo-bias",
                                    "1-D model-bias demo: fit a double-well from local samples");
    metrpo::BiasDemoConfig demo_cfg;
    bool dense = false;
    demo->add_option("--out", out_dir, "Output directory")->required();
    demo->add_option("--seeds", demo_cfg.seeds, "Number of repetitions");
    demo->add_option("--samples", demo_cfg.samples, "Samples per fit");
    demo->add_option("--center", demo_cfg.sample_center, "Sampling center x0");
    demo->add_option("--std", demo_cfg.sample_std, "Sampling standard deviation");
    demo->add_option("--epochs", demo_cfg.fit_epochs, "Fit epochs");
    demo->add_option("--base-seed", demo_cfg.base_seed, "Base seed");
    demo->add_flag("--dense", dense, "Sample the whole domain uniformly instead");
    demo->callback([&] {
        demo_cfg.dense = dense;
        metrpo::BiasDemoReport report = metrpo::run_bias_demo(demo_cfg, out_dir);
        std::printf("argmin in suboptimal basin: %d / %d (near global: %d)\n",
                    report.suboptimal_basin_count, report.seeds, report.near_global_count);
        std::cout << "wrote " << out_dir << "/curve.csv and report.json\n";
    });

    // ---- replay ----
    auto* replay = app.add_subcommand("replay", "Re-run a logged experiment and compare bytes");
    std::string log_path;
    replay->add_option("--log", log_path, "Path to an existing run.csv")->required();
    replay->add_option("--out", out_dir, "Scratch directory for the re-run")->required();
    replay->callback([&] {
        std::string message;
        const bool ok = metrpo::replay_run(log_path, out_dir, &message);
        std::cout << message << "\n";
        if (!ok)
            throw CLI::RuntimeError("replay mismatch", 1);
    });

    CLI11_PARSE(app, argc, argv);
    return 0;
}
