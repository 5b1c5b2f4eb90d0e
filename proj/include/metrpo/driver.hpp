#pragma once

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "metrpo/optimizers.hpp"
#include "metrpo/rollout.hpp"
#include "metrpo/validation.hpp"

namespace metrpo {

enum class Algorithm {
    kMetrpo,      // ensemble + fictitious TRPO/VPG updates, ratio-gated
    kVanillaBptt, // single model + BPTT inner updates
    kRealTrpo     // model-free TRPO on real batches (baseline harness)
};

std::string algorithm_name(Algorithm a);
Algorithm algorithm_from_name(const std::string& name);

// Flat run configuration. Serializes to ordered key=value lines; every
// run.csv embeds the full set so a log can be replayed exactly.
struct RunConfig {
    std::string env_id = "pendulum";
    Algorithm algorithm = Algorithm::kMetrpo;
    std::uint64_t seed = 0;
    int outer_iterations = 10;
    int num_models = 5;
    std::string sampling_mode = "step_rand";
    int one_model_index = 0;

    double explore_std_min = 0.0;
    double explore_std_max = 3.0;
    double param_noise_scale = 1.0;
    int timesteps_per_iteration = 3000;

    std::vector<int> model_hidden = {256, 256};
    double model_learning_rate = 1e-3;
    int model_batch_size = 1000;
    int model_check_every = 5;
    int model_patience = 25;
    int model_max_passes = 300;

    std::vector<int> policy_hidden = {32, 32};
    double policy_init_std = 1.0;
    // Bound the policy mean inside the action range via a scaled tanh
    // output (the action distribution itself stays Gaussian).
    bool policy_bounded_mean = true;
    // Floor on the policy standard deviation (0 disables). Keeps fictitious
    // rollouts exploratory while early models are still poor.
    double policy_min_std = 0.3;

    std::string optimizer = "trpo";
    double trpo_delta_kl = 0.01;
    int cg_iterations = 10;
    double cg_damping = 0.1;
    int max_backtracks = 10;
    double backtrack_ratio = 0.5;
    int fvp_max_states = 1024;
    int fictitious_batch = 10000;
    double advantage_gamma = 0.99;
    double vpg_learning_rate = 0.01;
    double bptt_learning_rate = 0.01;
    double clip_norm = 10.0;
    bool bptt_deterministic = true;

    // Start-state pool for fictitious rollouts: "all_states" draws from
    // every real state visited, "episode_starts" only from real episode
    // initial states.
    std::string fictitious_inits = "all_states";

    std::string validation_mode = "ensemble";
    double validation_threshold = 0.70;
    int validation_check_every = 5;
    int validation_patience = 25;
    int max_inner_updates = 100;
    int val_rollouts_per_model = 8;

    int eval_episodes = 8;
    bool eval_deterministic = false;
    int check_eval_episodes = 4; // real-return probe at validation checks
    double target_return = std::numeric_limits<double>::quiet_NaN(); // optional early exit
    int threads = 2;

    std::map<std::string, double> env_overrides; // serialized as env.<key>

    // Ordered serialization used by config files and log headers.
    std::vector<std::pair<std::string, std::string>> to_items() const;
    void apply(const std::string& key, const std::string& value);
    static RunConfig from_file(const std::string& path);
    static RunConfig from_items(
        const std::vector<std::pair<std::string, std::string>>& items);
};

struct IterationRecord {
    int iteration = 0;
    std::int64_t cumulative_real_steps = 0;
    double real_return_mean = 0.0;
    double real_return_stderr = 0.0;
    int inner_updates = 0;
    Eigen::VectorXd model_val_losses; // best raw validation loss per member
    Eigen::VectorXd eta_per_model;    // post-phase estimated returns
};

// One validation check inside an inner phase; the paired estimated/real
// probes drive the overfitting diagnostics.
struct CheckRecord {
    int iteration = 0;
    int update_index = 0;
    double ratio = 0.0;
    bool continue_flag = true;
    double eta_mean = 0.0;
    double real_return = 0.0;
};

struct RunResult {
    RunConfig config;
    std::vector<IterationRecord> records;
    std::vector<CheckRecord> checks;

    double final_return_mean() const
    {
        return records.empty() ? std::numeric_limits<double>::quiet_NaN()
                               : records.back().real_return_mean;
    }
    double best_return_mean() const;
};

// Runs the configured algorithm. When out_dir is nonempty the run writes
// run.csv, updates.csv, validation.csv, summary.json, dataset CSVs, and
// checkpoints/ under it. Errors flush partial logs before propagating.
RunResult run_experiment(const RunConfig& config, const std::string& out_dir = "");

// Algorithm-specific entry points (enforce their invariants on the config).
RunResult run_metrpo(const RunConfig& config, const std::string& out_dir = "");
RunResult run_vanilla(const RunConfig& config, const std::string& out_dir = "");

struct AblationCell {
    std::string axis_value;
    std::uint64_t seed = 0;
    bool failed = false;
    std::string error;
    double final_return = 0.0;
    double best_return = 0.0;
};

struct AblationResult {
    std::string axis;
    std::vector<AblationCell> cells;
    // Mean final return per axis value, in first-seen order.
    std::vector<std::pair<std::string, double>> aggregate() const;
};

// Cross product of values x seeds over one config axis (optimizer, K,
// sampling_mode, validation_mode). Cell failures are recorded and the
// remaining cells still run.
AblationResult run_ablation(const RunConfig& base, const std::string& axis,
                            const std::vector<std::string>& values,
                            const std::vector<std::uint64_t>& seeds,
                            const std::string& out_dir);

// 1-D model-bias demonstration: a double-well with its global minimum at
// x = 1.7 and a local one at x = 4.4, fitted from samples around x0 = 2.5.
struct BiasDemoConfig {
    std::uint64_t base_seed = 0;
    int seeds = 50;
    int samples = 60;
    double sample_center = 2.5;
    double sample_std = 0.7;
    bool dense = false; // uniform full-domain sampling instead
    int dense_samples = 200;
    std::vector<int> fit_hidden = {64, 64};
    int fit_epochs = 3000;
    double fit_learning_rate = 1e-3;
    int grid_points = 1201;
};

struct BiasDemoReport {
    int seeds = 0;
    int suboptimal_basin_count = 0; // argmin of the fit past the barrier
    int near_global_count = 0;      // |argmin - 1.7| <= 0.1
    std::vector<double> argmins;
    std::vector<std::array<double, 3>> curve; // (x, f, fit) for the first seed
};

// True objective of the demo (quartic; f(1.7) = 0 at the global minimum,
// barrier at x = 3.2, local minimum at x = 4.4).
double bias_demo_true_f(double x);
double bias_demo_barrier();

BiasDemoReport run_bias_demo(const BiasDemoConfig& config, const std::string& out_dir = "");

// Re-runs the config embedded in a run.csv header into scratch_dir and
// byte-compares the regenerated run.csv against the original.
bool replay_run(const std::string& run_csv_path, const std::string& scratch_dir,
                std::string* message = nullptr);

RunConfig parse_run_header(const std::string& run_csv_path);

} // namespace metrpo
