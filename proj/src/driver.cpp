#include "metrpo/driver.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "metrpo/csvio.hpp"
#include "metrpo/version.hpp"

namespace metrpo {

namespace {

std::string int_list_to_string(const std::vector<int>& values)
{
    std::string out;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i)
            out += ",";
        out += std::to_string(values[i]);
    }
    return out;
}

std::vector<int> parse_int_list(const std::string& text)
{
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty())
            out.push_back(std::stoi(item));
    if (out.empty())
        throw std::invalid_argument("empty integer list: '" + text + "'");
    return out;
}

bool parse_bool(const std::string& text)
{
    if (text == "1" || text == "true")
        return true;
    if (text == "0" || text == "false")
        return false;
    throw std::invalid_argument("expected boolean, got '" + text + "'");
}

} // namespace

std::string algorithm_name(Algorithm a)
{
    switch (a) {
    case Algorithm::kMetrpo: return "metrpo";
    case Algorithm::kVanillaBptt: return "vanilla_bptt";
    case Algorithm::kRealTrpo: return "real_trpo";
    }
    return "metrpo";
}

Algorithm algorithm_from_name(const std::string& name)
{
    if (name == "metrpo")
        return Algorithm::kMetrpo;
    if (name == "vanilla_bptt")
        return Algorithm::kVanillaBptt;
    if (name == "real_trpo")
        return Algorithm::kRealTrpo;
    throw std::invalid_argument("unknown algorithm: " + name);
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_items() const
{
    std::vector<std::pair<std::string, std::string>> items;
    auto put = [&](const std::string& k, const std::string& v) { items.emplace_back(k, v); };
    put("env", env_id);
    put("algorithm", algorithm_name(algorithm));
    put("seed", std::to_string(seed));
    put("outer_iterations", std::to_string(outer_iterations));
    put("num_models", std::to_string(num_models));
    put("sampling_mode", sampling_mode);
    put("one_model_index", std::to_string(one_model_index));
    put("explore_std_min", g17(explore_std_min));
    put("explore_std_max", g17(explore_std_max));
    put("param_noise_scale", g17(param_noise_scale));
    put("timesteps_per_iteration", std::to_string(timesteps_per_iteration));
    put("model_hidden", int_list_to_string(model_hidden));
    put("model_learning_rate", g17(model_learning_rate));
    put("model_batch_size", std::to_string(model_batch_size));
    put("model_check_every", std::to_string(model_check_every));
    put("model_patience", std::to_string(model_patience));
    put("model_max_passes", std::to_string(model_max_passes));
    put("policy_hidden", int_list_to_string(policy_hidden));
    put("policy_init_std", g17(policy_init_std));
    put("policy_bounded_mean", policy_bounded_mean ? "1" : "0");
    put("policy_min_std", g17(policy_min_std));
    put("optimizer", optimizer);
    put("trpo_delta_kl", g17(trpo_delta_kl));
    put("cg_iterations", std::to_string(cg_iterations));
    put("cg_damping", g17(cg_damping));
    put("max_backtracks", std::to_string(max_backtracks));
    put("backtrack_ratio", g17(backtrack_ratio));
    put("fvp_max_states", std::to_string(fvp_max_states));
    put("fictitious_batch", std::to_string(fictitious_batch));
    put("advantage_gamma", g17(advantage_gamma));
    put("vpg_learning_rate", g17(vpg_learning_rate));
    put("bptt_learning_rate", g17(bptt_learning_rate));
    put("clip_norm", g17(clip_norm));
    put("bptt_deterministic", bptt_deterministic ? "1" : "0");
    put("fictitious_inits", fictitious_inits);
    put("validation_mode", validation_mode);
    put("validation_threshold", g17(validation_threshold));
    put("validation_check_every", std::to_string(validation_check_every));
    put("validation_patience", std::to_string(validation_patience));
    put("max_inner_updates", std::to_string(max_inner_updates));
    put("val_rollouts_per_model", std::to_string(val_rollouts_per_model));
    put("eval_episodes", std::to_string(eval_episodes));
    put("eval_deterministic", eval_deterministic ? "1" : "0");
    put("check_eval_episodes", std::to_string(check_eval_episodes));
    put("target_return", g17(target_return));
    put("threads", std::to_string(threads));
    for (const auto& [key, value] : env_overrides)
        put("env." + key, g17(value));
    return items;
}

void RunConfig::apply(const std::string& key, const std::string& value)
{
    if (key.rfind("env.", 0) == 0) {
        env_overrides[key.substr(4)] = std::stod(value);
        return;
    }
    if (key == "env") env_id = value;
    else if (key == "algorithm") algorithm = algorithm_from_name(value);
    else if (key == "seed") seed = std::stoull(value);
    else if (key == "outer_iterations") outer_iterations = std::stoi(value);
    else if (key == "num_models") num_models = std::stoi(value);
    else if (key == "sampling_mode") sampling_mode = value;
    else if (key == "one_model_index") one_model_index = std::stoi(value);
    else if (key == "explore_std_min") explore_std_min = std::stod(value);
    else if (key == "explore_std_max") explore_std_max = std::stod(value);
    else if (key == "param_noise_scale") param_noise_scale = std::stod(value);
    else if (key == "timesteps_per_iteration") timesteps_per_iteration = std::stoi(value);
    else if (key == "model_hidden") model_hidden = parse_int_list(value);
    else if (key == "model_learning_rate") model_learning_rate = std::stod(value);
    else if (key == "model_batch_size") model_batch_size = std::stoi(value);
    else if (key == "model_check_every") model_check_every = std::stoi(value);
    else if (key == "model_patience") model_patience = std::stoi(value);
    else if (key == "model_max_passes") model_max_passes = std::stoi(value);
    else if (key == "policy_hidden") policy_hidden = parse_int_list(value);
    else if (key == "policy_init_std") policy_init_std = std::stod(value);
    else if (key == "policy_bounded_mean") policy_bounded_mean = parse_bool(value);
    else if (key == "policy_min_std") policy_min_std = std::stod(value);
    else if (key == "optimizer") optimizer = value;
    else if (key == "trpo_delta_kl") trpo_delta_kl = std::stod(value);
    else if (key == "cg_iterations") cg_iterations = std::stoi(value);
    else if (key == "cg_damping") cg_damping = std::stod(value);
    else if (key == "max_backtracks") max_backtracks = std::stoi(value);
    else if (key == "backtrack_ratio") backtrack_ratio = std::stod(value);
    else if (key == "fvp_max_states") fvp_max_states = std::stoi(value);
    else if (key == "fictitious_batch") fictitious_batch = std::stoi(value);
    else if (key == "advantage_gamma") advantage_gamma = std::stod(value);
    else if (key == "vpg_learning_rate") vpg_learning_rate = std::stod(value);
    else if (key == "bptt_learning_rate") bptt_learning_rate = std::stod(value);
    else if (key == "clip_norm") clip_norm = std::stod(value);
    else if (key == "bptt_deterministic") bptt_deterministic = parse_bool(value);
    else if (key == "fictitious_inits") fictitious_inits = value;
    else if (key == "validation_mode") validation_mode = value;
    else if (key == "validation_threshold") validation_threshold = std::stod(value);
    else if (key == "validation_check_every") validation_check_every = std::stoi(value);
    else if (key == "validation_patience") validation_patience = std::stoi(value);
    else if (key == "max_inner_updates") max_inner_updates = std::stoi(value);
    else if (key == "val_rollouts_per_model") val_rollouts_per_model = std::stoi(value);
    else if (key == "eval_episodes") eval_episodes = std::stoi(value);
    else if (key == "eval_deterministic") eval_deterministic = parse_bool(value);
    else if (key == "check_eval_episodes") check_eval_episodes = std::stoi(value);
    else if (key == "target_return") target_return = std::stod(value);
    else if (key == "threads") threads = std::stoi(value);
    else
        throw std::invalid_argument("unknown config key: " + key);
}

RunConfig RunConfig::from_items(const std::vector<std::pair<std::string, std::string>>& items)
{
    RunConfig cfg;
    for (const auto& [key, value] : items)
        cfg.apply(key, value);
    return cfg;
}

RunConfig RunConfig::from_file(const std::string& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::runtime_error("cannot read config file: " + path);
    RunConfig cfg;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos)
            continue;
        if (line[first] == '#')
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected key=value");
        std::string key = line.substr(first, eq - first);
        std::string value = line.substr(eq + 1);
        auto strip = [](std::string& s) {
            while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
                s.pop_back();
            while (!s.empty() && (s.front() == ' ' || s.front() == '\t'))
                s.erase(s.begin());
        };
        strip(key);
        strip(value);
        cfg.apply(key, value);
    }
    return cfg;
}

double RunResult::best_return_mean() const
{
    double best = std::numeric_limits<double>::quiet_NaN();
    for (const IterationRecord& rec : records)
        if (std::isnan(best) || rec.real_return_mean > best)
            best = rec.real_return_mean;
    return best;
}

namespace {

struct UpdateRow {
    int iteration = 0;
    int update = 0;
    std::string optimizer;
    UpdateDiagnostics diag;
};

void write_run_csv(const std::string& path, const RunConfig& cfg,
                   const std::vector<IterationRecord>& records)
{
    CsvWriter csv(path);
    csv.comment("metrpo run log v1");
    csv.comment("code_hash=" + std::string(kCodeHash));
    for (const auto& [key, value] : cfg.to_items())
        csv.comment("config " + key + "=" + value);

    std::vector<std::string> header = {"iteration", "cumulative_real_steps",
                                       "real_return_mean", "real_return_stderr",
                                       "inner_updates"};
    for (int k = 0; k < cfg.num_models; ++k)
        header.push_back("model_val_loss_" + std::to_string(k));
    for (int k = 0; k < cfg.num_models; ++k)
        header.push_back("eta_hat_" + std::to_string(k));
    csv.row(header);

    for (const IterationRecord& rec : records) {
        std::vector<std::string> cells = {
            std::to_string(rec.iteration), std::to_string(rec.cumulative_real_steps),
            g17(rec.real_return_mean), g17(rec.real_return_stderr),
            std::to_string(rec.inner_updates)};
        for (Eigen::Index k = 0; k < rec.model_val_losses.size(); ++k)
            cells.push_back(g17(rec.model_val_losses(k)));
        for (Eigen::Index k = 0; k < rec.eta_per_model.size(); ++k)
            cells.push_back(g17(rec.eta_per_model(k)));
        csv.row(cells);
    }
    csv.flush();
}

void write_updates_csv(const std::string& path, const std::vector<UpdateRow>& rows)
{
    CsvWriter csv(path);
    csv.row({"iteration", "update", "optimizer", "accepted", "surrogate_improvement", "kl",
             "grad_norm", "line_search_steps", "batch_return", "note"});
    for (const UpdateRow& row : rows)
        csv.row({std::to_string(row.iteration), std::to_string(row.update), row.optimizer,
                 row.diag.accepted ? "1" : "0", g17(row.diag.surrogate_improvement),
                 g17(row.diag.kl), g17(row.diag.grad_norm),
                 std::to_string(row.diag.line_search_steps), g17(row.diag.batch_return),
                 row.diag.note});
    csv.flush();
}

void write_validation_csv(const std::string& path, const RunConfig& cfg,
                          const std::vector<CheckRecord>& checks)
{
    CsvWriter csv(path);
    csv.row({"iteration", "update", "mode", "ratio", "continue_flag", "eta_mean",
             "real_return"});
    for (const CheckRecord& check : checks)
        csv.row({std::to_string(check.iteration), std::to_string(check.update_index),
                 cfg.validation_mode, g17(check.ratio), check.continue_flag ? "1" : "0",
                 g17(check.eta_mean), g17(check.real_return)});
    csv.flush();
}

void write_summary_json(const std::string& path, const RunResult& result,
                        std::int64_t real_steps)
{
    nlohmann::json summary;
    summary["env"] = result.config.env_id;
    summary["algorithm"] = algorithm_name(result.config.algorithm);
    summary["seed"] = result.config.seed;
    summary["num_models"] = result.config.num_models;
    summary["iterations"] = result.records.size();
    summary["cumulative_real_steps"] = real_steps;
    summary["final_return_mean"] = result.final_return_mean();
    summary["best_return_mean"] = result.best_return_mean();
    summary["code_hash"] = kCodeHash;
    std::ofstream out(path);
    out << summary.dump(2) << "\n";
}

// Stochastic on-policy rollouts packed as a trajectory batch (the real-data
// feed for the model-free baseline).
TrajectoryBatch collect_real_batch(const EnvSpec& env, const GaussianPolicy& policy,
                                   int min_steps, Rng& rng)
{
    TrajectoryBatch batch;
    batch.horizon = env.horizon;
    std::int64_t steps = 0;
    while (steps < min_steps) {
        Trajectory tr;
        tr.states.resize(env.state_dim, env.horizon);
        tr.actions.resize(env.action_dim, env.horizon);
        tr.noises.resize(env.action_dim, env.horizon);
        tr.rewards.resize(env.horizon);
        tr.model_indices = Eigen::VectorXi::Constant(env.horizon, -1);
        Eigen::VectorXd s = env.sample_initial(rng);
        for (int t = 0; t < env.horizon; ++t) {
            const Eigen::VectorXd zeta = rng.normal_vector(env.action_dim);
            const Eigen::VectorXd a = policy.reparametrized_action(s, zeta);
            tr.states.col(t) = s;
            tr.actions.col(t) = a;
            tr.noises.col(t) = zeta;
            tr.rewards(t) = env.reward(s, a);
            s = env.step(s, a);
        }
        steps += env.horizon;
        batch.trajectories.push_back(std::move(tr));
    }
    return batch;
}

std::vector<Eigen::VectorXd> states_of(const std::vector<Episode>& episodes)
{
    std::vector<Eigen::VectorXd> pool;
    for (const Episode& ep : episodes)
        for (const Transition& tr : ep)
            pool.push_back(tr.s);
    return pool;
}

std::vector<Eigen::VectorXd> start_states_of(const std::vector<Episode>& episodes)
{
    std::vector<Eigen::VectorXd> pool;
    for (const Episode& ep : episodes)
        pool.push_back(ep.front().s);
    return pool;
}

std::vector<Eigen::VectorXd> sample_pool(const std::vector<Eigen::VectorXd>& pool, int count,
                                         Rng& rng)
{
    std::vector<Eigen::VectorXd> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        out.push_back(pool[static_cast<std::size_t>(rng.uniform_int(
            static_cast<int>(pool.size())))]);
    return out;
}

Eigen::VectorXd eta_all_members(const ModelEnsemble& ensemble, const GaussianPolicy& policy,
                                const std::vector<Eigen::VectorXd>& init_states,
                                const EnvSpec& env, Rng rng)
{
    Eigen::VectorXd eta(ensemble.size());
    for (int k = 0; k < ensemble.size(); ++k) {
        Rng member_rng = rng.substream("eta-member-" + std::to_string(k));
        eta(k) = estimate_model_return(ensemble.member(k), policy, init_states, env.horizon,
                                       env, member_rng);
    }
    return eta;
}

RunConfig normalized_config(RunConfig cfg)
{
    if (cfg.algorithm == Algorithm::kVanillaBptt) {
        cfg.num_models = 1;
        cfg.sampling_mode = "one_model";
        cfg.one_model_index = 0;
        cfg.validation_mode = "one_model";
        cfg.optimizer = "bptt";
    }
    if (cfg.algorithm == Algorithm::kRealTrpo) {
        cfg.num_models = 1;
        cfg.optimizer = "trpo";
    }
    if (cfg.num_models < 1)
        throw std::invalid_argument("num_models must be >= 1");
    if (cfg.outer_iterations < 0)
        throw std::invalid_argument("outer_iterations must be >= 0");
    return cfg;
}

} // namespace

RunResult run_experiment(const RunConfig& config, const std::string& out_dir)
{
    const RunConfig cfg = normalized_config(config);
    const EnvSpec env = make_env(cfg.env_id, cfg.env_overrides);
    if (cfg.fictitious_batch < env.horizon)
        throw std::invalid_argument("fictitious_batch must cover at least one horizon");

    Rng master(cfg.seed);
    GaussianPolicy policy =
        cfg.policy_bounded_mean
            ? GaussianPolicy::make(env.state_dim, env.action_dim, cfg.policy_hidden,
                                   derive_seed(cfg.seed, "policy-init"),
                                   cfg.policy_init_std, Activation::kTanh,
                                   env.action_high)
            : GaussianPolicy::make(env.state_dim, env.action_dim, cfg.policy_hidden,
                                   derive_seed(cfg.seed, "policy-init"),
                                   cfg.policy_init_std);
    policy.set_min_std(cfg.policy_min_std);

    Rng model_init_rng = master.substream("model-init");
    ModelEnsemble ensemble;
    if (cfg.algorithm != Algorithm::kRealTrpo)
        ensemble = make_ensemble(cfg.num_models, env.state_dim, env.action_dim,
                                 cfg.model_hidden, model_init_rng);

    Dataset dataset(derive_seed(cfg.seed, "split"));

    ModelTrainConfig model_cfg;
    model_cfg.hidden = cfg.model_hidden;
    model_cfg.learning_rate = cfg.model_learning_rate;
    model_cfg.batch_size = cfg.model_batch_size;
    model_cfg.check_every_passes = cfg.model_check_every;
    model_cfg.patience_passes = cfg.model_patience;
    model_cfg.max_passes = cfg.model_max_passes;

    OptimizerConfig opt_cfg;
    opt_cfg.kind = optimizer_from_name(cfg.optimizer);
    opt_cfg.trpo_delta_kl = cfg.trpo_delta_kl;
    opt_cfg.cg_iterations = cfg.cg_iterations;
    opt_cfg.cg_damping = cfg.cg_damping;
    opt_cfg.max_backtracks = cfg.max_backtracks;
    opt_cfg.backtrack_ratio = cfg.backtrack_ratio;
    opt_cfg.fvp_max_states = cfg.fvp_max_states;
    opt_cfg.advantage_gamma = cfg.advantage_gamma;
    opt_cfg.vpg_learning_rate = cfg.vpg_learning_rate;
    opt_cfg.bptt_learning_rate = cfg.bptt_learning_rate;
    opt_cfg.clip_norm = cfg.clip_norm;
    opt_cfg.bptt_deterministic = cfg.bptt_deterministic;
    opt_cfg.fictitious_batch_size = cfg.fictitious_batch;

    const SamplingMode mode = SamplingMode::from_name(cfg.sampling_mode, cfg.one_model_index);
    ValidationConfig val_cfg;
    val_cfg.mode = validation_mode_from_name(cfg.validation_mode);
    val_cfg.threshold = cfg.validation_threshold;
    val_cfg.check_every = cfg.validation_check_every;
    val_cfg.patience = cfg.validation_patience;
    val_cfg.designated_model = cfg.one_model_index;

    ExplorationConfig explore;
    explore.std_min = cfg.explore_std_min;
    explore.std_max = cfg.explore_std_max;
    explore.param_noise_scale = cfg.param_noise_scale;
    explore.timesteps_per_iteration = cfg.timesteps_per_iteration;

    RunResult result;
    result.config = cfg;
    std::vector<UpdateRow> update_rows;
    std::int64_t cumulative = 0;

    auto flush_outputs = [&]() {
        if (out_dir.empty())
            return;
        std::filesystem::create_directories(out_dir);
        write_run_csv(out_dir + "/run.csv", cfg, result.records);
        write_updates_csv(out_dir + "/updates.csv", update_rows);
        write_validation_csv(out_dir + "/validation.csv", cfg, result.checks);
        write_summary_json(out_dir + "/summary.json", result, cumulative);
        if (dataset.transition_count() > 0)
            dataset.save_csv(out_dir);
        std::filesystem::create_directories(out_dir + "/checkpoints");
        nlohmann::json meta;
        meta["env"] = cfg.env_id;
        policy.save(out_dir + "/checkpoints/policy", meta);
        for (int k = 0; k < ensemble.size(); ++k)
            ensemble.member(k).save(out_dir + "/checkpoints/model_" + std::to_string(k), meta);
    };

    Eigen::VectorXd prev_params;
    try {
        for (int iter = 0; iter < cfg.outer_iterations; ++iter) {
            Rng iter_rng = master.substream("iter-" + std::to_string(iter));

            if (cfg.algorithm == Algorithm::kRealTrpo) {
                Rng collect_rng = iter_rng.substream("collect");
                TrajectoryBatch batch = collect_real_batch(
                    env, policy, cfg.timesteps_per_iteration, collect_rng);
                cumulative += batch.total_steps();
                UpdateDiagnostics diag = trpo_update(policy, batch, opt_cfg);
                update_rows.push_back({iter, 1, cfg.optimizer, diag});

                IterationRecord rec;
                rec.iteration = iter;
                rec.cumulative_real_steps = cumulative;
                Rng eval_rng = iter_rng.substream("eval");
                ReturnStats stats = evaluate_real_return(env, policy, cfg.eval_episodes,
                                                         eval_rng, cfg.eval_deterministic);
                rec.real_return_mean = stats.mean;
                rec.real_return_stderr = stats.stderr_mean;
                rec.inner_updates = 1;
                rec.model_val_losses = Eigen::VectorXd::Zero(1);
                rec.eta_per_model = Eigen::VectorXd::Constant(1, diag.batch_return);
                result.records.push_back(rec);
                if (std::isfinite(cfg.target_return) &&
                    rec.real_return_mean >= cfg.target_return)
                    break;
                continue;
            }

            // Collect real transitions with the exploration scheme.
            Rng collect_rng = iter_rng.substream("collect");
            const std::vector<Episode> episodes =
                collect_real_samples(env, policy, explore, collect_rng,
                                     prev_params.size() > 0 ? &prev_params : nullptr);
            prev_params = policy.flat_params();
            for (const Episode& ep : episodes)
                cumulative += static_cast<std::int64_t>(ep.size());
            dataset.add_episodes(episodes);

            // (Re)train every member on the grown dataset.
            Rng train_rng = iter_rng.substream("train");
            const std::vector<FitReport> reports =
                fit_ensemble(ensemble, dataset, model_cfg, train_rng, cfg.threads);

            // Initial-state pools: fictitious batches start from train-split
            // states, validation estimates from held-out-split states.
            if (cfg.fictitious_inits != "all_states" &&
                cfg.fictitious_inits != "episode_starts")
                throw std::invalid_argument("unknown fictitious_inits: " +
                                            cfg.fictitious_inits);
            const std::vector<Eigen::VectorXd> train_pool =
                cfg.fictitious_inits == "all_states"
                    ? states_of(dataset.train_episodes())
                    : start_states_of(dataset.train_episodes());
            const std::vector<Eigen::VectorXd> val_pool =
                states_of(dataset.validation_episodes());

            Rng inner_rng = iter_rng.substream("inner");
            Rng val_state_rng = inner_rng.substream("val-states");
            const std::vector<Eigen::VectorXd> val_inits =
                sample_pool(val_pool, cfg.val_rollouts_per_model, val_state_rng);

            ValidationInputs baseline;
            baseline.eta_per_model =
                eta_all_members(ensemble, policy, val_inits, env, inner_rng.substream("eta-0"));
            {
                Rng probe_rng = inner_rng.substream("real-0");
                baseline.real_return =
                    evaluate_real_return(env, policy, cfg.check_eval_episodes, probe_rng,
                                         false)
                        .mean;
            }
            baseline.batch_mean_return = std::numeric_limits<double>::lowest();
            ValidationController controller(val_cfg);
            controller.begin_phase(baseline);

            AdamConfig adam_cfg;
            adam_cfg.learning_rate = opt_cfg.kind == OptimizerKind::kBptt
                                         ? cfg.bptt_learning_rate
                                         : cfg.vpg_learning_rate;
            AdamState adam(policy.param_count(), adam_cfg);

            const int batch_trajectories =
                std::max(1, cfg.fictitious_batch / env.horizon);
            int inner_updates = 0;
            for (int u = 1; u <= cfg.max_inner_updates; ++u) {
                Rng update_rng = inner_rng.substream("update-" + std::to_string(u));
                Rng init_rng = update_rng.substream("inits");
                const std::vector<Eigen::VectorXd> init_states =
                    sample_pool(train_pool, batch_trajectories, init_rng);

                UpdateDiagnostics diag;
                Rng sim_rng = update_rng.substream("sim");
                if (opt_cfg.kind == OptimizerKind::kBptt) {
                    diag = bptt_update(policy, ensemble, env, init_states, opt_cfg, adam,
                                       sim_rng);
                } else {
                    TrajectoryBatch batch = simulate_fictitious(
                        ensemble, policy, init_states, env.horizon, mode, env, sim_rng);
                    diag = opt_cfg.kind == OptimizerKind::kTrpo
                               ? trpo_update(policy, batch, opt_cfg)
                               : vpg_update(policy, batch, opt_cfg, adam);
                }
                update_rows.push_back({iter, u, cfg.optimizer, diag});
                inner_updates = u;

                std::optional<ValidationInputs> inputs;
                if (controller.needs_check(u)) {
                    ValidationInputs in;
                    in.eta_per_model = eta_all_members(ensemble, policy, val_inits, env,
                                                       update_rng.substream("eta"));
                    Rng probe_rng = update_rng.substream("real");
                    in.real_return = evaluate_real_return(env, policy,
                                                          cfg.check_eval_episodes, probe_rng,
                                                          false)
                                         .mean;
                    in.batch_mean_return = diag.batch_return;
                    inputs = in;
                }
                const ValidationVerdict verdict = controller.check_and_update(u, inputs);
                if (inputs) {
                    CheckRecord check;
                    check.iteration = iter;
                    check.update_index = u;
                    check.ratio = verdict.ratio;
                    check.continue_flag = verdict.continue_flag;
                    check.eta_mean = inputs->eta_per_model.mean();
                    check.real_return = *inputs->real_return;
                    result.checks.push_back(check);
                }
                if (!verdict.continue_flag)
                    break;
            }

            IterationRecord rec;
            rec.iteration = iter;
            rec.cumulative_real_steps = cumulative;
            Rng eval_rng = iter_rng.substream("eval");
            ReturnStats stats = evaluate_real_return(env, policy, cfg.eval_episodes, eval_rng,
                                                     cfg.eval_deterministic);
            rec.real_return_mean = stats.mean;
            rec.real_return_stderr = stats.stderr_mean;
            rec.inner_updates = inner_updates;
            rec.model_val_losses.resize(ensemble.size());
            for (int k = 0; k < ensemble.size(); ++k)
                rec.model_val_losses(k) = reports[static_cast<std::size_t>(k)].best_raw_loss;
            rec.eta_per_model = eta_all_members(ensemble, policy, val_inits, env,
                                                iter_rng.substream("eta-final"));
            result.records.push_back(rec);

            if (std::isfinite(cfg.target_return) && rec.real_return_mean >= cfg.target_return)
                break;
        }
    } catch (...) {
        flush_outputs(); // keep the partial log
        throw;
    }

    flush_outputs();
    return result;
}

RunResult run_metrpo(const RunConfig& config, const std::string& out_dir)
{
    RunConfig cfg = config;
    cfg.algorithm = Algorithm::kMetrpo;
    return run_experiment(cfg, out_dir);
}

RunResult run_vanilla(const RunConfig& config, const std::string& out_dir)
{
    RunConfig cfg = config;
    cfg.algorithm = Algorithm::kVanillaBptt;
    return run_experiment(cfg, out_dir);
}

std::vector<std::pair<std::string, double>> AblationResult::aggregate() const
{
    std::vector<std::pair<std::string, double>> out;
    for (const AblationCell& cell : cells) {
        if (cell.failed)
            continue;
        auto it = std::find_if(out.begin(), out.end(),
                               [&](const auto& p) { return p.first == cell.axis_value; });
        if (it == out.end())
            out.emplace_back(cell.axis_value, 0.0);
    }
    for (auto& [value, mean] : out) {
        double acc = 0.0;
        int n = 0;
        for (const AblationCell& cell : cells)
            if (!cell.failed && cell.axis_value == value) {
                acc += cell.final_return;
                ++n;
            }
        mean = n > 0 ? acc / n : std::numeric_limits<double>::quiet_NaN();
    }
    return out;
}

AblationResult run_ablation(const RunConfig& base, const std::string& axis,
                            const std::vector<std::string>& values,
                            const std::vector<std::uint64_t>& seeds,
                            const std::string& out_dir)
{
    if (values.empty())
        throw std::invalid_argument("run_ablation: no values for axis " + axis);
    if (seeds.empty())
        throw std::invalid_argument("run_ablation: no seeds");
    if (axis != "optimizer" && axis != "K" && axis != "sampling_mode" &&
        axis != "validation_mode")
        throw std::invalid_argument("run_ablation: unknown axis " + axis);

    AblationResult result;
    result.axis = axis;
    for (const std::string& value : values) {
        for (std::uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.seed = seed;
            if (axis == "optimizer")
                cfg.optimizer = value;
            else if (axis == "K")
                cfg.num_models = std::stoi(value);
            else if (axis == "sampling_mode")
                cfg.sampling_mode = value;
            else
                cfg.validation_mode = value;

            AblationCell cell;
            cell.axis_value = value;
            cell.seed = seed;
            std::string cell_dir;
            if (!out_dir.empty())
                cell_dir = out_dir + "/" + axis + "=" + value + "/seed=" +
                           std::to_string(seed);
            try {
                RunResult run = run_experiment(cfg, cell_dir);
                cell.final_return = run.final_return_mean();
                cell.best_return = run.best_return_mean();
            } catch (const std::exception& error) {
                cell.failed = true;
                cell.error = error.what();
            }
            result.cells.push_back(std::move(cell));
        }
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        CsvWriter csv(out_dir + "/summary.csv");
        csv.row({"axis", "value", "seed", "status", "final_return", "best_return", "error"});
        for (const AblationCell& cell : result.cells)
            csv.row({axis, cell.axis_value, std::to_string(cell.seed),
                     cell.failed ? "failed" : "ok", g17(cell.final_return),
                     g17(cell.best_return), cell.error});
        CsvWriter agg(out_dir + "/aggregate.csv");
        agg.row({"axis", "value", "mean_final_return"});
        for (const auto& [value, mean] : result.aggregate())
            agg.row({axis, value, g17(mean)});
    }
    return result;
}

namespace {

// Quartic with f'(x) = (x - 1.7)(x - 3.2)(x - 4.4), shifted so f(1.7) = 0.
double bias_quartic_raw(double x)
{
    return x * x * x * x / 4.0 - 3.1 * x * x * x + 13.5 * x * x - 23.936 * x;
}

} // namespace

double bias_demo_true_f(double x)
{
    static const double offset = bias_quartic_raw(1.7);
    return bias_quartic_raw(x) - offset;
}

double bias_demo_barrier() { return 3.2; }

BiasDemoReport run_bias_demo(const BiasDemoConfig& config, const std::string& out_dir)
{
    constexpr double kDomainLo = 0.0;
    constexpr double kDomainHi = 6.0;
    constexpr double kGlobalMin = 1.7;

    BiasDemoReport report;
    report.seeds = config.seeds;

    for (int trial = 0; trial < config.seeds; ++trial) {
        Rng rng(derive_seed(config.base_seed, "bias-demo-" + std::to_string(trial)));

        // Sample the objective.
        const int count = config.dense ? config.dense_samples : config.samples;
        Eigen::MatrixXd xs(1, count);
        for (int i = 0; i < count; ++i)
            xs(0, i) = config.dense
                           ? kDomainLo + (kDomainHi - kDomainLo) * i / (count - 1.0)
                           : config.sample_center + config.sample_std * rng.normal();
        Eigen::MatrixXd ys(1, count);
        for (int i = 0; i < count; ++i)
            ys(0, i) = bias_demo_true_f(xs(0, i));

        // Whiten, fit by L2 regression with Adam.
        const double x_shift = 3.0, x_scale = 1.5;
        const double y_mean = ys.mean();
        const double y_std =
            std::max(std::sqrt((ys.array() - y_mean).square().mean()), 1e-8);
        Eigen::MatrixXd xn = (xs.array() - x_shift) / x_scale;
        Eigen::MatrixXd yn = (ys.array() - y_mean) / y_std;

        std::vector<int> sizes = {1};
        sizes.insert(sizes.end(), config.fit_hidden.begin(), config.fit_hidden.end());
        sizes.push_back(1);
        Mlp net = Mlp::random(sizes, Activation::kRelu, Activation::kIdentity, rng);
        Eigen::VectorXd params = net.flat_params();
        AdamConfig adam_cfg;
        adam_cfg.learning_rate = config.fit_learning_rate;
        AdamState adam(static_cast<int>(params.size()), adam_cfg);
        for (int epoch = 0; epoch < config.fit_epochs; ++epoch) {
            Mlp::Trace trace = net.forward(xn);
            Eigen::MatrixXd err = net.output_of(trace) - yn;
            Mlp::Backward back = net.backward(trace, 2.0 * err / double(count));
            adam.step(params, back.params.flat);
            net.set_flat_params(params);
        }

        // Grid argmin of the fitted objective over the whole domain.
        Eigen::MatrixXd grid(1, config.grid_points);
        for (int i = 0; i < config.grid_points; ++i)
            grid(0, i) =
                kDomainLo + (kDomainHi - kDomainLo) * i / (config.grid_points - 1.0);
        Eigen::MatrixXd gn = (grid.array() - x_shift) / x_scale;
        Eigen::MatrixXd fit = net.apply(gn) * y_std;
        fit.array() += y_mean;

        int best = 0;
        for (int i = 1; i < config.grid_points; ++i)
            if (fit(0, i) < fit(0, best))
                best = i;
        const double argmin = grid(0, best);
        report.argmins.push_back(argmin);
        if (argmin > bias_demo_barrier())
            ++report.suboptimal_basin_count;
        if (std::abs(argmin - kGlobalMin) <= 0.1)
            ++report.near_global_count;

        if (trial == 0) {
            report.curve.reserve(static_cast<std::size_t>(config.grid_points));
            for (int i = 0; i < config.grid_points; ++i)
                report.curve.push_back(
                    {grid(0, i), bias_demo_true_f(grid(0, i)), fit(0, i)});
        }
    }

    if (!out_dir.empty()) {
        std::filesystem::create_directories(out_dir);
        CsvWriter curve(out_dir + "/curve.csv");
        curve.row({"x", "f", "fit"});
        for (const auto& point : report.curve)
            curve.row({g17(point[0]), g17(point[1]), g17(point[2])});

        nlohmann::json summary;
        summary["seeds"] = report.seeds;
        summary["mode"] = config.dense ? "dense" : "local";
        summary["suboptimal_basin_count"] = report.suboptimal_basin_count;
        summary["near_global_count"] = report.near_global_count;
        summary["suboptimal_fraction"] =
            report.seeds > 0 ? double(report.suboptimal_basin_count) / report.seeds : 0.0;
        summary["argmins"] = report.argmins;
        std::ofstream out(out_dir + "/report.json");
        out << summary.dump(2) << "\n";
    }
    return report;
}

RunConfig parse_run_header(const std::string& run_csv_path)
{
    std::ifstream in(run_csv_path);
    if (!in)
        throw std::runtime_error("cannot read run log: " + run_csv_path);
    RunConfig cfg;
    std::string line;
    bool any = false;
    const std::string prefix = "# config ";
    while (std::getline(in, line)) {
        if (line.rfind(prefix, 0) != 0)
            continue;
        const std::string item = line.substr(prefix.size());
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            continue;
        cfg.apply(item.substr(0, eq), item.substr(eq + 1));
        any = true;
    }
    if (!any)
        throw std::runtime_error("no config header found in " + run_csv_path);
    return cfg;
}

bool replay_run(const std::string& run_csv_path, const std::string& scratch_dir,
                std::string* message)
{
    const RunConfig cfg = parse_run_header(run_csv_path);
    run_experiment(cfg, scratch_dir);

    auto slurp = [](const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in)
            throw std::runtime_error("cannot read " + path);
        return std::string((std::istreambuf_iterator<char>(in)),
                           std::istreambuf_iterator<char>());
    };
    const std::string original = slurp(run_csv_path);
    const std::string regenerated = slurp(scratch_dir + "/run.csv");
    const bool match = original == regenerated;
    if (message) {
        if (match) {
            *message = "MATCH (" + std::to_string(original.size()) + " bytes)";
        } else {
            std::size_t at = 0;
            while (at < std::min(original.size(), regenerated.size()) &&
                   original[at] == regenerated[at])
                ++at;
            *message = "MISMATCH at byte " + std::to_string(at);
        }
    }
    return match;
}

} // namespace metrpo
