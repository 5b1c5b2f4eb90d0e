#include "metrpo/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metrpo {

SamplingMode SamplingMode::from_name(const std::string& name, int designated)
{
    SamplingMode mode;
    mode.designated = designated;
    if (name == "step_rand")
        mode.kind = SamplingKind::kStepRand;
    else if (name == "model_mean_std")
        mode.kind = SamplingKind::kModelMeanStd;
    else if (name == "model_mean")
        mode.kind = SamplingKind::kModelMean;
    else if (name == "model_med")
        mode.kind = SamplingKind::kModelMed;
    else if (name == "eps_rand")
        mode.kind = SamplingKind::kEpsRand;
    else if (name == "one_model")
        mode.kind = SamplingKind::kOneModel;
    else
        throw std::invalid_argument("unknown sampling mode: " + name);
    return mode;
}

std::string SamplingMode::name() const
{
    switch (kind) {
    case SamplingKind::kStepRand: return "step_rand";
    case SamplingKind::kModelMeanStd: return "model_mean_std";
    case SamplingKind::kModelMean: return "model_mean";
    case SamplingKind::kModelMed: return "model_med";
    case SamplingKind::kEpsRand: return "eps_rand";
    case SamplingKind::kOneModel: return "one_model";
    }
    return "step_rand";
}

std::vector<Episode> collect_real_samples(const EnvSpec& env, const GaussianPolicy& policy,
                                          const ExplorationConfig& explore, Rng& rng,
                                          const Eigen::VectorXd* prev_params)
{
    if (explore.std_min < 0.0 || explore.std_max < explore.std_min)
        throw std::invalid_argument("collect_real_samples: bad std range");

    // Per-parameter perturbation scale for this iteration.
    Eigen::VectorXd noise_scale;
    if (prev_params && explore.param_noise_scale > 0.0) {
        const Eigen::VectorXd current = policy.flat_params();
        if (prev_params->size() != current.size())
            throw std::invalid_argument("collect_real_samples: parameter size mismatch");
        noise_scale = explore.param_noise_scale * (current - *prev_params).cwiseAbs();
        if (noise_scale.maxCoeff() == 0.0)
            noise_scale.resize(0); // nothing to perturb, keep the draw stream untouched
    }

    std::vector<Episode> episodes;
    std::int64_t steps = 0;
    while (steps < explore.timesteps_per_iteration) {
        const double explore_std = rng.uniform(explore.std_min, explore.std_max);

        GaussianPolicy rollout_policy = policy;
        if (noise_scale.size() > 0) {
            Eigen::VectorXd perturbed =
                policy.flat_params() +
                noise_scale.cwiseProduct(rng.normal_vector(policy.param_count()));
            rollout_policy.set_flat_params(perturbed);
        }

        Episode ep;
        ep.reserve(static_cast<std::size_t>(env.horizon));
        Eigen::VectorXd s = env.sample_initial(rng);
        for (int t = 0; t < env.horizon; ++t) {
            Eigen::VectorXd a = rollout_policy.mean_action(s);
            if (explore_std > 0.0)
                a += explore_std * rng.normal_vector(env.action_dim);
            Transition tr;
            tr.s = s;
            tr.a = env.clip_action(a);
            tr.s_next = env.step(s, tr.a);
            if (!tr.s_next.allFinite())
                throw std::runtime_error("collect_real_samples: non-finite state in " + env.id);
            s = tr.s_next;
            ep.push_back(std::move(tr));
        }
        steps += env.horizon;
        episodes.push_back(std::move(ep));
    }
    return episodes;
}

namespace {

Eigen::MatrixXd per_dim_median(const std::vector<Eigen::MatrixXd>& preds)
{
    const Eigen::Index rows = preds[0].rows();
    const Eigen::Index cols = preds[0].cols();
    Eigen::MatrixXd out(rows, cols);
    std::vector<double> values(preds.size());
    for (Eigen::Index c = 0; c < cols; ++c) {
        for (Eigen::Index r = 0; r < rows; ++r) {
            for (std::size_t k = 0; k < preds.size(); ++k)
                values[k] = preds[k](r, c);
            std::sort(values.begin(), values.end());
            const std::size_t mid = values.size() / 2;
            out(r, c) = values.size() % 2 == 1
                            ? values[mid]
                            : 0.5 * (values[mid - 1] + values[mid]);
        }
    }
    return out;
}

} // namespace

TrajectoryBatch simulate_fictitious(const ModelEnsemble& ensemble,
                                    const GaussianPolicy& policy,
                                    const std::vector<Eigen::VectorXd>& init_states,
                                    int horizon, const SamplingMode& mode, const EnvSpec& env,
                                    Rng& rng, int* truncated)
{
    if (init_states.empty())
        throw std::invalid_argument("simulate_fictitious: no initial states");
    const int count = static_cast<int>(init_states.size());
    const int n = env.state_dim;
    const int m = env.action_dim;
    const int k_members = ensemble.size();
    if (mode.kind == SamplingKind::kOneModel &&
        (mode.designated < 0 || mode.designated >= k_members))
        throw std::invalid_argument("simulate_fictitious: bad designated member");
    const Eigen::VectorXd sigma = policy.std();

    // Separate streams per concern so the action noise sequence does not
    // depend on the sampling mode (one draw consumed from the caller).
    Rng base(rng.next_u64());
    Rng zeta_rng = base.substream("zeta");
    Rng member_rng = base.substream("member");
    Rng fit_rng = base.substream("fit");

    // Full-horizon buffers; trajectories that go non-finite are cut short.
    std::vector<Trajectory> store(static_cast<std::size_t>(count));
    std::vector<int> length(static_cast<std::size_t>(count), 0);
    std::vector<bool> alive(static_cast<std::size_t>(count), true);
    for (auto& tr : store) {
        tr.states.resize(n, horizon);
        tr.actions.resize(m, horizon);
        tr.noises.resize(m, horizon);
        tr.rewards.resize(horizon);
        tr.model_indices.resize(horizon);
    }

    Eigen::MatrixXd states(n, count);
    for (int i = 0; i < count; ++i)
        states.col(i) = init_states[static_cast<std::size_t>(i)];

    // Episode-fixed member choice for eps_rand.
    std::vector<int> episode_member(static_cast<std::size_t>(count), mode.designated);
    if (mode.kind == SamplingKind::kEpsRand)
        for (int i = 0; i < count; ++i)
            episode_member[static_cast<std::size_t>(i)] = member_rng.uniform_int(k_members);

    const bool aggregate = mode.kind == SamplingKind::kModelMeanStd ||
                           mode.kind == SamplingKind::kModelMean ||
                           mode.kind == SamplingKind::kModelMed;

    int truncations = 0;
    for (int t = 0; t < horizon; ++t) {
        // Draws are made for every column, dead or alive, so the stream
        // position depends only on (count, horizon, mode).
        const Eigen::MatrixXd zeta = zeta_rng.normal_matrix(m, count);
        Eigen::MatrixXd actions = policy.mean_batch(states);
        for (int i = 0; i < count; ++i)
            actions.col(i) += sigma.cwiseProduct(zeta.col(i));
        Eigen::MatrixXd exec = actions.cwiseMax(env.action_low.replicate(1, count))
                                   .cwiseMin(env.action_high.replicate(1, count));

        std::vector<int> member_of(static_cast<std::size_t>(count), mode.designated);
        if (mode.kind == SamplingKind::kStepRand)
            for (int i = 0; i < count; ++i)
                member_of[static_cast<std::size_t>(i)] = member_rng.uniform_int(k_members);
        else if (mode.kind == SamplingKind::kEpsRand)
            member_of = episode_member;

        Eigen::MatrixXd next(n, count);
        if (aggregate) {
            std::vector<Eigen::MatrixXd> preds;
            preds.reserve(static_cast<std::size_t>(k_members));
            for (int k = 0; k < k_members; ++k)
                preds.push_back(ensemble.member(k).predict_next_batch(states, exec));
            if (mode.kind == SamplingKind::kModelMed) {
                next = per_dim_median(preds);
            } else {
                Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(n, count);
                for (const auto& p : preds)
                    mean += p;
                mean /= double(k_members);
                if (mode.kind == SamplingKind::kModelMean) {
                    next = mean;
                } else {
                    Eigen::MatrixXd var = Eigen::MatrixXd::Zero(n, count);
                    for (const auto& p : preds)
                        var += (p - mean).cwiseAbs2();
                    var /= double(k_members);
                    const Eigen::MatrixXd xi = fit_rng.normal_matrix(n, count);
                    next = mean + var.cwiseSqrt().cwiseProduct(xi);
                }
            }
        } else {
            for (int k = 0; k < k_members; ++k) {
                std::vector<int> cols;
                for (int i = 0; i < count; ++i)
                    if (member_of[static_cast<std::size_t>(i)] == k)
                        cols.push_back(i);
                if (cols.empty())
                    continue;
                Eigen::MatrixXd sk(n, cols.size()), ak(m, cols.size());
                for (std::size_t j = 0; j < cols.size(); ++j) {
                    sk.col(static_cast<Eigen::Index>(j)) = states.col(cols[j]);
                    ak.col(static_cast<Eigen::Index>(j)) = exec.col(cols[j]);
                }
                const Eigen::MatrixXd pred = ensemble.member(k).predict_next_batch(sk, ak);
                for (std::size_t j = 0; j < cols.size(); ++j)
                    next.col(cols[j]) = pred.col(static_cast<Eigen::Index>(j));
            }
        }

        for (int i = 0; i < count; ++i) {
            if (!alive[static_cast<std::size_t>(i)])
                continue;
            Trajectory& tr = store[static_cast<std::size_t>(i)];
            tr.states.col(t) = states.col(i);
            tr.actions.col(t) = actions.col(i);
            tr.noises.col(t) = zeta.col(i);
            tr.rewards(t) = env.reward(states.col(i), actions.col(i));
            tr.model_indices(t) =
                (mode.kind == SamplingKind::kStepRand || mode.kind == SamplingKind::kEpsRand ||
                 mode.kind == SamplingKind::kOneModel)
                    ? member_of[static_cast<std::size_t>(i)]
                    : -1;
            ++length[static_cast<std::size_t>(i)];
            if (!next.col(i).allFinite()) {
                alive[static_cast<std::size_t>(i)] = false;
                ++truncations;
                next.col(i) = states.col(i); // park the column
            }
        }
        states = std::move(next);
    }

    TrajectoryBatch batch;
    batch.horizon = horizon;
    for (int i = 0; i < count; ++i) {
        Trajectory& tr = store[static_cast<std::size_t>(i)];
        const int len = length[static_cast<std::size_t>(i)];
        tr.states.conservativeResize(n, len);
        tr.actions.conservativeResize(m, len);
        tr.noises.conservativeResize(m, len);
        tr.rewards.conservativeResize(len);
        tr.model_indices.conservativeResize(len);
        batch.trajectories.push_back(std::move(tr));
    }
    if (truncated)
        *truncated = truncations;
    return batch;
}

double estimate_model_return(const DynamicsModel& model, const GaussianPolicy& policy,
                             const std::vector<Eigen::VectorXd>& init_states, int horizon,
                             const EnvSpec& env, Rng& rng)
{
    if (init_states.empty())
        throw std::invalid_argument("estimate_model_return: no initial states");
    const int count = static_cast<int>(init_states.size());
    const int n = env.state_dim;
    const int m = env.action_dim;
    const Eigen::VectorXd sigma = policy.std();

    Eigen::MatrixXd states(n, count);
    for (int i = 0; i < count; ++i)
        states.col(i) = init_states[static_cast<std::size_t>(i)];
    Eigen::VectorXd totals = Eigen::VectorXd::Zero(count);
    std::vector<bool> alive(static_cast<std::size_t>(count), true);

    for (int t = 0; t < horizon; ++t) {
        const Eigen::MatrixXd zeta = rng.normal_matrix(m, count);
        Eigen::MatrixXd actions = policy.mean_batch(states);
        for (int i = 0; i < count; ++i)
            actions.col(i) += sigma.cwiseProduct(zeta.col(i));
        Eigen::MatrixXd exec = actions.cwiseMax(env.action_low.replicate(1, count))
                                   .cwiseMin(env.action_high.replicate(1, count));
        Eigen::MatrixXd next = model.predict_next_batch(states, exec);
        for (int i = 0; i < count; ++i) {
            if (!alive[static_cast<std::size_t>(i)])
                continue;
            totals(i) += env.reward(states.col(i), actions.col(i));
            if (!next.col(i).allFinite()) {
                alive[static_cast<std::size_t>(i)] = false;
                next.col(i) = states.col(i);
            }
        }
        states = std::move(next);
    }
    return totals.mean();
}

ReturnStats evaluate_real_return(const EnvSpec& env, const GaussianPolicy& policy,
                                 int n_episodes, Rng& rng, bool deterministic)
{
    PolicyFn fn = [&policy, deterministic](const Eigen::VectorXd& s, Rng& episode_rng) {
        if (deterministic)
            return policy.mean_action(s);
        return policy.sample_action(s, episode_rng);
    };
    return evaluate_real_return(env, fn, n_episodes, rng);
}

} // namespace metrpo
