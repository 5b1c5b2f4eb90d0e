#include "metrpo/optimizers.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace metrpo {

std::string optimizer_name(OptimizerKind kind)
{
    switch (kind) {
    case OptimizerKind::kBptt: return "bptt";
    case OptimizerKind::kVpg: return "vpg";
    case OptimizerKind::kTrpo: return "trpo";
    }
    return "trpo";
}

OptimizerKind optimizer_from_name(const std::string& name)
{
    if (name == "bptt")
        return OptimizerKind::kBptt;
    if (name == "vpg")
        return OptimizerKind::kVpg;
    if (name == "trpo")
        return OptimizerKind::kTrpo;
    throw std::invalid_argument("unknown optimizer: " + name);
}

std::vector<Eigen::VectorXd> reward_to_go(const TrajectoryBatch& batch, double gamma)
{
    std::vector<Eigen::VectorXd> rtg;
    rtg.reserve(batch.trajectories.size());
    for (const Trajectory& tr : batch.trajectories) {
        Eigen::VectorXd acc(tr.length());
        double running = 0.0;
        for (int t = tr.length() - 1; t >= 0; --t) {
            running = tr.rewards(t) + gamma * running;
            acc(t) = running;
        }
        rtg.push_back(std::move(acc));
    }
    return rtg;
}

Eigen::VectorXd compute_advantages(const TrajectoryBatch& batch, double gamma)
{
    const std::vector<Eigen::VectorXd> rtg = reward_to_go(batch, gamma);

    int max_len = 0;
    for (const Eigen::VectorXd& r : rtg)
        max_len = std::max(max_len, static_cast<int>(r.size()));

    // Time-dependent mean baseline over the trajectories alive at each step.
    Eigen::VectorXd baseline = Eigen::VectorXd::Zero(max_len);
    Eigen::VectorXd alive = Eigen::VectorXd::Zero(max_len);
    for (const Eigen::VectorXd& r : rtg)
        for (int t = 0; t < r.size(); ++t) {
            baseline(t) += r(t);
            alive(t) += 1.0;
        }
    for (int t = 0; t < max_len; ++t)
        baseline(t) /= std::max(alive(t), 1.0);

    Eigen::VectorXd flat(batch.total_steps());
    Eigen::Index at = 0;
    for (const Eigen::VectorXd& r : rtg)
        for (int t = 0; t < r.size(); ++t)
            flat(at++) = r(t) - baseline(t);

    if (flat.size() == 0)
        return flat;
    const double mean = flat.mean();
    const double stddev = std::sqrt((flat.array() - mean).square().mean());
    return (flat.array() - mean) / (stddev + 1e-8);
}

UpdateDiagnostics vpg_update(GaussianPolicy& policy, const TrajectoryBatch& batch,
                             const OptimizerConfig& cfg, AdamState& adam)
{
    UpdateDiagnostics diag;
    diag.batch_return = batch.mean_return();

    Eigen::MatrixXd states, actions;
    batch.flatten(states, actions);
    const Eigen::VectorXd advantages = compute_advantages(batch, cfg.advantage_gamma);
    const double count = static_cast<double>(states.cols());

    Eigen::VectorXd grad =
        policy.weighted_log_prob_grad(states, actions, advantages) / count;
    diag.grad_norm = grad.norm();
    if (!grad.allFinite()) {
        diag.note = "non_finite_gradient";
        return diag;
    }

    Eigen::VectorXd params = policy.flat_params();
    adam.step(params, Eigen::VectorXd(-grad)); // ascent
    policy.set_flat_params(params);
    diag.accepted = true;
    return diag;
}

CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& avp,
                            const Eigen::VectorXd& b, int iterations)
{
    CgResult result;
    result.x = Eigen::VectorXd::Zero(b.size());
    Eigen::VectorXd r = b;
    Eigen::VectorXd p = b;
    double rdotr = r.squaredNorm();
    if (rdotr < 1e-30) {
        result.ok = true;
        return result;
    }
    for (int i = 0; i < iterations; ++i) {
        const Eigen::VectorXd ap = avp(p);
        const double pap = p.dot(ap);
        if (!std::isfinite(pap) || pap <= 0.0)
            return result; // curvature failure, report non-converged
        const double alpha = rdotr / pap;
        result.x += alpha * p;
        r -= alpha * ap;
        const double next = r.squaredNorm();
        if (next < 1e-14 * std::max(1.0, b.squaredNorm()))
            break;
        p = r + (next / rdotr) * p;
        rdotr = next;
    }
    result.ok = result.x.allFinite();
    return result;
}

UpdateDiagnostics trpo_update(GaussianPolicy& policy, const TrajectoryBatch& batch,
                              const OptimizerConfig& cfg)
{
    UpdateDiagnostics diag;
    diag.batch_return = batch.mean_return();

    Eigen::MatrixXd states, actions;
    batch.flatten(states, actions);
    const Eigen::VectorXd advantages = compute_advantages(batch, cfg.advantage_gamma);
    const double count = static_cast<double>(states.cols());

    const Eigen::VectorXd grad =
        policy.weighted_log_prob_grad(states, actions, advantages) / count;
    diag.grad_norm = grad.norm();
    if (!grad.allFinite()) {
        diag.note = "non_finite_gradient";
        return diag;
    }
    if (diag.grad_norm < 1e-12) {
        diag.note = "zero_gradient";
        return diag;
    }

    // Curvature on a strided subsample; the trust-region check below stays
    // on the full batch.
    Eigen::MatrixXd fvp_states = states;
    if (cfg.fvp_max_states > 0 && states.cols() > cfg.fvp_max_states) {
        const Eigen::Index stride =
            (states.cols() + cfg.fvp_max_states - 1) / cfg.fvp_max_states;
        const Eigen::Index kept = (states.cols() + stride - 1) / stride;
        fvp_states.resize(states.rows(), kept);
        for (Eigen::Index i = 0; i < kept; ++i)
            fvp_states.col(i) = states.col(i * stride);
    }
    auto fvp = [&](const Eigen::VectorXd& v) {
        return policy.fisher_vector_product(fvp_states, v, cfg.cg_damping);
    };
    const CgResult cg = conjugate_gradient(fvp, grad, cfg.cg_iterations);
    if (!cg.ok || cg.x.norm() < 1e-30) {
        diag.note = "cg_failure";
        return diag;
    }

    const double quadratic = cg.x.dot(fvp(cg.x));
    if (!std::isfinite(quadratic) || quadratic <= 0.0) {
        diag.note = "nonpositive_curvature";
        return diag;
    }
    const double full_step = std::sqrt(2.0 * cfg.trpo_delta_kl / quadratic);

    const GaussianPolicy old_policy = policy;
    const Eigen::VectorXd theta_old = policy.flat_params();
    const Eigen::VectorXd logp_old = policy.log_prob_batch(states, actions);
    const double surrogate_old = advantages.mean(); // all ratios are 1

    double scale = full_step;
    for (int attempt = 0; attempt < cfg.max_backtracks; ++attempt) {
        policy.set_flat_params(theta_old + scale * cg.x);
        const Eigen::VectorXd logp_new = policy.log_prob_batch(states, actions);
        const Eigen::ArrayXd ratios = (logp_new - logp_old).array().exp();
        const double surrogate = (ratios * advantages.array()).mean();
        const double kl = GaussianPolicy::kl_mean(old_policy, policy, states);
        diag.line_search_steps = attempt + 1;
        if (std::isfinite(surrogate) && std::isfinite(kl) &&
            surrogate - surrogate_old > 0.0 && kl <= cfg.trpo_delta_kl) {
            diag.accepted = true;
            diag.surrogate_improvement = surrogate - surrogate_old;
            diag.kl = kl;
            return diag;
        }
        scale *= cfg.backtrack_ratio;
    }

    policy.set_flat_params(theta_old);
    diag.note = "line_search_exhausted";
    return diag;
}

BpttPlan make_bptt_plan(const ModelEnsemble& ensemble,
                        const std::vector<Eigen::VectorXd>& init_states, int horizon,
                        bool deterministic, Rng& rng)
{
    if (init_states.empty())
        throw std::invalid_argument("make_bptt_plan: need at least one initial state");
    const int count = static_cast<int>(init_states.size());
    const int m = ensemble.member(0).action_dim();

    BpttPlan plan;
    plan.init_states = init_states;
    plan.horizon = horizon;
    plan.deterministic = deterministic;
    plan.member_index.resize(horizon, count);
    for (int t = 0; t < horizon; ++t)
        for (int i = 0; i < count; ++i)
            plan.member_index(t, i) = ensemble.size() == 1 ? 0 : rng.uniform_int(ensemble.size());
    plan.noises.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i)
        plan.noises.push_back(deterministic ? Eigen::MatrixXd::Zero(m, horizon)
                                            : rng.normal_matrix(m, horizon));
    return plan;
}

namespace {

// Forward simulation with all the caches needed for reverse-mode.
struct BpttForward {
    std::vector<Eigen::MatrixXd> states;      // horizon + 1 entries, n x N
    std::vector<Eigen::MatrixXd> actions_raw; // m x N
    std::vector<Mlp::Trace> policy_traces;
    struct Group {
        int member = 0;
        std::vector<int> cols;
        DynamicsModel::Trace trace;
    };
    std::vector<std::vector<Group>> groups; // per step
    double mean_return = 0.0;
};

BpttForward bptt_forward(const GaussianPolicy& policy, const ModelEnsemble& ensemble,
                         const EnvSpec& env, const BpttPlan& plan, bool keep_traces)
{
    const int count = static_cast<int>(plan.init_states.size());
    const int n = env.state_dim;
    const int m = env.action_dim;
    const Eigen::VectorXd sigma = policy.std();

    BpttForward fwd;
    Eigen::MatrixXd s(n, count);
    for (int i = 0; i < count; ++i)
        s.col(i) = plan.init_states[static_cast<std::size_t>(i)];
    fwd.states.push_back(s);

    double total_reward = 0.0;
    for (int t = 0; t < plan.horizon; ++t) {
        Mlp::Trace trace = policy.mean_net().forward(s);
        Eigen::MatrixXd a =
            (policy.mean_net().output_of(trace).array().colwise() *
             policy.mean_scale().array())
                .matrix();
        if (!plan.deterministic)
            for (int i = 0; i < count; ++i)
                a.col(i) += sigma.cwiseProduct(plan.noises[static_cast<std::size_t>(i)].col(t));

        for (int i = 0; i < count; ++i)
            total_reward += env.reward(s.col(i), a.col(i));

        // Clip once for the model input; env.reward clips internally.
        Eigen::MatrixXd a_exec = a.cwiseMax(env.action_low.replicate(1, count))
                                     .cwiseMin(env.action_high.replicate(1, count));

        // Group trajectories by the member that predicts this step.
        Eigen::MatrixXd s_next(n, count);
        std::vector<BpttForward::Group> groups;
        for (int k = 0; k < ensemble.size(); ++k) {
            std::vector<int> cols;
            for (int i = 0; i < count; ++i)
                if (plan.member_index(t, i) == k)
                    cols.push_back(i);
            if (cols.empty())
                continue;
            Eigen::MatrixXd sk(n, cols.size());
            Eigen::MatrixXd ak(m, cols.size());
            for (std::size_t j = 0; j < cols.size(); ++j) {
                sk.col(static_cast<Eigen::Index>(j)) = s.col(cols[j]);
                ak.col(static_cast<Eigen::Index>(j)) = a_exec.col(cols[j]);
            }
            BpttForward::Group group;
            group.member = k;
            group.cols = cols;
            group.trace = ensemble.member(k).forward_trace(sk, ak);
            Eigen::MatrixXd pred =
                ensemble.member(k).prediction_from_trace(sk, group.trace);
            for (std::size_t j = 0; j < cols.size(); ++j)
                s_next.col(cols[j]) = pred.col(static_cast<Eigen::Index>(j));
            if (keep_traces)
                groups.push_back(std::move(group));
        }

        if (keep_traces) {
            fwd.policy_traces.push_back(std::move(trace));
            fwd.actions_raw.push_back(a);
            fwd.groups.push_back(std::move(groups));
        }
        s = std::move(s_next);
        fwd.states.push_back(s);
    }
    fwd.mean_return = total_reward / static_cast<double>(count);
    return fwd;
}

} // namespace

double bptt_simulated_return(const GaussianPolicy& policy, const ModelEnsemble& ensemble,
                             const EnvSpec& env, const BpttPlan& plan)
{
    return bptt_forward(policy, ensemble, env, plan, false).mean_return;
}

Eigen::VectorXd bptt_gradient(const GaussianPolicy& policy, const ModelEnsemble& ensemble,
                              const EnvSpec& env, const BpttPlan& plan, double* return_out)
{
    BpttForward fwd = bptt_forward(policy, ensemble, env, plan, true);
    if (return_out)
        *return_out = fwd.mean_return;
    const int count = static_cast<int>(plan.init_states.size());
    const int n = env.state_dim;
    const int m = env.action_dim;
    const double inv_count = 1.0 / static_cast<double>(count);
    const Eigen::VectorXd sigma = policy.std();

    Eigen::VectorXd theta_grad = Eigen::VectorXd::Zero(policy.param_count());
    auto mean_grad = theta_grad.head(policy.mean_net().param_count());
    auto ls_grad = theta_grad.tail(m);

    Eigen::MatrixXd g_state = Eigen::MatrixXd::Zero(n, count); // dJ/dS_{t+1}
    for (int t = plan.horizon - 1; t >= 0; --t) {
        const Eigen::MatrixXd& s = fwd.states[static_cast<std::size_t>(t)];
        const Eigen::MatrixXd& a_raw = fwd.actions_raw[static_cast<std::size_t>(t)];

        // Chain dJ/dS_{t+1} back through the models used at this step.
        Eigen::MatrixXd gs_model = Eigen::MatrixXd::Zero(n, count);
        Eigen::MatrixXd ga_model = Eigen::MatrixXd::Zero(m, count);
        if (t < plan.horizon - 1) {
            for (const BpttForward::Group& group :
                 fwd.groups[static_cast<std::size_t>(t)]) {
                Eigen::MatrixXd up(n, group.cols.size());
                for (std::size_t j = 0; j < group.cols.size(); ++j)
                    up.col(static_cast<Eigen::Index>(j)) = g_state.col(group.cols[j]);
                DynamicsModel::InputGrads ig =
                    ensemble.member(group.member).backward_inputs(group.trace, up);
                for (std::size_t j = 0; j < group.cols.size(); ++j) {
                    gs_model.col(group.cols[j]) = ig.ds.col(static_cast<Eigen::Index>(j));
                    ga_model.col(group.cols[j]) = ig.da.col(static_cast<Eigen::Index>(j));
                }
            }
        }

        // Reward terms and the clip mask for the model's action input.
        Eigen::MatrixXd r_ds(n, count), r_da(m, count), mask(m, count);
        for (int i = 0; i < count; ++i) {
            EnvSpec::RewardGrad rg = env.reward_grad(s.col(i), a_raw.col(i));
            r_ds.col(i) = rg.ds;
            r_da.col(i) = rg.da;
            for (int d = 0; d < m; ++d)
                mask(d, i) = (a_raw(d, i) > env.action_low(d) &&
                              a_raw(d, i) < env.action_high(d))
                                 ? 1.0
                                 : 0.0;
        }

        Eigen::MatrixXd da_raw =
            r_da * inv_count + mask.cwiseProduct(ga_model);

        // Chain through mu = scale . net(s).
        Eigen::MatrixXd net_upstream =
            (da_raw.array().colwise() * policy.mean_scale().array()).matrix();
        Mlp::Backward back = policy.mean_net().backward(
            fwd.policy_traces[static_cast<std::size_t>(t)], net_upstream);
        mean_grad += back.params.flat;
        if (!plan.deterministic) {
            const Eigen::VectorXd ls_mask = policy.log_std_grad_mask().matrix();
            for (int i = 0; i < count; ++i)
                ls_grad += da_raw.col(i)
                               .cwiseProduct(sigma)
                               .cwiseProduct(plan.noises[static_cast<std::size_t>(i)].col(t))
                               .cwiseProduct(ls_mask);
        }

        g_state = r_ds * inv_count + gs_model + back.input;
    }
    return theta_grad;
}

UpdateDiagnostics bptt_update(GaussianPolicy& policy, const ModelEnsemble& ensemble,
                              const EnvSpec& env,
                              const std::vector<Eigen::VectorXd>& init_states,
                              const OptimizerConfig& cfg, AdamState& adam, Rng& rng)
{
    UpdateDiagnostics diag;
    BpttPlan plan =
        make_bptt_plan(ensemble, init_states, env.horizon, cfg.bptt_deterministic, rng);

    Eigen::VectorXd grad = bptt_gradient(policy, ensemble, env, plan, &diag.batch_return);
    GradientBundle bundle;
    bundle.flat = std::move(grad);
    GradientBundle clipped = clip_by_global_norm(bundle, cfg.clip_norm);
    diag.grad_norm = bundle.global_norm();
    if (!clipped.flat.allFinite()) {
        diag.note = "non_finite_gradient";
        return diag;
    }

    Eigen::VectorXd params = policy.flat_params();
    adam.step(params, Eigen::VectorXd(-clipped.flat)); // ascent
    policy.set_flat_params(params);
    diag.accepted = true;
    return diag;
}

} // namespace metrpo
