#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "metrpo/adam.hpp"
#include "metrpo/dynamics.hpp"
#include "metrpo/env.hpp"
#include "metrpo/policy.hpp"
#include "metrpo/trajectory.hpp"

namespace metrpo {

enum class OptimizerKind { kBptt, kVpg, kTrpo };

std::string optimizer_name(OptimizerKind kind);
OptimizerKind optimizer_from_name(const std::string& name);

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::kTrpo;

    // Trust region machinery.
    double trpo_delta_kl = 0.01;
    int cg_iterations = 10;
    double cg_damping = 0.1;
    int max_backtracks = 10;
    double backtrack_ratio = 0.5;
    // Fisher-vector products run on a strided state subsample of at most
    // this many states (<= 0 disables). The KL line-search check always
    // uses the full batch.
    int fvp_max_states = 1024;

    // Likelihood-ratio gradient estimation.
    double advantage_gamma = 0.99;
    double vpg_learning_rate = 0.01;

    // Backpropagation through time.
    double bptt_learning_rate = 0.01;
    double clip_norm = 10.0;
    bool bptt_deterministic = true;

    int fictitious_batch_size = 10000; // steps per policy update
};

struct UpdateDiagnostics {
    bool accepted = false;
    double surrogate_improvement = 0.0;
    double kl = 0.0;
    double grad_norm = 0.0;
    int line_search_steps = 0;
    double batch_return = 0.0;
    std::string note;
};

struct CgResult {
    Eigen::VectorXd x;
    bool ok = false;
};

// Plain conjugate gradient on an implicit SPD system. Bails out (ok=false)
// on non-positive curvature or non-finite values.
CgResult conjugate_gradient(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& avp,
                            const Eigen::VectorXd& b, int iterations);

// Discounted reward-to-go per trajectory.
std::vector<Eigen::VectorXd> reward_to_go(const TrajectoryBatch& batch, double gamma);

// Reward-to-go minus a per-timestep mean baseline, standardized over the
// whole batch to zero mean and unit variance. Returned flattened in the
// batch's trajectory-major order.
Eigen::VectorXd compute_advantages(const TrajectoryBatch& batch, double gamma);

// One ascent step on the likelihood-ratio gradient with Adam.
UpdateDiagnostics vpg_update(GaussianPolicy& policy, const TrajectoryBatch& batch,
                             const OptimizerConfig& cfg, AdamState& adam);

// Natural-gradient step on the importance-weighted surrogate, constrained to
// kl_mean <= trpo_delta_kl: conjugate-gradient solve of the damped Fisher
// system, step scaled to the trust-region boundary, then a backtracking line
// search that requires positive surrogate improvement within the KL bound.
// Leaves the policy unchanged if no step qualifies.
UpdateDiagnostics trpo_update(GaussianPolicy& policy, const TrajectoryBatch& batch,
                              const OptimizerConfig& cfg);

// Frozen randomness for one BPTT evaluation: initial states, the per-step
// noise draws, and the member used at each step. With these fixed the
// simulated return is a deterministic, differentiable function of theta.
struct BpttPlan {
    std::vector<Eigen::VectorXd> init_states;
    std::vector<Eigen::MatrixXd> noises; // per trajectory: m x horizon
    Eigen::MatrixXi member_index;        // horizon x n_trajectories
    int horizon = 0;
    bool deterministic = true;
};

BpttPlan make_bptt_plan(const ModelEnsemble& ensemble,
                        const std::vector<Eigen::VectorXd>& init_states, int horizon,
                        bool deterministic, Rng& rng);

// Mean total reward over the plan's trajectories, simulated in the models.
double bptt_simulated_return(const GaussianPolicy& policy, const ModelEnsemble& ensemble,
                             const EnvSpec& env, const BpttPlan& plan);

// Exact gradient of bptt_simulated_return w.r.t. the policy parameters,
// chaining through models, rewards, and the reparametrized actions. The
// simulated return of the same forward pass lands in `return_out` if given.
Eigen::VectorXd bptt_gradient(const GaussianPolicy& policy, const ModelEnsemble& ensemble,
                              const EnvSpec& env, const BpttPlan& plan,
                              double* return_out = nullptr);

// Clip-then-Adam ascent step on the simulated return. A non-finite gradient
// aborts the update (parameters unchanged, note set).
UpdateDiagnostics bptt_update(GaussianPolicy& policy, const ModelEnsemble& ensemble,
                              const EnvSpec& env,
                              const std::vector<Eigen::VectorXd>& init_states,
                              const OptimizerConfig& cfg, AdamState& adam, Rng& rng);

} // namespace metrpo
