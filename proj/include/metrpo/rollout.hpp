#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "metrpo/dataset.hpp"
#include "metrpo/dynamics.hpp"
#include "metrpo/env.hpp"
#include "metrpo/policy.hpp"
#include "metrpo/trajectory.hpp"

namespace metrpo {

enum class SamplingKind {
    kStepRand,     // a uniformly drawn member predicts each step
    kModelMeanStd, // draw from a diagonal Gaussian fitted to the K predictions
    kModelMean,    // mean of the K predictions
    kModelMed,     // per-dimension median of the K predictions
    kEpsRand,      // one member drawn per episode
    kOneModel      // a designated member throughout
};

struct SamplingMode {
    SamplingKind kind = SamplingKind::kStepRand;
    int designated = 0; // member used by one_model

    static SamplingMode from_name(const std::string& name, int designated = 0);
    std::string name() const;
};

struct ExplorationConfig {
    double std_min = 0.0;
    double std_max = 3.0;          // per-episode std override drawn uniformly
    double param_noise_scale = 1.0;
    int timesteps_per_iteration = 3000;
};

// Runs full episodes on the real system until at least
// timesteps_per_iteration steps have been gathered. Each episode draws one
// std override held fixed for the episode, and perturbs the policy
// parameters with white noise whose per-parameter scale is
// param_noise_scale * |theta - theta_prev| (skipped when theta_prev is
// absent). Transitions store the executed (clipped) action; perturbations
// never leak back into the policy.
std::vector<Episode> collect_real_samples(const EnvSpec& env, const GaussianPolicy& policy,
                                          const ExplorationConfig& explore, Rng& rng,
                                          const Eigen::VectorXd* prev_params = nullptr);

// Simulates stochastic-policy trajectories entirely inside the ensemble,
// with the next state chosen per the sampling mode. Rewards come from the
// known reward function on the simulated states. A non-finite prediction
// truncates that trajectory; `truncated` (if given) counts such events.
TrajectoryBatch simulate_fictitious(const ModelEnsemble& ensemble,
                                    const GaussianPolicy& policy,
                                    const std::vector<Eigen::VectorXd>& init_states,
                                    int horizon, const SamplingMode& mode, const EnvSpec& env,
                                    Rng& rng, int* truncated = nullptr);

// Monte-Carlo estimate of the return of `policy` inside one model: mean
// over init_states of the total reward along stochastic rollouts.
double estimate_model_return(const DynamicsModel& model, const GaussianPolicy& policy,
                             const std::vector<Eigen::VectorXd>& init_states, int horizon,
                             const EnvSpec& env, Rng& rng);

// Real-environment return of a Gaussian policy (mean action when
// deterministic is set).
ReturnStats evaluate_real_return(const EnvSpec& env, const GaussianPolicy& policy,
                                 int n_episodes, Rng& rng, bool deterministic = false);

} // namespace metrpo
