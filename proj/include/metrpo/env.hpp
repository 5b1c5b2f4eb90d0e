#pragma once

#include <Eigen/Core>

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "metrpo/rng.hpp"

namespace metrpo {

// Deterministic finite-horizon control task: known reward, transition
// treated as unknown by the learner. Actions are clipped to the per-
// dimension bounds inside step/reward, so callers may pass raw actions.
struct EnvSpec {
    std::string id;
    int state_dim = 0;
    int action_dim = 0;
    int horizon = 0;
    Eigen::VectorXd action_low;
    Eigen::VectorXd action_high;
    std::map<std::string, double> params; // resolved physical constants

    std::function<Eigen::VectorXd(const Eigen::VectorXd& s, const Eigen::VectorXd& a)> step;
    std::function<double(const Eigen::VectorXd& s, const Eigen::VectorXd& a)> reward;

    struct RewardGrad {
        Eigen::VectorXd ds;
        Eigen::VectorXd da; // includes the clip mask: zero where the action saturates
    };
    std::function<RewardGrad(const Eigen::VectorXd& s, const Eigen::VectorXd& a)> reward_grad;

    std::function<Eigen::VectorXd(Rng& rng)> sample_initial;

    Eigen::VectorXd clip_action(const Eigen::VectorXd& a) const
    {
        return a.cwiseMax(action_low).cwiseMin(action_high);
    }
};

// Environment registry. Known ids: "pendulum", "cartpole_swingup",
// "pointmass". Physical constants can be overridden per task; unknown
// override keys throw std::invalid_argument.
EnvSpec make_env(const std::string& id,
                 const std::map<std::string, double>& overrides = {});

std::vector<std::string> env_ids();

std::vector<Eigen::VectorXd> sample_initial_states(const EnvSpec& env, int n, Rng& rng);

using PolicyFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& state, Rng& rng)>;

struct ReturnStats {
    double mean = 0.0;
    double stderr_mean = 0.0;
    int episodes = 0;
};

// Rolls `n_episodes` full-horizon episodes through the true dynamics and
// returns the sample mean and standard error of the undiscounted return.
ReturnStats evaluate_real_return(const EnvSpec& env, const PolicyFn& policy, int n_episodes,
                                 Rng& rng);

} // namespace metrpo
