#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace metrpo {

// One simulated (or real) trajectory. Actions are the raw policy outputs;
// clipping to the environment bounds happens where they are consumed.
// model_indices records which ensemble member predicted each step, or -1
// when the step came from an aggregate of members (mean/median/fitted).
struct Trajectory {
    Eigen::MatrixXd states;        // n x L
    Eigen::MatrixXd actions;       // m x L
    Eigen::VectorXd rewards;       // L
    Eigen::MatrixXd noises;        // m x L, the reparametrization draws
    Eigen::VectorXi model_indices; // L

    int length() const { return static_cast<int>(rewards.size()); }
    double total_return() const { return rewards.sum(); }
};

struct TrajectoryBatch {
    std::vector<Trajectory> trajectories;
    int horizon = 0; // requested length; individual lengths may be shorter

    std::int64_t total_steps() const
    {
        std::int64_t n = 0;
        for (const Trajectory& tr : trajectories)
            n += tr.length();
        return n;
    }

    double mean_return() const
    {
        if (trajectories.empty())
            return 0.0;
        double acc = 0.0;
        for (const Trajectory& tr : trajectories)
            acc += tr.total_return();
        return acc / static_cast<double>(trajectories.size());
    }

    // Steps flattened trajectory-major (all of trajectory 0, then 1, ...).
    void flatten(Eigen::MatrixXd& states, Eigen::MatrixXd& actions) const
    {
        const std::int64_t total = total_steps();
        if (total == 0 || trajectories.empty()) {
            states.resize(0, 0);
            actions.resize(0, 0);
            return;
        }
        states.resize(trajectories.front().states.rows(), total);
        actions.resize(trajectories.front().actions.rows(), total);
        Eigen::Index at = 0;
        for (const Trajectory& tr : trajectories) {
            states.middleCols(at, tr.length()) = tr.states;
            actions.middleCols(at, tr.length()) = tr.actions;
            at += tr.length();
        }
    }
};

} // namespace metrpo
