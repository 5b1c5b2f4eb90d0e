#pragma once

#include <Eigen/Core>

#include <cstdint>

#include "metrpo/mlp.hpp"

namespace metrpo {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// Adam with bias correction. Moments start at zero; step_count advances by
// one per update. Throws std::invalid_argument on non-finite gradients.
class AdamState {
public:
    AdamState(int dim, AdamConfig cfg = {});

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);
    void step(Eigen::VectorXd& params, const GradientBundle& grads)
    {
        step(params, grads.flat);
    }

    std::int64_t step_count() const { return step_count_; }
    const AdamConfig& config() const { return cfg_; }
    const Eigen::VectorXd& first_moment() const { return m_; }
    const Eigen::VectorXd& second_moment() const { return v_; }

private:
    AdamConfig cfg_;
    std::int64_t step_count_ = 0;
    Eigen::VectorXd m_;
    Eigen::VectorXd v_;
};

} // namespace metrpo
