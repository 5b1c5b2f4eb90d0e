#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "metrpo/mlp.hpp"
#include "metrpo/rng.hpp"

namespace metrpo {

// Conditional diagonal Gaussian policy: an MLP mean plus a state-independent
// learnable log standard deviation. Flat parameters are the mean network
// parameters followed by log_std.
//
// The mean can optionally be bounded: with a tanh output activation and a
// per-dimension mean_scale, mu = scale . tanh(net(s)) stays inside the
// action range while the action distribution itself remains an exact
// (unsquashed) Gaussian.
class GaussianPolicy {
public:
    GaussianPolicy() = default;

    static GaussianPolicy make(int state_dim, int action_dim,
                               const std::vector<int>& hidden, std::uint64_t seed,
                               double init_std = 1.0,
                               Activation output_activation = Activation::kIdentity,
                               const Eigen::VectorXd& mean_scale = Eigen::VectorXd());

    int state_dim() const { return mean_net_.input_dim(); }
    int action_dim() const { return static_cast<int>(log_std_.size()); }
    int param_count() const { return mean_net_.param_count() + action_dim(); }

    Mlp& mean_net() { return mean_net_; }
    const Mlp& mean_net() const { return mean_net_; }
    const Eigen::VectorXd& mean_scale() const { return mean_scale_; }
    Eigen::VectorXd& log_std() { return log_std_; }
    const Eigen::VectorXd& log_std() const { return log_std_; }

    // Optional lower bound on the standard deviation. The distribution uses
    // the floored value; log_std coordinates below the floor get zero
    // gradient (the floor binds).
    void set_min_std(double min_std);
    double min_std() const { return min_std_; }

    // 1 where log_std is above the floor (gradient flows there), else 0.
    Eigen::ArrayXd log_std_grad_mask() const;

    // Floored log-std actually used by the distribution.
    Eigen::VectorXd effective_log_std() const
    {
        if (min_std_ <= 0.0)
            return log_std_;
        return log_std_.cwiseMax(std::log(min_std_));
    }
    Eigen::VectorXd std() const { return effective_log_std().array().exp(); }

    Eigen::VectorXd flat_params() const;
    void set_flat_params(const Eigen::VectorXd& flat);

    // (mean, std) of the action distribution at one state.
    std::pair<Eigen::VectorXd, Eigen::VectorXd> action_distribution(
        const Eigen::VectorXd& state) const;

    Eigen::VectorXd mean_action(const Eigen::VectorXd& state) const
    {
        return mean_scale_.cwiseProduct(mean_net_.apply_vec(state));
    }

    Eigen::MatrixXd mean_batch(const Eigen::MatrixXd& states) const
    {
        return (mean_net_.apply(states).array().colwise() * mean_scale_.array()).matrix();
    }

    // a = mean + std . noise; differentiable in the parameters.
    Eigen::VectorXd reparametrized_action(const Eigen::VectorXd& state,
                                          const Eigen::VectorXd& noise) const;

    Eigen::VectorXd sample_action(const Eigen::VectorXd& state, Rng& rng) const;

    double log_prob(const Eigen::VectorXd& state, const Eigen::VectorXd& action) const;
    // One value per column pair.
    Eigen::VectorXd log_prob_batch(const Eigen::MatrixXd& states,
                                   const Eigen::MatrixXd& actions) const;

    // grad_theta sum_i w_i log pi(a_i | s_i), batched.
    Eigen::VectorXd weighted_log_prob_grad(const Eigen::MatrixXd& states,
                                           const Eigen::MatrixXd& actions,
                                           const Eigen::VectorXd& weights) const;

    // Mean over the given states of KL(old || new), closed form.
    static double kl_mean(const GaussianPolicy& old_policy, const GaussianPolicy& new_policy,
                          const Eigen::MatrixXd& states);

    // grad w.r.t. this policy's parameters of kl_mean(old, this, states).
    Eigen::VectorXd kl_grad_new(const GaussianPolicy& old_policy,
                                const Eigen::MatrixXd& states) const;

    // (F + damping I) v with the exact diagonal-Gaussian Fisher averaged
    // over states; the mean block uses J^T diag(1/std^2) J via one
    // forward-mode and one reverse-mode pass, the log_std block is 2 I.
    Eigen::VectorXd fisher_vector_product(const Eigen::MatrixXd& states,
                                          const Eigen::VectorXd& v, double damping) const;

    void save(const std::string& base_path, const nlohmann::json& extra_meta = {}) const;
    static GaussianPolicy load(const std::string& base_path);

private:
    Mlp mean_net_;
    Eigen::VectorXd mean_scale_;
    Eigen::VectorXd log_std_;
    double min_std_ = 0.0;
};

} // namespace metrpo
