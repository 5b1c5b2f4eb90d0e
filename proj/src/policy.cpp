#include "metrpo/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "metrpo/checkpoint.hpp"

namespace metrpo {

namespace {
constexpr double kLogSqrt2Pi = 0.91893853320467274178; // 0.5 * ln(2 pi)
}

GaussianPolicy GaussianPolicy::make(int state_dim, int action_dim,
                                    const std::vector<int>& hidden, std::uint64_t seed,
                                    double init_std, Activation output_activation,
                                    const Eigen::VectorXd& mean_scale)
{
    if (init_std <= 0.0)
        throw std::invalid_argument("GaussianPolicy::make: init_std must be positive");
    GaussianPolicy policy;
    std::vector<int> sizes;
    sizes.push_back(state_dim);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(action_dim);
    Rng rng(seed);
    policy.mean_net_ = Mlp::random(sizes, Activation::kTanh, output_activation, rng);
    policy.mean_scale_ = mean_scale.size() == 0 ? Eigen::VectorXd::Ones(action_dim)
                                                : mean_scale;
    if (policy.mean_scale_.size() != action_dim)
        throw std::invalid_argument("GaussianPolicy::make: mean_scale size mismatch");
    policy.log_std_ = Eigen::VectorXd::Constant(action_dim, std::log(init_std));
    return policy;
}

void GaussianPolicy::set_min_std(double min_std)
{
    if (min_std < 0.0)
        throw std::invalid_argument("set_min_std: negative floor");
    min_std_ = min_std;
}

Eigen::ArrayXd GaussianPolicy::log_std_grad_mask() const
{
    if (min_std_ <= 0.0)
        return Eigen::ArrayXd::Ones(log_std_.size());
    return (log_std_.array() >= std::log(min_std_)).cast<double>();
}

Eigen::VectorXd GaussianPolicy::flat_params() const
{
    Eigen::VectorXd flat(param_count());
    flat.head(mean_net_.param_count()) = mean_net_.flat_params();
    flat.tail(action_dim()) = log_std_;
    return flat;
}

void GaussianPolicy::set_flat_params(const Eigen::VectorXd& flat)
{
    if (flat.size() != param_count())
        throw std::invalid_argument("GaussianPolicy::set_flat_params: size mismatch");
    if (!flat.allFinite())
        throw std::invalid_argument("GaussianPolicy::set_flat_params: non-finite parameters");
    mean_net_.set_flat_params(flat.head(mean_net_.param_count()));
    log_std_ = flat.tail(action_dim());
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> GaussianPolicy::action_distribution(
    const Eigen::VectorXd& state) const
{
    return {mean_action(state), std()};
}

Eigen::VectorXd GaussianPolicy::reparametrized_action(const Eigen::VectorXd& state,
                                                      const Eigen::VectorXd& noise) const
{
    if (noise.size() != action_dim())
        throw std::invalid_argument("reparametrized_action: noise dimension mismatch");
    return mean_action(state) + std().cwiseProduct(noise);
}

Eigen::VectorXd GaussianPolicy::sample_action(const Eigen::VectorXd& state, Rng& rng) const
{
    return reparametrized_action(state, rng.normal_vector(action_dim()));
}

double GaussianPolicy::log_prob(const Eigen::VectorXd& state,
                                const Eigen::VectorXd& action) const
{
    return log_prob_batch(state, action)(0);
}

Eigen::VectorXd GaussianPolicy::log_prob_batch(const Eigen::MatrixXd& states,
                                               const Eigen::MatrixXd& actions) const
{
    if (actions.rows() != action_dim() || actions.cols() != states.cols())
        throw std::invalid_argument("log_prob_batch: shape mismatch");
    const Eigen::MatrixXd mean = mean_batch(states);
    const Eigen::VectorXd els = effective_log_std();
    const Eigen::ArrayXd inv_std = (-els.array()).exp();
    Eigen::ArrayXXd z = (actions - mean).array().colwise() * inv_std;
    Eigen::VectorXd logp =
        (-0.5 * z.square()).colwise().sum().transpose().matrix();
    logp.array() -= els.sum() + action_dim() * kLogSqrt2Pi;
    return logp;
}

Eigen::VectorXd GaussianPolicy::weighted_log_prob_grad(const Eigen::MatrixXd& states,
                                                       const Eigen::MatrixXd& actions,
                                                       const Eigen::VectorXd& weights) const
{
    if (weights.size() != states.cols())
        throw std::invalid_argument("weighted_log_prob_grad: weight count mismatch");
    Mlp::Trace trace = mean_net_.forward(states);
    const Eigen::MatrixXd mean =
        (mean_net_.output_of(trace).array().colwise() * mean_scale_.array()).matrix();
    const Eigen::ArrayXd inv_var = (-2.0 * effective_log_std().array()).exp();

    // d logp / d mean = (a - mean) / std^2, weighted per sample; the chain
    // through the mean scaling multiplies the net upstream by the scale.
    Eigen::MatrixXd diff = actions - mean;
    Eigen::MatrixXd upstream =
        (((diff.array().colwise() * inv_var).rowwise() * weights.transpose().array())
             .colwise() *
         mean_scale_.array())
            .matrix();
    Mlp::Backward back = mean_net_.backward(trace, upstream);

    // d logp / d log_std_i = ((a_i - mean_i)/std_i)^2 - 1.
    Eigen::ArrayXXd z2 = (diff.array().square().colwise() * inv_var) - 1.0;
    const Eigen::Array<double, 1, Eigen::Dynamic> w = weights.transpose().array();
    Eigen::VectorXd ls_grad =
        ((z2.rowwise() * w).rowwise().sum() * log_std_grad_mask()).matrix();

    Eigen::VectorXd grad(param_count());
    grad.head(mean_net_.param_count()) = back.params.flat;
    grad.tail(action_dim()) = ls_grad;
    return grad;
}

double GaussianPolicy::kl_mean(const GaussianPolicy& old_policy,
                               const GaussianPolicy& new_policy,
                               const Eigen::MatrixXd& states)
{
    if (states.cols() == 0)
        throw std::invalid_argument("kl_mean: empty state set");
    const Eigen::MatrixXd mean_old = old_policy.mean_batch(states);
    const Eigen::MatrixXd mean_new = new_policy.mean_batch(states);
    const Eigen::VectorXd ls_old = old_policy.effective_log_std();
    const Eigen::VectorXd ls_new = new_policy.effective_log_std();
    // Variance ratio via the log-std difference, so KL(p, p) is exactly zero.
    const Eigen::ArrayXd var_ratio = (2.0 * (ls_old - ls_new).array()).exp();
    const Eigen::ArrayXd inv_var_new = (-2.0 * ls_new.array()).exp();

    const Eigen::ArrayXXd mean_term =
        (mean_old - mean_new).array().square().colwise() * (0.5 * inv_var_new);
    const double per_dim =
        (ls_new - ls_old).sum() + 0.5 * var_ratio.sum() - 0.5 * old_policy.action_dim();
    return per_dim + mean_term.colwise().sum().mean();
}

Eigen::VectorXd GaussianPolicy::kl_grad_new(const GaussianPolicy& old_policy,
                                            const Eigen::MatrixXd& states) const
{
    const double count = static_cast<double>(states.cols());
    Mlp::Trace trace = mean_net_.forward(states);
    const Eigen::MatrixXd mean_new =
        (mean_net_.output_of(trace).array().colwise() * mean_scale_.array()).matrix();
    const Eigen::MatrixXd mean_old = old_policy.mean_batch(states);
    const Eigen::ArrayXd var_ratio =
        (2.0 * (old_policy.effective_log_std() - effective_log_std()).array()).exp();
    const Eigen::ArrayXd inv_var_new = (-2.0 * effective_log_std().array()).exp();

    // d KL / d mean_new = (mean_new - mean_old) / var_new, averaged.
    Eigen::MatrixXd upstream =
        ((mean_new - mean_old).array().colwise() * (inv_var_new * mean_scale_.array()))
            .matrix() /
        count;
    Mlp::Backward back = mean_net_.backward(trace, upstream);

    // d KL / d log_std_new_i = 1 - (var_old_i + mean gap^2) / var_new_i.
    Eigen::ArrayXd gap2 =
        (mean_new - mean_old).array().square().rowwise().mean();
    Eigen::VectorXd ls_grad =
        ((1.0 - var_ratio - gap2 * inv_var_new) * log_std_grad_mask()).matrix();

    Eigen::VectorXd grad(param_count());
    grad.head(mean_net_.param_count()) = back.params.flat;
    grad.tail(action_dim()) = ls_grad;
    return grad;
}

Eigen::VectorXd GaussianPolicy::fisher_vector_product(const Eigen::MatrixXd& states,
                                                      const Eigen::VectorXd& v,
                                                      double damping) const
{
    if (v.size() != param_count())
        throw std::invalid_argument("fisher_vector_product: size mismatch");
    const double count = static_cast<double>(states.cols());
    const Eigen::ArrayXd inv_var = (-2.0 * effective_log_std().array()).exp();

    const Eigen::VectorXd v_mean = v.head(mean_net_.param_count());
    Eigen::MatrixXd jv = mean_net_.jvp(states, v_mean);
    // J_mu = diag(scale) J_net, so the Gauss-Newton block carries scale^2.
    const Eigen::ArrayXd scaled_inv_var = inv_var * mean_scale_.array().square();
    Eigen::MatrixXd upstream = (jv.array().colwise() * scaled_inv_var).matrix() / count;
    Mlp::Backward back = mean_net_.backward(mean_net_.forward(states), upstream);

    Eigen::VectorXd out(param_count());
    out.head(mean_net_.param_count()) = back.params.flat;
    out.tail(action_dim()) =
        (2.0 * v.tail(action_dim()).array() * log_std_grad_mask()).matrix();
    out += damping * v;
    return out;
}

void GaussianPolicy::save(const std::string& base_path, const nlohmann::json& extra_meta) const
{
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
    for (int l = 0; l < mean_net_.layer_count(); ++l) {
        tensors.emplace_back("mean_net.w" + std::to_string(l), mean_net_.weight(l));
        tensors.emplace_back("mean_net.b" + std::to_string(l), mean_net_.bias(l));
    }
    tensors.emplace_back("mean_scale", mean_scale_);
    tensors.emplace_back("log_std", log_std_);

    nlohmann::json meta = extra_meta;
    meta["kind"] = "gaussian_policy";
    meta["min_std"] = min_std_;
    meta["layer_sizes"] = mean_net_.layer_sizes();
    meta["hidden_activation"] = activation_name(mean_net_.hidden_activation());
    meta["output_activation"] = activation_name(mean_net_.output_activation());
    save_checkpoint(base_path, tensors, meta);
}

GaussianPolicy GaussianPolicy::load(const std::string& base_path)
{
    Checkpoint ckpt = load_checkpoint(base_path);
    GaussianPolicy policy;
    std::vector<int> sizes = ckpt.meta.at("layer_sizes");
    policy.mean_net_ = Mlp(sizes, activation_from_name(ckpt.meta.at("hidden_activation")),
                           activation_from_name(ckpt.meta.at("output_activation")));
    for (int l = 0; l < policy.mean_net_.layer_count(); ++l) {
        policy.mean_net_.weight(l) = ckpt.mat("mean_net.w" + std::to_string(l));
        policy.mean_net_.bias(l) = ckpt.vec("mean_net.b" + std::to_string(l));
    }
    policy.mean_scale_ = ckpt.tensors.count("mean_scale")
                             ? ckpt.vec("mean_scale")
                             : Eigen::VectorXd::Ones(ckpt.vec("log_std").size());
    policy.log_std_ = ckpt.vec("log_std");
    policy.min_std_ = ckpt.meta.value("min_std", 0.0);
    return policy;
}

} // namespace metrpo
