#include "metrpo/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace metrpo {

AdamState::AdamState(int dim, AdamConfig cfg)
    : cfg_(cfg), m_(Eigen::VectorXd::Zero(dim)), v_(Eigen::VectorXd::Zero(dim))
{
    if (cfg_.learning_rate <= 0.0 || cfg_.beta1 <= 0.0 || cfg_.beta2 <= 0.0 ||
        cfg_.epsilon <= 0.0)
        throw std::invalid_argument("AdamState: hyperparameters must be positive");
}

void AdamState::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad)
{
    if (grad.size() != m_.size() || params.size() != m_.size())
        throw std::invalid_argument("AdamState::step: size mismatch");
    if (!grad.allFinite())
        throw std::invalid_argument("AdamState::step: non-finite gradient");

    ++step_count_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseProduct(grad);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_count_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_count_));
    params.array() -= cfg_.learning_rate * (m_.array() / bc1) /
                      ((v_.array() / bc2).sqrt() + cfg_.epsilon);
}

} // namespace metrpo
