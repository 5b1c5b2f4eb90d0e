#include "metrpo/normalizer.hpp"

#include <cmath>
#include <stdexcept>

namespace metrpo {

Normalizer Normalizer::fit(const std::vector<Transition>& train)
{
    if (train.empty())
        throw std::invalid_argument("Normalizer::fit: empty training set");

    const Eigen::Index n = train.front().s.size();
    const Eigen::Index m = train.front().a.size();
    const double count = static_cast<double>(train.size());

    Normalizer norm;
    norm.in_mean = Eigen::VectorXd::Zero(n + m);
    norm.out_mean = Eigen::VectorXd::Zero(n);
    for (const Transition& tr : train) {
        norm.in_mean.head(n) += tr.s;
        norm.in_mean.tail(m) += tr.a;
        norm.out_mean += tr.s_next - tr.s;
    }
    norm.in_mean /= count;
    norm.out_mean /= count;

    Eigen::VectorXd in_var = Eigen::VectorXd::Zero(n + m);
    Eigen::VectorXd out_var = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd in(n + m);
    for (const Transition& tr : train) {
        in.head(n) = tr.s;
        in.tail(m) = tr.a;
        in_var += (in - norm.in_mean).cwiseAbs2();
        out_var += (tr.s_next - tr.s - norm.out_mean).cwiseAbs2();
    }
    norm.in_std = (in_var / count).cwiseSqrt().cwiseMax(kStdFloor);
    norm.out_std = (out_var / count).cwiseSqrt().cwiseMax(kStdFloor);
    return norm;
}

Normalizer Normalizer::identity(int in_dim, int out_dim)
{
    Normalizer norm;
    norm.in_mean = Eigen::VectorXd::Zero(in_dim);
    norm.in_std = Eigen::VectorXd::Ones(in_dim);
    norm.out_mean = Eigen::VectorXd::Zero(out_dim);
    norm.out_std = Eigen::VectorXd::Ones(out_dim);
    return norm;
}

} // namespace metrpo
