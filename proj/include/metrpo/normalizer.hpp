#pragma once

#include <Eigen/Core>

#include <vector>

#include "metrpo/dataset.hpp"

namespace metrpo {

// Per-dimension whitening statistics for the dynamics regression: inputs
// are (s, a) concatenations, outputs are state deltas s' - s. Standard
// deviations are floored at 1e-6. Fit only ever sees the training split.
struct Normalizer {
    Eigen::VectorXd in_mean;
    Eigen::VectorXd in_std;
    Eigen::VectorXd out_mean;
    Eigen::VectorXd out_std;

    static constexpr double kStdFloor = 1e-6;

    // Empirical mean / population std over the given transitions. Throws
    // std::invalid_argument on an empty set.
    static Normalizer fit(const std::vector<Transition>& train);

    static Normalizer identity(int in_dim, int out_dim);

    int in_dim() const { return static_cast<int>(in_mean.size()); }
    int out_dim() const { return static_cast<int>(out_mean.size()); }

    // Columns are samples.
    Eigen::MatrixXd normalize_input(const Eigen::MatrixXd& sa) const
    {
        return ((sa.colwise() - in_mean).array().colwise() / in_std.array()).matrix();
    }
    Eigen::MatrixXd normalize_output(const Eigen::MatrixXd& delta) const
    {
        return ((delta.colwise() - out_mean).array().colwise() / out_std.array()).matrix();
    }
    Eigen::MatrixXd denormalize_output(const Eigen::MatrixXd& y) const
    {
        return ((y.array().colwise() * out_std.array()).matrix()).colwise() + out_mean;
    }
};

} // namespace metrpo
