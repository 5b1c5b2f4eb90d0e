#include <doctest.h>

#include <cmath>

#include "metrpo/adam.hpp"

using namespace metrpo;

TEST_CASE("zero gradient leaves parameters unchanged")
{
    AdamState adam(3);
    Eigen::VectorXd params(3);
    params << 1.0, -2.0, 0.5;
    Eigen::VectorXd before = params;
    adam.step(params, Eigen::VectorXd::Zero(3));
    CHECK(params == before);
    CHECK(adam.step_count() == 1);
}

TEST_CASE("first step magnitude follows the bias-corrected update")
{
    // Scalar param 0, gradient 0.5, lr 1e-3: update = lr * g / (|g| + eps).
    AdamConfig cfg;
    cfg.learning_rate = 1e-3;
    AdamState adam(1, cfg);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd g = Eigen::VectorXd::Constant(1, 0.5);
    adam.step(p, g);
    const double expected = -cfg.learning_rate * 0.5 / (0.5 + cfg.epsilon);
    CHECK(p(0) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(p(0) == doctest::Approx(-1e-3).epsilon(1e-6));
}

TEST_CASE("two identical gradients reproduce a hand computation")
{
    AdamConfig cfg;
    AdamState adam(1, cfg);
    Eigen::VectorXd p = Eigen::VectorXd::Constant(1, 0.2);
    Eigen::VectorXd g = Eigen::VectorXd::Constant(1, -0.3);

    // Hand-rolled two steps of Adam with bias correction.
    double m = 0.0, v = 0.0, ref = 0.2;
    for (int t = 1; t <= 2; ++t) {
        m = cfg.beta1 * m + (1.0 - cfg.beta1) * (-0.3);
        v = cfg.beta2 * v + (1.0 - cfg.beta2) * 0.09;
        const double mhat = m / (1.0 - std::pow(cfg.beta1, t));
        const double vhat = v / (1.0 - std::pow(cfg.beta2, t));
        ref -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon);
        adam.step(p, g);
    }
    CHECK(p(0) == doctest::Approx(ref).epsilon(1e-12));
    CHECK(adam.step_count() == 2);
}

TEST_CASE("non-finite gradient is a hard error")
{
    AdamState adam(2);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd g(2);
    g << 1.0, std::numeric_limits<double>::infinity();
    CHECK_THROWS_AS(adam.step(p, g), std::invalid_argument);
}

TEST_CASE("moments start at zero")
{
    AdamState adam(4);
    CHECK(adam.first_moment().isZero(0.0));
    CHECK(adam.second_moment().isZero(0.0));
    CHECK(adam.step_count() == 0);
}
