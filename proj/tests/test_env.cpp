#include <doctest.h>

#include <cmath>

#include "metrpo/env.hpp"
#include "test_util.hpp"

using namespace metrpo;

TEST_CASE("pendulum hanging at rest with zero torque is a fixed point")
{
    EnvSpec env = make_env("pendulum");
    Eigen::VectorXd s(3);
    s << std::cos(M_PI), std::sin(M_PI), 0.0;
    Eigen::VectorXd next = env.step(s, Eigen::VectorXd::Zero(1));
    CHECK((next - s).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("point mass at origin with zero force stays put")
{
    EnvSpec env = make_env("pointmass", {{"hill_force", 0.0}});
    Eigen::VectorXd s = Eigen::VectorXd::Zero(4);
    Eigen::VectorXd next = env.step(s, Eigen::VectorXd::Zero(2));
    CHECK(next.isZero(0.0));
}

TEST_CASE("cartpole hanging at rest with zero force is a fixed point")
{
    EnvSpec env = make_env("cartpole_swingup");
    Eigen::VectorXd s(5);
    s << 0.0, 0.0, std::cos(M_PI), std::sin(M_PI), 0.0;
    Eigen::VectorXd next = env.step(s, Eigen::VectorXd::Zero(1));
    CHECK((next - s).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("pendulum step from upright matches hand integration")
{
    EnvSpec env = make_env("pendulum");
    const double m = env.params.at("mass");
    const double l = env.params.at("length");
    const double g = env.params.at("gravity");
    const double dt = env.params.at("dt");

    Eigen::VectorXd s(3);
    s << 1.0, 0.0, 0.0; // theta = 0 (upright), omega = 0
    Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 1.0);
    Eigen::VectorXd next = env.step(s, a);

    // Semi-implicit Euler by hand.
    const double theta_dd = (g / l) * std::sin(0.0) + 1.0 / (m * l * l);
    const double omega1 = 0.0 + dt * theta_dd;
    const double theta1 = 0.0 + dt * omega1;
    CHECK(next(0) == doctest::Approx(std::cos(theta1)).epsilon(1e-14));
    CHECK(next(1) == doctest::Approx(std::sin(theta1)).epsilon(1e-14));
    CHECK(next(2) == doctest::Approx(omega1).epsilon(1e-14));
}

TEST_CASE("env_step is pure and invariant to pre-clipped actions")
{
    for (const std::string& id : env_ids()) {
        EnvSpec env = make_env(id);
        Rng rng(41);
        Eigen::VectorXd s = env.sample_initial(rng);
        Eigen::VectorXd wild = 100.0 * rng.normal_vector(env.action_dim);

        Eigen::VectorXd n1 = env.step(s, wild);
        Eigen::VectorXd n2 = env.step(s, wild);
        Eigen::VectorXd n3 = env.step(s, env.clip_action(wild));
        for (Eigen::Index i = 0; i < n1.size(); ++i) {
            CHECK(n1(i) == n2(i));
            CHECK(n1(i) == n3(i));
        }
        CHECK(env.reward(s, wild) == env.reward(s, env.clip_action(wild)));
    }
}

TEST_CASE("velocity-style reward arithmetic")
{
    // Wider force bounds so an action with squared norm 4 is feasible.
    EnvSpec env = make_env("pointmass", {{"max_force", 2.0}});
    Eigen::VectorXd rest = Eigen::VectorXd::Zero(4);
    CHECK(env.reward(rest, Eigen::VectorXd::Zero(2)) == 0.0);

    Eigen::VectorXd moving(4);
    moving << 0.0, 0.0, 1.0, 0.0;
    Eigen::VectorXd a = Eigen::VectorXd::Constant(2, std::sqrt(2.0));
    CHECK(env.reward(moving, a) == doctest::Approx(0.98).epsilon(1e-12));
}

TEST_CASE("pendulum cost is zero and maximal at upright rest")
{
    EnvSpec env = make_env("pendulum");
    Eigen::VectorXd upright(3);
    upright << 1.0, 0.0, 0.0;
    CHECK(env.reward(upright, Eigen::VectorXd::Zero(1)) == 0.0);

    Rng rng(5);
    for (int i = 0; i < 100; ++i) {
        Eigen::VectorXd s = env.sample_initial(rng);
        Eigen::VectorXd a = rng.normal_vector(1);
        CHECK(env.reward(s, a) <= 0.0);
    }
}

TEST_CASE("reward gradients match finite differences at interior actions")
{
    for (const std::string& id : env_ids()) {
        EnvSpec env = make_env(id);
        Rng rng(17);
        double worst = 0.0;
        for (int i = 0; i < 30; ++i) {
            Eigen::VectorXd s = env.sample_initial(rng);
            Eigen::VectorXd a = 0.2 * rng.normal_vector(env.action_dim);
            auto grad = env.reward_grad(s, a);
            auto rs = [&](const Eigen::VectorXd& sv) { return env.reward(sv, a); };
            auto ra = [&](const Eigen::VectorXd& av) { return env.reward(s, av); };
            worst = std::max(worst, test::max_rel_error(grad.ds, test::fd_gradient(rs, s)));
            worst = std::max(worst, test::max_rel_error(grad.da, test::fd_gradient(ra, a)));
        }
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("initial state sampling: support, determinism, empty")
{
    EnvSpec env = make_env("pointmass");
    Rng rng_a(9);
    Rng rng_b(9);
    CHECK(sample_initial_states(env, 0, rng_a).empty());

    auto xs = sample_initial_states(env, 50, rng_a);
    auto ys = sample_initial_states(env, 50, rng_b);
    ys.erase(ys.begin()); // rng_a consumed nothing for the empty call
    auto zs = sample_initial_states(env, 49, rng_b);
    const double box = env.params.at("init_box");
    for (std::size_t i = 0; i < xs.size(); ++i) {
        CHECK(std::abs(xs[i](0)) <= box);
        CHECK(std::abs(xs[i](1)) <= box);
        CHECK(xs[i](2) == 0.0);
    }

    Rng rng_c(9);
    auto repeat = sample_initial_states(env, 50, rng_c);
    for (std::size_t i = 0; i < xs.size(); ++i)
        CHECK(xs[i] == repeat[i]);
}

TEST_CASE("pendulum energy is stable over a horizon with zero torque")
{
    EnvSpec env = make_env("pendulum");
    const double m = env.params.at("mass");
    const double l = env.params.at("length");
    const double g = env.params.at("gravity");

    Eigen::VectorXd s(3);
    const double theta0 = M_PI - 0.8;
    s << std::cos(theta0), std::sin(theta0), 0.0;

    auto energy = [&](const Eigen::VectorXd& state) {
        return 0.5 * m * l * l * state(2) * state(2) + m * g * l * state(0);
    };

    // Windowed means, so the symplectic oscillation of the energy averages
    // out and only secular drift is measured.
    double first = 0.0, last = 0.0;
    for (int t = 0; t < env.horizon; ++t) {
        if (t < 50)
            first += energy(s);
        if (t >= env.horizon - 50)
            last += energy(s);
        s = env.step(s, Eigen::VectorXd::Zero(1));
    }
    first /= 50.0;
    last /= 50.0;
    CHECK(std::abs(last - first) < 0.01 * m * g * l);
}

TEST_CASE("evaluate_real_return on a constant-zero reward task")
{
    EnvSpec env = make_env("pointmass");
    env.reward = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return 0.0; };
    Rng rng(1);
    PolicyFn zero_policy = [](const Eigen::VectorXd&, Rng&) {
        return Eigen::VectorXd::Zero(2);
    };
    ReturnStats stats = evaluate_real_return(env, zero_policy, 4, rng);
    CHECK(stats.mean == 0.0);
    CHECK(stats.stderr_mean == 0.0);
}

TEST_CASE("zero-torque return from hanging equals horizon times fixed-point reward")
{
    EnvSpec env = make_env("pendulum");
    env.sample_initial = [](Rng&) {
        Eigen::VectorXd s(3);
        s << -1.0, 0.0, 0.0;
        return s;
    };
    Rng rng(2);
    PolicyFn zero_policy = [](const Eigen::VectorXd&, Rng&) {
        return Eigen::VectorXd::Zero(1);
    };
    ReturnStats stats = evaluate_real_return(env, zero_policy, 1, rng);
    Eigen::VectorXd hanging(3);
    hanging << -1.0, 0.0, 0.0;
    const double per_step = env.reward(hanging, Eigen::VectorXd::Zero(1));
    CHECK(stats.mean == doctest::Approx(env.horizon * per_step).epsilon(1e-9));
}

TEST_CASE("stochastic evaluation matches a scripted rollout oracle")
{
    EnvSpec env = make_env("pointmass");
    PolicyFn noisy = [](const Eigen::VectorXd& s, Rng& rng) {
        Eigen::VectorXd a = rng.normal_vector(2);
        a(0) += 0.1 * s(2);
        return a;
    };

    Rng rng(123);
    ReturnStats got = evaluate_real_return(env, noisy, 2, rng);

    // Scripted oracle: replay the identical draw sequence by hand.
    Rng oracle_rng(123);
    double total = 0.0;
    for (int e = 0; e < 2; ++e) {
        Eigen::VectorXd s = env.sample_initial(oracle_rng);
        for (int t = 0; t < env.horizon; ++t) {
            Eigen::VectorXd a = noisy(s, oracle_rng);
            total += env.reward(s, a);
            s = env.step(s, a);
        }
    }
    CHECK(got.mean == total / 2.0);
}

TEST_CASE("unknown ids and parameters are rejected")
{
    CHECK_THROWS_AS(make_env("mujoco_ant"), std::invalid_argument);
    CHECK_THROWS_AS(make_env("pendulum", {{"warp_drive", 1.0}}), std::invalid_argument);
}
