#include "metrpo/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace metrpo {

namespace {

std::map<std::string, double> resolve_params(std::map<std::string, double> defaults,
                                             const std::map<std::string, double>& overrides,
                                             const std::string& id)
{
    for (const auto& [key, value] : overrides) {
        auto it = defaults.find(key);
        if (it == defaults.end())
            throw std::invalid_argument("unknown parameter '" + key + "' for env " + id);
        it->second = value;
    }
    return defaults;
}

Eigen::VectorXd clip_mask(const Eigen::VectorXd& a, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi)
{
    Eigen::VectorXd mask(a.size());
    for (Eigen::Index i = 0; i < a.size(); ++i)
        mask(i) = (a(i) > lo(i) && a(i) < hi(i)) ? 1.0 : 0.0;
    return mask;
}

// Pendulum swing-up. Physical state (theta, omega) with theta measured from
// upright; observed state is (cos theta, sin theta, omega). Point mass on a
// rigid massless rod, frictionless, semi-implicit Euler:
//   theta_dd = (g/l) sin(theta) + a / (m l^2)
EnvSpec make_pendulum(const std::map<std::string, double>& overrides)
{
    EnvSpec env;
    env.id = "pendulum";
    env.state_dim = 3;
    env.action_dim = 1;
    env.horizon = 200;
    env.params = resolve_params({{"mass", 1.0},
                                 {"length", 1.0},
                                 {"gravity", 9.81},
                                 {"dt", 0.05},
                                 {"max_torque", 2.0},
                                 {"init_angle_spread", 1.0},
                                 {"init_vel_spread", 1.0}},
                                overrides, env.id);
    const double m = env.params.at("mass");
    const double l = env.params.at("length");
    const double g = env.params.at("gravity");
    const double dt = env.params.at("dt");
    const double u_max = env.params.at("max_torque");
    env.action_low = Eigen::VectorXd::Constant(1, -u_max);
    env.action_high = Eigen::VectorXd::Constant(1, u_max);

    env.step = [m, l, g, dt, u_max](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const double u = std::clamp(a(0), -u_max, u_max);
        const double theta = std::atan2(s(1), s(0));
        double omega = s(2);
        const double theta_dd = (g / l) * std::sin(theta) + u / (m * l * l);
        omega += dt * theta_dd;
        const double theta_next = theta + dt * omega;
        Eigen::VectorXd out(3);
        out << std::cos(theta_next), std::sin(theta_next), omega;
        return out;
    };

    // Quadratic-style cost, zero at upright rest with no torque.
    env.reward = [u_max](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const double u = std::clamp(a(0), -u_max, u_max);
        return -(2.0 * (1.0 - s(0)) + 0.1 * s(2) * s(2) + 0.001 * u * u);
    };
    env.reward_grad = [u_max](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        EnvSpec::RewardGrad grad;
        const double u = std::clamp(a(0), -u_max, u_max);
        grad.ds = Eigen::VectorXd::Zero(3);
        grad.ds(0) = 2.0;
        grad.ds(2) = -0.2 * s(2);
        grad.da = Eigen::VectorXd::Zero(1);
        grad.da(0) = (a(0) > -u_max && a(0) < u_max) ? -0.002 * u : 0.0;
        return grad;
    };

    const double angle_spread = env.params.at("init_angle_spread");
    const double vel_spread = env.params.at("init_vel_spread");
    env.sample_initial = [angle_spread, vel_spread](Rng& rng) {
        const double theta = M_PI + rng.uniform(-angle_spread, angle_spread);
        const double omega = rng.uniform(-vel_spread, vel_spread);
        Eigen::VectorXd s(3);
        s << std::cos(theta), std::sin(theta), omega;
        return s;
    };
    return env;
}

// Cart-pole swing-up. Physical state (x, x_dot, theta, omega) with theta
// from upright; observed state is (x, x_dot, cos theta, sin theta, omega).
// Frictionless pole-on-cart equations, pole starts hanging down.
EnvSpec make_cartpole(const std::map<std::string, double>& overrides)
{
    EnvSpec env;
    env.id = "cartpole_swingup";
    env.state_dim = 5;
    env.action_dim = 1;
    env.horizon = 200;
    env.params = resolve_params({{"cart_mass", 1.0},
                                 {"pole_mass", 0.1},
                                 {"pole_length", 0.5},
                                 {"gravity", 9.81},
                                 {"dt", 0.05},
                                 {"max_force", 10.0},
                                 {"track_limit", 2.4}},
                                overrides, env.id);
    const double mc = env.params.at("cart_mass");
    const double mp = env.params.at("pole_mass");
    const double l = env.params.at("pole_length");
    const double g = env.params.at("gravity");
    const double dt = env.params.at("dt");
    const double f_max = env.params.at("max_force");
    const double track = env.params.at("track_limit");
    env.action_low = Eigen::VectorXd::Constant(1, -f_max);
    env.action_high = Eigen::VectorXd::Constant(1, f_max);

    env.step = [mc, mp, l, g, dt, f_max](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const double f = std::clamp(a(0), -f_max, f_max);
        const double x = s(0);
        double x_dot = s(1);
        const double theta = std::atan2(s(3), s(2));
        double omega = s(4);

        const double sin_t = std::sin(theta);
        const double cos_t = std::cos(theta);
        const double total = mc + mp;
        const double tmp = (f + mp * l * omega * omega * sin_t) / total;
        const double theta_dd =
            (g * sin_t - cos_t * tmp) / (l * (4.0 / 3.0 - mp * cos_t * cos_t / total));
        const double x_dd = tmp - mp * l * theta_dd * cos_t / total;

        omega += dt * theta_dd;
        x_dot += dt * x_dd;
        const double theta_next = theta + dt * omega;
        Eigen::VectorXd out(5);
        out << x + dt * x_dot, x_dot, std::cos(theta_next), std::sin(theta_next), omega;
        return out;
    };

    // Pole-tip height minus action cost, with a soft penalty past the track
    // limit instead of early termination.
    env.reward = [f_max, track](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const double f = std::clamp(a(0), -f_max, f_max);
        const double overshoot = std::max(std::abs(s(0)) - track, 0.0);
        return s(2) - 0.005 * f * f - 10.0 * overshoot;
    };
    env.reward_grad = [f_max, track](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        EnvSpec::RewardGrad grad;
        const double f = std::clamp(a(0), -f_max, f_max);
        grad.ds = Eigen::VectorXd::Zero(5);
        grad.ds(2) = 1.0;
        if (std::abs(s(0)) > track)
            grad.ds(0) = s(0) > 0.0 ? -10.0 : 10.0;
        grad.da = Eigen::VectorXd::Zero(1);
        grad.da(0) = (a(0) > -f_max && a(0) < f_max) ? -0.01 * f : 0.0;
        return grad;
    };

    env.sample_initial = [](Rng& rng) {
        const double x = rng.uniform(-0.05, 0.05);
        const double x_dot = rng.uniform(-0.05, 0.05);
        const double theta = M_PI + rng.uniform(-0.05, 0.05);
        const double omega = rng.uniform(-0.05, 0.05);
        Eigen::VectorXd s(5);
        s << x, x_dot, std::cos(theta), std::sin(theta), omega;
        return s;
    };
    return env;
}

// 2-D point mass pushed through rolling hills along x. State (x, y, vx, vy),
// 2-D force input with linear drag; the hill profile enters as a position-
// dependent force -dh/dx with h(x) = (amp/freq) sin(freq x). Reward is
// forward velocity minus a quadratic action cost.
EnvSpec make_pointmass(const std::map<std::string, double>& overrides)
{
    EnvSpec env;
    env.id = "pointmass";
    env.state_dim = 4;
    env.action_dim = 2;
    env.horizon = 100;
    env.params = resolve_params({{"drag", 0.25},
                                 {"hill_force", 0.5},
                                 {"hill_frequency", 1.0},
                                 {"dt", 0.05},
                                 {"max_force", 1.0},
                                 {"init_box", 0.5}},
                                overrides, env.id);
    const double drag = env.params.at("drag");
    const double amp = env.params.at("hill_force");
    const double freq = env.params.at("hill_frequency");
    const double dt = env.params.at("dt");
    const double f_max = env.params.at("max_force");
    env.action_low = Eigen::VectorXd::Constant(2, -f_max);
    env.action_high = Eigen::VectorXd::Constant(2, f_max);

    env.step = [drag, amp, freq, dt, f_max](const Eigen::VectorXd& s,
                                            const Eigen::VectorXd& a) {
        const double ax = std::clamp(a(0), -f_max, f_max);
        const double ay = std::clamp(a(1), -f_max, f_max);
        const double vx = s(2) + dt * (ax - drag * s(2) - amp * std::cos(freq * s(0)));
        const double vy = s(3) + dt * (ay - drag * s(3));
        Eigen::VectorXd out(4);
        out << s(0) + dt * vx, s(1) + dt * vy, vx, vy;
        return out;
    };

    env.reward = [f_max](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        const double ax = std::clamp(a(0), -f_max, f_max);
        const double ay = std::clamp(a(1), -f_max, f_max);
        return s(2) - 0.005 * (ax * ax + ay * ay);
    };
    env.reward_grad = [f_max](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        EnvSpec::RewardGrad grad;
        grad.ds = Eigen::VectorXd::Zero(4);
        grad.ds(2) = 1.0;
        grad.da = Eigen::VectorXd::Zero(2);
        for (int i = 0; i < 2; ++i) {
            const double ai = std::clamp(a(i), -f_max, f_max);
            grad.da(i) = (a(i) > -f_max && a(i) < f_max) ? -0.01 * ai : 0.0;
        }
        return grad;
    };

    const double box = env.params.at("init_box");
    env.sample_initial = [box](Rng& rng) {
        Eigen::VectorXd s(4);
        s << rng.uniform(-box, box), rng.uniform(-box, box), 0.0, 0.0;
        return s;
    };
    return env;
}

} // namespace

EnvSpec make_env(const std::string& id, const std::map<std::string, double>& overrides)
{
    if (id == "pendulum")
        return make_pendulum(overrides);
    if (id == "cartpole_swingup")
        return make_cartpole(overrides);
    if (id == "pointmass")
        return make_pointmass(overrides);
    throw std::invalid_argument("unknown environment id: " + id);
}

std::vector<std::string> env_ids()
{
    return {"pendulum", "cartpole_swingup", "pointmass"};
}

std::vector<Eigen::VectorXd> sample_initial_states(const EnvSpec& env, int n, Rng& rng)
{
    std::vector<Eigen::VectorXd> states;
    states.reserve(static_cast<std::size_t>(std::max(n, 0)));
    for (int i = 0; i < n; ++i)
        states.push_back(env.sample_initial(rng));
    return states;
}

ReturnStats evaluate_real_return(const EnvSpec& env, const PolicyFn& policy, int n_episodes,
                                 Rng& rng)
{
    if (n_episodes < 1)
        throw std::invalid_argument("evaluate_real_return: n_episodes must be >= 1");
    std::vector<double> returns;
    returns.reserve(static_cast<std::size_t>(n_episodes));
    for (int e = 0; e < n_episodes; ++e) {
        Eigen::VectorXd s = env.sample_initial(rng);
        double total = 0.0;
        for (int t = 0; t < env.horizon; ++t) {
            const Eigen::VectorXd a = policy(s, rng);
            total += env.reward(s, a);
            s = env.step(s, a);
            if (!s.allFinite())
                throw std::runtime_error("evaluate_real_return: non-finite state in " + env.id);
        }
        returns.push_back(total);
    }
    ReturnStats stats;
    stats.episodes = n_episodes;
    double sum = 0.0;
    for (double r : returns)
        sum += r;
    stats.mean = sum / n_episodes;
    if (n_episodes > 1) {
        double ss = 0.0;
        for (double r : returns)
            ss += (r - stats.mean) * (r - stats.mean);
        stats.stderr_mean = std::sqrt(ss / (n_episodes - 1)) / std::sqrt(double(n_episodes));
    }
    return stats;
}

} // namespace metrpo
