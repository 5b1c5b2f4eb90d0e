#include <doctest.h>

#include <cmath>

#include "metrpo/rollout.hpp"
#include "test_util.hpp"

using namespace metrpo;

namespace {

// Member that always predicts s + offset, regardless of inputs.
DynamicsModel constant_offset_model(int n, int m, double offset)
{
    DynamicsModel model = DynamicsModel::make(n, m, {4}, 0);
    const int last = model.net().layer_count() - 1;
    model.net().weight(last).setZero();
    model.net().bias(last).setZero();
    Normalizer norm = Normalizer::identity(n + m, n);
    norm.out_mean = Eigen::VectorXd::Constant(n, offset);
    model.set_normalizer(norm);
    return model;
}

EnvSpec line_env(int horizon = 10)
{
    EnvSpec env;
    env.id = "line";
    env.state_dim = 1;
    env.action_dim = 1;
    env.horizon = horizon;
    env.action_low = Eigen::VectorXd::Constant(1, -5.0);
    env.action_high = Eigen::VectorXd::Constant(1, 5.0);
    env.step = [](const Eigen::VectorXd& s, const Eigen::VectorXd&) { return s; };
    env.reward = [](const Eigen::VectorXd& s, const Eigen::VectorXd&) { return s(0); };
    env.reward_grad = [](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
        EnvSpec::RewardGrad g;
        g.ds = Eigen::VectorXd::Ones(1);
        g.da = Eigen::VectorXd::Zero(a.size());
        return g;
    };
    env.sample_initial = [](Rng&) { return Eigen::VectorXd::Zero(1); };
    return env;
}

} // namespace

TEST_CASE("degenerate exploration reproduces the noise-free rollout")
{
    EnvSpec env = make_env("pointmass");
    GaussianPolicy policy = GaussianPolicy::make(4, 2, {16, 16}, 3);
    ExplorationConfig explore;
    explore.std_min = explore.std_max = 0.0;
    explore.param_noise_scale = 0.0;
    explore.timesteps_per_iteration = 2 * env.horizon;

    Rng rng(5);
    auto episodes = collect_real_samples(env, policy, explore, rng);
    REQUIRE(episodes.size() == 2);

    // Manual noise-free rollout with the same initial-state draws.
    Rng oracle(5);
    for (const Episode& ep : episodes) {
        oracle.uniform(0.0, 0.0); // the per-episode std draw
        Eigen::VectorXd s = env.sample_initial(oracle);
        for (const Transition& tr : ep) {
            CHECK(tr.s == s);
            Eigen::VectorXd a = env.clip_action(policy.mean_net().apply_vec(s));
            CHECK(tr.a == a);
            s = env.step(s, a);
            CHECK(tr.s_next == s);
        }
    }
}

TEST_CASE("3000 timesteps at horizon 200 gives exactly 15 episodes")
{
    EnvSpec env = make_env("pendulum");
    GaussianPolicy policy = GaussianPolicy::make(3, 1, {32, 32}, 1);
    ExplorationConfig explore;
    Rng rng(7);
    auto episodes = collect_real_samples(env, policy, explore, rng);
    CHECK(episodes.size() == 15);
    std::int64_t steps = 0;
    for (const auto& ep : episodes)
        steps += static_cast<std::int64_t>(ep.size());
    CHECK(steps == 3000);
}

TEST_CASE("collection is deterministic per seed")
{
    EnvSpec env = make_env("pointmass");
    GaussianPolicy policy = GaussianPolicy::make(4, 2, {16}, 9);
    ExplorationConfig explore;
    explore.timesteps_per_iteration = 300;

    Rng rng_a(11), rng_b(11);
    auto a = collect_real_samples(env, policy, explore, rng_a);
    auto b = collect_real_samples(env, policy, explore, rng_b);
    REQUIRE(a.size() == b.size());
    for (std::size_t e = 0; e < a.size(); ++e)
        for (std::size_t t = 0; t < a[e].size(); ++t) {
            CHECK(a[e][t].s == b[e][t].s);
            CHECK(a[e][t].a == b[e][t].a);
            CHECK(a[e][t].s_next == b[e][t].s_next);
        }
}

TEST_CASE("parameter noise perturbs rollouts but not the policy")
{
    EnvSpec env = make_env("pointmass");
    GaussianPolicy policy = GaussianPolicy::make(4, 2, {16}, 13);
    const Eigen::VectorXd theta = policy.flat_params();
    Eigen::VectorXd prev = theta.array() + 0.5; // pretend last iteration differed

    ExplorationConfig explore;
    explore.std_min = explore.std_max = 0.0;
    explore.param_noise_scale = 1.0;
    explore.timesteps_per_iteration = env.horizon;

    Rng rng_a(3), rng_b(3);
    auto plain = collect_real_samples(env, policy, explore, rng_a);
    auto noisy = collect_real_samples(env, policy, explore, rng_b, &prev);
    CHECK(policy.flat_params() == theta);

    bool action_diff = false;
    for (std::size_t t = 0; t < plain[0].size(); ++t)
        action_diff = action_diff || plain[0][t].a != noisy[0][t].a;
    CHECK(action_diff);

    // Identical previous parameters mean zero perturbation scale.
    Rng rng_c(3);
    auto same = collect_real_samples(env, policy, explore, rng_c, &theta);
    for (std::size_t t = 0; t < plain[0].size(); ++t)
        CHECK(plain[0][t].a == same[0][t].a);
}

TEST_CASE("single-member ensembles make all sampling modes coincide")
{
    EnvSpec env = line_env(8);
    ModelEnsemble ensemble({constant_offset_model(1, 1, 0.25)});
    GaussianPolicy policy = GaussianPolicy::make(1, 1, {8}, 21);

    std::vector<Eigen::VectorXd> inits = {Eigen::VectorXd::Zero(1),
                                          Eigen::VectorXd::Constant(1, 2.0)};
    const char* names[] = {"step_rand", "model_mean_std", "model_mean",
                           "model_med", "eps_rand", "one_model"};
    std::vector<TrajectoryBatch> batches;
    for (const char* name : names) {
        Rng rng(99);
        batches.push_back(simulate_fictitious(ensemble, policy, inits, 8,
                                              SamplingMode::from_name(name), env, rng));
    }
    for (std::size_t b = 1; b < batches.size(); ++b)
        for (std::size_t i = 0; i < batches[0].trajectories.size(); ++i) {
            CHECK(batches[b].trajectories[i].states == batches[0].trajectories[i].states);
            CHECK(batches[b].trajectories[i].actions == batches[0].trajectories[i].actions);
            CHECK(batches[b].trajectories[i].rewards == batches[0].trajectories[i].rewards);
        }
}

TEST_CASE("identical members collapse step_rand, mean, and median exactly")
{
    EnvSpec env = line_env(6);
    std::vector<DynamicsModel> members(4, constant_offset_model(1, 1, 0.5));
    ModelEnsemble ensemble(std::move(members));
    GaussianPolicy policy = GaussianPolicy::make(1, 1, {8}, 23);
    std::vector<Eigen::VectorXd> inits = {Eigen::VectorXd::Constant(1, 1.0)};

    std::vector<TrajectoryBatch> batches;
    for (const char* name : {"step_rand", "model_mean", "model_med"}) {
        Rng rng(5);
        batches.push_back(simulate_fictitious(ensemble, policy, inits, 6,
                                              SamplingMode::from_name(name), env, rng));
    }
    CHECK(batches[1].trajectories[0].states == batches[0].trajectories[0].states);
    CHECK(batches[2].trajectories[0].states == batches[0].trajectories[0].states);
}

TEST_CASE("constant-offset members give hand-computed aggregate statistics")
{
    EnvSpec env = line_env(1);
    ModelEnsemble ensemble({constant_offset_model(1, 1, 1.0),
                            constant_offset_model(1, 1, 0.0),
                            constant_offset_model(1, 1, -1.0)});
    GaussianPolicy policy = GaussianPolicy::make(1, 1, {8}, 29);

    // Integer start states keep the mean arithmetic exact.
    std::vector<Eigen::VectorXd> inits(256, Eigen::VectorXd::Constant(1, 4.0));

    Rng rng_mean(1);
    TrajectoryBatch mean_batch = simulate_fictitious(
        ensemble, policy, inits, 1, SamplingMode::from_name("model_mean"), env, rng_mean);
    Rng rng_med(1);
    TrajectoryBatch med_batch = simulate_fictitious(
        ensemble, policy, inits, 1, SamplingMode::from_name("model_med"), env, rng_med);

    // One further step from each batch's internal state is not exposed, so
    // instead simulate horizon 2 and inspect the recorded second state.
    Rng rng_mean2(1);
    TrajectoryBatch two = simulate_fictitious(ensemble, policy, inits, 2,
                                              SamplingMode::from_name("model_mean"), env,
                                              rng_mean2);
    for (const Trajectory& tr : two.trajectories)
        CHECK(tr.states(0, 1) == 4.0); // offsets +1, 0, -1 average to zero

    Rng rng_med2(1);
    TrajectoryBatch two_med = simulate_fictitious(ensemble, policy, inits, 2,
                                                  SamplingMode::from_name("model_med"), env,
                                                  rng_med2);
    for (const Trajectory& tr : two_med.trajectories)
        CHECK(tr.states(0, 1) == 4.0); // median of {5, 4, 3}

    // model_mean_std: second state is 4 + sqrt(2/3) * xi with xi standard
    // normal, so the sample std over many trajectories approaches sqrt(2/3).
    Rng rng_std(1);
    TrajectoryBatch std_batch = simulate_fictitious(ensemble, policy, inits, 2,
                                                    SamplingMode::from_name("model_mean_std"),
                                                    env, rng_std);
    double acc = 0.0, acc2 = 0.0;
    for (const Trajectory& tr : std_batch.trajectories) {
        const double dev = tr.states(0, 1) - 4.0;
        acc += dev;
        acc2 += dev * dev;
    }
    const double n_traj = static_cast<double>(std_batch.trajectories.size());
    const double sample_std = std::sqrt(acc2 / n_traj - (acc / n_traj) * (acc / n_traj));
    CHECK(sample_std == doctest::Approx(std::sqrt(2.0 / 3.0)).epsilon(0.15));

    CHECK(mean_batch.trajectories.size() == 256);
    CHECK(med_batch.trajectories.size() == 256);
}

TEST_CASE("step_rand draws members uniformly (chi-squared)")
{
    EnvSpec env = line_env(40);
    std::vector<DynamicsModel> members;
    for (int k = 0; k < 5; ++k)
        members.push_back(constant_offset_model(1, 1, 0.0));
    ModelEnsemble ensemble(std::move(members));
    GaussianPolicy policy = GaussianPolicy::make(1, 1, {8}, 31);
    std::vector<Eigen::VectorXd> inits(250, Eigen::VectorXd::Zero(1));

    Rng rng(17);
    TrajectoryBatch batch = simulate_fictitious(ensemble, policy, inits, 40,
                                                SamplingMode::from_name("step_rand"), env, rng);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(5);
    for (const Trajectory& tr : batch.trajectories)
        for (int t = 0; t < tr.length(); ++t)
            counts(tr.model_indices(t)) += 1.0;
    const double total = counts.sum();
    CHECK(total == 10000.0);
    const double expected = total / 5.0;
    double chi2 = 0.0;
    for (int k = 0; k < 5; ++k)
        chi2 += (counts(k) - expected) * (counts(k) - expected) / expected;
    CHECK(chi2 < 18.47); // chi-squared 4 dof, p = 0.001
}

TEST_CASE("eps_rand holds one member per episode, one_model uses the designated one")
{
    EnvSpec env = line_env(12);
    std::vector<DynamicsModel> members;
    for (int k = 0; k < 3; ++k)
        members.push_back(constant_offset_model(1, 1, 0.1 * k));
    ModelEnsemble ensemble(std::move(members));
    GaussianPolicy policy = GaussianPolicy::make(1, 1, {8}, 37);
    std::vector<Eigen::VectorXd> inits(20, Eigen::VectorXd::Zero(1));

    Rng rng(23);
    TrajectoryBatch eps = simulate_fictitious(ensemble, policy, inits, 12,
                                              SamplingMode::from_name("eps_rand"), env, rng);
    bool saw_diff = false;
    for (const Trajectory& tr : eps.trajectories) {
        for (int t = 1; t < tr.length(); ++t)
            CHECK(tr.model_indices(t) == tr.model_indices(0));
        saw_diff = saw_diff || tr.model_indices(0) != eps.trajectories[0].model_indices(0);
    }
    CHECK(saw_diff);

    Rng rng2(23);
    TrajectoryBatch one = simulate_fictitious(ensemble, policy, inits, 12,
                                              SamplingMode::from_name("one_model", 2), env,
                                              rng2);
    for (const Trajectory& tr : one.trajectories)
        for (int t = 0; t < tr.length(); ++t)
            CHECK(tr.model_indices(t) == 2);
}

TEST_CASE("non-finite predictions truncate the affected trajectory")
{
    EnvSpec env = line_env(10);
    DynamicsModel bomb = constant_offset_model(1, 1, 0.0);
    Normalizer norm = Normalizer::identity(2, 1);
    norm.out_mean = Eigen::VectorXd::Constant(1, std::numeric_limits<double>::infinity());
    bomb.set_normalizer(norm);
    ModelEnsemble ensemble({bomb});
    GaussianPolicy policy = GaussianPolicy::make(1, 1, {8}, 41);
    std::vector<Eigen::VectorXd> inits(3, Eigen::VectorXd::Zero(1));

    Rng rng(2);
    int truncated = 0;
    TrajectoryBatch batch = simulate_fictitious(ensemble, policy, inits, 10,
                                                SamplingMode::from_name("one_model"), env, rng,
                                                &truncated);
    CHECK(truncated == 3);
    for (const Trajectory& tr : batch.trajectories)
        CHECK(tr.length() == 1); // the first step is kept, the next state is not
}

TEST_CASE("estimate_model_return oracle cases")
{
    EnvSpec env = line_env(5);
    ModelEnsemble ensemble({constant_offset_model(1, 1, 1.0)});
    GaussianPolicy policy = GaussianPolicy::make(1, 1, {8}, 43);

    // Zero reward function gives exactly zero.
    EnvSpec zero_env = env;
    zero_env.reward = [](const Eigen::VectorXd&, const Eigen::VectorXd&) { return 0.0; };
    std::vector<Eigen::VectorXd> inits = {Eigen::VectorXd::Zero(1),
                                          Eigen::VectorXd::Constant(1, 3.0)};
    Rng rng(3);
    CHECK(estimate_model_return(ensemble.member(0), policy, inits, 5, zero_env, rng) == 0.0);

    // Horizon 1: mean over initial states of r(s0, a0); reward ignores a.
    Rng rng2(3);
    const double h1 = estimate_model_return(ensemble.member(0), policy, inits, 1, env, rng2);
    CHECK(h1 == doctest::Approx(1.5).epsilon(1e-12));

    // Deterministic policy in the s+1 model: scripted rollout oracle.
    GaussianPolicy det = policy;
    det.log_std().setConstant(-40.0); // effectively zero std
    Rng rng3(9);
    const double got = estimate_model_return(ensemble.member(0), det, inits, 5, env, rng3);
    double want = 0.0;
    for (const auto& s0 : inits)
        for (int t = 0; t < 5; ++t)
            want += s0(0) + t; // states march s0, s0+1, ...
    want /= 2.0;
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("gaussian-policy evaluation honors the deterministic flag")
{
    EnvSpec env = make_env("pendulum");
    GaussianPolicy policy = GaussianPolicy::make(3, 1, {16}, 47);
    Rng rng_a(5), rng_b(6);
    ReturnStats a = evaluate_real_return(env, policy, 3, rng_a, true);
    // Different rng, same deterministic policy: identical per-episode draws
    // differ only through the initial states.
    ReturnStats b = evaluate_real_return(env, policy, 3, rng_b, true);
    CHECK(a.episodes == 3);
    CHECK(std::isfinite(a.mean));
    CHECK(std::isfinite(b.mean));

    Rng rng_c(5), rng_d(5);
    ReturnStats c = evaluate_real_return(env, policy, 3, rng_c, false);
    ReturnStats d = evaluate_real_return(env, policy, 3, rng_d, false);
    CHECK(c.mean == d.mean);
}
