#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "metrpo/dataset.hpp"
#include "metrpo/normalizer.hpp"
#include "metrpo/rng.hpp"

using namespace metrpo;

namespace {

Episode one_step_episode(double v)
{
    Transition tr;
    tr.s = Eigen::VectorXd::Constant(1, v);
    tr.a = Eigen::VectorXd::Constant(1, 0.5 * v);
    tr.s_next = Eigen::VectorXd::Constant(1, v + 1.0);
    return {tr};
}

std::vector<Episode> make_episodes(int count, double base = 0.0)
{
    std::vector<Episode> eps;
    for (int i = 0; i < count; ++i)
        eps.push_back(one_step_episode(base + i));
    return eps;
}

} // namespace

TEST_CASE("15 episodes split 10 train / 5 validation")
{
    Dataset data = split_dataset(make_episodes(15), 7);
    CHECK(data.train_episodes().size() == 10);
    CHECK(data.validation_episodes().size() == 5);
}

TEST_CASE("3 episodes split 2 train / 1 validation")
{
    Dataset data = split_dataset(make_episodes(3), 7);
    CHECK(data.train_episodes().size() == 2);
    CHECK(data.validation_episodes().size() == 1);
}

TEST_CASE("fewer than 3 episodes cannot be split")
{
    CHECK_THROWS_AS(split_dataset(make_episodes(2), 7), std::invalid_argument);
}

TEST_CASE("split assignment persists as episodes accumulate")
{
    Dataset incremental(99);
    std::vector<bool> first_assignment;
    for (int wave = 0; wave < 5; ++wave) {
        incremental.add_episodes(make_episodes(3, wave * 10.0));
        if (wave == 0)
            for (int g = 0; g < 3; ++g)
                first_assignment.push_back(incremental.is_validation_index(g));
    }
    // Old indices keep their original split after 4 more waves arrived.
    for (int g = 0; g < 3; ++g)
        CHECK(incremental.is_validation_index(g) == first_assignment[static_cast<std::size_t>(g)]);

    // Same episodes in one shot give the identical split.
    Dataset oneshot(99);
    for (int wave = 0; wave < 5; ++wave)
        oneshot.add_episodes(make_episodes(3, wave * 10.0));
    for (int g = 0; g < 15; ++g)
        CHECK(oneshot.is_validation_index(g) == incremental.is_validation_index(g));
    CHECK(incremental.train_episodes().size() == 10);
}

TEST_CASE("different split seeds give different assignments somewhere")
{
    Dataset a(1), b(2);
    a.add_episodes(make_episodes(30));
    b.add_episodes(make_episodes(30));
    bool any_diff = false;
    for (int g = 0; g < 30; ++g)
        any_diff = any_diff || (a.is_validation_index(g) != b.is_validation_index(g));
    CHECK(any_diff);
}

TEST_CASE("dataset csv uses the documented header")
{
    Dataset data = split_dataset(make_episodes(3), 7);
    const auto dir = std::filesystem::temp_directory_path() / "metrpo_dataset_test";
    data.save_csv(dir.string());

    std::ifstream in(dir / "dataset_train.csv");
    std::string header;
    std::getline(in, header);
    CHECK(header == "s_0,a_0,snext_0");
    std::filesystem::remove_all(dir);
}

TEST_CASE("normalizer handles a constant dataset with the std floor")
{
    std::vector<Transition> transitions(5, one_step_episode(3.0)[0]);
    Normalizer norm = Normalizer::fit(transitions);
    CHECK(norm.in_mean(0) == doctest::Approx(3.0));
    CHECK(norm.in_mean(1) == doctest::Approx(1.5));
    CHECK(norm.in_std(0) == Normalizer::kStdFloor);
    CHECK(norm.out_mean(0) == doctest::Approx(1.0));
    CHECK(norm.out_std(0) == Normalizer::kStdFloor);
}

TEST_CASE("normalizer two-point statistics")
{
    // Inputs {0, 2} on one dimension: mean 1, population std 1.
    Transition lo, hi;
    lo.s = Eigen::VectorXd::Constant(1, 0.0);
    hi.s = Eigen::VectorXd::Constant(1, 2.0);
    lo.a = hi.a = Eigen::VectorXd::Zero(1);
    lo.s_next = Eigen::VectorXd::Constant(1, 0.0);
    hi.s_next = Eigen::VectorXd::Constant(1, 2.0);
    Normalizer norm = Normalizer::fit({lo, hi});
    CHECK(norm.in_mean(0) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(norm.in_std(0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("normalizer matches a loop oracle on random data")
{
    Rng rng(21);
    std::vector<Transition> transitions;
    for (int i = 0; i < 200; ++i) {
        Transition tr;
        tr.s = rng.normal_vector(3) * 2.0;
        tr.a = rng.normal_vector(2);
        tr.s_next = tr.s + rng.normal_vector(3) * 0.3;
        transitions.push_back(tr);
    }
    Normalizer norm = Normalizer::fit(transitions);

    // Loop oracle over the input's first dimension and the output's last.
    double mean_s0 = 0.0, mean_d2 = 0.0;
    for (const auto& tr : transitions) {
        mean_s0 += tr.s(0);
        mean_d2 += tr.s_next(2) - tr.s(2);
    }
    mean_s0 /= 200.0;
    mean_d2 /= 200.0;
    double var_s0 = 0.0, var_d2 = 0.0;
    for (const auto& tr : transitions) {
        var_s0 += (tr.s(0) - mean_s0) * (tr.s(0) - mean_s0);
        const double d = tr.s_next(2) - tr.s(2) - mean_d2;
        var_d2 += d * d;
    }
    CHECK(norm.in_mean(0) == doctest::Approx(mean_s0).epsilon(1e-12));
    CHECK(norm.in_std(0) == doctest::Approx(std::sqrt(var_s0 / 200.0)).epsilon(1e-12));
    CHECK(norm.out_mean(2) == doctest::Approx(mean_d2).epsilon(1e-12));
    CHECK(norm.out_std(2) == doctest::Approx(std::sqrt(var_d2 / 200.0)).epsilon(1e-12));
}

TEST_CASE("normalizer rejects an empty dataset")
{
    CHECK_THROWS_AS(Normalizer::fit({}), std::invalid_argument);
}

TEST_CASE("normalize / denormalize round-trip")
{
    Rng rng(5);
    std::vector<Transition> transitions;
    for (int i = 0; i < 50; ++i) {
        Transition tr;
        tr.s = rng.normal_vector(2);
        tr.a = rng.normal_vector(1);
        tr.s_next = tr.s + rng.normal_vector(2);
        transitions.push_back(tr);
    }
    Normalizer norm = Normalizer::fit(transitions);
    Eigen::MatrixXd delta = rng.normal_matrix(2, 7);
    Eigen::MatrixXd back = norm.denormalize_output(norm.normalize_output(delta));
    CHECK((back - delta).cwiseAbs().maxCoeff() < 1e-12);
}
