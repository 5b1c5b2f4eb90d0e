#include <doctest.h>

#include <Eigen/Dense>

#include <cmath>

#include "metrpo/dynamics.hpp"
#include "test_util.hpp"

using namespace metrpo;

namespace {

// Realizable linear system s' = s + 0.1 a, two state and two action dims.
std::vector<Episode> linear_system(int episodes, int steps, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Episode> eps;
    for (int e = 0; e < episodes; ++e) {
        Episode ep;
        Eigen::VectorXd s = rng.normal_vector(2);
        for (int t = 0; t < steps; ++t) {
            Transition tr;
            tr.s = s;
            tr.a = Eigen::VectorXd(2);
            tr.a << rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0);
            tr.s_next = s + 0.1 * tr.a;
            ep.push_back(tr);
            s = tr.s_next;
        }
        eps.push_back(ep);
    }
    return eps;
}

ModelTrainConfig small_config()
{
    ModelTrainConfig cfg;
    cfg.hidden = {32, 32};
    cfg.max_passes = 200;
    return cfg;
}

} // namespace

TEST_CASE("linear system is learnable to small held-out error")
{
    Dataset data = split_dataset(linear_system(100, 50, 3), 11);
    REQUIRE(data.transition_count() == 5000);

    // Least-squares oracle first: the system is exactly realizable, so the
    // affine fit on (s, a) -> delta has essentially zero residual.
    const auto train = data.train_flat();
    Eigen::MatrixXd design(train.size(), 5);
    Eigen::MatrixXd target(train.size(), 2);
    for (std::size_t i = 0; i < train.size(); ++i) {
        design.row(static_cast<Eigen::Index>(i)) << train[i].s(0), train[i].s(1),
            train[i].a(0), train[i].a(1), 1.0;
        target.row(static_cast<Eigen::Index>(i)) = (train[i].s_next - train[i].s).transpose();
    }
    Eigen::MatrixXd coef = design.colPivHouseholderQr().solve(target);
    const double lstsq_residual = (design * coef - target).norm() / std::sqrt(double(train.size()));
    CHECK(lstsq_residual < 1e-10);

    DynamicsModel model = DynamicsModel::make(2, 2, small_config().hidden, 42);
    FitReport report = train_model(model, data, small_config(), Rng(7));
    CHECK(validation_rmse(model, data) < 1e-2);
    CHECK(report.best_raw_loss <= report.checks.back().raw_loss + 1e-15);
}

TEST_CASE("zero-delta dataset: immediate tiny loss, early stop within 30 passes")
{
    std::vector<Episode> eps = linear_system(30, 20, 5);
    for (Episode& ep : eps)
        for (Transition& tr : ep)
            tr.s_next = tr.s;
    Dataset data = split_dataset(eps, 2);

    DynamicsModel model = DynamicsModel::make(2, 2, {32, 32}, 1);
    FitReport report = train_model(model, data, small_config(), Rng(3));

    CHECK(report.checks.front().raw_loss < 1e-9); // degenerate targets collapse via the std floor
    CHECK(report.final_pass <= 30);
    CHECK(report.final_pass - report.best_pass >= small_config().patience_passes);
}

TEST_CASE("early stopping halts within patience + check granularity of the best pass")
{
    Dataset data = split_dataset(linear_system(30, 30, 9), 4);
    ModelTrainConfig cfg = small_config();
    cfg.max_passes = 400;
    DynamicsModel model = DynamicsModel::make(2, 2, cfg.hidden, 8);
    FitReport report = train_model(model, data, cfg, Rng(8));
    if (report.final_pass < cfg.max_passes) {
        CHECK(report.final_pass - report.best_pass <=
              cfg.patience_passes + cfg.check_every_passes);
    }
    // The restored parameters reproduce the best validation loss.
    const double restored =
        std::pow(validation_rmse(model, data), 2) * model.state_dim();
    CHECK(restored == doctest::Approx(report.best_raw_loss).epsilon(1e-9));
}

TEST_CASE("two seeds give distinct parameters with comparable validation losses")
{
    Dataset data = split_dataset(linear_system(60, 40, 13), 6);
    ModelTrainConfig cfg = small_config();

    DynamicsModel m1 = DynamicsModel::make(2, 2, cfg.hidden, 1);
    DynamicsModel m2 = DynamicsModel::make(2, 2, cfg.hidden, 2);
    FitReport r1 = train_model(m1, data, cfg, Rng(1));
    FitReport r2 = train_model(m2, data, cfg, Rng(2));

    CHECK((m1.net().flat_params() - m2.net().flat_params()).norm() > 0.0);
    const double lo = std::min(r1.best_raw_loss, r2.best_raw_loss);
    const double hi = std::max(r1.best_raw_loss, r2.best_raw_loss);
    CHECK(hi <= 2.0 * lo);
}

TEST_CASE("zero final layer predicts the current state (plus the output mean)")
{
    DynamicsModel model = DynamicsModel::make(3, 1, {8, 8}, 4);
    const int last = model.net().layer_count() - 1;
    model.net().weight(last).setZero();
    model.net().bias(last).setZero();

    Eigen::VectorXd s(3);
    s << 0.4, -1.0, 2.0;
    Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 0.3);
    CHECK((model.predict_next(s, a) - s).cwiseAbs().maxCoeff() == 0.0);

    Normalizer shifted = Normalizer::identity(4, 3);
    shifted.out_mean << 1.0, 2.0, 3.0;
    model.set_normalizer(shifted);
    Eigen::VectorXd next = model.predict_next(s, a);
    CHECK((next - (s + shifted.out_mean)).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("trained model predicts a training point within 3x validation RMSE")
{
    Dataset data = split_dataset(linear_system(60, 40, 17), 3);
    DynamicsModel model = DynamicsModel::make(2, 2, {32, 32}, 5);
    train_model(model, data, small_config(), Rng(5));
    const double rmse = validation_rmse(model, data);

    const Transition tr = data.train_flat().front();
    const Eigen::VectorXd pred = model.predict_next(tr.s, tr.a);
    const double err = (pred - tr.s_next).norm() / std::sqrt(2.0);
    CHECK(err < 3.0 * rmse);
}

TEST_CASE("normalization absorbs a global state rescaling")
{
    std::vector<Episode> eps = linear_system(40, 30, 23);
    std::vector<Episode> scaled = eps;
    for (Episode& ep : scaled)
        for (Transition& tr : ep) {
            tr.s *= 100.0;
            tr.s_next *= 100.0;
        }

    ModelTrainConfig cfg = small_config();
    DynamicsModel m1 = DynamicsModel::make(2, 2, cfg.hidden, 9);
    DynamicsModel m2 = DynamicsModel::make(2, 2, cfg.hidden, 9);
    FitReport r1 = train_model(m1, split_dataset(eps, 5), cfg, Rng(9));
    FitReport r2 = train_model(m2, split_dataset(scaled, 5), cfg, Rng(9));

    CHECK(r2.best_normalized_loss ==
          doctest::Approx(r1.best_normalized_loss).epsilon(0.10));
}

TEST_CASE("ensemble members differ by seed but all learn the linear system")
{
    Dataset data = split_dataset(linear_system(100, 50, 29), 8);
    ModelTrainConfig cfg = small_config();
    Rng rng(1234);
    ModelEnsemble ensemble = train_ensemble(5, data, cfg, rng, 2);

    for (int i = 0; i < ensemble.size(); ++i) {
        CHECK(validation_rmse(ensemble.member(i), data) < 1e-2);
        for (int j = i + 1; j < ensemble.size(); ++j) {
            const double dist = (ensemble.member(i).net().flat_params() -
                                 ensemble.member(j).net().flat_params())
                                    .norm();
            CHECK(dist > 0.0);
        }
    }
}

TEST_CASE("K=1 ensemble training equals a single train_model call")
{
    Dataset data = split_dataset(linear_system(30, 20, 31), 2);
    ModelTrainConfig cfg = small_config();
    cfg.max_passes = 40;

    Rng rng_a(777);
    ModelEnsemble ensemble = train_ensemble(1, data, cfg, rng_a, 1);

    // Replicate the exact seed draws train_ensemble makes.
    Rng rng_b(777);
    const std::uint64_t init_seed = rng_b.next_u64();
    const std::uint64_t shuffle_seed = rng_b.next_u64();
    DynamicsModel solo = DynamicsModel::make(2, 2, cfg.hidden, init_seed);
    train_model(solo, data, cfg, Rng(shuffle_seed));

    CHECK(ensemble.member(0).net().flat_params() == solo.net().flat_params());
}

TEST_CASE("ensemble disagreement grows off-distribution")
{
    Dataset data = split_dataset(linear_system(60, 40, 37), 12);
    ModelTrainConfig cfg = small_config();
    cfg.max_passes = 120;
    Rng rng(55);
    ModelEnsemble ensemble = train_ensemble(3, data, cfg, rng, 2);

    auto disagreement = [&](const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) {
        std::vector<Eigen::MatrixXd> preds;
        for (int k = 0; k < ensemble.size(); ++k)
            preds.push_back(ensemble.member(k).predict_next_batch(states, actions));
        Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(preds[0].rows(), preds[0].cols());
        for (const auto& p : preds)
            mean += p;
        mean /= double(preds.size());
        double acc = 0.0;
        for (const auto& p : preds)
            acc += (p - mean).squaredNorm();
        return acc / double(preds.size() * preds[0].size());
    };

    const auto val = data.validation_flat();
    const int count = std::min<int>(150, static_cast<int>(val.size()));
    Eigen::MatrixXd states(2, count), actions(2, count);
    for (int i = 0; i < count; ++i) {
        states.col(i) = val[static_cast<std::size_t>(i)].s;
        actions.col(i) = val[static_cast<std::size_t>(i)].a;
    }
    const double near = disagreement(states, actions);
    const double far = disagreement(10.0 * states.array() + 25.0, actions);
    CHECK(far > near);
}

TEST_CASE("model checkpoints round-trip through disk")
{
    Dataset data = split_dataset(linear_system(12, 10, 41), 1);
    ModelTrainConfig cfg = small_config();
    cfg.max_passes = 20;
    DynamicsModel model = DynamicsModel::make(2, 2, cfg.hidden, 3);
    train_model(model, data, cfg, Rng(3));

    const std::string base =
        (std::filesystem::temp_directory_path() / "metrpo_dyn_ckpt").string();
    model.save(base);
    DynamicsModel loaded = DynamicsModel::load(base);

    Eigen::VectorXd s(2), a(2);
    s << 0.3, -0.8;
    a << 0.5, 0.1;
    CHECK(loaded.predict_next(s, a) == model.predict_next(s, a));
    std::filesystem::remove(base + ".json");
    std::filesystem::remove(base + ".bin");
}
