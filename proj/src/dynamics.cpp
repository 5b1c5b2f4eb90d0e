#include "metrpo/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <stdexcept>
#include <thread>

#include "metrpo/adam.hpp"
#include "metrpo/checkpoint.hpp"

namespace metrpo {

namespace {

// Packs transitions into input/target matrices (columns are samples).
void pack(const std::vector<Transition>& transitions, Eigen::MatrixXd& inputs,
          Eigen::MatrixXd& deltas)
{
    const Eigen::Index n = transitions.front().s.size();
    const Eigen::Index m = transitions.front().a.size();
    const Eigen::Index count = static_cast<Eigen::Index>(transitions.size());
    inputs.resize(n + m, count);
    deltas.resize(n, count);
    for (Eigen::Index i = 0; i < count; ++i) {
        inputs.col(i).head(n) = transitions[static_cast<std::size_t>(i)].s;
        inputs.col(i).tail(m) = transitions[static_cast<std::size_t>(i)].a;
        deltas.col(i) = transitions[static_cast<std::size_t>(i)].s_next -
                        transitions[static_cast<std::size_t>(i)].s;
    }
}

} // namespace

DynamicsModel DynamicsModel::make(int state_dim, int action_dim,
                                  const std::vector<int>& hidden, std::uint64_t seed,
                                  Activation hidden_act)
{
    DynamicsModel model;
    model.state_dim_ = state_dim;
    model.action_dim_ = action_dim;
    model.seed_ = seed;
    std::vector<int> sizes;
    sizes.push_back(state_dim + action_dim);
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(state_dim);
    Rng rng(seed);
    model.net_ = Mlp::random(sizes, hidden_act, Activation::kIdentity, rng);
    model.norm_ = Normalizer::identity(state_dim + action_dim, state_dim);
    return model;
}

Eigen::VectorXd DynamicsModel::predict_next(const Eigen::VectorXd& s,
                                            const Eigen::VectorXd& a) const
{
    Eigen::VectorXd next = predict_next_batch(s, a).col(0);
    if (!next.allFinite())
        throw std::runtime_error("DynamicsModel::predict_next: non-finite prediction");
    return next;
}

Eigen::MatrixXd DynamicsModel::predict_next_batch(const Eigen::MatrixXd& states,
                                                  const Eigen::MatrixXd& actions) const
{
    if (states.rows() != state_dim_ || actions.rows() != action_dim_ ||
        states.cols() != actions.cols())
        throw std::invalid_argument("DynamicsModel::predict_next_batch: shape mismatch");
    Eigen::MatrixXd input(state_dim_ + action_dim_, states.cols());
    input.topRows(state_dim_) = states;
    input.bottomRows(action_dim_) = actions;
    return states + norm_.denormalize_output(net_.apply(norm_.normalize_input(input)));
}

DynamicsModel::Trace DynamicsModel::forward_trace(const Eigen::MatrixXd& states,
                                                  const Eigen::MatrixXd& actions) const
{
    Eigen::MatrixXd input(state_dim_ + action_dim_, states.cols());
    input.topRows(state_dim_) = states;
    input.bottomRows(action_dim_) = actions;
    Trace trace;
    trace.net_trace = net_.forward(norm_.normalize_input(input));
    return trace;
}

Eigen::MatrixXd DynamicsModel::prediction_from_trace(const Eigen::MatrixXd& states,
                                                     const Trace& trace) const
{
    return states + norm_.denormalize_output(net_.output_of(trace.net_trace));
}

DynamicsModel::InputGrads DynamicsModel::backward_inputs(const Trace& trace,
                                                         const Eigen::MatrixXd& upstream) const
{
    // s' = s + out_std . net(z) + out_mean,  z = ((s,a) - in_mean) / in_std
    Eigen::MatrixXd net_upstream =
        (upstream.array().colwise() * norm_.out_std.array()).matrix();
    Mlp::Backward back = net_.backward(trace.net_trace, net_upstream, false);
    Eigen::MatrixXd gin =
        (back.input.array().colwise() / norm_.in_std.array()).matrix();
    InputGrads grads;
    grads.ds = upstream + gin.topRows(state_dim_);
    grads.da = gin.bottomRows(action_dim_);
    return grads;
}

void DynamicsModel::save(const std::string& base_path, const nlohmann::json& extra_meta) const
{
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;
    for (int l = 0; l < net_.layer_count(); ++l) {
        tensors.emplace_back("net.w" + std::to_string(l), net_.weight(l));
        tensors.emplace_back("net.b" + std::to_string(l), net_.bias(l));
    }
    tensors.emplace_back("norm.in_mean", norm_.in_mean);
    tensors.emplace_back("norm.in_std", norm_.in_std);
    tensors.emplace_back("norm.out_mean", norm_.out_mean);
    tensors.emplace_back("norm.out_std", norm_.out_std);

    nlohmann::json meta = extra_meta;
    meta["kind"] = "dynamics_model";
    meta["state_dim"] = state_dim_;
    meta["action_dim"] = action_dim_;
    meta["seed"] = seed_;
    meta["layer_sizes"] = net_.layer_sizes();
    meta["hidden_activation"] = activation_name(net_.hidden_activation());
    meta["output_activation"] = activation_name(net_.output_activation());
    save_checkpoint(base_path, tensors, meta);
}

DynamicsModel DynamicsModel::load(const std::string& base_path)
{
    Checkpoint ckpt = load_checkpoint(base_path);
    DynamicsModel model;
    model.state_dim_ = ckpt.meta.at("state_dim");
    model.action_dim_ = ckpt.meta.at("action_dim");
    model.seed_ = ckpt.meta.at("seed");
    std::vector<int> sizes = ckpt.meta.at("layer_sizes");
    model.net_ = Mlp(sizes, activation_from_name(ckpt.meta.at("hidden_activation")),
                     activation_from_name(ckpt.meta.at("output_activation")));
    for (int l = 0; l < model.net_.layer_count(); ++l) {
        model.net_.weight(l) = ckpt.mat("net.w" + std::to_string(l));
        model.net_.bias(l) = ckpt.vec("net.b" + std::to_string(l));
    }
    model.norm_.in_mean = ckpt.vec("norm.in_mean");
    model.norm_.in_std = ckpt.vec("norm.in_std");
    model.norm_.out_mean = ckpt.vec("norm.out_mean");
    model.norm_.out_std = ckpt.vec("norm.out_std");
    return model;
}

FitReport train_model(DynamicsModel& model, const Dataset& data, const ModelTrainConfig& cfg,
                      Rng rng)
{
    const std::vector<Transition> train = data.train_flat();
    const std::vector<Transition> val = data.validation_flat();
    if (train.empty() || val.empty())
        throw std::invalid_argument("train_model: both splits must be nonempty");

    model.set_normalizer(Normalizer::fit(train));
    const Normalizer& norm = model.normalizer();

    Eigen::MatrixXd train_in_raw, train_delta;
    pack(train, train_in_raw, train_delta);
    const Eigen::MatrixXd train_in = norm.normalize_input(train_in_raw);
    const Eigen::MatrixXd train_target = norm.normalize_output(train_delta);

    Eigen::MatrixXd val_in_raw, val_delta;
    pack(val, val_in_raw, val_delta);
    const Eigen::MatrixXd val_in = norm.normalize_input(val_in_raw);
    const Eigen::MatrixXd val_target = norm.normalize_output(val_delta);

    const Eigen::Index n_train = train_in.cols();
    const int batch = std::min<int>(cfg.batch_size, static_cast<int>(n_train));

    Eigen::VectorXd params = model.net().flat_params();
    AdamConfig adam_cfg;
    adam_cfg.learning_rate = cfg.learning_rate;
    AdamState adam(static_cast<int>(params.size()), adam_cfg);

    FitReport report;
    Eigen::VectorXd best_params = params;
    double best_raw = std::numeric_limits<double>::infinity();

    auto run_validation = [&](int pass) {
        Eigen::MatrixXd pred = model.net().apply(val_in);
        const double normalized =
            (pred - val_target).colwise().squaredNorm().mean();
        const double raw = (norm.denormalize_output(pred) - val_delta)
                               .colwise()
                               .squaredNorm()
                               .mean();
        if (!std::isfinite(raw))
            throw std::runtime_error("train_model: non-finite validation loss at pass " +
                                     std::to_string(pass));
        ValidationCheck check;
        check.pass = pass;
        check.raw_loss = raw;
        check.normalized_loss = normalized;
        bool improved = !std::isfinite(best_raw);
        if (!improved) {
            const double margin =
                std::max(cfg.min_improvement_abs, cfg.min_improvement_rel * best_raw);
            improved = raw < best_raw - margin;
        }
        if (improved) {
            best_raw = raw;
            best_params = model.net().flat_params();
            report.best_pass = pass;
            report.best_raw_loss = raw;
            report.best_normalized_loss = normalized;
            check.improved = true;
        }
        report.checks.push_back(check);
        return check;
    };

    run_validation(0);

    int pass = 0;
    while (pass < cfg.max_passes) {
        // One pass over the shuffled train split.
        const std::vector<int> order = rng.permutation(static_cast<int>(n_train));
        double train_loss_acc = 0.0;
        Eigen::Index done = 0;
        while (done < n_train) {
            const Eigen::Index take = std::min<Eigen::Index>(batch, n_train - done);
            Eigen::MatrixXd xb(train_in.rows(), take);
            Eigen::MatrixXd yb(train_target.rows(), take);
            for (Eigen::Index i = 0; i < take; ++i) {
                xb.col(i) = train_in.col(order[static_cast<std::size_t>(done + i)]);
                yb.col(i) = train_target.col(order[static_cast<std::size_t>(done + i)]);
            }
            Mlp::Trace trace = model.net().forward(xb);
            const Eigen::MatrixXd err = model.net().output_of(trace) - yb;
            const double loss = err.colwise().squaredNorm().mean();
            if (!std::isfinite(loss))
                throw std::runtime_error("train_model: non-finite train loss at pass " +
                                         std::to_string(pass));
            train_loss_acc += loss * static_cast<double>(take);

            Mlp::Backward back =
                model.net().backward(trace, 2.0 * err / static_cast<double>(take));
            adam.step(params, back.params.flat);
            model.net().set_flat_params(params);
            done += take;
        }
        report.final_train_loss = train_loss_acc / static_cast<double>(n_train);
        ++pass;

        if (pass % cfg.check_every_passes == 0) {
            run_validation(pass);
            if (pass - report.best_pass >= cfg.patience_passes)
                break;
        }
    }

    report.final_pass = pass;
    model.net().set_flat_params(best_params);
    return report;
}

ModelEnsemble make_ensemble(int count, int state_dim, int action_dim,
                            const std::vector<int>& hidden, Rng& rng)
{
    if (count < 1)
        throw std::invalid_argument("make_ensemble: need at least one member");
    std::vector<DynamicsModel> members;
    members.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k)
        members.push_back(DynamicsModel::make(state_dim, action_dim, hidden, rng.next_u64()));
    return ModelEnsemble(std::move(members));
}

std::vector<FitReport> fit_ensemble(ModelEnsemble& ensemble, const Dataset& data,
                                    const ModelTrainConfig& cfg, Rng& rng, int threads)
{
    const int count = ensemble.size();
    std::vector<FitReport> reports(static_cast<std::size_t>(count));
    std::vector<Rng> streams;
    streams.reserve(static_cast<std::size_t>(count));
    for (int k = 0; k < count; ++k)
        streams.emplace_back(rng.next_u64());

    std::exception_ptr first_error;
    std::mutex error_mutex;
    auto worker = [&](int k) {
        try {
            reports[static_cast<std::size_t>(k)] =
                train_model(ensemble.member(k), data, cfg, streams[static_cast<std::size_t>(k)]);
        } catch (...) {
            std::lock_guard<std::mutex> lock(error_mutex);
            if (!first_error)
                first_error = std::current_exception();
        }
    };

    if (threads <= 1 || count == 1) {
        for (int k = 0; k < count; ++k)
            worker(k);
    } else {
        int next = 0;
        while (next < count) {
            const int wave = std::min(threads, count - next);
            std::vector<std::thread> pool;
            for (int i = 0; i < wave; ++i)
                pool.emplace_back(worker, next + i);
            for (std::thread& t : pool)
                t.join();
            next += wave;
        }
    }
    if (first_error)
        std::rethrow_exception(first_error);
    return reports;
}

ModelEnsemble train_ensemble(int count, const Dataset& data, const ModelTrainConfig& cfg,
                             Rng& rng, int threads, std::vector<FitReport>* reports)
{
    const std::vector<Transition> train = data.train_flat();
    if (train.empty())
        throw std::invalid_argument("train_ensemble: empty training split");
    const int n = static_cast<int>(train.front().s.size());
    const int m = static_cast<int>(train.front().a.size());
    ModelEnsemble ensemble = make_ensemble(count, n, m, cfg.hidden, rng);
    std::vector<FitReport> local = fit_ensemble(ensemble, data, cfg, rng, threads);
    if (reports)
        *reports = std::move(local);
    return ensemble;
}

double validation_rmse(const DynamicsModel& model, const Dataset& data)
{
    const std::vector<Transition> val = data.validation_flat();
    if (val.empty())
        throw std::invalid_argument("validation_rmse: empty validation split");
    Eigen::MatrixXd in_raw, delta;
    pack(val, in_raw, delta);
    const Eigen::Index n = delta.rows();
    Eigen::MatrixXd pred = model.predict_next_batch(in_raw.topRows(n), in_raw.bottomRows(
                               in_raw.rows() - n));
    Eigen::MatrixXd truth = in_raw.topRows(n) + delta;
    const double mse = (pred - truth).squaredNorm() /
                       static_cast<double>(pred.size());
    return std::sqrt(mse);
}

} // namespace metrpo
