#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "metrpo/dataset.hpp"
#include "metrpo/mlp.hpp"
#include "metrpo/normalizer.hpp"
#include "metrpo/rng.hpp"

namespace metrpo {

struct ModelTrainConfig {
    std::vector<int> hidden = {256, 256};
    double learning_rate = 1e-3;
    int batch_size = 1000;
    int check_every_passes = 5;   // validation cadence, in passes over the train split
    int patience_passes = 25;     // stop when no improvement for this many passes
    int max_passes = 300;
    // An improvement must beat the best raw validation loss by this margin,
    // otherwise plateau oscillation would reset the patience forever.
    double min_improvement_rel = 1e-5;
    double min_improvement_abs = 1e-12;
};

struct ValidationCheck {
    int pass = 0;
    double raw_loss = 0.0;        // mean ||s' - predicted s'||^2 on the validation split
    double normalized_loss = 0.0; // same in whitened target space
    bool improved = false;
};

struct FitReport {
    std::vector<ValidationCheck> checks;
    int best_pass = 0;
    int final_pass = 0;
    double best_raw_loss = 0.0;
    double best_normalized_loss = 0.0;
    double final_train_loss = 0.0;
};

// One delta-state regressor: predicts s' = s + denorm(net(norm(s, a))).
class DynamicsModel {
public:
    DynamicsModel() = default;

    static DynamicsModel make(int state_dim, int action_dim, const std::vector<int>& hidden,
                              std::uint64_t seed, Activation hidden_act = Activation::kRelu);

    int state_dim() const { return state_dim_; }
    int action_dim() const { return action_dim_; }
    std::uint64_t seed() const { return seed_; }

    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }
    const Normalizer& normalizer() const { return norm_; }
    void set_normalizer(Normalizer norm) { norm_ = std::move(norm); }

    // Throws std::runtime_error on non-finite prediction.
    Eigen::VectorXd predict_next(const Eigen::VectorXd& s, const Eigen::VectorXd& a) const;
    // Batched (columns are samples); finiteness is the caller's concern.
    Eigen::MatrixXd predict_next_batch(const Eigen::MatrixXd& states,
                                       const Eigen::MatrixXd& actions) const;

    // Differentiation support for chaining through time. `upstream` is
    // dJ/ds' per column; the result is dJ/ds and dJ/da including the
    // normalization chain and the identity skip connection.
    struct Trace {
        Mlp::Trace net_trace;
    };
    Trace forward_trace(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) const;
    Eigen::MatrixXd prediction_from_trace(const Eigen::MatrixXd& states,
                                          const Trace& trace) const;
    struct InputGrads {
        Eigen::MatrixXd ds;
        Eigen::MatrixXd da;
    };
    InputGrads backward_inputs(const Trace& trace, const Eigen::MatrixXd& upstream) const;

    void save(const std::string& base_path, const nlohmann::json& extra_meta = {}) const;
    static DynamicsModel load(const std::string& base_path);

private:
    int state_dim_ = 0;
    int action_dim_ = 0;
    std::uint64_t seed_ = 0;
    Mlp net_;
    Normalizer norm_;
};

// Minimizes the mean squared one-step error over the train split with Adam,
// checking the validation loss every `check_every_passes` passes and
// restoring the best-validation snapshot when patience runs out. The rng
// drives minibatch shuffling only.
FitReport train_model(DynamicsModel& model, const Dataset& data, const ModelTrainConfig& cfg,
                      Rng rng);

class ModelEnsemble {
public:
    ModelEnsemble() = default;
    explicit ModelEnsemble(std::vector<DynamicsModel> members)
        : members_(std::move(members))
    {
    }

    int size() const { return static_cast<int>(members_.size()); }
    DynamicsModel& member(int k) { return members_.at(static_cast<std::size_t>(k)); }
    const DynamicsModel& member(int k) const
    {
        return members_.at(static_cast<std::size_t>(k));
    }
    std::vector<DynamicsModel>& members() { return members_; }
    const std::vector<DynamicsModel>& members() const { return members_; }

private:
    std::vector<DynamicsModel> members_;
};

// K freshly initialized members with seeds drawn from `rng`.
ModelEnsemble make_ensemble(int count, int state_dim, int action_dim,
                            const std::vector<int>& hidden, Rng& rng);

// Trains every member on the same dataset with independently seeded
// minibatch streams; members may train on parallel threads.
std::vector<FitReport> fit_ensemble(ModelEnsemble& ensemble, const Dataset& data,
                                    const ModelTrainConfig& cfg, Rng& rng, int threads = 1);

// Convenience: create and train in one go (dimensions taken from the data).
ModelEnsemble train_ensemble(int count, const Dataset& data, const ModelTrainConfig& cfg,
                             Rng& rng, int threads = 1,
                             std::vector<FitReport>* reports = nullptr);

// Held-out one-step RMSE per state dimension (raw units).
double validation_rmse(const DynamicsModel& model, const Dataset& data);

} // namespace metrpo
