#pragma once

#include <Eigen/Core>

#include <optional>
#include <string>
#include <vector>

namespace metrpo {

enum class ValidationMode {
    kEnsemble,  // ratio of members whose estimated return improved
    kOneModel,  // improvement under a single designated member
    kReal,      // improvement of the true-environment return (oracle)
    kTrpoMean,  // improvement of the fictitious batch mean return
    kNoEarly50, // unconditional stop after 50 updates
    kNoEarly5   // unconditional stop after 5 updates
};

std::string validation_mode_name(ValidationMode mode);
ValidationMode validation_mode_from_name(const std::string& name);

struct ValidationConfig {
    ValidationMode mode = ValidationMode::kEnsemble;
    double threshold = 0.70; // ratio >= threshold counts as a pass
    int check_every = 5;     // gradient updates between checks
    int patience = 25;       // extra updates tolerated after the first failing check
    int designated_model = 0;
};

// Fraction of members whose return strictly improved.
double improvement_ratio(const Eigen::VectorXd& returns_new, const Eigen::VectorXd& returns_old);

struct ValidationInputs {
    Eigen::VectorXd eta_per_model;          // estimated return per member
    std::optional<double> real_return;      // required by kReal
    std::optional<double> batch_mean_return; // required by kTrpoMean
};

struct ValidationVerdict {
    bool checked = false;      // whether this update performed a check
    double ratio = 0.0;        // improvement ratio (or 0/1 pass indicator)
    bool continue_flag = true;
    int updates_since_last_pass = 0;
};

// Early-stopping state machine for one inner optimization phase. A check
// runs every `check_every` updates; a pass refreshes the cached baselines
// to the current returns (a running best reference), a fail starts or
// extends the patience window from the first failing check. begin_phase
// seeds the baselines from the pre-update policy.
class ValidationController {
public:
    explicit ValidationController(ValidationConfig cfg) : cfg_(cfg) {}

    void begin_phase(const ValidationInputs& baseline);

    bool needs_check(int update_index) const;

    // Call once per gradient update (update_index starts at 1). `inputs`
    // must be present when needs_check(update_index) is true. Throws
    // std::invalid_argument when the configured mode is missing its feed.
    ValidationVerdict check_and_update(int update_index,
                                       const std::optional<ValidationInputs>& inputs);

    const ValidationConfig& config() const { return cfg_; }
    const ValidationInputs& baseline() const { return baseline_; }

private:
    double pass_ratio(const ValidationInputs& inputs) const;

    ValidationConfig cfg_;
    ValidationInputs baseline_;
    bool phase_open_ = false;
    int last_pass_update_ = 0;
    std::optional<int> first_fail_update_;
};

} // namespace metrpo
