#include "metrpo/validation.hpp"

#include <stdexcept>

namespace metrpo {

std::string validation_mode_name(ValidationMode mode)
{
    switch (mode) {
    case ValidationMode::kEnsemble: return "ensemble";
    case ValidationMode::kOneModel: return "one_model";
    case ValidationMode::kReal: return "real";
    case ValidationMode::kTrpoMean: return "trpo_mean";
    case ValidationMode::kNoEarly50: return "no_early_50";
    case ValidationMode::kNoEarly5: return "no_early_5";
    }
    return "ensemble";
}

ValidationMode validation_mode_from_name(const std::string& name)
{
    if (name == "ensemble")
        return ValidationMode::kEnsemble;
    if (name == "one_model")
        return ValidationMode::kOneModel;
    if (name == "real")
        return ValidationMode::kReal;
    if (name == "trpo_mean")
        return ValidationMode::kTrpoMean;
    if (name == "no_early_50")
        return ValidationMode::kNoEarly50;
    if (name == "no_early_5")
        return ValidationMode::kNoEarly5;
    throw std::invalid_argument("unknown validation mode: " + name);
}

double improvement_ratio(const Eigen::VectorXd& returns_new,
                         const Eigen::VectorXd& returns_old)
{
    if (returns_new.size() != returns_old.size() || returns_new.size() == 0)
        throw std::invalid_argument("improvement_ratio: length mismatch");
    int improved = 0;
    for (Eigen::Index k = 0; k < returns_new.size(); ++k)
        if (returns_new(k) > returns_old(k)) // strict inequality
            ++improved;
    return static_cast<double>(improved) / static_cast<double>(returns_new.size());
}

void ValidationController::begin_phase(const ValidationInputs& baseline)
{
    baseline_ = baseline;
    phase_open_ = true;
    last_pass_update_ = 0;
    first_fail_update_.reset();
}

bool ValidationController::needs_check(int update_index) const
{
    if (cfg_.mode == ValidationMode::kNoEarly50 || cfg_.mode == ValidationMode::kNoEarly5)
        return false;
    return update_index % cfg_.check_every == 0;
}

double ValidationController::pass_ratio(const ValidationInputs& inputs) const
{
    switch (cfg_.mode) {
    case ValidationMode::kEnsemble:
        return improvement_ratio(inputs.eta_per_model, baseline_.eta_per_model);
    case ValidationMode::kOneModel: {
        const int k = cfg_.designated_model;
        if (k < 0 || k >= inputs.eta_per_model.size())
            throw std::invalid_argument("validation: bad designated model index");
        return inputs.eta_per_model(k) > baseline_.eta_per_model(k) ? 1.0 : 0.0;
    }
    case ValidationMode::kReal:
        if (!inputs.real_return || !baseline_.real_return)
            throw std::invalid_argument("validation: real mode without a real-return feed");
        return *inputs.real_return > *baseline_.real_return ? 1.0 : 0.0;
    case ValidationMode::kTrpoMean:
        if (!inputs.batch_mean_return || !baseline_.batch_mean_return)
            throw std::invalid_argument("validation: trpo_mean mode without a batch feed");
        return *inputs.batch_mean_return > *baseline_.batch_mean_return ? 1.0 : 0.0;
    default:
        return 0.0;
    }
}

ValidationVerdict ValidationController::check_and_update(
    int update_index, const std::optional<ValidationInputs>& inputs)
{
    if (!phase_open_)
        throw std::logic_error("ValidationController: begin_phase not called");

    ValidationVerdict verdict;
    verdict.updates_since_last_pass = update_index - last_pass_update_;

    if (cfg_.mode == ValidationMode::kNoEarly50 || cfg_.mode == ValidationMode::kNoEarly5) {
        const int budget = cfg_.mode == ValidationMode::kNoEarly50 ? 50 : 5;
        verdict.continue_flag = update_index < budget;
        verdict.ratio = 1.0;
        return verdict;
    }

    if (!needs_check(update_index))
        return verdict;

    if (!inputs)
        throw std::invalid_argument("validation: check due but no inputs supplied");
    verdict.checked = true;
    verdict.ratio = pass_ratio(*inputs);

    if (verdict.ratio >= cfg_.threshold) {
        // Pass: the current returns become the reference point.
        baseline_ = *inputs;
        last_pass_update_ = update_index;
        first_fail_update_.reset();
        verdict.updates_since_last_pass = 0;
        verdict.continue_flag = true;
        return verdict;
    }

    if (!first_fail_update_)
        first_fail_update_ = update_index;
    verdict.updates_since_last_pass = update_index - last_pass_update_;
    verdict.continue_flag = update_index - *first_fail_update_ < cfg_.patience;
    return verdict;
}

} // namespace metrpo
