#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <string>
#include <vector>

namespace metrpo {

struct Transition {
    Eigen::VectorXd s;
    Eigen::VectorXd a;
    Eigen::VectorXd s_next;
};

using Episode = std::vector<Transition>;

// Replay store of real transitions with a persistent episode-level 2:1
// train/validation split. Episodes are assigned on arrival: within each
// block of three consecutive episodes one slot is drawn for validation, so
// the ratio is exact at block boundaries and an episode never moves between
// splits as more data accumulates.
class Dataset {
public:
    explicit Dataset(std::uint64_t split_seed) : split_seed_(split_seed) {}

    void add_episodes(const std::vector<Episode>& episodes);

    const std::vector<Episode>& train_episodes() const { return train_; }
    const std::vector<Episode>& validation_episodes() const { return validation_; }

    int episode_count() const { return next_index_; }
    std::int64_t train_transition_count() const { return count(train_); }
    std::int64_t validation_transition_count() const { return count(validation_); }
    std::int64_t transition_count() const
    {
        return train_transition_count() + validation_transition_count();
    }

    // Split assignment for a global arrival index (stable for all time).
    bool is_validation_index(int global_index) const;

    std::vector<Transition> train_flat() const { return flatten(train_); }
    std::vector<Transition> validation_flat() const { return flatten(validation_); }

    // Writes dataset_train.csv and dataset_validation.csv with header
    // s_0..s_{n-1}, a_0..a_{m-1}, snext_0..snext_{n-1}.
    void save_csv(const std::string& dir) const;

private:
    static std::int64_t count(const std::vector<Episode>& eps);
    static std::vector<Transition> flatten(const std::vector<Episode>& eps);

    std::uint64_t split_seed_;
    int next_index_ = 0;
    std::vector<Episode> train_;
    std::vector<Episode> validation_;
};

// One-shot split of a fixed episode list (same assignment rule).
Dataset split_dataset(const std::vector<Episode>& episodes, std::uint64_t split_seed);

} // namespace metrpo
