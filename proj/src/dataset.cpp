#include "metrpo/dataset.hpp"

#include <filesystem>
#include <stdexcept>

#include "metrpo/csvio.hpp"
#include "metrpo/rng.hpp"

namespace metrpo {

bool Dataset::is_validation_index(int global_index) const
{
    const int block = global_index / 3;
    Rng block_rng(derive_seed(split_seed_, "split-block-" + std::to_string(block)));
    return global_index % 3 == block_rng.uniform_int(3);
}

void Dataset::add_episodes(const std::vector<Episode>& episodes)
{
    for (const Episode& ep : episodes) {
        if (ep.empty())
            throw std::invalid_argument("Dataset::add_episodes: empty episode");
        if (is_validation_index(next_index_))
            validation_.push_back(ep);
        else
            train_.push_back(ep);
        ++next_index_;
    }
}

std::int64_t Dataset::count(const std::vector<Episode>& eps)
{
    std::int64_t n = 0;
    for (const Episode& ep : eps)
        n += static_cast<std::int64_t>(ep.size());
    return n;
}

std::vector<Transition> Dataset::flatten(const std::vector<Episode>& eps)
{
    std::vector<Transition> flat;
    flat.reserve(static_cast<std::size_t>(count(eps)));
    for (const Episode& ep : eps)
        flat.insert(flat.end(), ep.begin(), ep.end());
    return flat;
}

namespace {

void write_split(const std::string& path, const std::vector<Episode>& episodes)
{
    CsvWriter csv(path);
    if (episodes.empty() || episodes.front().empty()) {
        csv.row({});
        return;
    }
    const Eigen::Index n = episodes.front().front().s.size();
    const Eigen::Index m = episodes.front().front().a.size();
    std::vector<std::string> header;
    for (Eigen::Index i = 0; i < n; ++i)
        header.push_back("s_" + std::to_string(i));
    for (Eigen::Index i = 0; i < m; ++i)
        header.push_back("a_" + std::to_string(i));
    for (Eigen::Index i = 0; i < n; ++i)
        header.push_back("snext_" + std::to_string(i));
    csv.row(header);

    for (const Episode& ep : episodes) {
        for (const Transition& tr : ep) {
            std::vector<std::string> cells;
            cells.reserve(static_cast<std::size_t>(2 * n + m));
            for (Eigen::Index i = 0; i < n; ++i)
                cells.push_back(g17(tr.s(i)));
            for (Eigen::Index i = 0; i < m; ++i)
                cells.push_back(g17(tr.a(i)));
            for (Eigen::Index i = 0; i < n; ++i)
                cells.push_back(g17(tr.s_next(i)));
            csv.row(cells);
        }
    }
}

} // namespace

void Dataset::save_csv(const std::string& dir) const
{
    std::filesystem::create_directories(dir);
    write_split(dir + "/dataset_train.csv", train_);
    write_split(dir + "/dataset_validation.csv", validation_);
}

Dataset split_dataset(const std::vector<Episode>& episodes, std::uint64_t split_seed)
{
    if (episodes.size() < 3)
        throw std::invalid_argument("split_dataset: need at least 3 episodes for a 2:1 split");
    Dataset data(split_seed);
    data.add_episodes(episodes);
    return data;
}

} // namespace metrpo
