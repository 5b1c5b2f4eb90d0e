#pragma once

#include <Eigen/Core>

#include <map>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace metrpo {

// Checkpoint = <base>.json manifest plus <base>.bin blob.
//
// The manifest lists named tensors with shapes and byte offsets; the blob is
// the concatenation of all tensor values as little-endian float64, matrices
// in column-major order. Free-form metadata rides along in "meta".
struct Checkpoint {
    std::map<std::string, Eigen::MatrixXd> tensors;
    nlohmann::json meta;

    Eigen::VectorXd vec(const std::string& name) const;
    const Eigen::MatrixXd& mat(const std::string& name) const;
};

void save_checkpoint(const std::string& base_path,
                     const std::vector<std::pair<std::string, Eigen::MatrixXd>>& tensors,
                     const nlohmann::json& meta);

Checkpoint load_checkpoint(const std::string& base_path);

} // namespace metrpo
