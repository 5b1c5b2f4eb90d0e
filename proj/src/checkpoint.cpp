#include "metrpo/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace metrpo {

namespace {

void byteswap_doubles(std::vector<double>& values)
{
    for (double& d : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &d, 8);
        bits = __builtin_bswap64(bits);
        std::memcpy(&d, &bits, 8);
    }
}

constexpr bool kBigEndianHost = std::endian::native == std::endian::big;

} // namespace

Eigen::VectorXd Checkpoint::vec(const std::string& name) const
{
    const Eigen::MatrixXd& m = mat(name);
    if (m.cols() != 1)
        throw std::runtime_error("checkpoint tensor is not a vector: " + name);
    return m.col(0);
}

const Eigen::MatrixXd& Checkpoint::mat(const std::string& name) const
{
    auto it = tensors.find(name);
    if (it == tensors.end())
        throw std::runtime_error("checkpoint tensor missing: " + name);
    return it->second;
}

void save_checkpoint(const std::string& base_path,
                     const std::vector<std::pair<std::string, Eigen::MatrixXd>>& tensors,
                     const nlohmann::json& meta)
{
    nlohmann::json manifest;
    manifest["format"] = "metrpo-checkpoint-v1";
    manifest["dtype"] = "float64";
    manifest["byte_order"] = "little";
    manifest["layout"] = "col-major";
    manifest["meta"] = meta;

    std::vector<double> blob;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& [name, tensor] : tensors) {
        nlohmann::json e;
        e["name"] = name;
        e["shape"] = {tensor.rows(), tensor.cols()};
        e["offset_bytes"] = blob.size() * sizeof(double);
        entries.push_back(e);
        blob.insert(blob.end(), tensor.data(), tensor.data() + tensor.size());
    }
    manifest["tensors"] = entries;

    if (kBigEndianHost)
        byteswap_doubles(blob);

    std::ofstream jf(base_path + ".json");
    if (!jf)
        throw std::runtime_error("cannot write " + base_path + ".json");
    jf << manifest.dump(2) << "\n";

    std::ofstream bf(base_path + ".bin", std::ios::binary);
    if (!bf)
        throw std::runtime_error("cannot write " + base_path + ".bin");
    bf.write(reinterpret_cast<const char*>(blob.data()),
             static_cast<std::streamsize>(blob.size() * sizeof(double)));
}

Checkpoint load_checkpoint(const std::string& base_path)
{
    std::ifstream jf(base_path + ".json");
    if (!jf)
        throw std::runtime_error("cannot read " + base_path + ".json");
    nlohmann::json manifest = nlohmann::json::parse(jf);
    if (manifest.value("format", "") != "metrpo-checkpoint-v1")
        throw std::runtime_error("unrecognized checkpoint format in " + base_path);

    std::ifstream bf(base_path + ".bin", std::ios::binary);
    if (!bf)
        throw std::runtime_error("cannot read " + base_path + ".bin");
    std::vector<char> raw((std::istreambuf_iterator<char>(bf)),
                          std::istreambuf_iterator<char>());

    Checkpoint ckpt;
    ckpt.meta = manifest.value("meta", nlohmann::json::object());
    for (const auto& e : manifest.at("tensors")) {
        const std::string name = e.at("name");
        const Eigen::Index rows = e.at("shape")[0];
        const Eigen::Index cols = e.at("shape")[1];
        const std::size_t offset = e.at("offset_bytes");
        const std::size_t bytes = static_cast<std::size_t>(rows * cols) * sizeof(double);
        if (offset + bytes > raw.size())
            throw std::runtime_error("checkpoint blob truncated: " + base_path);
        std::vector<double> values(static_cast<std::size_t>(rows * cols));
        std::memcpy(values.data(), raw.data() + offset, bytes);
        if (kBigEndianHost)
            byteswap_doubles(values);
        ckpt.tensors[name] =
            Eigen::Map<const Eigen::MatrixXd>(values.data(), rows, cols);
    }
    return ckpt;
}

} // namespace metrpo
