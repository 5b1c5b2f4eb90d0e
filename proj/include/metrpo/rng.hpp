#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace metrpo {

// Mixes a stream tag into a master seed (FNV-1a over the tag, splitmix64
// finalizer). Used to derive independent named substreams from one seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::string_view tag) {
    std::uint64_t h = 1469598103934665603ull ^ master;
    for (char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    h += 0x9e3779b97f4a7c15ull;
    h = (h ^ (h >> 30)) * 0xbf58476d1ce4e5b9ull;
    h = (h ^ (h >> 27)) * 0x94d049bb133111ebull;
    return h ^ (h >> 31);
}

// Deterministic random stream. The engine is std::mt19937_64 (bit-exact by
// the standard); all distributions are hand-rolled on top of its raw output
// so draws do not depend on the standard library implementation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

    std::uint64_t seed() const { return seed_; }

    // Independent stream derived from this stream's seed and a tag. The
    // parent's draw position does not affect the child.
    Rng substream(std::string_view tag) const { return Rng(derive_seed(seed_, tag)); }

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform()
    {
        return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in {0, ..., n-1}. Modulo bias is < n / 2^64.
    int uniform_int(int n) { return static_cast<int>(next_u64() % static_cast<std::uint64_t>(n)); }

    // Standard normal via Box-Muller. Two engine draws per sample; no spare
    // is cached so the stream position depends only on the call count.
    double normal()
    {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    Eigen::VectorXd normal_vector(int n)
    {
        Eigen::VectorXd v(n);
        for (int i = 0; i < n; ++i)
            v(i) = normal();
        return v;
    }

    Eigen::MatrixXd normal_matrix(int rows, int cols)
    {
        Eigen::MatrixXd m(rows, cols);
        for (int c = 0; c < cols; ++c)
            for (int r = 0; r < rows; ++r)
                m(r, c) = normal();
        return m;
    }

    // Fisher-Yates shuffle of {0, ..., n-1}.
    std::vector<int> permutation(int n)
    {
        std::vector<int> p(n);
        for (int i = 0; i < n; ++i)
            p[i] = i;
        for (int i = n - 1; i > 0; --i)
            std::swap(p[i], p[uniform_int(i + 1)]);
        return p;
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
};

} // namespace metrpo
