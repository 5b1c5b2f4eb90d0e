#pragma once

#include <Eigen/Core>

#include <string>
#include <vector>

#include "metrpo/rng.hpp"

namespace metrpo {

enum class Activation { kIdentity, kRelu, kTanh };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// Parameter-space gradient: a flat vector in the owning network's layout
// (per layer: column-major weights, then bias).
struct GradientBundle {
    Eigen::VectorXd flat;

    double global_norm() const { return flat.norm(); }
};

// Scales the bundle so its global norm does not exceed max_norm. Direction
// is preserved; bundles already within the cap pass through unchanged.
GradientBundle clip_by_global_norm(const GradientBundle& grads, double max_norm);

// Dense feed-forward network on doubles. Inputs and outputs are matrices
// with one sample per column, so batched evaluation maps onto GEMM.
class Mlp {
public:
    // Cached activations of one forward pass, consumed by backward().
    struct Trace {
        std::vector<Eigen::MatrixXd> activations; // activations[0] is the input
    };

    struct Backward {
        GradientBundle params;     // d(upstream . output)/d(theta)
        Eigen::MatrixXd input;     // d(upstream . output)/d(input), per column
    };

    Mlp() = default;
    Mlp(std::vector<int> layer_sizes, Activation hidden, Activation output);

    // Fan-in scaled uniform weights, zero biases.
    static Mlp random(std::vector<int> layer_sizes, Activation hidden, Activation output,
                      Rng& rng);

    int input_dim() const { return layer_sizes_.front(); }
    int output_dim() const { return layer_sizes_.back(); }
    int layer_count() const { return static_cast<int>(weights_.size()); }
    const std::vector<int>& layer_sizes() const { return layer_sizes_; }
    Activation hidden_activation() const { return hidden_; }
    Activation output_activation() const { return output_; }

    Eigen::MatrixXd& weight(int layer) { return weights_[layer]; }
    const Eigen::MatrixXd& weight(int layer) const { return weights_[layer]; }
    Eigen::VectorXd& bias(int layer) { return biases_[layer]; }
    const Eigen::VectorXd& bias(int layer) const { return biases_[layer]; }

    int param_count() const;
    Eigen::VectorXd flat_params() const;
    // Throws std::invalid_argument on size mismatch or non-finite entries.
    void set_flat_params(const Eigen::VectorXd& flat);

    // Forward pass; input columns are samples. Throws on row-count mismatch.
    Eigen::MatrixXd apply(const Eigen::MatrixXd& input) const;
    Eigen::VectorXd apply_vec(const Eigen::VectorXd& input) const;

    Trace forward(const Eigen::MatrixXd& input) const;
    const Eigen::MatrixXd& output_of(const Trace& trace) const
    {
        return trace.activations.back();
    }

    // Reverse-mode pass. upstream has one column per sample; gradients are
    // summed over the batch. with_param_grads=false skips the weight/bias
    // products when only the input gradient is needed (chaining through time).
    Backward backward(const Trace& trace, const Eigen::MatrixXd& upstream,
                      bool with_param_grads = true) const;

    // Forward-mode directional derivative: d output / d params in direction
    // `flat_dir`, evaluated per input column. Input tangent is zero.
    Eigen::MatrixXd jvp(const Eigen::MatrixXd& input, const Eigen::VectorXd& flat_dir) const;

private:
    std::vector<int> layer_sizes_;
    std::vector<Eigen::MatrixXd> weights_; // weights_[l]: layer_sizes_[l+1] x layer_sizes_[l]
    std::vector<Eigen::VectorXd> biases_;
    Activation hidden_ = Activation::kRelu;
    Activation output_ = Activation::kIdentity;
};

} // namespace metrpo
