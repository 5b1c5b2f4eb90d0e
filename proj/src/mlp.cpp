#include "metrpo/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace metrpo {

namespace {

void apply_activation(Activation act, Eigen::MatrixXd& z)
{
    switch (act) {
    case Activation::kIdentity:
        break;
    case Activation::kRelu:
        z = z.cwiseMax(0.0);
        break;
    case Activation::kTanh:
        z = z.array().tanh().matrix();
        break;
    }
}

// Derivative of the activation expressed through its own output value.
// relu: 1 for a > 0 (0 at the kink); tanh: 1 - a^2; identity: 1.
Eigen::ArrayXXd activation_deriv(Activation act, const Eigen::MatrixXd& a)
{
    switch (act) {
    case Activation::kIdentity:
        return Eigen::ArrayXXd::Ones(a.rows(), a.cols());
    case Activation::kRelu:
        return (a.array() > 0.0).cast<double>();
    case Activation::kTanh:
        return 1.0 - a.array().square();
    }
    return Eigen::ArrayXXd::Ones(a.rows(), a.cols());
}

} // namespace

std::string activation_name(Activation a)
{
    switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    }
    return "identity";
}

Activation activation_from_name(const std::string& name)
{
    if (name == "identity")
        return Activation::kIdentity;
    if (name == "relu")
        return Activation::kRelu;
    if (name == "tanh")
        return Activation::kTanh;
    throw std::invalid_argument("unknown activation: " + name);
}

GradientBundle clip_by_global_norm(const GradientBundle& grads, double max_norm)
{
    if (max_norm <= 0.0)
        throw std::invalid_argument("clip_by_global_norm: max_norm must be positive");
    double norm = grads.global_norm();
    if (norm <= max_norm)
        return grads;
    GradientBundle out;
    out.flat = grads.flat * (max_norm / norm);
    return out;
}

Mlp::Mlp(std::vector<int> layer_sizes, Activation hidden, Activation output)
    : layer_sizes_(std::move(layer_sizes)), hidden_(hidden), output_(output)
{
    if (layer_sizes_.size() < 2)
        throw std::invalid_argument("Mlp needs at least an input and an output layer");
    for (int s : layer_sizes_)
        if (s <= 0)
            throw std::invalid_argument("Mlp layer sizes must be positive");
    for (std::size_t l = 0; l + 1 < layer_sizes_.size(); ++l) {
        weights_.emplace_back(Eigen::MatrixXd::Zero(layer_sizes_[l + 1], layer_sizes_[l]));
        biases_.emplace_back(Eigen::VectorXd::Zero(layer_sizes_[l + 1]));
    }
}

Mlp Mlp::random(std::vector<int> layer_sizes, Activation hidden, Activation output, Rng& rng)
{
    Mlp net(std::move(layer_sizes), hidden, output);
    for (int l = 0; l < net.layer_count(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(net.weights_[l].cols()));
        Eigen::MatrixXd& w = net.weights_[l];
        for (Eigen::Index c = 0; c < w.cols(); ++c)
            for (Eigen::Index r = 0; r < w.rows(); ++r)
                w(r, c) = rng.uniform(-bound, bound);
    }
    return net;
}

int Mlp::param_count() const
{
    int n = 0;
    for (int l = 0; l < layer_count(); ++l)
        n += static_cast<int>(weights_[l].size() + biases_[l].size());
    return n;
}

Eigen::VectorXd Mlp::flat_params() const
{
    Eigen::VectorXd flat(param_count());
    Eigen::Index at = 0;
    for (int l = 0; l < layer_count(); ++l) {
        flat.segment(at, weights_[l].size()) =
            Eigen::Map<const Eigen::VectorXd>(weights_[l].data(), weights_[l].size());
        at += weights_[l].size();
        flat.segment(at, biases_[l].size()) = biases_[l];
        at += biases_[l].size();
    }
    return flat;
}

void Mlp::set_flat_params(const Eigen::VectorXd& flat)
{
    if (flat.size() != param_count())
        throw std::invalid_argument("set_flat_params: size mismatch");
    if (!flat.allFinite())
        throw std::invalid_argument("set_flat_params: non-finite parameters");
    Eigen::Index at = 0;
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::Map<Eigen::VectorXd>(weights_[l].data(), weights_[l].size()) =
            flat.segment(at, weights_[l].size());
        at += weights_[l].size();
        biases_[l] = flat.segment(at, biases_[l].size());
        at += biases_[l].size();
    }
}

Eigen::MatrixXd Mlp::apply(const Eigen::MatrixXd& input) const
{
    if (input.rows() != input_dim())
        throw std::invalid_argument("Mlp::apply: input dimension mismatch");
    Eigen::MatrixXd a = input;
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = (weights_[l] * a).colwise() + biases_[l];
        apply_activation(l + 1 == layer_count() ? output_ : hidden_, z);
        a = std::move(z);
    }
    return a;
}

Eigen::VectorXd Mlp::apply_vec(const Eigen::VectorXd& input) const
{
    return apply(input).col(0);
}

Mlp::Trace Mlp::forward(const Eigen::MatrixXd& input) const
{
    if (input.rows() != input_dim())
        throw std::invalid_argument("Mlp::forward: input dimension mismatch");
    Trace trace;
    trace.activations.reserve(layer_count() + 1);
    trace.activations.push_back(input);
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = (weights_[l] * trace.activations.back()).colwise() + biases_[l];
        apply_activation(l + 1 == layer_count() ? output_ : hidden_, z);
        trace.activations.push_back(std::move(z));
    }
    return trace;
}

Mlp::Backward Mlp::backward(const Trace& trace, const Eigen::MatrixXd& upstream,
                            bool with_param_grads) const
{
    const int L = layer_count();
    if (upstream.rows() != output_dim() || upstream.cols() != trace.activations.back().cols())
        throw std::invalid_argument("Mlp::backward: upstream shape mismatch");

    Backward out;
    if (with_param_grads)
        out.params.flat = Eigen::VectorXd::Zero(param_count());

    // Offsets of each layer's block in the flat parameter vector.
    std::vector<Eigen::Index> offsets(L);
    Eigen::Index at = 0;
    for (int l = 0; l < L; ++l) {
        offsets[l] = at;
        at += weights_[l].size() + biases_[l].size();
    }

    Eigen::MatrixXd delta =
        upstream.array() * activation_deriv(output_, trace.activations.back());
    for (int l = L - 1; l >= 0; --l) {
        if (with_param_grads) {
            Eigen::MatrixXd dw = delta * trace.activations[l].transpose();
            out.params.flat.segment(offsets[l], dw.size()) =
                Eigen::Map<const Eigen::VectorXd>(dw.data(), dw.size());
            out.params.flat.segment(offsets[l] + dw.size(), biases_[l].size()) =
                delta.rowwise().sum();
        }
        Eigen::MatrixXd g = weights_[l].transpose() * delta;
        if (l > 0)
            delta = g.array() * activation_deriv(hidden_, trace.activations[l]);
        else
            out.input = std::move(g);
    }
    return out;
}

Eigen::MatrixXd Mlp::jvp(const Eigen::MatrixXd& input, const Eigen::VectorXd& flat_dir) const
{
    if (flat_dir.size() != param_count())
        throw std::invalid_argument("Mlp::jvp: direction size mismatch");
    Trace trace = forward(input);
    const Eigen::Index batch = input.cols();

    Eigen::MatrixXd tangent = Eigen::MatrixXd::Zero(input_dim(), batch);
    Eigen::Index at = 0;
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::Map<const Eigen::MatrixXd> dw(flat_dir.data() + at, weights_[l].rows(),
                                             weights_[l].cols());
        at += weights_[l].size();
        Eigen::Map<const Eigen::VectorXd> db(flat_dir.data() + at, biases_[l].size());
        at += biases_[l].size();

        Eigen::MatrixXd dz =
            (dw * trace.activations[l] + weights_[l] * tangent).colwise() + db;
        const Activation act = l + 1 == layer_count() ? output_ : hidden_;
        tangent = dz.array() * activation_deriv(act, trace.activations[l + 1]);
    }
    return tangent;
}

} // namespace metrpo
