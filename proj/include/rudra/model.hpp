#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "rudra/errors.hpp"
#include "rudra/rng.hpp"
#include "rudra/tensor.hpp"

namespace rudra {

enum class Activation { Sigmoid, Tanh, Relu };

inline const char* to_string(Activation a) {
    switch (a) {
        case Activation::Sigmoid: return "sigmoid";
        case Activation::Tanh: return "tanh";
        case Activation::Relu: return "relu";
    }
    return "?";
}

/// Feed-forward network shape: layer_sizes = {input, hidden..., output},
/// one activation per hidden layer, softmax on the output layer.
struct ModelSpec {
    std::vector<std::size_t> layer_sizes;
    std::vector<Activation> hidden_activations;

    ModelSpec() = default;
    ModelSpec(std::vector<std::size_t> sizes, Activation act = Activation::Tanh)
        : layer_sizes(std::move(sizes)) {
        validate();
        hidden_activations.assign(num_layers() - 1, act);
    }
    ModelSpec(std::vector<std::size_t> sizes, std::vector<Activation> acts)
        : layer_sizes(std::move(sizes)), hidden_activations(std::move(acts)) {
        validate();
        if (hidden_activations.size() != num_layers() - 1)
            throw ConfigError("ModelSpec: need one activation per hidden layer");
    }

    /// Number of weight layers (= transitions between layer sizes).
    std::size_t num_layers() const { return layer_sizes.size() - 1; }
    std::size_t input_size() const { return layer_sizes.front(); }
    std::size_t output_size() const { return layer_sizes.back(); }

    /// Total parameter count: sum over layers of in*out + out.
    std::size_t param_count() const {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l)
            n += layer_sizes[l] * layer_sizes[l + 1] + layer_sizes[l + 1];
        return n;
    }

    bool operator==(const ModelSpec& o) const = default;

private:
    void validate() const {
        if (layer_sizes.size() < 2)
            throw ConfigError("ModelSpec: need at least input and output sizes");
        for (auto s : layer_sizes)
            if (s < 1) throw ConfigError("ModelSpec: all layer sizes must be >= 1");
    }
};

/// All parameters as one flat vector. Layout, in layer order l = 0..L-1:
/// weight matrix W_l, row-major [in_l x out_l], then bias b_l [out_l].
/// A forward pass computes A_{l+1} = act(A_l W_l + b_l).
struct Weights {
    ModelSpec spec;
    Vector values;

    Weights() = default;
    explicit Weights(ModelSpec s) : spec(std::move(s)), values(spec.param_count(), 0.0) {}
    Weights(ModelSpec s, Vector v) : spec(std::move(s)), values(std::move(v)) {
        if (values.size() != spec.param_count())
            throw ShapeError("Weights: vector length " + std::to_string(values.size()) +
                             " != param count " + std::to_string(spec.param_count()));
    }

    std::size_t weight_offset(std::size_t layer) const {
        std::size_t off = 0;
        for (std::size_t l = 0; l < layer; ++l)
            off += spec.layer_sizes[l] * spec.layer_sizes[l + 1] + spec.layer_sizes[l + 1];
        return off;
    }
    std::size_t bias_offset(std::size_t layer) const {
        return weight_offset(layer) + spec.layer_sizes[layer] * spec.layer_sizes[layer + 1];
    }
};

/// Gradient shares the Weights layout exactly.
using Gradient = Vector;

struct MiniBatch {
    Matrix inputs;            // [mu x d_in]
    std::vector<int> labels;  // length mu

    std::size_t size() const { return labels.size(); }
};

/// Gaussian init, std 1/sqrt(fan_in) per layer, biases zero.
inline Weights init_weights(const ModelSpec& spec, RngStream& rng) {
    Weights w(spec);
    for (std::size_t l = 0; l < spec.num_layers(); ++l) {
        const std::size_t fan_in = spec.layer_sizes[l];
        const std::size_t fan_out = spec.layer_sizes[l + 1];
        const double std = 1.0 / std::sqrt(static_cast<double>(fan_in));
        const std::size_t off = w.weight_offset(l);
        for (std::size_t i = 0; i < fan_in * fan_out; ++i)
            w.values[off + i] = rng.next_gaussian(0.0, std);
        // biases stay zero
    }
    return w;
}

namespace detail {

inline double apply_act(Activation a, double z) {
    switch (a) {
        case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-z));
        case Activation::Tanh: return std::tanh(z);
        case Activation::Relu: return z > 0.0 ? z : 0.0;
    }
    return z;
}

/// Derivative expressed through the activation value (not the pre-activation).
inline double act_grad_from_output(Activation a, double y) {
    switch (a) {
        case Activation::Sigmoid: return y * (1.0 - y);
        case Activation::Tanh: return 1.0 - y * y;
        case Activation::Relu: return y > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

/// A_l W_l + b_l for one layer, batch-major.
inline Matrix affine(const Weights& w, std::size_t layer, const Matrix& a) {
    const std::size_t in = w.spec.layer_sizes[layer];
    const std::size_t out = w.spec.layer_sizes[layer + 1];
    Matrix wm(in, out,
              Vector(w.values.begin() + static_cast<std::ptrdiff_t>(w.weight_offset(layer)),
                     w.values.begin() + static_cast<std::ptrdiff_t>(w.weight_offset(layer)) +
                         static_cast<std::ptrdiff_t>(in * out)));
    Matrix z = gemm(a, wm);
    const std::size_t boff = w.bias_offset(layer);
    for (std::size_t r = 0; r < z.rows; ++r)
        for (std::size_t c = 0; c < z.cols; ++c) z.at(r, c) += w.values[boff + c];
    return z;
}

/// Row-wise softmax with max subtraction.
inline void softmax_rows(Matrix& z) {
    for (std::size_t r = 0; r < z.rows; ++r) {
        double* row = &z.data[r * z.cols];
        double m = row[0];
        for (std::size_t c = 1; c < z.cols; ++c) m = std::max(m, row[c]);
        double sum = 0.0;
        for (std::size_t c = 0; c < z.cols; ++c) {
            row[c] = std::exp(row[c] - m);
            sum += row[c];
        }
        for (std::size_t c = 0; c < z.cols; ++c) row[c] /= sum;
    }
}

/// Forward keeping every layer's activations; activations[0] is the input.
inline std::vector<Matrix> forward_trace(const Weights& w, const MiniBatch& batch) {
    if (batch.inputs.cols != w.spec.input_size())
        throw ShapeError("forward: input width " + std::to_string(batch.inputs.cols) +
                         " != model input size " + std::to_string(w.spec.input_size()));
    if (batch.inputs.rows != batch.size())
        throw ShapeError("forward: label count != input rows");
    std::vector<Matrix> acts;
    acts.reserve(w.spec.num_layers() + 1);
    acts.push_back(batch.inputs);
    for (std::size_t l = 0; l < w.spec.num_layers(); ++l) {
        Matrix z = affine(w, l, acts.back());
        if (l + 1 < w.spec.num_layers()) {
            const Activation act = w.spec.hidden_activations[l];
            for (auto& v : z.data) v = apply_act(act, v);
        } else {
            softmax_rows(z);
        }
        acts.push_back(std::move(z));
    }
    return acts;
}

}  // namespace detail

/// Class probabilities, one row per example; rows sum to 1.
inline Matrix forward(const Weights& w, const MiniBatch& batch) {
    return detail::forward_trace(w, batch).back();
}

/// Mean cross-entropy over the batch: -(1/mu) sum log p(correct class).
inline double loss(const Matrix& probs, const std::vector<int>& labels) {
    if (labels.size() != probs.rows)
        throw ShapeError("loss: label count != probability rows");
    double total = 0.0;
    for (std::size_t r = 0; r < probs.rows; ++r) {
        const int y = labels[r];
        if (y < 0 || static_cast<std::size_t>(y) >= probs.cols)
            throw ShapeError("loss: label out of range");
        total += -std::log(probs.at(r, static_cast<std::size_t>(y)));
    }
    return total / static_cast<double>(probs.rows);
}

/// Backprop through the whole network. Returns the gradient of the
/// mean cross-entropy and the loss value itself.
inline std::pair<Gradient, double> backward(const Weights& w, const MiniBatch& batch) {
    const auto acts = detail::forward_trace(w, batch);
    const Matrix& probs = acts.back();
    const double loss_value = loss(probs, batch.labels);
    const std::size_t mu = batch.size();
    const std::size_t layers = w.spec.num_layers();

    Gradient grad(w.values.size(), 0.0);

    // Softmax + cross-entropy head: delta = (probs - onehot) / mu.
    Matrix delta = probs;
    for (std::size_t r = 0; r < mu; ++r)
        delta.at(r, static_cast<std::size_t>(batch.labels[r])) -= 1.0;
    for (auto& v : delta.data) v /= static_cast<double>(mu);

    for (std::size_t l = layers; l-- > 0;) {
        const std::size_t in = w.spec.layer_sizes[l];
        const std::size_t out = w.spec.layer_sizes[l + 1];
        const Matrix& a_in = acts[l];

        // dW = a_in^T delta, db = column sums of delta.
        const std::size_t woff = w.weight_offset(l);
        for (std::size_t r = 0; r < mu; ++r)
            for (std::size_t i = 0; i < in; ++i) {
                const double av = a_in.at(r, i);
                for (std::size_t j = 0; j < out; ++j)
                    grad[woff + i * out + j] += av * delta.at(r, j);
            }
        const std::size_t boff = w.bias_offset(l);
        for (std::size_t r = 0; r < mu; ++r)
            for (std::size_t j = 0; j < out; ++j) grad[boff + j] += delta.at(r, j);

        if (l == 0) break;

        // delta_prev = (delta W^T) .* act'(a_in)
        Matrix prev(mu, in);
        for (std::size_t r = 0; r < mu; ++r)
            for (std::size_t i = 0; i < in; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < out; ++j)
                    s += delta.at(r, j) * w.values[woff + i * out + j];
                prev.at(r, i) = s * detail::act_grad_from_output(
                                        w.spec.hidden_activations[l - 1], a_in.at(r, i));
            }
        delta = std::move(prev);
    }
    return {std::move(grad), loss_value};
}

/// Momentum SGD update:
///   velocity <- momentum*velocity - alpha*(g + weight_decay*w)
///   w        <- w + velocity
/// Throws NumericOverflow if the result turns non-finite.
inline void sgd_step(Weights& w, const Gradient& g, double alpha, double momentum,
                     double weight_decay, Vector& velocity) {
    if (g.size() != w.values.size() || velocity.size() != w.values.size())
        throw ShapeError("sgd_step: vector lengths differ");
    if (momentum < 0.0 || momentum >= 1.0)
        throw PreconditionError("sgd_step: momentum must be in [0,1)");
    if (weight_decay < 0.0)
        throw PreconditionError("sgd_step: weight_decay must be >= 0");
    bool ok = true;
    for (std::size_t i = 0; i < g.size(); ++i) {
        velocity[i] = momentum * velocity[i] - alpha * (g[i] + weight_decay * w.values[i]);
        w.values[i] += velocity[i];
        ok = ok && std::isfinite(w.values[i]);
    }
    if (!ok)
        throw NumericOverflow("sgd_step: weights became non-finite (training aborts)");
}

/// Fraction of examples whose argmax class differs from the label.
/// Ties resolve to the lowest class index.
inline double evaluate(const Weights& w, const Matrix& inputs, const std::vector<int>& labels) {
    if (labels.empty()) throw PreconditionError("evaluate: dataset is empty");
    MiniBatch batch{inputs, labels};
    const Matrix probs = forward(w, batch);
    std::size_t wrong = 0;
    for (std::size_t r = 0; r < probs.rows; ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.cols; ++c)
            if (probs.at(r, c) > probs.at(r, best)) best = c;
        if (best != static_cast<std::size_t>(labels[r])) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

/// Weights wire format: u64 little-endian element count, then the raw
/// little-endian 64-bit floats. Used by checkpoints and the message layer.
inline std::vector<std::uint8_t> serialize_weights(const Vector& values) {
    std::vector<std::uint8_t> out;
    out.reserve(8 + values.size() * 8);
    const std::uint64_t n = values.size();
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>((n >> (8 * b)) & 0xff));
    for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, 8);
        for (int b = 0; b < 8; ++b)
            out.push_back(static_cast<std::uint8_t>((bits >> (8 * b)) & 0xff));
    }
    return out;
}

inline Vector deserialize_weights(const std::uint8_t* data, std::size_t size) {
    if (size < 8) throw ParseError("weights blob: missing length header");
    std::uint64_t n = 0;
    for (int b = 0; b < 8; ++b) n |= static_cast<std::uint64_t>(data[b]) << (8 * b);
    if (size != 8 + n * 8)
        throw ParseError("weights blob: size " + std::to_string(size) +
                         " does not match header count " + std::to_string(n));
    Vector values(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b)
            bits |= static_cast<std::uint64_t>(data[8 + i * 8 + b]) << (8 * b);
        std::memcpy(&values[i], &bits, 8);
    }
    return values;
}

}  // namespace rudra
