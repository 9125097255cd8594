#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "retforge/matrix.hpp"

namespace retforge::model {

// Named learnable parameter storage: values plus an accumulated gradient.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> values;
    std::vector<float> grad;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);

    std::size_t count() const noexcept { return values.size(); }
    void zero_grad();

    bool operator==(const Tensor& o) const { return shape == o.shape && values == o.values; }
};

// Minimal reverse-mode engine over row-major matrices. Every op appends a node
// and a closure that propagates the node's gradient to its inputs; backward()
// replays the closures in reverse. Parameters are bound 2-D views of a Tensor
// and receive their gradient once the replay finishes.
class Tape {
public:
    using Var = std::size_t;

    Tape() = default;
    // Recorded closures capture `this`.
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var input(Matrix value);
    Var parameter(Tensor& t);

    const Matrix& value(Var v) const { return nodes_[v].value; }
    // Valid after backward(); empty for nodes that received no gradient.
    const Matrix& grad(Var v) const { return nodes_[v].grad; }

    // x [n, in] * w^T + b with w [out, in], b [out].
    Var linear(Var x, Var w, Var b);
    Var relu(Var x);
    // Inverted dropout: kept units scaled by 1 / (1 - rate). The mask is drawn
    // from `seed` and kept for inspection.
    Var dropout(Var x, float rate, std::uint64_t seed);
    Var scale(Var x, float s);
    Var add(Var a, Var b);
    // Throws NormalizationError when a row norm is below 1e-12.
    Var l2_normalize_rows(Var x);
    // Each row of x [n, len] is a one-channel sequence. Applies a 1-D
    // convolution with w [filters, kernel], b [filters], the given stride and
    // zero "same" padding, then averages every filter over output positions,
    // giving [n, filters]. Convolution and averaging are both linear, so the
    // per-position maps are never materialised.
    Var conv1d_global_avg(Var x, Var w, Var b, std::size_t stride);

    void backward(Var out, const Matrix& upstream);

    const std::vector<Matrix>& dropout_masks() const noexcept { return masks_; }
    bool empty() const noexcept { return nodes_.empty(); }
    void clear();

private:
    struct Node {
        Matrix value;
        Matrix grad;
        Tensor* param = nullptr;
    };

    Var push(Matrix value);
    Matrix& grad_of(Var v);

    std::vector<Node> nodes_;
    std::vector<std::function<void()>> backward_fns_;
    std::vector<Matrix> masks_;
};

// Output geometry of a strided "same"-padded convolution.
struct ConvGeometry {
    std::size_t out_len = 0;
    std::size_t pad_left = 0;
};
ConvGeometry conv_geometry(std::size_t in_len, std::size_t kernel, std::size_t stride) noexcept;

}  // namespace retforge::model
