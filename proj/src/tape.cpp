#include "retforge/tape.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "retforge/error.hpp"
#include "retforge/rng.hpp"

namespace retforge::model {

namespace {

float dot_f(const float* a, const float* b, std::size_t n) noexcept {
    float acc[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
    }
    float s = 0.0f;
    for (; i < n; ++i) s += a[i] * b[i];
    return s + ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

void axpy(float alpha, const float* x, float* y, std::size_t n) noexcept {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ArgumentError(std::string(op) + ": shape mismatch [" + std::to_string(a.rows()) + "," +
                            std::to_string(a.cols()) + "] vs [" + std::to_string(b.rows()) + "," +
                            std::to_string(b.cols()) + "]");
    }
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    const std::size_t n = std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
    values.assign(n, 0.0f);
    grad.assign(n, 0.0f);
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0f); }

ConvGeometry conv_geometry(std::size_t in_len, std::size_t kernel, std::size_t stride) noexcept {
    ConvGeometry g;
    g.out_len = (in_len + stride - 1) / stride;
    const std::size_t needed = (g.out_len - 1) * stride + kernel;
    g.pad_left = needed > in_len ? (needed - in_len) / 2 : 0;
    return g;
}

Tape::Var Tape::push(Matrix value) {
    nodes_.push_back(Node{std::move(value), Matrix{}, nullptr});
    return nodes_.size() - 1;
}

Matrix& Tape::grad_of(Var v) {
    Node& n = nodes_[v];
    if (n.grad.empty() && !n.value.empty()) n.grad = Matrix(n.value.rows(), n.value.cols());
    return n.grad;
}

Tape::Var Tape::input(Matrix value) { return push(std::move(value)); }

Tape::Var Tape::parameter(Tensor& t) {
    // Vectors bind as [1, n]; higher ranks fold trailing axes into columns.
    const std::size_t rows = t.shape.size() >= 2 ? t.shape[0] : 1;
    const std::size_t cols = rows == 0 ? 0 : t.count() / rows;
    const Var v = push(Matrix(rows, cols, t.values));
    nodes_[v].param = &t;
    return v;
}

Tape::Var Tape::linear(Var x, Var w, Var b) {
    const Matrix& X = nodes_[x].value;
    const Matrix& W = nodes_[w].value;
    const Matrix& B = nodes_[b].value;
    if (X.cols() != W.cols()) {
        throw ArgumentError("linear: input width " + std::to_string(X.cols()) + " != weight fan-in " +
                            std::to_string(W.cols()));
    }
    if (B.size() != W.rows()) throw ArgumentError("linear: bias size mismatch");
    Matrix Y(X.rows(), W.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) {
        const float* xi = X.row(i).data();
        for (std::size_t o = 0; o < W.rows(); ++o) Y(i, o) = dot_f(xi, W.row(o).data(), X.cols()) + B.data()[o];
    }
    const Var y = push(std::move(Y));
    backward_fns_.push_back([this, x, w, b, y] {
        const Matrix& G = nodes_[y].grad;
        if (G.empty()) return;
        const Matrix& Xv = nodes_[x].value;
        const Matrix& Wv = nodes_[w].value;
        Matrix& dX = grad_of(x);
        Matrix& dW = grad_of(w);
        Matrix& dB = grad_of(b);
        for (std::size_t i = 0; i < Xv.rows(); ++i) {
            const float* xi = Xv.row(i).data();
            float* dxi = dX.row(i).data();
            for (std::size_t o = 0; o < Wv.rows(); ++o) {
                const float g = G(i, o);
                if (g == 0.0f) continue;
                axpy(g, Wv.row(o).data(), dxi, Xv.cols());
                axpy(g, xi, dW.row(o).data(), Xv.cols());
                dB.data()[o] += g;
            }
        }
    });
    return y;
}

Tape::Var Tape::relu(Var x) {
    Matrix Y = nodes_[x].value;
    for (float& v : Y.data()) v = v > 0.0f ? v : 0.0f;
    const Var y = push(std::move(Y));
    backward_fns_.push_back([this, x, y] {
        const Matrix& G = nodes_[y].grad;
        if (G.empty()) return;
        const auto& X = nodes_[x].value.data();
        auto& dX = grad_of(x).data();
        for (std::size_t i = 0; i < X.size(); ++i) {
            if (X[i] > 0.0f) dX[i] += G.data()[i];
        }
    });
    return y;
}

Tape::Var Tape::dropout(Var x, float rate, std::uint64_t seed) {
    if (!(rate >= 0.0f && rate < 1.0f)) throw ArgumentError("dropout rate must lie in [0, 1)");
    const Matrix& X = nodes_[x].value;
    Matrix mask(X.rows(), X.cols());
    Rng rng(seed);
    const float keep_scale = 1.0f / (1.0f - rate);
    for (float& m : mask.data()) m = rng.uniform() < rate ? 0.0f : keep_scale;
    Matrix Y = X;
    for (std::size_t i = 0; i < Y.size(); ++i) Y.data()[i] *= mask.data()[i];
    const Var y = push(std::move(Y));
    const std::size_t mask_id = masks_.size();
    masks_.push_back(std::move(mask));
    backward_fns_.push_back([this, x, y, mask_id] {
        const Matrix& G = nodes_[y].grad;
        if (G.empty()) return;
        auto& dX = grad_of(x).data();
        const auto& m = masks_[mask_id].data();
        for (std::size_t i = 0; i < dX.size(); ++i) dX[i] += G.data()[i] * m[i];
    });
    return y;
}

Tape::Var Tape::scale(Var x, float s) {
    Matrix Y = nodes_[x].value;
    for (float& v : Y.data()) v *= s;
    const Var y = push(std::move(Y));
    backward_fns_.push_back([this, x, y, s] {
        const Matrix& G = nodes_[y].grad;
        if (G.empty()) return;
        axpy(s, G.data().data(), grad_of(x).data().data(), G.size());
    });
    return y;
}

Tape::Var Tape::add(Var a, Var b) {
    require_same_shape(nodes_[a].value, nodes_[b].value, "add");
    Matrix Y = nodes_[a].value;
    axpy(1.0f, nodes_[b].value.data().data(), Y.data().data(), Y.size());
    const Var y = push(std::move(Y));
    backward_fns_.push_back([this, a, b, y] {
        const Matrix& G = nodes_[y].grad;
        if (G.empty()) return;
        axpy(1.0f, G.data().data(), grad_of(a).data().data(), G.size());
        axpy(1.0f, G.data().data(), grad_of(b).data().data(), G.size());
    });
    return y;
}

Tape::Var Tape::l2_normalize_rows(Var x) {
    const Matrix& X = nodes_[x].value;
    Matrix Y(X.rows(), X.cols());
    std::vector<float> norms(X.rows());
    for (std::size_t i = 0; i < X.rows(); ++i) {
        const double n = l2_norm(X.row(i));
        if (!(n >= 1e-12)) {
            throw NormalizationError("row " + std::to_string(i) + " has norm " + std::to_string(n) +
                                     "; cannot L2-normalize");
        }
        norms[i] = static_cast<float>(n);
        const auto xr = X.row(i);
        auto yr = Y.row(i);
        for (std::size_t j = 0; j < xr.size(); ++j) yr[j] = static_cast<float>(xr[j] / n);
    }
    const Var y = push(std::move(Y));
    backward_fns_.push_back([this, x, y, norms = std::move(norms)] {
        const Matrix& G = nodes_[y].grad;
        if (G.empty()) return;
        const Matrix& Yv = nodes_[y].value;
        Matrix& dX = grad_of(x);
        // d/dx (x / |x|) applied to g: (g - y (y . g)) / |x|
        for (std::size_t i = 0; i < Yv.rows(); ++i) {
            const auto yr = Yv.row(i);
            const auto gr = G.row(i);
            const float yg = static_cast<float>(dot(yr, gr));
            auto dr = dX.row(i);
            for (std::size_t j = 0; j < yr.size(); ++j) dr[j] += (gr[j] - yr[j] * yg) / norms[i];
        }
    });
    return y;
}

Tape::Var Tape::conv1d_global_avg(Var x, Var w, Var b, std::size_t stride) {
    const Matrix& X = nodes_[x].value;
    const Matrix& W = nodes_[w].value;
    const Matrix& B = nodes_[b].value;
    if (stride == 0) throw ArgumentError("conv1d: stride must be >= 1");
    if (B.size() != W.rows()) throw ArgumentError("conv1d: bias size mismatch");
    const std::size_t len = X.cols();
    const std::size_t kernel = W.cols();
    const ConvGeometry geo = conv_geometry(len, kernel, stride);
    const float inv_positions = 1.0f / static_cast<float>(geo.out_len);

    // window[n, k] = mean over output positions of the input sample under tap k.
    Matrix window(X.rows(), kernel);
    for (std::size_t n = 0; n < X.rows(); ++n) {
        const auto xr = X.row(n);
        for (std::size_t k = 0; k < kernel; ++k) {
            float s = 0.0f;
            for (std::size_t pos = 0; pos < geo.out_len; ++pos) {
                const std::size_t src = pos * stride + k;
                if (src >= geo.pad_left && src - geo.pad_left < len) s += xr[src - geo.pad_left];
            }
            window(n, k) = s * inv_positions;
        }
    }
    Matrix Y(X.rows(), W.rows());
    for (std::size_t n = 0; n < X.rows(); ++n) {
        for (std::size_t f = 0; f < W.rows(); ++f) {
            Y(n, f) = dot_f(window.row(n).data(), W.row(f).data(), kernel) + B.data()[f];
        }
    }
    const Var y = push(std::move(Y));
    backward_fns_.push_back([this, x, w, b, y, stride, geo, inv_positions, window = std::move(window)] {
        const Matrix& G = nodes_[y].grad;
        if (G.empty()) return;
        const Matrix& Wv = nodes_[w].value;
        const std::size_t kernel_len = Wv.cols();
        const std::size_t in_len = nodes_[x].value.cols();
        Matrix& dX = grad_of(x);
        Matrix& dW = grad_of(w);
        Matrix& dB = grad_of(b);
        std::vector<float> dwin(kernel_len);
        for (std::size_t n = 0; n < G.rows(); ++n) {
            std::fill(dwin.begin(), dwin.end(), 0.0f);
            for (std::size_t f = 0; f < Wv.rows(); ++f) {
                const float g = G(n, f);
                dB.data()[f] += g;
                axpy(g, window.row(n).data(), dW.row(f).data(), kernel_len);
                axpy(g, Wv.row(f).data(), dwin.data(), kernel_len);
            }
            auto dxr = dX.row(n);
            for (std::size_t k = 0; k < kernel_len; ++k) {
                const float share = dwin[k] * inv_positions;
                for (std::size_t pos = 0; pos < geo.out_len; ++pos) {
                    const std::size_t src = pos * stride + k;
                    if (src >= geo.pad_left && src - geo.pad_left < in_len) dxr[src - geo.pad_left] += share;
                }
            }
        }
    });
    return y;
}

void Tape::backward(Var out, const Matrix& upstream) {
    if (out >= nodes_.size()) throw StateError("backward: no recorded computation");
    require_same_shape(nodes_[out].value, upstream, "backward");
    for (auto& n : nodes_) n.grad = Matrix{};
    nodes_[out].grad = upstream;
    for (auto it = backward_fns_.rbegin(); it != backward_fns_.rend(); ++it) (*it)();
    for (auto& n : nodes_) {
        if (!n.param) continue;
        if (n.param->grad.size() != n.param->values.size()) n.param->zero_grad();
        if (n.grad.empty()) continue;
        axpy(1.0f, n.grad.data().data(), n.param->grad.data(), n.grad.size());
    }
}

void Tape::clear() {
    nodes_.clear();
    backward_fns_.clear();
    masks_.clear();
}

}  // namespace retforge::model
