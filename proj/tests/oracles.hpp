// Independent reference implementations used only by the tests. Everything
// here is written as plain loops in double precision and shares no code with
// the library beyond the data containers.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "retforge/embedstore.hpp"
#include "retforge/matrix.hpp"
#include "retforge/model.hpp"
#include "retforge/rng.hpp"

namespace oracle {

using retforge::Matrix;
using Grid = std::vector<std::vector<double>>;

// ---- generators ----

inline Matrix random_matrix(retforge::Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (float& v : m.data()) v = static_cast<float>(scale * rng.normal());
    return m;
}

inline Matrix random_unit_rows(retforge::Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m = random_matrix(rng, rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < cols; ++j) s += double(m(i, j)) * m(i, j);
        s = std::sqrt(s);
        for (std::size_t j = 0; j < cols; ++j) m(i, j) = static_cast<float>(m(i, j) / s);
    }
    return m;
}

// Distances drawn from a small integer set so ties are common.
inline Matrix tied_distances(retforge::Rng& rng, std::size_t rows, std::size_t cols, std::uint64_t levels) {
    Matrix d(rows, cols);
    for (float& v : d.data()) v = static_cast<float>(rng.below(levels)) * 0.25f;
    return d;
}

// ---- metrics ----

inline Grid distances(const Matrix& q, const Matrix& p) {
    Grid d(q.rows(), std::vector<double>(p.rows()));
    for (std::size_t i = 0; i < q.rows(); ++i) {
        for (std::size_t j = 0; j < p.rows(); ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < q.cols(); ++c) {
                const double diff = double(q(i, c)) - double(p(j, c));
                s += diff * diff;
            }
            d[i][j] = s;
        }
    }
    return d;
}

// Full argsort of one row, ties by column.
inline std::vector<std::size_t> argsort_row(const Matrix& d, std::size_t i) {
    std::vector<std::size_t> idx(d.cols());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return d(i, a) < d(i, b); });
    return idx;
}

inline std::vector<std::size_t> recall_hits(const Matrix& d, const std::vector<std::size_t>& truth,
                                            const std::vector<std::size_t>& ks) {
    std::vector<std::size_t> hits(ks.size(), 0);
    for (std::size_t i = 0; i < d.rows(); ++i) {
        const auto order = argsort_row(d, i);
        const auto pos = static_cast<std::size_t>(std::find(order.begin(), order.end(), truth[i]) - order.begin());
        for (std::size_t k = 0; k < ks.size(); ++k) hits[k] += pos < ks[k] ? 1 : 0;
    }
    return hits;
}

inline std::vector<std::vector<std::size_t>> top_k(const Matrix& d, std::size_t k) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        auto order = argsort_row(d, i);
        order.resize(k);
        out.push_back(order);
    }
    return out;
}

struct PrOracle {
    std::vector<std::pair<double, double>> points;  // (recall, precision)
    double ap = 0.0;
};

// Enumerates every distinct distance as a threshold t and classifies all pairs
// with d <= t as retrieved.
inline PrOracle pr_enumerate(const Matrix& d, const std::vector<std::size_t>& truth) {
    std::vector<float> thresholds(d.data().begin(), d.data().end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    const double n_pos = static_cast<double>(d.rows());
    PrOracle out;
    double prev_recall = 0.0;
    std::size_t prev_tp = 0;
    for (const float t : thresholds) {
        std::size_t tp = 0;
        std::size_t retrieved = 0;
        for (std::size_t i = 0; i < d.rows(); ++i) {
            for (std::size_t j = 0; j < d.cols(); ++j) {
                if (d(i, j) <= t) {
                    ++retrieved;
                    if (truth[i] == j) ++tp;
                }
            }
        }
        if (tp == prev_tp) continue;
        const double recall = static_cast<double>(tp) / n_pos;
        const double precision = static_cast<double>(tp) / static_cast<double>(retrieved);
        out.points.emplace_back(recall, precision);
        out.ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        prev_tp = tp;
    }
    return out;
}

inline double auc_pairs(const Matrix& d, const std::vector<std::size_t>& truth) {
    std::vector<float> pos;
    std::vector<float> neg;
    for (std::size_t i = 0; i < d.rows(); ++i) {
        for (std::size_t j = 0; j < d.cols(); ++j) (truth[i] == j ? pos : neg).push_back(d(i, j));
    }
    double score = 0.0;
    for (const float p : pos) {
        for (const float n : neg) score += p < n ? 1.0 : (p == n ? 0.5 : 0.0);
    }
    return score / (static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

// ---- aggregation ----

inline std::vector<double> pool(const retforge::embedstore::TokenEmbeddingStore& store,
                                const retforge::embedstore::DocEntry& e, const std::vector<double>& w,
                                const std::vector<double>* idf) {
    std::vector<double> acc(store.dim(), 0.0);
    for (std::size_t k = 0; k < e.length; ++k) {
        const double scale = idf ? (*idf)[k] : 1.0;
        for (std::size_t l = 0; l < store.n_layers(); ++l) {
            for (std::size_t c = 0; c < store.dim(); ++c) {
                acc[c] += scale * w[l] * double(store.at(e.offset + k, l, c));
            }
        }
    }
    double norm = 0.0;
    for (double& v : acc) {
        v /= static_cast<double>(e.length);
        norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : acc) v /= norm;
    return acc;
}

// ln(N / df) with df counted over documents.
inline double idf_of(const std::vector<std::vector<std::uint64_t>>& docs, std::uint64_t token) {
    std::size_t df = 0;
    for (const auto& d : docs) df += std::find(d.begin(), d.end(), token) != d.end() ? 1 : 0;
    const double n = static_cast<double>(docs.size());
    return std::log(n / static_cast<double>(df == 0 ? 1 : df));
}

// ---- mining ----

inline std::vector<std::size_t> hardest_negatives(const Matrix& q, const Matrix& p,
                                                  const std::vector<std::size_t>& pair_ids) {
    const Grid d = distances(q, p);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < q.rows(); ++i) {
        std::optional<std::size_t> best;
        for (std::size_t j = 0; j < p.rows(); ++j) {
            if (j == i || pair_ids[j] == pair_ids[i]) continue;
            if (!best || d[i][j] < d[i][*best]) best = j;
        }
        out.push_back(*best);
    }
    return out;
}

// ---- model reference forward ----

struct Reference {
    Grid out;
    std::vector<bool> relu_active;  // every pre-activation sign, in evaluation order
};

inline Grid to_grid(const Matrix& m) {
    Grid g(m.rows(), std::vector<double>(m.cols()));
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
    }
    return g;
}

inline void normalize_rows(Grid& g) {
    for (auto& row : g) {
        double s = 0.0;
        for (const double v : row) s += v * v;
        s = std::sqrt(s);
        for (double& v : row) v /= s;
    }
}

// Parameters are read as doubles from the model; `masks` are the dropout masks
// recorded by a training forward (empty for inference).
inline Reference forward(const retforge::model::RetrievalModel& m, const Grid& x, const std::vector<Matrix>& masks) {
    Reference ref;
    std::size_t mask_id = 0;
    const auto values = [&](const std::string& name) {
        const auto& t = m.param(name);
        return std::vector<double>(t.values.begin(), t.values.end());
    };
    Grid h0 = x;
    if (const auto& fc = m.fcrr_config()) {
        Grid h = h0;
        for (std::size_t l = 0; l < fc->n_layers; ++l) {
            const std::string base = "fcrr.dense" + std::to_string(l);
            const auto& wt = m.param(base + ".weight");
            const std::vector<double> w = values(base + ".weight");
            const std::vector<double> b = values(base + ".bias");
            const std::size_t out_dim = wt.shape[0];
            const std::size_t in_dim = wt.shape[1];
            Grid next(h.size(), std::vector<double>(out_dim));
            for (std::size_t r = 0; r < h.size(); ++r) {
                for (std::size_t o = 0; o < out_dim; ++o) {
                    double s = b[o];
                    for (std::size_t i = 0; i < in_dim; ++i) s += w[o * in_dim + i] * h[r][i];
                    next[r][o] = s;
                }
            }
            if (l + 1 < fc->n_layers) {
                for (std::size_t r = 0; r < next.size(); ++r) {
                    for (std::size_t o = 0; o < out_dim; ++o) {
                        ref.relu_active.push_back(next[r][o] > 0.0);
                        next[r][o] = std::max(0.0, next[r][o]);
                    }
                }
                if (!masks.empty() && fc->dropout > 0.0f) {
                    const Matrix& mk = masks.at(mask_id++);
                    for (std::size_t r = 0; r < next.size(); ++r) {
                        for (std::size_t o = 0; o < out_dim; ++o) next[r][o] *= mk(r, o);
                    }
                }
            }
            h = std::move(next);
        }
        for (std::size_t r = 0; r < h.size(); ++r) {
            for (std::size_t c = 0; c < h[r].size(); ++c) h[r][c] += fc->scaling_factor * h0[r][c];
        }
        normalize_rows(h);
        h0 = std::move(h);
    }
    if (const auto& cv = m.conv_config()) {
        const std::vector<double> w = values("convrr.conv.weight");
        const std::vector<double> b = values("convrr.conv.bias");
        const std::size_t len = h0.front().size();
        const std::size_t k = cv->kernel_len;
        const std::size_t s = cv->stride;
        const std::size_t out_len = (len + s - 1) / s;
        const std::size_t needed = (out_len - 1) * s + k;
        const std::size_t pad = needed > len ? (needed - len) / 2 : 0;
        Grid h(h0.size(), std::vector<double>(cv->n_filters));
        for (std::size_t r = 0; r < h0.size(); ++r) {
            for (std::size_t f = 0; f < cv->n_filters; ++f) {
                double total = 0.0;
                for (std::size_t o = 0; o < out_len; ++o) {
                    double acc = b[f];
                    for (std::size_t t = 0; t < k; ++t) {
                        const long pos = static_cast<long>(o * s + t) - static_cast<long>(pad);
                        if (pos >= 0 && pos < static_cast<long>(len)) acc += w[f * k + t] * h0[r][pos];
                    }
                    total += acc;
                }
                h[r][f] = total / static_cast<double>(out_len);
            }
        }
        if (!masks.empty() && cv->dropout > 0.0f) {
            const Matrix& mk = masks.at(mask_id++);
            for (std::size_t r = 0; r < h.size(); ++r) {
                for (std::size_t f = 0; f < h[r].size(); ++f) h[r][f] *= mk(r, f);
            }
        }
        for (std::size_t r = 0; r < h.size(); ++r) {
            for (std::size_t c = 0; c < h[r].size(); ++c) h[r][c] += cv->scaling_factor * h0[r][c];
        }
        normalize_rows(h);
        h0 = std::move(h);
    }
    ref.out = std::move(h0);
    return ref;
}

inline double weighted_sum(const Grid& out, const Matrix& upstream) {
    double s = 0.0;
    for (std::size_t r = 0; r < out.size(); ++r) {
        for (std::size_t c = 0; c < out[r].size(); ++c) s += out[r][c] * upstream(r, c);
    }
    return s;
}

// max |a - n| / max(max |a|, max |n|) over one tensor.
struct RelErr {
    double max_abs_diff = 0.0;
    double scale = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;

    void add(double analytic, double numeric) {
        max_abs_diff = std::max(max_abs_diff, std::abs(analytic - numeric));
        scale = std::max({scale, std::abs(analytic), std::abs(numeric)});
        ++checked;
    }
    double value() const { return scale > 0.0 ? max_abs_diff / scale : max_abs_diff; }
};

// Central differences of sum(out * upstream) with respect to every parameter
// element. Elements whose perturbation flips a ReLU are skipped.
inline std::vector<std::pair<std::string, RelErr>> check_param_grads(retforge::model::RetrievalModel& m,
                                                                     const Matrix& x, const Matrix& upstream,
                                                                     std::uint64_t seed, double h = 1e-3) {
    m.zero_grad();
    m.forward(x, true, seed);
    const std::vector<Matrix> masks = m.dropout_masks();
    m.backward(upstream);
    const Grid xg = to_grid(x);
    const Reference base = forward(m, xg, masks);
    std::vector<std::pair<std::string, RelErr>> out;
    for (auto& np : m.params()) {
        RelErr err;
        auto& t = np.tensor;
        for (std::size_t i = 0; i < t.count(); ++i) {
            const float orig = t.values[i];
            // Perturb in double through a temporary copy so the step is exact.
            auto eval = [&](double delta) {
                t.values[i] = static_cast<float>(double(orig) + delta);
                const double actual = double(t.values[i]) - double(orig);
                Reference r = forward(m, xg, masks);
                t.values[i] = orig;
                return std::make_tuple(weighted_sum(r.out, upstream), actual, std::move(r.relu_active));
            };
            auto [fp, dp, ap] = eval(h);
            auto [fm, dm, am] = eval(-h);
            if (ap != base.relu_active || am != base.relu_active) {
                ++err.skipped;
                continue;
            }
            err.add(t.grad[i], (fp - fm) / (dp - dm));
        }
        out.emplace_back(np.name, err);
    }
    return out;
}

// Central differences with respect to the input rows.
inline RelErr check_input_grad(retforge::model::RetrievalModel& m, const Matrix& x, const Matrix& upstream,
                               std::uint64_t seed, double h = 1e-3) {
    m.zero_grad();
    m.forward(x, true, seed);
    const std::vector<Matrix> masks = m.dropout_masks();
    const Matrix dx = m.backward(upstream);
    Grid xg = to_grid(x);
    const Reference base = forward(m, xg, masks);
    RelErr err;
    for (std::size_t r = 0; r < xg.size(); ++r) {
        for (std::size_t c = 0; c < xg[r].size(); ++c) {
            const double orig = xg[r][c];
            xg[r][c] = orig + h;
            const Reference rp = forward(m, xg, masks);
            xg[r][c] = orig - h;
            const Reference rm = forward(m, xg, masks);
            xg[r][c] = orig;
            if (rp.relu_active != base.relu_active || rm.relu_active != base.relu_active) {
                ++err.skipped;
                continue;
            }
            err.add(dx(r, c), (weighted_sum(rp.out, upstream) - weighted_sum(rm.out, upstream)) / (2 * h));
        }
    }
    return err;
}

// ---- loss ----

inline double triplet_value(const Grid& a, const Grid& p, const Grid& n, double margin) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double dp = 0.0;
        double dn = 0.0;
        for (std::size_t c = 0; c < a[i].size(); ++c) {
            dp += (a[i][c] - p[i][c]) * (a[i][c] - p[i][c]);
            dn += (a[i][c] - n[i][c]) * (a[i][c] - n[i][c]);
        }
        total += std::max(0.0, dp - dn + margin);
    }
    return total / static_cast<double>(a.size());
}

inline double quadratic_value(const Grid& q, const Grid& p, double margin) {
    double total = 0.0;
    for (std::size_t i = 0; i < q.size(); ++i) {
        double d = 0.0;
        for (std::size_t c = 0; c < q[i].size(); ++c) d += (q[i][c] - p[i][c]) * (q[i][c] - p[i][c]);
        total += std::max(0.0, d - margin) + (d > margin ? margin : 0.0);
    }
    return total / static_cast<double>(q.size());
}

// ---- optimizer ----

// Two Adam steps on one scalar, decoupled decay first.
inline std::vector<double> adam_scalar(double p, const std::vector<double>& grads, double lr, double wd) {
    const double b1 = 0.9;
    const double b2 = 0.999;
    const double eps = 1e-8;
    double m = 0.0;
    double v = 0.0;
    std::vector<double> trace;
    for (std::size_t t = 1; t <= grads.size(); ++t) {
        const double g = grads[t - 1];
        p -= lr * wd * p;
        m = b1 * m + (1 - b1) * g;
        v = b2 * v + (1 - b2) * g * g;
        const double mhat = m / (1 - std::pow(b1, double(t)));
        const double vhat = v / (1 - std::pow(b2, double(t)));
        p -= lr * mhat / (std::sqrt(vhat) + eps);
        trace.push_back(p);
    }
    return trace;
}

}  // namespace oracle
