#include "retforge/loss.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "retforge/error.hpp"
#include "retforge/parallel.hpp"

namespace retforge::loss {

namespace {

void require_paired(const Matrix& a, const Matrix& b, const char* op) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ArgumentError(std::string(op) + ": inputs must have equal shapes");
    }
}

}  // namespace

TripletBatch mine_hard_triplets(const Matrix& questions, const Matrix& paragraphs, float margin,
                                std::optional<std::span<const std::size_t>> pair_ids) {
    require_paired(questions, paragraphs, "mine_hard_triplets");
    const std::size_t b = questions.rows();
    if (b < 2) throw ArgumentError("mine_hard_triplets: batch of " + std::to_string(b) + " has no negatives");
    if (pair_ids && pair_ids->size() != b) throw ArgumentError("mine_hard_triplets: pair_ids size mismatch");
    if (!(margin > 0.0f)) throw ArgumentError("mine_hard_triplets: margin must be > 0");

    TripletBatch t;
    t.margin = margin;
    t.anchors = questions;
    t.positives = paragraphs;
    t.negatives = Matrix(b, questions.cols());
    t.negative_index.assign(b, 0);
    parallel_for(b, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_j = b;
            for (std::size_t j = 0; j < b; ++j) {
                if (j == i) continue;
                if (pair_ids && (*pair_ids)[j] == (*pair_ids)[i]) continue;
                const double d = squared_distance(questions.row(i), paragraphs.row(j));
                if (d < best) {
                    best = d;
                    best_j = j;
                }
            }
            if (best_j == b) {
                throw ArgumentError("mine_hard_triplets: anchor " + std::to_string(i) +
                                    " has no paragraph with a different pair identity");
            }
            t.negative_index[i] = best_j;
            const auto src = paragraphs.row(best_j);
            std::copy(src.begin(), src.end(), t.negatives.row(i).begin());
        }
    });
    return t;
}

TripletBatch mine_corpus_triplets(const Matrix& anchors, const Matrix& positives, const Matrix& pool,
                                  std::span<const std::size_t> positive_rows, float margin) {
    require_paired(anchors, positives, "mine_corpus_triplets");
    if (positive_rows.size() != anchors.rows()) throw ArgumentError("mine_corpus_triplets: positive_rows size mismatch");
    if (pool.rows() < 2 || pool.cols() != anchors.cols()) throw ArgumentError("mine_corpus_triplets: bad pool");
    if (!(margin > 0.0f)) throw ArgumentError("mine_corpus_triplets: margin must be > 0");
    const std::size_t b = anchors.rows();
    TripletBatch t;
    t.margin = margin;
    t.anchors = anchors;
    t.positives = positives;
    t.negatives = Matrix(b, anchors.cols());
    t.negative_index.assign(b, 0);
    parallel_for(b, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < pool.rows(); ++j) {
                if (j == positive_rows[i]) continue;
                const double d = squared_distance(anchors.row(i), pool.row(j));
                if (d < best) {
                    best = d;
                    best_j = j;
                }
            }
            t.negative_index[i] = best_j;
            const auto src = pool.row(best_j);
            std::copy(src.begin(), src.end(), t.negatives.row(i).begin());
        }
    });
    return t;
}

LossResult triplet_loss(const TripletBatch& t) {
    require_paired(t.anchors, t.positives, "triplet_loss");
    require_paired(t.anchors, t.negatives, "triplet_loss");
    const std::size_t b = t.anchors.rows();
    const std::size_t dim = t.anchors.cols();
    LossResult r;
    r.grad_anchors = Matrix(b, dim);
    r.grad_positives = Matrix(b, dim);
    r.grad_negatives = Matrix(b, dim);
    if (b == 0) return r;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        const auto a = t.anchors.row(i);
        const auto p = t.positives.row(i);
        const auto n = t.negatives.row(i);
        const double hinge = squared_distance(a, p) - squared_distance(a, n) + t.margin;
        if (!(hinge > 0.0)) continue;
        r.value += hinge;
        ++r.active;
        auto ga = r.grad_anchors.row(i);
        auto gp = r.grad_positives.row(i);
        auto gn = r.grad_negatives.row(i);
        for (std::size_t d = 0; d < dim; ++d) {
            // d/da = 2(n - p), d/dp = -2(a - p), d/dn = 2(a - n)
            ga[d] = static_cast<float>(2.0 * (static_cast<double>(n[d]) - p[d]) * inv_b);
            gp[d] = static_cast<float>(-2.0 * (static_cast<double>(a[d]) - p[d]) * inv_b);
            gn[d] = static_cast<float>(2.0 * (static_cast<double>(a[d]) - n[d]) * inv_b);
        }
    }
    r.value *= inv_b;
    return r;
}

double conditional_margin(double m, double d) noexcept { return d > m ? m : 0.0; }

PairLossResult quadratic_regression_conditional_loss(const Matrix& questions, const Matrix& paragraphs,
                                                     float margin) {
    require_paired(questions, paragraphs, "quadratic_regression_conditional_loss");
    if (!(margin > 0.0f)) throw ArgumentError("quadratic loss: margin must be > 0");
    const std::size_t b = questions.rows();
    const std::size_t dim = questions.cols();
    PairLossResult r;
    r.grad_questions = Matrix(b, dim);
    r.grad_paragraphs = Matrix(b, dim);
    if (b == 0) return r;
    const double inv_b = 1.0 / static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i) {
        const auto q = questions.row(i);
        const auto p = paragraphs.row(i);
        const double d = squared_distance(q, p);
        const double hinge = d - margin;
        r.value += (hinge > 0.0 ? hinge : 0.0) + conditional_margin(margin, d);
        if (!(hinge > 0.0)) continue;
        ++r.active;
        auto gq = r.grad_questions.row(i);
        auto gp = r.grad_paragraphs.row(i);
        for (std::size_t k = 0; k < dim; ++k) {
            const double g = 2.0 * (static_cast<double>(q[k]) - p[k]) * inv_b;
            gq[k] = static_cast<float>(g);
            gp[k] = static_cast<float>(-g);
        }
    }
    r.value *= inv_b;
    return r;
}

}  // namespace retforge::loss
