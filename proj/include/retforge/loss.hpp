#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "retforge/matrix.hpp"

namespace retforge::loss {

struct TripletBatch {
    Matrix anchors;    // q_anchor rows
    Matrix positives;  // paired paragraph rows
    Matrix negatives;  // hardest in-batch non-matching paragraph rows
    float margin = 0.2f;
    // negative_index[i] = row of the candidate matrix chosen as anchor i's negative.
    std::vector<std::size_t> negative_index;
};

struct LossResult {
    double value = 0.0;
    Matrix grad_anchors;
    Matrix grad_positives;
    Matrix grad_negatives;
    std::size_t active = 0;  // rows with a positive hinge
};

struct PairLossResult {
    double value = 0.0;
    Matrix grad_questions;
    Matrix grad_paragraphs;
    std::size_t active = 0;
};

// For anchor i the positive is paragraphs[i]; the negative is the row j != i
// minimising ||questions[i] - paragraphs[j]||^2 among rows whose pair identity
// differs from row i's (lowest j wins ties). pair_ids, when given, names the
// paragraph behind each row so duplicated paragraphs are never negatives of
// each other. Throws ArgumentError when b < 2 or an anchor has no candidate.
TripletBatch mine_hard_triplets(const Matrix& questions, const Matrix& paragraphs, float margin,
                                std::optional<std::span<const std::size_t>> pair_ids = std::nullopt);

// Corpus-wide variant: anchor i's negative is the row of `pool` closest to it
// other than positive_rows[i]. negative_index refers to pool rows.
TripletBatch mine_corpus_triplets(const Matrix& anchors, const Matrix& positives, const Matrix& pool,
                                  std::span<const std::size_t> positive_rows, float margin);

// Mean over rows of max(0, ||a-p||^2 - ||a-n||^2 + m), with exact gradients
// (zero at and below the hinge).
LossResult triplet_loss(const TripletBatch& t);

// m'(m, d) = m if d > m else 0.
double conditional_margin(double m, double d) noexcept;

// Mean over pairs of max(0, d - m) + m'(m, d), d = ||q_i - p_i||^2. The m' term
// is piecewise constant and contributes no gradient.
PairLossResult quadratic_regression_conditional_loss(const Matrix& questions, const Matrix& paragraphs, float margin);

}  // namespace retforge::loss
