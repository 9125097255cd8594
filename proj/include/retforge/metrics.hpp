#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "retforge/matrix.hpp"

namespace retforge::metrics {

// d(i, j) = ||q_i - p_j||^2 for question row i, paragraph column j.
struct DistanceMatrix {
    Matrix d;

    std::size_t n_questions() const noexcept { return d.rows(); }
    std::size_t n_paragraphs() const noexcept { return d.cols(); }
};

struct RecallEntry {
    std::size_t k = 0;
    std::size_t hits = 0;
    double fraction = 0.0;
};

struct PrPoint {
    double recall = 0.0;
    double precision = 0.0;
};

struct PrResult {
    std::vector<PrPoint> points;
    double average_precision = 0.0;
};

struct EvalReport {
    std::size_t n_questions = 0;
    std::size_t n_paragraphs = 0;
    std::vector<RecallEntry> recall_at;
    std::vector<PrPoint> pr_curve;
    double average_precision = 0.0;
    std::optional<double> auc;

    double avg_recall() const noexcept;
    double recall_at_1() const noexcept;
};

inline const std::vector<std::size_t> kDefaultKs{1, 2, 5, 10, 20, 50};

DistanceMatrix pairwise_distances(const Matrix& questions, const Matrix& paragraphs);

// 0-based rank of column `target` in row i; ties go to the lower column index.
std::size_t rank_of(const DistanceMatrix& d, std::size_t row, std::size_t target) noexcept;

std::vector<RecallEntry> recall_at_k(const DistanceMatrix& d, std::span<const std::size_t> truth,
                                     std::span<const std::size_t> ks);

// Pairs swept in ascending distance; tied distances form one threshold. One
// point is emitted at every threshold where the true-positive count changes.
// AP is the step-wise sum of (R_i - R_{i-1}) * P_i.
PrResult pr_curve_and_ap(const DistanceMatrix& d, std::span<const std::size_t> truth);

// Probability that a random positive pair is closer than a random negative
// pair, ties counting one half.
double roc_auc(const DistanceMatrix& d, std::span<const std::size_t> truth);

// Per row, the k nearest columns ascending; ties go to the lower column.
std::vector<std::vector<std::size_t>> top_k_rows(const DistanceMatrix& d, std::size_t k);

EvalReport evaluate(const DistanceMatrix& d, std::span<const std::size_t> truth, std::span<const std::size_t> ks,
                    bool with_auc = false);

double mean_fraction(std::span<const RecallEntry> recalls) noexcept;

}  // namespace retforge::metrics
