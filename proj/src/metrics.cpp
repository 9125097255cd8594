#include "retforge/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "retforge/error.hpp"
#include "retforge/parallel.hpp"

namespace retforge::metrics {

namespace {

constexpr std::size_t kBlock = 64;

void check_truth(const DistanceMatrix& d, std::span<const std::size_t> truth) {
    if (truth.size() != d.n_questions()) {
        throw ArgumentError("truth has " + std::to_string(truth.size()) + " entries for " +
                            std::to_string(d.n_questions()) + " questions");
    }
    for (const std::size_t t : truth) {
        if (t >= d.n_paragraphs()) throw ArgumentError("truth column " + std::to_string(t) + " out of range");
    }
}

struct ScoredPair {
    float distance;
    bool positive;
};

// All pairs sorted ascending by distance. Order inside a tie is irrelevant
// because every consumer groups equal distances.
std::vector<ScoredPair> sorted_pairs(const DistanceMatrix& d, std::span<const std::size_t> truth) {
    std::vector<ScoredPair> pairs;
    pairs.reserve(d.d.size());
    for (std::size_t i = 0; i < d.n_questions(); ++i) {
        const auto row = d.d.row(i);
        for (std::size_t j = 0; j < row.size(); ++j) pairs.push_back({row[j], truth[i] == j});
    }
    std::sort(pairs.begin(), pairs.end(), [](const ScoredPair& a, const ScoredPair& b) {
        if (a.distance != b.distance) return a.distance < b.distance;
        return a.positive > b.positive;
    });
    return pairs;
}

}  // namespace

double EvalReport::avg_recall() const noexcept { return mean_fraction(recall_at); }

double EvalReport::recall_at_1() const noexcept {
    for (const auto& r : recall_at) {
        if (r.k == 1) return r.fraction;
    }
    return 0.0;
}

double mean_fraction(std::span<const RecallEntry> recalls) noexcept {
    if (recalls.empty()) return 0.0;
    double s = 0.0;
    for (const auto& r : recalls) s += r.fraction;
    return s / static_cast<double>(recalls.size());
}

DistanceMatrix pairwise_distances(const Matrix& questions, const Matrix& paragraphs) {
    if (questions.rows() == 0 || paragraphs.rows() == 0) throw ArgumentError("pairwise_distances: empty input");
    if (questions.cols() != paragraphs.cols()) {
        throw ArgumentError("pairwise_distances: dim mismatch " + std::to_string(questions.cols()) + " vs " +
                            std::to_string(paragraphs.cols()));
    }
    DistanceMatrix out{Matrix(questions.rows(), paragraphs.rows())};
    const std::size_t n_p = paragraphs.rows();
    parallel_for(questions.rows(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t jb = 0; jb < n_p; jb += kBlock) {
            const std::size_t je = std::min(n_p, jb + kBlock);
            for (std::size_t i = begin; i < end; ++i) {
                const auto q = questions.row(i);
                for (std::size_t j = jb; j < je; ++j) {
                    out.d(i, j) = static_cast<float>(squared_distance(q, paragraphs.row(j)));
                }
            }
        }
    });
    return out;
}

std::size_t rank_of(const DistanceMatrix& d, std::size_t row, std::size_t target) noexcept {
    const auto r = d.d.row(row);
    const float t = r[target];
    std::size_t rank = 0;
    for (std::size_t j = 0; j < r.size(); ++j) {
        if (r[j] < t || (r[j] == t && j < target)) ++rank;
    }
    return rank;
}

std::vector<RecallEntry> recall_at_k(const DistanceMatrix& d, std::span<const std::size_t> truth,
                                     std::span<const std::size_t> ks) {
    check_truth(d, truth);
    for (std::size_t i = 0; i < ks.size(); ++i) {
        if (ks[i] == 0 || ks[i] > d.n_paragraphs()) {
            throw ArgumentError("k = " + std::to_string(ks[i]) + " outside [1, " + std::to_string(d.n_paragraphs()) +
                                "]");
        }
        if (i > 0 && ks[i] <= ks[i - 1]) throw ArgumentError("ks must be strictly ascending");
    }
    std::vector<std::size_t> ranks(d.n_questions());
    parallel_for(d.n_questions(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) ranks[i] = rank_of(d, i, truth[i]);
    });
    std::vector<RecallEntry> out;
    for (const std::size_t k : ks) {
        const auto hits = static_cast<std::size_t>(
            std::count_if(ranks.begin(), ranks.end(), [k](std::size_t r) { return r < k; }));
        out.push_back({k, hits, static_cast<double>(hits) / static_cast<double>(d.n_questions())});
    }
    return out;
}

PrResult pr_curve_and_ap(const DistanceMatrix& d, std::span<const std::size_t> truth) {
    check_truth(d, truth);
    const auto pairs = sorted_pairs(d, truth);
    const double n_pos = static_cast<double>(d.n_questions());
    PrResult out;
    std::size_t tp = 0;
    std::size_t seen = 0;
    double prev_recall = 0.0;
    for (std::size_t i = 0; i < pairs.size();) {
        std::size_t j = i;
        while (j < pairs.size() && pairs[j].distance == pairs[i].distance) {
            tp += pairs[j].positive ? 1 : 0;
            ++j;
        }
        seen = j;
        const double recall = static_cast<double>(tp) / n_pos;
        if (recall != prev_recall) {
            const double precision = static_cast<double>(tp) / static_cast<double>(seen);
            out.average_precision += (recall - prev_recall) * precision;
            out.points.push_back({recall, precision});
            prev_recall = recall;
        }
        i = j;
    }
    return out;
}

double roc_auc(const DistanceMatrix& d, std::span<const std::size_t> truth) {
    check_truth(d, truth);
    const std::size_t n_pos = d.n_questions();
    const std::size_t n_neg = d.d.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw ArgumentError("roc_auc needs at least one positive and one negative pair");
    const auto pairs = sorted_pairs(d, truth);
    // Trapezoidal ROC area via the rank statistic: every positive earns one per
    // strictly farther negative and one half per tied negative.
    double wins = 0.0;
    std::size_t neg_before = 0;
    for (std::size_t i = 0; i < pairs.size();) {
        std::size_t j = i;
        std::size_t pos_here = 0;
        std::size_t neg_here = 0;
        while (j < pairs.size() && pairs[j].distance == pairs[i].distance) {
            (pairs[j].positive ? pos_here : neg_here) += 1;
            ++j;
        }
        const double neg_after = static_cast<double>(n_neg - neg_before - neg_here);
        wins += static_cast<double>(pos_here) * (neg_after + 0.5 * static_cast<double>(neg_here));
        neg_before += neg_here;
        i = j;
    }
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::vector<std::vector<std::size_t>> top_k_rows(const DistanceMatrix& d, std::size_t k) {
    if (k == 0 || k > d.n_paragraphs()) {
        throw ArgumentError("k = " + std::to_string(k) + " outside [1, " + std::to_string(d.n_paragraphs()) + "]");
    }
    std::vector<std::vector<std::size_t>> out(d.n_questions());
    parallel_for(d.n_questions(), [&](std::size_t begin, std::size_t end) {
        std::vector<std::size_t> cols(d.n_paragraphs());
        for (std::size_t i = begin; i < end; ++i) {
            const auto row = d.d.row(i);
            std::iota(cols.begin(), cols.end(), std::size_t{0});
            std::partial_sort(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(k), cols.end(),
                              [&](std::size_t a, std::size_t b) {
                                  return row[a] != row[b] ? row[a] < row[b] : a < b;
                              });
            out[i].assign(cols.begin(), cols.begin() + static_cast<std::ptrdiff_t>(k));
        }
    });
    return out;
}

EvalReport evaluate(const DistanceMatrix& d, std::span<const std::size_t> truth, std::span<const std::size_t> ks,
                    bool with_auc) {
    EvalReport r;
    r.n_questions = d.n_questions();
    r.n_paragraphs = d.n_paragraphs();
    r.recall_at = recall_at_k(d, truth, ks);
    auto pr = pr_curve_and_ap(d, truth);
    r.pr_curve = std::move(pr.points);
    r.average_precision = pr.average_precision;
    if (with_auc) r.auc = roc_auc(d, truth);
    return r;
}

}  // namespace retforge::metrics
