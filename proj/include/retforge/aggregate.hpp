#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "retforge/embedstore.hpp"
#include "retforge/matrix.hpp"

namespace retforge::aggregate {

using TokenId = std::uint64_t;

// Convex combination over the layer axis. Components are non-negative and sum
// to 1 within 1e-6.
class LayerWeights {
public:
    // Throws ArgumentError when the simplex constraint fails.
    explicit LayerWeights(std::vector<double> w);

    const std::vector<double>& values() const noexcept { return w_; }
    std::size_t size() const noexcept { return w_.size(); }
    double operator[](std::size_t i) const noexcept { return w_[i]; }
    std::string label() const;

    static LayerWeights single_layer(std::size_t n_layers, std::size_t layer);
    static LayerWeights uniform(std::size_t n_layers);

private:
    std::vector<double> w_;
};

struct IdfTable {
    std::map<TokenId, double> weights;
    std::size_t n_documents = 0;

    // Weight for token, or ln(n_documents) for tokens the table has not seen.
    double weight_or_rare(TokenId token) const noexcept;
    bool contains(TokenId token) const noexcept { return weights.contains(token); }
};

// One token-id list per document, in DocIndex order and aligned with the
// document's token rows in the store.
using TokenLists = std::vector<std::vector<TokenId>>;

struct EmbeddingMatrix {
    Matrix vectors;                              // [n_docs, dim]
    std::vector<embedstore::DocEntry> index;     // row order
    bool normalized = false;
};

// Question/paragraph view of an EmbeddingMatrix.
struct Partition {
    Matrix questions;
    Matrix paragraphs;
    std::vector<std::string> question_ids;
    std::vector<std::string> paragraph_ids;
    std::vector<std::size_t> truth;  // truth[i] = paragraph row answering question i
};

// Layer-weighted, optionally IDF-scaled mean over tokens, then L2-normalized.
// Throws NormalizationError on an all-zero pooled vector.
std::vector<float> pool_document(const embedstore::DocumentView& doc, const LayerWeights& w,
                                 std::optional<std::span<const double>> token_idf = std::nullopt);

// weights[t] = ln(N / df_t); df counts documents, not occurrences.
IdfTable compute_idf(const TokenLists& docs);

struct IdfInjection {
    const IdfTable& table;
    const TokenLists& tokens;
};

struct BuildStats {
    std::size_t missing_idf_tokens = 0;  // tokens that fell back to ln(N)
};

EmbeddingMatrix build_matrix(const embedstore::TokenEmbeddingStore& store, const embedstore::DocIndex& index,
                             const LayerWeights& w, std::optional<IdfInjection> idf = std::nullopt,
                             BuildStats* stats = nullptr);

Partition partition(const EmbeddingMatrix& m);

struct RecallSummary {
    double recall_at_1 = 0.0;
    double avg_recall = 0.0;
};

struct GridResult {
    LayerWeights weights;
    double recall_at_1 = 0.0;
    double avg_recall = 0.0;
};

using MatrixEvaluator = std::function<RecallSummary(const EmbeddingMatrix&)>;

// recall@k over k in ks for the question->paragraph task of the matrix.
MatrixEvaluator recall_evaluator(std::vector<std::size_t> ks = {1, 2, 5, 10, 20, 50});

// Builds and evaluates every config; ranked by recall@1 descending, ties keep
// input order.
std::vector<GridResult> grid_search(const embedstore::TokenEmbeddingStore& store, const embedstore::DocIndex& index,
                                    const std::vector<LayerWeights>& configs, const MatrixEvaluator& eval,
                                    std::optional<IdfInjection> idf = std::nullopt);

// All simplex points with denominator `step` plus single layers and the
// uniform mix, deduplicated, in a fixed order.
std::vector<LayerWeights> simplex_grid(std::size_t n_layers, std::size_t step);

void save_idf(const IdfTable& idf, const std::filesystem::path& path);
IdfTable load_idf(const std::filesystem::path& path);

// Token list file: one line per document, "doc_id<TAB>id id id ...".
void save_token_lists(const embedstore::DocIndex& index, const TokenLists& tokens, const std::filesystem::path& path);
TokenLists load_token_lists(const embedstore::DocIndex& index, const std::filesystem::path& path);

// Matrices reuse the EMB1 container with n_layers = 1 plus an index sidecar
// whose entries have offset = row and length = 1.
void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& store_path,
                 const std::filesystem::path& index_path);
EmbeddingMatrix load_matrix(const std::filesystem::path& store_path, const std::filesystem::path& index_path);

}  // namespace retforge::aggregate
