#include "retforge/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "retforge/error.hpp"
#include "retforge/metrics.hpp"
#include "retforge/parallel.hpp"

namespace retforge::aggregate {

using embedstore::DocEntry;
using embedstore::DocIndex;
using embedstore::DocKind;
using embedstore::DocumentView;
using embedstore::TokenEmbeddingStore;

LayerWeights::LayerWeights(std::vector<double> w) : w_(std::move(w)) {
    if (w_.empty()) throw ArgumentError("layer weights must not be empty");
    double sum = 0.0;
    for (const double v : w_) {
        if (!(v >= 0.0) || !std::isfinite(v)) throw ArgumentError("layer weights must be finite and non-negative");
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-6) {
        throw ArgumentError("layer weights " + label() + " sum to " + std::to_string(sum) + ", expected 1");
    }
}

std::string LayerWeights::label() const {
    std::string s;
    char buf[32];
    for (std::size_t i = 0; i < w_.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.4g", w_[i]);
        s += (i ? "," : "") + std::string(buf);
    }
    return s;
}

LayerWeights LayerWeights::single_layer(std::size_t n_layers, std::size_t layer) {
    std::vector<double> w(n_layers, 0.0);
    w.at(layer) = 1.0;
    return LayerWeights(std::move(w));
}

LayerWeights LayerWeights::uniform(std::size_t n_layers) {
    return LayerWeights(std::vector<double>(n_layers, 1.0 / static_cast<double>(n_layers)));
}

double IdfTable::weight_or_rare(TokenId token) const noexcept {
    const auto it = weights.find(token);
    if (it != weights.end()) return it->second;
    return std::log(static_cast<double>(n_documents));
}

std::vector<float> pool_document(const DocumentView& doc, const LayerWeights& w,
                                 std::optional<std::span<const double>> token_idf) {
    if (doc.length == 0) throw ArgumentError("pool_document: empty document");
    if (w.size() != doc.n_layers) {
        throw ArgumentError("pool_document: " + std::to_string(w.size()) + " layer weights for " +
                            std::to_string(doc.n_layers) + " layers");
    }
    if (token_idf && token_idf->size() != doc.length) {
        throw ArgumentError("pool_document: token_idf has " + std::to_string(token_idf->size()) + " entries for " +
                            std::to_string(doc.length) + " tokens");
    }
    std::vector<double> acc(doc.dim, 0.0);
    for (std::size_t k = 0; k < doc.length; ++k) {
        const double scale = token_idf ? (*token_idf)[k] : 1.0;
        for (std::size_t j = 0; j < doc.n_layers; ++j) {
            const double wj = w[j] * scale;
            if (wj == 0.0) continue;
            for (std::size_t d = 0; d < doc.dim; ++d) acc[d] += wj * doc.at(k, j, d);
        }
    }
    double norm_sq = 0.0;
    for (double& v : acc) {
        v /= static_cast<double>(doc.length);
        norm_sq += v * v;
    }
    const double norm = std::sqrt(norm_sq);
    if (!(norm > 1e-12)) throw NormalizationError("pooled vector is all zeros; cannot L2-normalize");
    std::vector<float> out(doc.dim);
    for (std::size_t d = 0; d < doc.dim; ++d) out[d] = static_cast<float>(acc[d] / norm);
    return out;
}

IdfTable compute_idf(const TokenLists& docs) {
    if (docs.empty()) throw ArgumentError("compute_idf: empty corpus");
    std::map<TokenId, std::size_t> df;
    for (const auto& doc : docs) {
        std::set<TokenId> unique(doc.begin(), doc.end());
        for (const TokenId t : unique) ++df[t];
    }
    IdfTable table;
    table.n_documents = docs.size();
    const double n = static_cast<double>(docs.size());
    for (const auto& [token, count] : df) table.weights.emplace(token, std::log(n / static_cast<double>(count)));
    return table;
}

EmbeddingMatrix build_matrix(const TokenEmbeddingStore& store, const DocIndex& index, const LayerWeights& w,
                             std::optional<IdfInjection> idf, BuildStats* stats) {
    if (idf && idf->tokens.size() != index.size()) {
        throw ArgumentError("token lists cover " + std::to_string(idf->tokens.size()) + " documents, index has " +
                            std::to_string(index.size()));
    }
    EmbeddingMatrix out;
    out.vectors = Matrix(index.size(), store.dim());
    out.index = index.entries();
    std::vector<std::size_t> missing(index.size(), 0);
    parallel_for(index.size(), [&](std::size_t begin, std::size_t end) {
        std::vector<double> scales;
        for (std::size_t i = begin; i < end; ++i) {
            const DocEntry& e = index[i];
            const DocumentView view = embedstore::slice_entry(store, e);
            std::vector<float> row;
            try {
                if (idf) {
                    const auto& ids = idf->tokens[i];
                    if (ids.size() != e.length) {
                        throw ArgumentError("token list length " + std::to_string(ids.size()) + " != document length " +
                                            std::to_string(e.length));
                    }
                    scales.resize(ids.size());
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                        if (!idf->table.contains(ids[k])) ++missing[i];
                        scales[k] = idf->table.weight_or_rare(ids[k]);
                    }
                    row = pool_document(view, w, std::span<const double>(scales));
                } else {
                    row = pool_document(view, w);
                }
            } catch (const NormalizationError& err) {
                throw NormalizationError("document '" + e.doc_id + "': " + err.what());
            } catch (const ArgumentError& err) {
                throw ArgumentError("document '" + e.doc_id + "': " + err.what());
            }
            std::copy(row.begin(), row.end(), out.vectors.row(i).begin());
        }
    });
    out.normalized = true;
    std::size_t total_missing = 0;
    for (const std::size_t m : missing) total_missing += m;
    if (total_missing > 0) {
        std::clog << "build_matrix: " << total_missing << " tokens missing from the IDF table, weighted ln(N)\n";
    }
    if (stats) stats->missing_idf_tokens = total_missing;
    return out;
}

Partition partition(const EmbeddingMatrix& m) {
    Partition p;
    std::vector<std::size_t> q_rows;
    std::vector<std::size_t> p_rows;
    std::unordered_map<std::string, std::size_t> paragraph_col;
    for (std::size_t i = 0; i < m.index.size(); ++i) {
        if (m.index[i].kind == DocKind::paragraph) {
            paragraph_col.emplace(m.index[i].doc_id, p_rows.size());
            p_rows.push_back(i);
            p.paragraph_ids.push_back(m.index[i].doc_id);
        }
    }
    for (std::size_t i = 0; i < m.index.size(); ++i) {
        const DocEntry& e = m.index[i];
        if (e.kind != DocKind::question) continue;
        const auto it = paragraph_col.find(e.pair_id);
        if (it == paragraph_col.end()) {
            throw LookupError("question '" + e.doc_id + "' pairs with unknown paragraph '" + e.pair_id + "'");
        }
        q_rows.push_back(i);
        p.question_ids.push_back(e.doc_id);
        p.truth.push_back(it->second);
    }
    p.questions = m.vectors.gather_rows(q_rows);
    p.paragraphs = m.vectors.gather_rows(p_rows);
    return p;
}

MatrixEvaluator recall_evaluator(std::vector<std::size_t> ks) {
    return [ks = std::move(ks)](const EmbeddingMatrix& m) {
        const Partition p = partition(m);
        if (p.questions.rows() == 0) throw ArgumentError("no questions with resolvable pairs");
        const auto d = metrics::pairwise_distances(p.questions, p.paragraphs);
        const auto recalls = metrics::recall_at_k(d, p.truth, ks);
        RecallSummary s;
        s.avg_recall = metrics::mean_fraction(recalls);
        for (const auto& r : recalls) {
            if (r.k == 1) s.recall_at_1 = r.fraction;
        }
        return s;
    };
}

std::vector<GridResult> grid_search(const TokenEmbeddingStore& store, const DocIndex& index,
                                    const std::vector<LayerWeights>& configs, const MatrixEvaluator& eval,
                                    std::optional<IdfInjection> idf) {
    if (configs.empty()) throw ArgumentError("grid_search: no configs");
    std::vector<GridResult> results;
    for (const auto& w : configs) {
        try {
            const EmbeddingMatrix m = build_matrix(store, index, w, idf);
            const RecallSummary s = eval(m);
            results.push_back({w, s.recall_at_1, s.avg_recall});
        } catch (const Error& err) {
            const std::string msg = "config (" + w.label() + "): " + err.what();
            if (dynamic_cast<const NumericError*>(&err)) throw NumericError(msg);
            if (dynamic_cast<const ArgumentError*>(&err)) throw ArgumentError(msg);
            throw Error(msg);
        }
    }
    std::stable_sort(results.begin(), results.end(),
                     [](const GridResult& a, const GridResult& b) { return a.recall_at_1 > b.recall_at_1; });
    return results;
}

std::vector<LayerWeights> simplex_grid(std::size_t n_layers, std::size_t step) {
    if (n_layers == 0) throw ArgumentError("simplex_grid: n_layers must be >= 1");
    if (step == 0) throw ArgumentError("simplex_grid: step must be >= 1");
    std::vector<std::vector<double>> points;
    for (std::size_t l = 0; l < n_layers; ++l) points.push_back(LayerWeights::single_layer(n_layers, l).values());
    points.push_back(LayerWeights::uniform(n_layers).values());

    // Enumerate compositions of `step` into n_layers parts.
    std::vector<std::size_t> parts(n_layers, 0);
    const auto emit = [&] {
        std::vector<double> w(n_layers);
        for (std::size_t i = 0; i < n_layers; ++i) w[i] = static_cast<double>(parts[i]) / static_cast<double>(step);
        points.push_back(std::move(w));
    };
    std::function<void(std::size_t, std::size_t)> rec = [&](std::size_t pos, std::size_t left) {
        if (pos + 1 == n_layers) {
            parts[pos] = left;
            emit();
            return;
        }
        for (std::size_t v = left + 1; v-- > 0;) {
            parts[pos] = v;
            rec(pos + 1, left - v);
        }
    };
    rec(0, step);

    std::vector<LayerWeights> out;
    for (const auto& p : points) {
        const bool dup = std::any_of(out.begin(), out.end(), [&](const LayerWeights& o) {
            for (std::size_t i = 0; i < n_layers; ++i) {
                if (std::abs(o[i] - p[i]) > 1e-9) return false;
            }
            return true;
        });
        if (!dup) out.emplace_back(p);
    }
    return out;
}

void save_idf(const IdfTable& idf, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << "# n_documents\t" << idf.n_documents << '\n';
    char buf[64];
    for (const auto& [token, weight] : idf.weights) {
        std::snprintf(buf, sizeof(buf), "%.17g", weight);
        out << token << '\t' << buf << '\n';
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

IdfTable load_idf(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    IdfTable t;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream ss(line);
        if (line.rfind("# n_documents", 0) == 0) {
            std::string hash, key;
            ss >> hash >> key >> t.n_documents;
            continue;
        }
        TokenId token{};
        double weight{};
        if (!(ss >> token >> weight)) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected token_id<TAB>weight");
        }
        t.weights.emplace(token, weight);
    }
    if (t.n_documents == 0) throw FormatError(path.string() + ": missing '# n_documents' header");
    return t;
}

void save_token_lists(const DocIndex& index, const TokenLists& tokens, const std::filesystem::path& path) {
    if (tokens.size() != index.size()) throw ArgumentError("token lists and index sizes differ");
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    for (std::size_t i = 0; i < index.size(); ++i) {
        out << index[i].doc_id << '\t';
        for (std::size_t k = 0; k < tokens[i].size(); ++k) out << (k ? " " : "") << tokens[i][k];
        out << '\n';
    }
}

TokenLists load_token_lists(const DocIndex& index, const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    TokenLists lists(index.size());
    std::vector<bool> filled(index.size(), false);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": missing tab");
        const std::size_t pos = index.position(line.substr(0, tab));
        std::istringstream ss(line.substr(tab + 1));
        TokenId t{};
        while (ss >> t) lists[pos].push_back(t);
        if (!ss.eof()) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": bad token id");
        if (lists[pos].size() != index[pos].length) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": " + std::to_string(lists[pos].size()) +
                              " tokens for '" + index[pos].doc_id + "' of length " + std::to_string(index[pos].length));
        }
        filled[pos] = true;
    }
    for (std::size_t i = 0; i < index.size(); ++i) {
        if (!filled[i]) throw FormatError(path.string() + ": no token list for '" + index[i].doc_id + "'");
    }
    return lists;
}

void save_matrix(const EmbeddingMatrix& m, const std::filesystem::path& store_path,
                 const std::filesystem::path& index_path) {
    std::vector<DocEntry> rows = m.index;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        rows[i].offset = i;
        rows[i].length = 1;
    }
    embedstore::save_store(TokenEmbeddingStore(m.vectors.rows(), 1, m.vectors.cols(), m.vectors.data()), store_path);
    embedstore::save_index(DocIndex(std::move(rows)), index_path);
}

EmbeddingMatrix load_matrix(const std::filesystem::path& store_path, const std::filesystem::path& index_path) {
    TokenEmbeddingStore store = embedstore::load_store(store_path);
    DocIndex index = embedstore::load_index(index_path);
    if (store.n_layers() != 1) throw FormatError(store_path.string() + ": embedding matrix must have n_layers = 1");
    if (index.size() != store.n_tokens()) {
        throw SizeMismatchError(index_path.string() + ": " + std::to_string(index.size()) + " rows for a matrix of " +
                                std::to_string(store.n_tokens()));
    }
    EmbeddingMatrix m;
    m.vectors = Matrix(store.n_tokens(), store.dim(), store.data());
    m.index = index.entries();
    m.normalized = true;
    for (std::size_t i = 0; i < m.vectors.rows(); ++i) {
        if (std::abs(l2_norm(m.vectors.row(i)) - 1.0) > 1e-5) {
            m.normalized = false;
            break;
        }
    }
    return m;
}

}  // namespace retforge::aggregate
