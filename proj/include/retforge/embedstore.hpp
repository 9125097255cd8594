#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace retforge::embedstore {

// Token-level embedding tensor, shape [n_tokens, n_layers, dim], row-major.
//
// On disk ("EMB1" container):
//   bytes 0..3   magic "EMB1"
//   bytes 4..27  n_tokens, n_layers, dim as little-endian uint64
//   then n_tokens * n_layers * dim little-endian IEEE-754 float32
class TokenEmbeddingStore {
public:
    TokenEmbeddingStore() = default;
    // Throws DataIntegrityError when any value is non-finite.
    TokenEmbeddingStore(std::size_t n_tokens, std::size_t n_layers, std::size_t dim, std::vector<float> data);

    std::size_t n_tokens() const noexcept { return n_tokens_; }
    std::size_t n_layers() const noexcept { return n_layers_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t token_stride() const noexcept { return n_layers_ * dim_; }

    const std::vector<float>& data() const noexcept { return data_; }
    float at(std::size_t token, std::size_t layer, std::size_t d) const noexcept {
        return data_[(token * n_layers_ + layer) * dim_ + d];
    }

    bool operator==(const TokenEmbeddingStore&) const = default;

private:
    std::size_t n_tokens_ = 0;
    std::size_t n_layers_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> data_;
};

enum class DocKind { question, paragraph };

struct DocEntry {
    std::string doc_id;
    std::size_t offset = 0;
    std::size_t length = 0;
    DocKind kind = DocKind::paragraph;
    std::string pair_id;  // paragraph doc_id answering this question; empty for paragraphs

    bool operator==(const DocEntry&) const = default;
};

// Ordered document records. The sidecar text format is one record per line:
//   doc_id \t offset \t length \t q|p \t pair_id
class DocIndex {
public:
    DocIndex() = default;
    explicit DocIndex(std::vector<DocEntry> entries);

    const std::vector<DocEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    const DocEntry& operator[](std::size_t i) const noexcept { return entries_[i]; }

    // Position of doc_id in entries(); throws LookupError.
    std::size_t position(const std::string& doc_id) const;
    bool contains(const std::string& doc_id) const noexcept { return lookup_.contains(doc_id); }
    const DocEntry& find(const std::string& doc_id) const { return entries_[position(doc_id)]; }

private:
    std::vector<DocEntry> entries_;
    std::unordered_map<std::string, std::size_t> lookup_;
};

struct CorpusCounts {
    std::size_t n_questions = 0;
    std::size_t n_paragraphs = 0;
    std::size_t n_total = 0;
};

// Immutable view over the rows of one document: shape [length, n_layers, dim].
struct DocumentView {
    std::span<const float> data;
    std::size_t length = 0;
    std::size_t n_layers = 0;
    std::size_t dim = 0;

    float at(std::size_t token, std::size_t layer, std::size_t d) const noexcept {
        return data[(token * n_layers + layer) * dim + d];
    }
};

struct Violation {
    std::string doc_id;
    std::string rule;  // overlap, gap, out-of-range, zero-length, duplicate-id, unresolved-pair,
                       // pair-not-paragraph, nonfinite, empty-index
    std::string detail;
};

TokenEmbeddingStore load_store(const std::filesystem::path& path);
void save_store(const TokenEmbeddingStore& store, const std::filesystem::path& path);

DocIndex load_index(const std::filesystem::path& path);
void save_index(const DocIndex& index, const std::filesystem::path& path);

DocumentView slice_document(const TokenEmbeddingStore& store, const DocIndex& index, const std::string& doc_id);
DocumentView slice_entry(const TokenEmbeddingStore& store, const DocEntry& entry);

std::vector<Violation> validate(const TokenEmbeddingStore& store, const DocIndex& index);

CorpusCounts count_documents(const DocIndex& index);

}  // namespace retforge::embedstore
