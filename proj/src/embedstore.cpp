#include "retforge/embedstore.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "retforge/error.hpp"

namespace retforge::embedstore {

static_assert(std::endian::native == std::endian::little, "EMB1 I/O assumes a little-endian host");

namespace {

constexpr std::array<char, 4> kMagic{'E', 'M', 'B', '1'};
constexpr std::size_t kHeaderBytes = 4 + 3 * sizeof(std::uint64_t);

std::size_t first_nonfinite(const std::vector<float>& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!std::isfinite(v[i])) return i;
    }
    return v.size();
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
        const std::size_t tab = line.find('\t', start);
        fields.push_back(line.substr(start, tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return fields;
}

std::size_t parse_count(const std::string& s, const std::filesystem::path& path, std::size_t line_no) {
    if (s.empty() || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); })) {
        throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected a non-negative integer, got '" +
                          s + "'");
    }
    return static_cast<std::size_t>(std::stoull(s));
}

}  // namespace

TokenEmbeddingStore::TokenEmbeddingStore(std::size_t n_tokens, std::size_t n_layers, std::size_t dim,
                                         std::vector<float> data)
    : n_tokens_(n_tokens), n_layers_(n_layers), dim_(dim), data_(std::move(data)) {
    if (data_.size() != n_tokens_ * n_layers_ * dim_) {
        throw SizeMismatchError("store holds " + std::to_string(data_.size()) + " values, shape requires " +
                                std::to_string(n_tokens_ * n_layers_ * dim_));
    }
    if (const std::size_t bad = first_nonfinite(data_); bad != data_.size()) {
        throw DataIntegrityError("non-finite value at flat position " + std::to_string(bad));
    }
}

DocIndex::DocIndex(std::vector<DocEntry> entries) : entries_(std::move(entries)) {
    lookup_.reserve(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) lookup_.emplace(entries_[i].doc_id, i);
}

std::size_t DocIndex::position(const std::string& doc_id) const {
    const auto it = lookup_.find(doc_id);
    if (it == lookup_.end()) throw LookupError("unknown doc_id '" + doc_id + "'");
    return it->second;
}

TokenEmbeddingStore load_store(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path.string());

    std::array<char, kHeaderBytes> header{};
    in.read(header.data(), header.size());
    if (in.gcount() < 4 || !std::equal(kMagic.begin(), kMagic.end(), header.begin())) {
        throw FormatError(path.string() + ": bad magic, expected EMB1");
    }
    if (static_cast<std::size_t>(in.gcount()) != kHeaderBytes) {
        throw SizeMismatchError(path.string() + ": truncated header");
    }
    std::uint64_t shape[3];
    std::memcpy(shape, header.data() + 4, sizeof(shape));
    const std::uint64_t count = shape[0] * shape[1] * shape[2];

    const auto file_bytes = std::filesystem::file_size(path);
    const std::uint64_t expected = kHeaderBytes + count * sizeof(float);
    if (file_bytes != expected) {
        throw SizeMismatchError(path.string() + ": payload holds " +
                                std::to_string((file_bytes - kHeaderBytes) / sizeof(float)) +
                                " reals, header requires " + std::to_string(count));
    }
    std::vector<float> data(count);
    in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (static_cast<std::uint64_t>(in.gcount()) != count * sizeof(float)) {
        throw SizeMismatchError(path.string() + ": short read");
    }
    if (const std::size_t bad = first_nonfinite(data); bad != data.size()) {
        throw DataIntegrityError(path.string() + ": non-finite value at token " +
                                 std::to_string(bad / (shape[1] * shape[2])));
    }
    return TokenEmbeddingStore(shape[0], shape[1], shape[2], std::move(data));
}

void save_store(const TokenEmbeddingStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    const std::uint64_t shape[3] = {store.n_tokens(), store.n_layers(), store.dim()};
    out.write(kMagic.data(), kMagic.size());
    out.write(reinterpret_cast<const char*>(shape), sizeof(shape));
    out.write(reinterpret_cast<const char*>(store.data().data()),
              static_cast<std::streamsize>(store.data().size() * sizeof(float)));
    if (!out) throw FormatError("write failed for " + path.string());
}

DocIndex load_index(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path.string());
    std::vector<DocEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_tabs(line);
        if (fields.size() != 5) {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 5 tab-separated fields, got " +
                              std::to_string(fields.size()));
        }
        DocEntry e;
        e.doc_id = fields[0];
        e.offset = parse_count(fields[1], path, line_no);
        e.length = parse_count(fields[2], path, line_no);
        if (fields[3] == "q") {
            e.kind = DocKind::question;
        } else if (fields[3] == "p") {
            e.kind = DocKind::paragraph;
        } else {
            throw FormatError(path.string() + ":" + std::to_string(line_no) + ": kind must be q or p");
        }
        e.pair_id = fields[4];
        entries.push_back(std::move(e));
    }
    return DocIndex(std::move(entries));
}

void save_index(const DocIndex& index, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    for (const auto& e : index.entries()) {
        out << e.doc_id << '\t' << e.offset << '\t' << e.length << '\t'
            << (e.kind == DocKind::question ? 'q' : 'p') << '\t' << e.pair_id << '\n';
    }
    if (!out) throw FormatError("write failed for " + path.string());
}

DocumentView slice_entry(const TokenEmbeddingStore& store, const DocEntry& entry) {
    if (entry.offset + entry.length > store.n_tokens()) {
        throw LookupError("document '" + entry.doc_id + "' extends past the end of the store");
    }
    const std::size_t stride = store.token_stride();
    return DocumentView{
        std::span<const float>(store.data()).subspan(entry.offset * stride, entry.length * stride),
        entry.length, store.n_layers(), store.dim()};
}

DocumentView slice_document(const TokenEmbeddingStore& store, const DocIndex& index, const std::string& doc_id) {
    return slice_entry(store, index.find(doc_id));
}

std::vector<Violation> validate(const TokenEmbeddingStore& store, const DocIndex& index) {
    std::vector<Violation> out;
    if (const std::size_t bad = first_nonfinite(store.data()); bad != store.data().size()) {
        out.push_back({"", "nonfinite", "flat position " + std::to_string(bad)});
    }
    if (index.size() == 0) {
        if (store.n_tokens() > 0) out.push_back({"", "empty-index", "store has tokens but index is empty"});
        return out;
    }

    std::unordered_map<std::string, std::size_t> seen;
    for (const auto& e : index.entries()) {
        if (!seen.emplace(e.doc_id, 0).second) out.push_back({e.doc_id, "duplicate-id", "doc_id appears twice"});
        if (e.length == 0) out.push_back({e.doc_id, "zero-length", "length must be >= 1"});
        if (e.offset + e.length > store.n_tokens()) {
            out.push_back({e.doc_id, "out-of-range",
                           "ends at " + std::to_string(e.offset + e.length) + " > n_tokens " +
                               std::to_string(store.n_tokens())});
        }
        if (e.kind == DocKind::question) {
            if (!index.contains(e.pair_id)) {
                out.push_back({e.doc_id, "unresolved-pair", "pair_id '" + e.pair_id + "' not in index"});
            } else if (index.find(e.pair_id).kind != DocKind::paragraph) {
                out.push_back({e.doc_id, "pair-not-paragraph", "pair_id '" + e.pair_id + "' is a question"});
            }
        }
    }

    // Tiling of [0, n_tokens): sweep entries by offset.
    std::vector<const DocEntry*> by_offset;
    for (const auto& e : index.entries()) {
        if (e.length > 0) by_offset.push_back(&e);
    }
    std::stable_sort(by_offset.begin(), by_offset.end(),
                     [](const DocEntry* a, const DocEntry* b) { return a->offset < b->offset; });
    std::size_t covered = 0;
    for (const DocEntry* e : by_offset) {
        if (e->offset > covered) {
            out.push_back({e->doc_id, "gap",
                           "tokens [" + std::to_string(covered) + ", " + std::to_string(e->offset) + ") uncovered"});
        } else if (e->offset < covered) {
            out.push_back({e->doc_id, "overlap",
                           "tokens [" + std::to_string(e->offset) + ", " +
                               std::to_string(std::min(covered, e->offset + e->length)) + ") already covered"});
        }
        covered = std::max(covered, e->offset + e->length);
    }
    if (covered < store.n_tokens()) {
        out.push_back({"", "gap",
                       "tokens [" + std::to_string(covered) + ", " + std::to_string(store.n_tokens()) + ") uncovered"});
    }
    return out;
}

CorpusCounts count_documents(const DocIndex& index) {
    CorpusCounts c;
    for (const auto& e : index.entries()) {
        if (e.kind == DocKind::question) {
            ++c.n_questions;
        } else {
            ++c.n_paragraphs;
        }
    }
    c.n_total = c.n_questions + c.n_paragraphs;
    return c;
}

}  // namespace retforge::embedstore
