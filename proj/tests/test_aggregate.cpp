#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "retforge/aggregate.hpp"
#include "retforge/datagen.hpp"
#include "retforge/error.hpp"
#include "retforge/metrics.hpp"
#include "retforge/parallel.hpp"
#include "test_util.hpp"

using namespace retforge;
using namespace retforge::aggregate;
using embedstore::DocEntry;
using embedstore::DocIndex;
using embedstore::DocKind;
using embedstore::TokenEmbeddingStore;

namespace {

// Random store tiled by documents of random length; pairs q_i -> p_i.
struct Toy {
    TokenEmbeddingStore store;
    DocIndex index;
    TokenLists tokens;
};

Toy random_toy(std::uint64_t seed, std::size_t n_pairs, std::size_t n_layers, std::size_t dim,
               std::size_t vocab = 6) {
    Rng rng(seed);
    std::vector<DocEntry> entries;
    TokenLists tokens;
    std::size_t off = 0;
    for (int kind = 0; kind < 2; ++kind) {
        for (std::size_t i = 0; i < n_pairs; ++i) {
            const std::size_t len = 1 + rng.below(5);
            const bool q = kind == 0;
            entries.push_back({(q ? "q" : "p") + std::to_string(i), off, len, q ? DocKind::question : DocKind::paragraph,
                               q ? "p" + std::to_string(i) : ""});
            std::vector<TokenId> t;
            for (std::size_t k = 0; k < len; ++k) t.push_back(rng.below(vocab));
            tokens.push_back(t);
            off += len;
        }
    }
    std::vector<float> data(off * n_layers * dim);
    for (float& v : data) v = static_cast<float>(rng.normal());
    return {TokenEmbeddingStore(off, n_layers, dim, std::move(data)), DocIndex(std::move(entries)), tokens};
}

std::vector<double> row_of(const Matrix& m, std::size_t i) {
    return {m.row(i).begin(), m.row(i).end()};
}

}  // namespace

TEST_SUITE("aggregate") {

TEST_CASE("layer weights must lie on the simplex") {
    CHECK_NOTHROW(LayerWeights({1, 0, 0}));
    CHECK_NOTHROW(LayerWeights({0.2, 0.3, 0.5 + 5e-7}));
    CHECK_THROWS_AS(LayerWeights({0.5, 0.5, 0.1}), ArgumentError);
    CHECK_THROWS_AS(LayerWeights({1.5, -0.5, 0}), ArgumentError);
    CHECK_THROWS_AS(LayerWeights({}), ArgumentError);
    CHECK(LayerWeights::uniform(4).values() == std::vector<double>(4, 0.25));
    CHECK(LayerWeights::single_layer(3, 1).values() == std::vector<double>{0, 1, 0});
}

TEST_CASE("token layer pooling is the normalised layer-0 mean") {
    const Toy toy = random_toy(1, 3, 3, 5);
    const LayerWeights w({1, 0, 0});
    for (const auto& e : toy.index.entries()) {
        const auto out = pool_document(embedstore::slice_entry(toy.store, e), w);
        const auto ref = oracle::pool(toy.store, e, w.values(), nullptr);
        for (std::size_t c = 0; c < 5; ++c) CHECK(out[c] == doctest::Approx(ref[c]).epsilon(1e-6));
    }
}

TEST_CASE("single token pools to its normalised vector") {
    const TokenEmbeddingStore store(1, 2, 2, {3, 4, 100, 100});
    const std::vector<DocEntry> e{{"a", 0, 1, DocKind::paragraph, ""}};
    const auto out = pool_document(embedstore::slice_entry(store, e[0]), LayerWeights({1, 0}));
    CHECK(out[0] == doctest::Approx(0.6));
    CHECK(out[1] == doctest::Approx(0.8));
}

TEST_CASE("three tokens in dim 2 with IDF (0, 1, 1)") {
    // layer 0 only; token vectors (9, 9), (1, 2), (3, 0)
    const TokenEmbeddingStore store(3, 1, 2, {9, 9, 1, 2, 3, 0});
    const DocEntry e{"a", 0, 3, DocKind::paragraph, ""};
    const std::vector<double> idf{0, 1, 1};
    const auto out = pool_document(embedstore::slice_entry(store, e), LayerWeights({1}), idf);
    // mean = ((0 + 1 + 3) / 3, (0 + 2 + 0) / 3) = (4/3, 2/3); norm = sqrt(20)/3
    const double nx = 4.0 / std::sqrt(20.0);
    const double ny = 2.0 / std::sqrt(20.0);
    CHECK(out[0] == doctest::Approx(nx).epsilon(1e-7));
    CHECK(out[1] == doctest::Approx(ny).epsilon(1e-7));
}

TEST_CASE("zero pooled vector is a normalization error") {
    const TokenEmbeddingStore store(2, 1, 2, {1, 1, -1, -1});
    const DocEntry e{"a", 0, 2, DocKind::paragraph, ""};
    CHECK_THROWS_AS(pool_document(embedstore::slice_entry(store, e), LayerWeights({1})), NormalizationError);
    const std::vector<double> zero_idf{0, 0};
    const TokenEmbeddingStore s2(2, 1, 2, {1, 2, 3, 4});
    CHECK_THROWS_AS(pool_document(embedstore::slice_entry(s2, e), LayerWeights({1}), zero_idf), NormalizationError);
}

TEST_CASE("compute_idf") {
    const TokenLists docs{{7, 1, 1, 1, 1, 1}, {7, 2}, {7, 3}, {7}};
    const auto idf = compute_idf(docs);
    CHECK(idf.n_documents == 4);
    CHECK(idf.weights.at(7) == 0.0);
    CHECK(std::abs(idf.weights.at(2) - 1.3862943611198906) < 1e-12);
    CHECK(std::abs(idf.weights.at(1) - std::log(4.0)) < 1e-12);
    CHECK(idf.weight_or_rare(999) == doctest::Approx(std::log(4.0)));
    CHECK_THROWS_AS(compute_idf({}), ArgumentError);
}

TEST_CASE("IDF weights are exact ln ratios and monotone in df") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        TokenLists docs(1 + rng.below(30));
        for (auto& d : docs) {
            const std::size_t len = 1 + rng.below(10);
            for (std::size_t k = 0; k < len; ++k) d.push_back(rng.below(15));
        }
        const auto idf = compute_idf(docs);
        for (const auto& [t, w] : idf.weights) {
            CHECK(std::abs(w - oracle::idf_of(docs, t)) < 1e-9);
            CHECK(w >= 0.0);
            for (const auto& [t2, w2] : idf.weights) {
                std::size_t df1 = 0, df2 = 0;
                for (const auto& d : docs) {
                    df1 += std::find(d.begin(), d.end(), t) != d.end();
                    df2 += std::find(d.begin(), d.end(), t2) != d.end();
                }
                if (df1 < df2) CHECK(w > w2);
            }
        }
    }
}

TEST_CASE("build_matrix rows are layer means in index order") {
    const Toy toy = random_toy(2, 4, 3, 6);
    const auto m = build_matrix(toy.store, toy.index, LayerWeights({1, 0, 0}));
    CHECK(m.normalized);
    REQUIRE(m.vectors.rows() == toy.index.size());
    CHECK(m.index == toy.index.entries());
    for (std::size_t i = 0; i < m.vectors.rows(); ++i) {
        CHECK(l2_norm(m.vectors.row(i)) == doctest::Approx(1.0).epsilon(1e-6));
        const auto ref = oracle::pool(toy.store, toy.index[i], {1, 0, 0}, nullptr);
        for (std::size_t c = 0; c < 6; ++c) CHECK(std::abs(m.vectors(i, c) - ref[c]) < 1e-5);
    }
    const auto m2 = build_matrix(toy.store, toy.index, LayerWeights({0, 1, 0}));
    CHECK_FALSE(m2.vectors == m.vectors);
}

TEST_CASE("build_matrix with IDF matches the naive pipeline") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Toy toy = random_toy(100 + seed, 3, 3, 4);
        const auto idf = compute_idf(toy.tokens);
        const LayerWeights w({0.2, 0.5, 0.3});
        const auto m = build_matrix(toy.store, toy.index, w, IdfInjection{idf, toy.tokens});
        for (std::size_t i = 0; i < toy.index.size(); ++i) {
            std::vector<double> tok_idf;
            for (const TokenId t : toy.tokens[i]) tok_idf.push_back(oracle::idf_of(toy.tokens, t));
            bool zero = true;
            for (const double v : tok_idf) zero = zero && v == 0.0;
            if (zero) continue;
            const auto ref = oracle::pool(toy.store, toy.index[i], w.values(), &tok_idf);
            for (std::size_t c = 0; c < 4; ++c) CHECK(std::abs(m.vectors(i, c) - ref[c]) < 1e-5);
        }
    }
}

TEST_CASE("tokens missing from the IDF table fall back to ln N") {
    const Toy toy = random_toy(5, 2, 1, 3);
    IdfTable table;
    table.n_documents = 10;
    BuildStats stats;
    const auto m = build_matrix(toy.store, toy.index, LayerWeights({1}), IdfInjection{table, toy.tokens}, &stats);
    std::size_t total = 0;
    for (const auto& t : toy.tokens) total += t.size();
    CHECK(stats.missing_idf_tokens == total);
    // a constant IDF scale cancels under normalisation
    const auto plain = build_matrix(toy.store, toy.index, LayerWeights({1}));
    for (std::size_t i = 0; i < m.vectors.size(); ++i) CHECK(m.vectors.data()[i] == doctest::Approx(plain.vectors.data()[i]).epsilon(1e-6));
}

TEST_CASE("normalization errors name the document") {
    const TokenEmbeddingStore store(3, 1, 2, {1, 1, 1, 1, -1, -1});
    const DocIndex index({{"ok", 0, 1, DocKind::paragraph, ""}, {"bad_doc", 1, 2, DocKind::paragraph, ""}});
    try {
        build_matrix(store, index, LayerWeights({1}));
        FAIL("expected a normalization error");
    } catch (const NormalizationError& e) {
        CHECK(std::string(e.what()).find("bad_doc") != std::string::npos);
    }
}

TEST_CASE("pooling is scale invariant and ignores weights on identical layers") {
    Rng rng(9);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t len = 1 + rng.below(6);
        std::vector<float> data(len * 3 * 4);
        for (std::size_t k = 0; k < len; ++k) {
            for (std::size_t c = 0; c < 4; ++c) {
                const float v = static_cast<float>(rng.normal());
                for (std::size_t l = 0; l < 3; ++l) data[(k * 3 + l) * 4 + c] = v;
            }
        }
        std::vector<float> scaled = data;
        for (float& v : scaled) v *= 7.5f;
        const TokenEmbeddingStore a(len, 3, 4, data);
        const TokenEmbeddingStore b(len, 3, 4, scaled);
        const DocEntry e{"d", 0, len, DocKind::paragraph, ""};
        const auto pa = pool_document(embedstore::slice_entry(a, e), LayerWeights({1, 0, 0}));
        const auto pb = pool_document(embedstore::slice_entry(b, e), LayerWeights({1, 0, 0}));
        const auto pc = pool_document(embedstore::slice_entry(a, e), LayerWeights({0.1, 0.6, 0.3}));
        for (std::size_t c = 0; c < 4; ++c) {
            CHECK(pa[c] == doctest::Approx(pb[c]).epsilon(1e-6));
            CHECK(pa[c] == doctest::Approx(pc[c]).epsilon(1e-6));
        }
    }
}

TEST_CASE("permuting the index permutes the rows") {
    const Toy toy = random_toy(21, 5, 2, 3);
    std::vector<DocEntry> shuffled = toy.index.entries();
    Rng rng(4);
    rng.shuffle(shuffled);
    const DocIndex perm(shuffled);
    const auto a = build_matrix(toy.store, toy.index, LayerWeights({0.5, 0.5}));
    const auto b = build_matrix(toy.store, perm, LayerWeights({0.5, 0.5}));
    for (std::size_t i = 0; i < perm.size(); ++i) {
        CHECK(row_of(b.vectors, i) == row_of(a.vectors, toy.index.position(perm[i].doc_id)));
    }
}

TEST_CASE("build_matrix does not depend on the worker count") {
    const Toy toy = random_toy(8, 40, 3, 8);
    set_thread_count(1);
    const auto a = build_matrix(toy.store, toy.index, LayerWeights({0.2, 0.3, 0.5}));
    set_thread_count(4);
    const auto b = build_matrix(toy.store, toy.index, LayerWeights({0.2, 0.3, 0.5}));
    set_thread_count(1);
    CHECK(a.vectors == b.vectors);
}

TEST_CASE("partition splits questions and paragraphs") {
    const Toy toy = random_toy(3, 4, 1, 2);
    const auto m = build_matrix(toy.store, toy.index, LayerWeights({1}));
    const auto part = partition(m);
    CHECK(part.questions.rows() == 4);
    CHECK(part.paragraphs.rows() == 4);
    CHECK(part.truth == std::vector<std::size_t>{0, 1, 2, 3});
    CHECK(part.question_ids.front() == "q0");
    CHECK(part.paragraph_ids.back() == "p3");
}

TEST_CASE("simplex grid") {
    const auto g1 = simplex_grid(3, 1);
    REQUIRE(g1.size() == 4);
    CHECK(g1[0].values() == std::vector<double>{1, 0, 0});
    CHECK(g1[3].values() == LayerWeights::uniform(3).values());
    CHECK(simplex_grid(3, 3).size() == 10);
    CHECK(simplex_grid(3, 2).size() == 7);
    CHECK_THROWS_AS(simplex_grid(3, 0), ArgumentError);
}

TEST_CASE("grid search with one config equals direct evaluation") {
    const auto corpus = datagen::generate({.n_pairs = 40, .seed = 3});
    const LayerWeights w({0.5, 0.25, 0.25});
    const auto eval = recall_evaluator({1, 2, 5});
    const auto ranked = grid_search(corpus.store, corpus.index, {w}, eval);
    REQUIRE(ranked.size() == 1);
    const auto part = partition(build_matrix(corpus.store, corpus.index, w));
    const std::vector<std::size_t> ks{1, 2, 5};
    const auto rec = metrics::recall_at_k(metrics::pairwise_distances(part.questions, part.paragraphs), part.truth, ks);
    CHECK(ranked[0].recall_at_1 == rec[0].fraction);
    CHECK(ranked[0].avg_recall == doctest::Approx(metrics::mean_fraction(rec)));
}

TEST_CASE("signal layer ranks first in the grid") {
    const auto corpus = datagen::generate({});
    const std::vector<LayerWeights> configs{LayerWeights::uniform(3), LayerWeights({0, 1, 0}),
                                            LayerWeights({0, 0, 1}), LayerWeights({1, 0, 0})};
    const auto ranked = grid_search(corpus.store, corpus.index, configs, recall_evaluator());
    CHECK(ranked[0].weights.values() == std::vector<double>{1, 0, 0});
    CHECK(ranked[0].recall_at_1 > ranked[1].recall_at_1);
    for (std::size_t i = 1; i < ranked.size(); ++i) CHECK(ranked[i - 1].recall_at_1 >= ranked[i].recall_at_1);
}

TEST_CASE("file round trips") {
    testutil::TempDir dir;
    const Toy toy = random_toy(6, 3, 2, 3);
    const auto idf = compute_idf(toy.tokens);
    save_idf(idf, dir / "t.idf");
    const auto idf2 = load_idf(dir / "t.idf");
    CHECK(idf2.n_documents == idf.n_documents);
    CHECK(idf2.weights == idf.weights);

    save_token_lists(toy.index, toy.tokens, dir / "t.tok");
    CHECK(load_token_lists(toy.index, dir / "t.tok") == toy.tokens);

    const auto m = build_matrix(toy.store, toy.index, LayerWeights({1, 0}));
    save_matrix(m, dir / "m.emb", dir / "m.idx");
    const auto back = load_matrix(dir / "m.emb", dir / "m.idx");
    CHECK(back.vectors == m.vectors);
    CHECK(back.normalized);
    CHECK(back.index.size() == m.index.size());
    CHECK(back.index[0].doc_id == m.index[0].doc_id);
    CHECK(back.index[0].pair_id == m.index[0].pair_id);
}

TEST_CASE("token lists must match document lengths") {
    testutil::TempDir dir;
    const Toy toy = random_toy(6, 2, 1, 2);
    TokenLists bad = toy.tokens;
    bad[0].push_back(1);
    save_token_lists(toy.index, bad, dir / "t.tok");
    CHECK_THROWS_AS(load_token_lists(toy.index, dir / "t.tok"), Error);
}

}  // TEST_SUITE
