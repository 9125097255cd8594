#include <doctest.h>

#include <cmath>

#include "retforge/aggregate.hpp"
#include "retforge/datagen.hpp"
#include "retforge/error.hpp"
#include "retforge/metrics.hpp"

using namespace retforge;
using namespace retforge::datagen;

namespace {

const std::vector<std::size_t> kKs{1, 10};

metrics::EvalReport recall_of(const SynthCorpus& c, const aggregate::LayerWeights& w, bool idf = false) {
    const auto table = aggregate::compute_idf(c.tokens);
    std::optional<aggregate::IdfInjection> inj;
    if (idf) inj.emplace(aggregate::IdfInjection{table, c.tokens});
    const auto part = aggregate::partition(aggregate::build_matrix(c.store, c.index, w, inj));
    return metrics::evaluate(metrics::pairwise_distances(part.questions, part.paragraphs), part.truth, kKs);
}

// Central 99% interval of Binomial(n, p) hit counts.
std::pair<std::size_t, std::size_t> binomial_99(std::size_t n, double p) {
    std::vector<double> pmf(n + 1);
    for (std::size_t k = 0; k <= n; ++k) {
        pmf[k] = std::exp(std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) +
                          k * std::log(p) + (n - k) * std::log1p(-p));
    }
    double acc = 0.0;
    std::size_t lo = 0;
    while (acc + pmf[lo] < 0.005) acc += pmf[lo++];
    acc = 0.0;
    std::size_t hi = n;
    while (acc + pmf[hi] < 0.005) acc += pmf[hi--];
    return {lo, hi};
}

}  // namespace

TEST_SUITE("datagen") {

TEST_CASE("layout and validity") {
    SynthSpec s;
    s.n_pairs = 30;
    s.dim = 8;
    const auto c = generate(s);
    CHECK(embedstore::validate(c.store, c.index).empty());
    const auto counts = embedstore::count_documents(c.index);
    CHECK(counts.n_questions == 30);
    CHECK(counts.n_paragraphs == 30);
    CHECK(c.tokens.size() == 60);
    CHECK(c.store.n_layers() == 3);
    CHECK(c.store.dim() == 8);
    CHECK(c.pairs.front() == std::pair<std::string, std::string>{"q00000", "p00000"});
    for (std::size_t i = 0; i < 60; ++i) {
        CHECK(c.tokens[i].size() >= s.tokens_min);
        CHECK(c.tokens[i].size() <= s.tokens_max);
    }
}

TEST_CASE("same spec gives identical bytes") {
    SynthSpec s;
    s.n_pairs = 20;
    s.dim = 8;
    const auto a = generate(s);
    const auto b = generate(s);
    CHECK(a.store.data() == b.store.data());
    CHECK(a.tokens == b.tokens);
    s.seed = 1;
    CHECK_FALSE(generate(s).store.data() == a.store.data());
}

TEST_CASE("spec validation") {
    SynthSpec s;
    s.signal_layer = 3;
    CHECK_THROWS_AS(generate(s), ArgumentError);
    s = {};
    s.tokens_min = 4;
    s.tokens_max = 3;
    CHECK_THROWS_AS(generate(s), ArgumentError);
    s = {};
    s.distractor_rank = 65;
    CHECK_THROWS_AS(generate(s), ArgumentError);
    s = {};
    s.distractor_overlap = 1.5;
    CHECK_THROWS_AS(generate(s), ArgumentError);
}

TEST_CASE("noiseless pairs are retrieved perfectly") {
    SynthSpec s;
    s.n_pairs = 100;
    s.dim = 16;
    s.noise_sigma = 0.0;
    s.distractor_overlap = 0.0;
    const auto r = recall_of(generate(s), aggregate::LayerWeights({1, 0, 0}));
    CHECK(r.recall_at_1() == 1.0);
    CHECK(r.average_precision == doctest::Approx(1.0));
}

TEST_CASE("noise layers sit at chance level") {
    SynthSpec s;
    s.n_pairs = 200;
    s.dim = 16;
    const auto c = generate(s);
    for (const std::size_t layer : {1u, 2u}) {
        const auto r = recall_of(c, aggregate::LayerWeights::single_layer(3, layer));
        for (const auto& e : r.recall_at) {
            const auto [lo, hi] = binomial_99(200, static_cast<double>(e.k) / 200.0);
            CHECK(e.hits >= lo);
            CHECK(e.hits <= hi);
        }
    }
    CHECK(recall_of(c, aggregate::LayerWeights({1, 0, 0})).recall_at_1() > 0.1);
}

TEST_CASE("recall falls as noise grows") {
    SynthSpec s;
    s.n_pairs = 200;
    s.dim = 16;
    double prev = 2.0;
    for (const double sigma : {0.25, 1.0, 2.0, 4.0}) {
        s.noise_sigma = sigma;
        const double r = recall_of(generate(s), aggregate::LayerWeights({1, 0, 0})).recall_at_1();
        CHECK(r <= prev + 0.03);
        prev = r;
    }
}

TEST_CASE("stopword-only documents cannot be pooled with IDF") {
    SynthSpec s;
    s.n_pairs = 10;
    s.dim = 8;
    s.stopword_fraction = 1.0;
    const auto c = generate(s);
    CHECK_THROWS_AS(recall_of(c, aggregate::LayerWeights({1, 0, 0}), true), NormalizationError);
}

TEST_CASE("without stopwords every token gets ln N") {
    SynthSpec s;
    s.n_pairs = 25;
    s.dim = 8;
    const auto table = aggregate::compute_idf(generate(s).tokens);
    CHECK(table.n_documents == 50);
    for (const auto& [token, w] : table.weights) CHECK(w == doctest::Approx(std::log(50.0)));
}

TEST_CASE("IDF scaling helps when stopwords carry topic noise") {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto c = generate(stopword_distractor_spec(seed));
        const auto w = aggregate::LayerWeights({1, 0, 0});
        CHECK(recall_of(c, w, true).recall_at_1() >= recall_of(c, w, false).recall_at_1());
        CHECK(generate_idf_corpus(stopword_distractor_spec(seed)) == c.tokens);
    }
}

}  // TEST_SUITE
