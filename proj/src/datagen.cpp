#include "retforge/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "retforge/error.hpp"
#include "retforge/rng.hpp"

namespace retforge::datagen {

namespace {

std::vector<double> gaussian(Rng& rng, std::size_t n) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal();
    return v;
}

void normalize(std::vector<double>& v) {
    double s = 0.0;
    for (const double x : v) s += x * x;
    s = std::sqrt(s);
    for (double& x : v) x /= s;
}

std::string doc_name(char prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%c%05zu", prefix, i);
    return buf;
}

std::size_t stopword_count(double fraction, std::size_t length) {
    if (fraction <= 0.0) return 0;
    if (fraction >= 1.0) return length;
    const auto n = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(length)));
    return std::clamp<std::size_t>(n, 1, length - 1);
}

}  // namespace

void validate(const SynthSpec& spec) {
    if (spec.n_pairs == 0) throw ArgumentError("n_pairs must be >= 1");
    if (spec.dim == 0) throw ArgumentError("dim must be >= 1");
    if (spec.n_layers == 0) throw ArgumentError("n_layers must be >= 1");
    if (spec.signal_layer >= spec.n_layers) throw ArgumentError("signal_layer must be < n_layers");
    if (spec.tokens_min == 0 || spec.tokens_max < spec.tokens_min) throw ArgumentError("need 1 <= tokens_min <= tokens_max");
    if (!(spec.noise_sigma >= 0.0)) throw ArgumentError("noise_sigma must be >= 0");
    if (!(spec.distractor_overlap >= 0.0 && spec.distractor_overlap <= 1.0)) {
        throw ArgumentError("distractor_overlap must lie in [0, 1]");
    }
    if (!(spec.stopword_fraction >= 0.0 && spec.stopword_fraction <= 1.0)) {
        throw ArgumentError("stopword_fraction must lie in [0, 1]");
    }
    if (spec.n_topics == 0) throw ArgumentError("n_topics must be >= 1");
    if (spec.distractor_rank == 0 || spec.distractor_rank > spec.dim) {
        throw ArgumentError("distractor_rank must lie in [1, dim]");
    }
}

SynthCorpus generate(const SynthSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    const std::size_t dim = spec.dim;
    const double noise_scale = spec.noise_sigma / std::sqrt(static_cast<double>(dim));
    const double unit_noise = 1.0 / std::sqrt(static_cast<double>(dim));

    // Orthonormal basis of the distractor subspace (Gram-Schmidt).
    std::vector<std::vector<double>> basis;
    while (basis.size() < spec.distractor_rank) {
        auto v = gaussian(rng, dim);
        for (const auto& b : basis) {
            double proj = 0.0;
            for (std::size_t d = 0; d < dim; ++d) proj += v[d] * b[d];
            for (std::size_t d = 0; d < dim; ++d) v[d] -= proj * b[d];
        }
        normalize(v);
        basis.push_back(std::move(v));
    }
    std::vector<std::vector<double>> topics;
    for (std::size_t t = 0; t < spec.n_topics; ++t) {
        std::vector<double> v(dim, 0.0);
        for (const auto& b : basis) {
            const double c = rng.normal();
            for (std::size_t d = 0; d < dim; ++d) v[d] += c * b[d];
        }
        normalize(v);
        topics.push_back(std::move(v));
    }

    struct Doc {
        std::vector<float> rows;  // [length, n_layers, dim]
        std::vector<aggregate::TokenId> tokens;
    };
    std::vector<Doc> questions(spec.n_pairs);
    std::vector<Doc> paragraphs(spec.n_pairs);
    aggregate::TokenId next_token = 1;
    const std::size_t span = spec.tokens_max - spec.tokens_min + 1;

    for (std::size_t p = 0; p < spec.n_pairs; ++p) {
        auto latent = gaussian(rng, dim);
        normalize(latent);
        for (Doc* doc : {&questions[p], &paragraphs[p]}) {
            const std::size_t length = spec.tokens_min + static_cast<std::size_t>(rng.below(span));
            const auto& topic = topics[static_cast<std::size_t>(rng.below(spec.n_topics))];
            const std::size_t n_stop = stopword_count(spec.stopword_fraction, length);
            doc->rows.resize(length * spec.n_layers * dim);
            for (std::size_t k = 0; k < length; ++k) {
                const bool stop = k < n_stop;
                doc->tokens.push_back(stop ? 0 : next_token++);
                for (std::size_t l = 0; l < spec.n_layers; ++l) {
                    float* out = doc->rows.data() + (k * spec.n_layers + l) * dim;
                    for (std::size_t d = 0; d < dim; ++d) {
                        const double eps = rng.normal();
                        double v;
                        if (l != spec.signal_layer) {
                            v = eps * unit_noise;
                        } else if (stop) {
                            v = topic[d] + eps * noise_scale;
                        } else {
                            v = (1.0 - spec.distractor_overlap) * latent[d] + spec.distractor_overlap * topic[d] +
                                eps * noise_scale;
                        }
                        out[d] = static_cast<float>(v);
                    }
                }
            }
        }
    }

    SynthCorpus corpus;
    std::vector<embedstore::DocEntry> entries;
    std::vector<float> data;
    std::size_t offset = 0;
    const auto append = [&](const Doc& doc, std::string id, embedstore::DocKind kind, std::string pair_id) {
        const std::size_t length = doc.tokens.size();
        entries.push_back({std::move(id), offset, length, kind, std::move(pair_id)});
        data.insert(data.end(), doc.rows.begin(), doc.rows.end());
        corpus.tokens.push_back(doc.tokens);
        offset += length;
    };
    for (std::size_t p = 0; p < spec.n_pairs; ++p) {
        append(questions[p], doc_name('q', p), embedstore::DocKind::question, doc_name('p', p));
        corpus.pairs.emplace_back(doc_name('q', p), doc_name('p', p));
    }
    for (std::size_t p = 0; p < spec.n_pairs; ++p) {
        append(paragraphs[p], doc_name('p', p), embedstore::DocKind::paragraph, "");
    }
    corpus.store = embedstore::TokenEmbeddingStore(offset, spec.n_layers, dim, std::move(data));
    corpus.index = embedstore::DocIndex(std::move(entries));
    return corpus;
}

aggregate::TokenLists generate_idf_corpus(const SynthSpec& spec) { return generate(spec).tokens; }

SynthSpec stopword_distractor_spec(std::uint64_t seed) {
    SynthSpec s;
    s.noise_sigma = 1.0;
    s.distractor_overlap = 0.0;
    s.stopword_fraction = 0.5;
    s.seed = seed;
    return s;
}

}  // namespace retforge::datagen
