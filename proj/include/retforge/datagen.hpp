#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "retforge/aggregate.hpp"
#include "retforge/embedstore.hpp"

namespace retforge::datagen {

// Synthetic question/paragraph corpus. Every pair shares a latent unit
// vector. In signal_layer a content token is
//     (1 - distractor_overlap) * latent + distractor_overlap * topic + noise
// and a stopword token is topic + noise, where topic is one of n_topics unit
// directions drawn inside a distractor_rank-dimensional subspace, picked
// independently for each document. Other layers hold pure noise. Noise is
// N(0, noise_sigma^2 / dim) per coordinate.
struct SynthSpec {
    std::size_t n_pairs = 200;
    std::size_t dim = 64;
    std::size_t n_layers = 3;
    std::size_t tokens_min = 5;
    std::size_t tokens_max = 20;
    std::size_t signal_layer = 0;
    double noise_sigma = 1.0;
    double distractor_overlap = 0.5;
    double stopword_fraction = 0.0;
    std::size_t n_topics = 8;
    std::size_t distractor_rank = 4;
    std::uint64_t seed = 0;
};

void validate(const SynthSpec& spec);

struct SynthCorpus {
    embedstore::TokenEmbeddingStore store;
    embedstore::DocIndex index;
    std::vector<std::pair<std::string, std::string>> pairs;  // (question id, paragraph id)
    aggregate::TokenLists tokens;                             // aligned with index
};

// Questions q00000.. first, then paragraphs p00000.., in pair order.
// Token id 0 is the shared stopword; content tokens get ids unique to one
// position in the corpus.
SynthCorpus generate(const SynthSpec& spec);

aggregate::TokenLists generate_idf_corpus(const SynthSpec& spec);

// Default spec for the stopword-distractor IDF experiments.
SynthSpec stopword_distractor_spec(std::uint64_t seed);

}  // namespace retforge::datagen
