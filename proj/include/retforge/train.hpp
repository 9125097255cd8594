#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "retforge/matrix.hpp"
#include "retforge/metrics.hpp"
#include "retforge/model.hpp"

namespace retforge::train {

enum class LossKind { triplet, quadratic };
enum class Side { question, paragraph };

std::string to_string(LossKind k);
std::string to_string(Side s);
LossKind parse_loss_kind(const std::string& s);
Side parse_side(const std::string& s);

struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-3;
    float dropout = 0.1f;
    std::size_t batch_size = 512;
    std::size_t epochs = 100;  // passes over the training questions
    float margin = 0.2f;
    std::uint64_t seed = 0;
    LossKind loss = LossKind::triplet;
    std::vector<std::size_t> eval_ks = metrics::kDefaultKs;
    std::size_t eval_every = 1;      // epochs between validation passes
    bool corpus_negatives = false;   // mine negatives over every paragraph, question side only
};

void validate(const TrainConfig& cfg);

struct SplitSpec {
    std::size_t recall_validation_questions = 5000;
    std::size_t loss_validation_questions = 10000;
    std::uint64_t seed = 0;
};

// Question row indices, each list sorted ascending.
struct Splits {
    std::vector<std::size_t> train;
    std::vector<std::size_t> recall_val;
    std::vector<std::size_t> loss_val;
};

Splits make_splits(std::size_t n_questions, const SplitSpec& spec);

struct AdamState {
    static constexpr double beta1 = 0.9;
    static constexpr double beta2 = 0.999;
    static constexpr double epsilon = 1e-8;

    std::vector<std::vector<float>> first_moment;
    std::vector<std::vector<float>> second_moment;
    std::size_t step = 0;
};

// Decoupled weight decay (p -= lr * wd * p) followed by a bias-corrected Adam
// update. Moments are created on the first call.
void adam_step(std::span<model::Tensor* const> params, AdamState& state, double lr, double weight_decay);
void adam_step(model::RetrievalModel& m, AdamState& state, double lr, double weight_decay);

struct EpochRecord {
    std::size_t epoch = 0;                    // 0 = before any update
    std::optional<double> train_loss;         // mean batch loss of the epoch
    std::optional<double> val_loss;           // on the loss-validation questions
    std::optional<double> best_val_loss;      // running minimum of val_loss
    std::vector<metrics::RecallEntry> recall; // on the recall-validation questions
    double recall_at_1 = 0.0;
    double avg_recall = 0.0;
    double seconds = 0.0;                     // wall clock, kept out of history files
};

struct TrainResult {
    model::RetrievalModel best_model;
    std::size_t best_epoch = 0;
    std::vector<EpochRecord> history;
    std::set<std::size_t> batched_questions;  // every question row that entered a training batch
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// `side` selects which embeddings the model refines: question rows (anchors)
// or paragraph rows (positives and negatives). Returns the parameters with the
// best validation recall@1, earliest epoch on ties; epoch 0 competes.
TrainResult train_epochal(model::RetrievalModel model, const Matrix& questions, const Matrix& paragraphs,
                          std::span<const std::size_t> truth, const TrainConfig& cfg, const Splits& splits,
                          Side side = Side::question, const EpochCallback& on_epoch = {});

// Recall on the given question subset after optionally refining either side.
metrics::EvalReport evaluate_subset(const Matrix& questions, const Matrix& paragraphs,
                                    std::span<const std::size_t> truth, std::span<const std::size_t> question_rows,
                                    std::span<const std::size_t> ks, model::RetrievalModel* question_model,
                                    model::RetrievalModel* paragraph_model);

struct StageRow {
    std::string name;
    double recall_at_1 = 0.0;
    double avg_recall = 0.0;
    double delta_recall_at_1 = 0.0;  // percentage points vs the row-0 baseline
    double delta_avg_recall = 0.0;
};

struct PipelineResult {
    model::RetrievalModel question_model;
    model::RetrievalModel paragraph_model;
    TrainResult stage1;
    TrainResult stage2;
    TrainResult stage3;
    std::vector<StageRow> question_table;
    std::vector<StageRow> paragraph_table;
};

using ModelFactory = std::function<model::RetrievalModel(std::uint64_t seed)>;

// Stage 1 refines questions against fixed paragraphs; stage 2 refines
// paragraphs against the original questions; stage 3 continues the stage-1
// model against stage-2's refined paragraphs (materialised once).
PipelineResult pipeline_three_stage(const Matrix& questions, const Matrix& paragraphs,
                                    std::span<const std::size_t> truth, const TrainConfig& cfg, const Splits& splits,
                                    const ModelFactory& make_model, const EpochCallback& on_epoch = {});

}  // namespace retforge::train
