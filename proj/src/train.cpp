#include "retforge/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "retforge/error.hpp"
#include "retforge/loss.hpp"
#include "retforge/rng.hpp"

namespace retforge::train {

using model::RetrievalModel;
using model::Tensor;

std::string to_string(LossKind k) { return k == LossKind::triplet ? "triplet" : "quadratic"; }
std::string to_string(Side s) { return s == Side::question ? "question" : "paragraph"; }

LossKind parse_loss_kind(const std::string& s) {
    if (s == "triplet") return LossKind::triplet;
    if (s == "quadratic") return LossKind::quadratic;
    throw ArgumentError("unknown loss kind '" + s + "' (expected triplet or quadratic)");
}

Side parse_side(const std::string& s) {
    if (s == "question") return Side::question;
    if (s == "paragraph") return Side::paragraph;
    throw ArgumentError("unknown side '" + s + "' (expected question or paragraph)");
}

void validate(const TrainConfig& cfg) {
    if (cfg.batch_size < 2) throw ArgumentError("batch_size must be >= 2");
    if (cfg.epochs < 1) throw ArgumentError("epochs must be >= 1");
    // lr = 0 is accepted here as a no-op run; the CLI insists on lr > 0.
    if (!(cfg.learning_rate >= 0.0) || !std::isfinite(cfg.learning_rate)) {
        throw ArgumentError("learning_rate must be >= 0");
    }
    if (!(cfg.weight_decay >= 0.0)) throw ArgumentError("weight_decay must be >= 0");
    if (!(cfg.margin > 0.0f)) throw ArgumentError("margin must be > 0");
    if (!(cfg.dropout >= 0.0f && cfg.dropout < 1.0f)) throw ArgumentError("dropout must lie in [0, 1)");
    if (cfg.eval_ks.empty()) throw ArgumentError("eval_ks must not be empty");
    if (cfg.eval_every == 0) throw ArgumentError("eval_every must be >= 1");
}

Splits make_splits(std::size_t n_questions, const SplitSpec& spec) {
    const std::size_t held_out = spec.recall_validation_questions + spec.loss_validation_questions;
    if (held_out > n_questions) {
        throw ArgumentError("splits need " + std::to_string(held_out) + " validation questions, corpus has " +
                            std::to_string(n_questions));
    }
    std::vector<std::size_t> order(n_questions);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(spec.seed, 0x5917));
    rng.shuffle(order);
    Splits s;
    const auto r_end = order.begin() + static_cast<std::ptrdiff_t>(spec.recall_validation_questions);
    const auto l_end = r_end + static_cast<std::ptrdiff_t>(spec.loss_validation_questions);
    s.recall_val.assign(order.begin(), r_end);
    s.loss_val.assign(r_end, l_end);
    s.train.assign(l_end, order.end());
    std::sort(s.recall_val.begin(), s.recall_val.end());
    std::sort(s.loss_val.begin(), s.loss_val.end());
    std::sort(s.train.begin(), s.train.end());
    return s;
}

void adam_step(std::span<Tensor* const> params, AdamState& state, double lr, double weight_decay) {
    if (state.first_moment.empty()) {
        for (const Tensor* p : params) {
            state.first_moment.emplace_back(p->count(), 0.0f);
            state.second_moment.emplace_back(p->count(), 0.0f);
        }
    }
    if (state.first_moment.size() != params.size()) throw ArgumentError("adam_step: parameter count changed");
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor& p = *params[i];
        if (p.grad.size() != p.values.size() || state.first_moment[i].size() != p.values.size()) {
            throw ArgumentError("adam_step: shape mismatch for parameter " + std::to_string(i));
        }
    }
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double correction1 = 1.0 - std::pow(AdamState::beta1, t);
    const double correction2 = 1.0 - std::pow(AdamState::beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = *params[i];
        auto& m = state.first_moment[i];
        auto& v = state.second_moment[i];
        for (std::size_t k = 0; k < p.values.size(); ++k) {
            const double g = p.grad[k];
            double value = p.values[k];
            value -= lr * weight_decay * value;
            const double mk = AdamState::beta1 * m[k] + (1.0 - AdamState::beta1) * g;
            const double vk = AdamState::beta2 * v[k] + (1.0 - AdamState::beta2) * g * g;
            m[k] = static_cast<float>(mk);
            v[k] = static_cast<float>(vk);
            const double m_hat = mk / correction1;
            const double v_hat = vk / correction2;
            value -= lr * m_hat / (std::sqrt(v_hat) + AdamState::epsilon);
            p.values[k] = static_cast<float>(value);
        }
    }
}

void adam_step(RetrievalModel& m, AdamState& state, double lr, double weight_decay) {
    std::vector<Tensor*> ptrs;
    for (auto& p : m.params()) ptrs.push_back(&p.tensor);
    adam_step(ptrs, state, lr, weight_decay);
}

metrics::EvalReport evaluate_subset(const Matrix& questions, const Matrix& paragraphs,
                                    std::span<const std::size_t> truth, std::span<const std::size_t> question_rows,
                                    std::span<const std::size_t> ks, RetrievalModel* question_model,
                                    RetrievalModel* paragraph_model) {
    if (question_rows.empty()) throw ArgumentError("evaluation needs at least one question");
    Matrix q = questions.gather_rows(question_rows);
    if (question_model) q = question_model->infer(q);
    const Matrix refined_p = paragraph_model ? paragraph_model->infer(paragraphs) : Matrix{};
    const Matrix& p = paragraph_model ? refined_p : paragraphs;
    std::vector<std::size_t> sub_truth;
    sub_truth.reserve(question_rows.size());
    for (const std::size_t r : question_rows) sub_truth.push_back(truth[r]);
    const auto d = metrics::pairwise_distances(q, p);
    metrics::EvalReport rep;
    rep.n_questions = d.n_questions();
    rep.n_paragraphs = d.n_paragraphs();
    rep.recall_at = metrics::recall_at_k(d, sub_truth, ks);
    return rep;
}

namespace {

struct BatchLoss {
    double value = 0.0;
    Matrix upstream;  // gradient wrt the model output rows
};

// Loss for one batch given the model's output on the refined side.
BatchLoss batch_loss(const Matrix& anchors, const Matrix& positives, std::span<const std::size_t> pair_ids,
                     const Matrix& all_paragraphs, const TrainConfig& cfg, Side side) {
    BatchLoss out;
    if (cfg.loss == LossKind::quadratic) {
        auto r = loss::quadratic_regression_conditional_loss(anchors, positives, cfg.margin);
        out.value = r.value;
        out.upstream = side == Side::question ? std::move(r.grad_questions) : std::move(r.grad_paragraphs);
        return out;
    }
    if (cfg.corpus_negatives) {
        const auto t = loss::mine_corpus_triplets(anchors, positives, all_paragraphs, pair_ids, cfg.margin);
        auto r = loss::triplet_loss(t);
        out.value = r.value;
        out.upstream = std::move(r.grad_anchors);
        return out;
    }
    const auto t = loss::mine_hard_triplets(anchors, positives, cfg.margin, pair_ids);
    auto r = loss::triplet_loss(t);
    out.value = r.value;
    if (side == Side::question) {
        out.upstream = std::move(r.grad_anchors);
    } else {
        out.upstream = std::move(r.grad_positives);
        for (std::size_t i = 0; i < t.negative_index.size(); ++i) {
            const auto g = r.grad_negatives.row(i);
            auto dst = out.upstream.row(t.negative_index[i]);
            for (std::size_t k = 0; k < g.size(); ++k) dst[k] += g[k];
        }
    }
    return out;
}

std::vector<std::size_t> paragraph_rows(std::span<const std::size_t> question_rows, std::span<const std::size_t> truth) {
    std::vector<std::size_t> p;
    p.reserve(question_rows.size());
    for (const std::size_t q : question_rows) p.push_back(truth[q]);
    return p;
}

std::optional<double> validation_loss(RetrievalModel& m, const Matrix& questions, const Matrix& paragraphs,
                                      std::span<const std::size_t> truth, std::span<const std::size_t> rows,
                                      const TrainConfig& cfg, Side side) {
    double total = 0.0;
    std::size_t counted = 0;
    for (std::size_t begin = 0; begin < rows.size(); begin += cfg.batch_size) {
        const std::size_t end = std::min(rows.size(), begin + cfg.batch_size);
        if (end - begin < 2 && cfg.loss == LossKind::triplet) continue;
        const auto q_rows = rows.subspan(begin, end - begin);
        const auto p_rows = paragraph_rows(q_rows, truth);
        Matrix a = questions.gather_rows(q_rows);
        Matrix p = paragraphs.gather_rows(p_rows);
        if (side == Side::question) {
            a = m.forward(a, false);
        } else {
            p = m.forward(p, false);
        }
        const auto bl = batch_loss(a, p, p_rows, paragraphs, cfg, side);
        total += bl.value * static_cast<double>(end - begin);
        counted += end - begin;
    }
    if (counted == 0) return std::nullopt;
    return total / static_cast<double>(counted);
}

}  // namespace

TrainResult train_epochal(RetrievalModel model, const Matrix& questions, const Matrix& paragraphs,
                          std::span<const std::size_t> truth, const TrainConfig& cfg, const Splits& splits,
                          Side side, const EpochCallback& on_epoch) {
    validate(cfg);
    if (truth.size() != questions.rows()) throw ArgumentError("truth must have one entry per question");
    if (questions.cols() != model.dim() || paragraphs.cols() != model.dim()) {
        throw ArgumentError("embedding dim does not match the model");
    }
    if (splits.recall_val.empty()) throw ArgumentError("recall validation split is empty");
    if (splits.train.size() < 2) throw ArgumentError("training split needs at least 2 questions");
    if (cfg.corpus_negatives && side != Side::question) {
        throw ArgumentError("corpus-wide negatives are only supported for question-side training");
    }
    for (const std::size_t t : truth) {
        if (t >= paragraphs.rows()) throw ArgumentError("truth column out of range");
    }

    TrainResult result{model.snapshot(), 0, {}, {}};
    AdamState adam;
    Rng shuffle_rng(derive_seed(cfg.seed, 0x5A0F));
    std::vector<std::size_t> order = splits.train;
    double best_recall = -1.0;
    std::optional<double> best_val_loss;

    const auto evaluate_epoch = [&](EpochRecord& rec) {
        RetrievalModel* qm = side == Side::question ? &model : nullptr;
        RetrievalModel* pm = side == Side::paragraph ? &model : nullptr;
        const auto rep = evaluate_subset(questions, paragraphs, truth, splits.recall_val, cfg.eval_ks, qm, pm);
        rec.recall = rep.recall_at;
        rec.recall_at_1 = rep.recall_at_1();
        rec.avg_recall = rep.avg_recall();
        rec.val_loss = validation_loss(model, questions, paragraphs, truth, splits.loss_val, cfg, side);
        if (rec.val_loss && (!best_val_loss || *rec.val_loss < *best_val_loss)) best_val_loss = rec.val_loss;
        rec.best_val_loss = best_val_loss;
        if (rec.recall_at_1 > best_recall) {
            best_recall = rec.recall_at_1;
            result.best_epoch = rec.epoch;
            result.best_model = model.snapshot();
        }
    };

    {
        const auto t0 = std::chrono::steady_clock::now();
        EpochRecord rec;
        evaluate_epoch(rec);
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t loss_rows = 0;
        std::size_t batch_no = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += cfg.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
            if (end - begin < 2 && cfg.loss == LossKind::triplet) continue;
            const auto q_rows = std::span<const std::size_t>(order).subspan(begin, end - begin);
            const auto p_rows = paragraph_rows(q_rows, truth);
            result.batched_questions.insert(q_rows.begin(), q_rows.end());

            Matrix a = questions.gather_rows(q_rows);
            Matrix p = paragraphs.gather_rows(p_rows);
            const std::uint64_t step_seed = derive_seed(cfg.seed, epoch, batch_no);
            if (side == Side::question) {
                a = model.forward(a, true, step_seed);
            } else {
                p = model.forward(p, true, step_seed);
            }
            const BatchLoss bl = batch_loss(a, p, p_rows, paragraphs, cfg, side);
            if (!std::isfinite(bl.value)) {
                throw NumericError("non-finite training loss at epoch " + std::to_string(epoch) + ", batch " +
                                   std::to_string(batch_no));
            }
            loss_sum += bl.value * static_cast<double>(end - begin);
            loss_rows += end - begin;
            model.zero_grad();
            model.backward(bl.upstream);
            adam_step(model, adam, cfg.learning_rate, cfg.weight_decay);
        }

        EpochRecord rec;
        rec.epoch = epoch;
        if (loss_rows > 0) rec.train_loss = loss_sum / static_cast<double>(loss_rows);
        if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            evaluate_epoch(rec);
        } else {
            rec.best_val_loss = best_val_loss;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    return result;
}

PipelineResult pipeline_three_stage(const Matrix& questions, const Matrix& paragraphs,
                                    std::span<const std::size_t> truth, const TrainConfig& cfg, const Splits& splits,
                                    const ModelFactory& make_model, const EpochCallback& on_epoch) {
    TrainResult stage1 = train_epochal(make_model(derive_seed(cfg.seed, 1)), questions, paragraphs, truth, cfg,
                                       splits, Side::question, on_epoch);
    TrainResult stage2 = train_epochal(make_model(derive_seed(cfg.seed, 2)), questions, paragraphs, truth, cfg,
                                       splits, Side::paragraph, on_epoch);
    RetrievalModel paragraph_model = stage2.best_model.snapshot();
    const Matrix refined_paragraphs = paragraph_model.infer(paragraphs);

    TrainConfig cfg3 = cfg;
    cfg3.seed = derive_seed(cfg.seed, 3);
    TrainResult stage3 = train_epochal(stage1.best_model.snapshot(), questions, refined_paragraphs, truth, cfg3,
                                       splits, Side::question, on_epoch);

    const auto row = [&](std::string name, RetrievalModel* qm, RetrievalModel* pm) {
        const auto rep = evaluate_subset(questions, paragraphs, truth, splits.recall_val, cfg.eval_ks, qm, pm);
        return StageRow{std::move(name), rep.recall_at_1(), rep.avg_recall(), 0.0, 0.0};
    };
    RetrievalModel q1 = stage1.best_model.snapshot();
    RetrievalModel q3 = stage3.best_model.snapshot();

    PipelineResult out{q3.snapshot(), paragraph_model.snapshot(), std::move(stage1), std::move(stage2),
                       std::move(stage3), {}, {}};
    out.question_table.push_back(row("baseline", nullptr, nullptr));
    out.question_table.push_back(row("question model", &q1, nullptr));
    out.question_table.push_back(row("question model + refined paragraphs", &q3, &paragraph_model));
    out.paragraph_table.push_back(row("baseline", nullptr, nullptr));
    out.paragraph_table.push_back(row("paragraph model", nullptr, &paragraph_model));
    out.paragraph_table.push_back(row("paragraph model + refined questions", &q1, &paragraph_model));
    for (auto* table : {&out.question_table, &out.paragraph_table}) {
        const StageRow base = table->front();
        for (auto& r : *table) {
            r.delta_recall_at_1 = 100.0 * (r.recall_at_1 - base.recall_at_1);
            r.delta_avg_recall = 100.0 * (r.avg_recall - base.avg_recall);
        }
    }
    return out;
}

}  // namespace retforge::train
