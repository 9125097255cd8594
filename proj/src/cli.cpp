#include "retforge/cli.hpp"

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>

#include "retforge/aggregate.hpp"
#include "retforge/datagen.hpp"
#include "retforge/embedstore.hpp"
#include "retforge/error.hpp"
#include "retforge/metrics.hpp"
#include "retforge/model.hpp"
#include "retforge/parallel.hpp"
#include "retforge/report.hpp"
#include "retforge/train.hpp"

namespace retforge::cli {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

std::string sha256_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataIntegrityError("cannot read " + path);
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
        EVP_MD_CTX_free(ctx);
        throw Error("sha256 initialisation failed");
    }
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx, md, &len);
    EVP_MD_CTX_free(ctx);
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out += hex[md[i] >> 4];
        out += hex[md[i] & 0xF];
    }
    return out;
}

namespace {

struct Manifest {
    std::string command;
    std::vector<fs::path> inputs;
    std::vector<std::uint64_t> seeds;
    std::vector<fs::path> outputs;
};

ordered_json option_values(const CLI::App& app) {
    ordered_json flags;
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_lnames().empty()) continue;
        const std::string& name = opt->get_lnames().front();
        if (name == "help" || name == "version") continue;
        std::string value;
        if (opt->count() > 0) {
            for (const auto& r : opt->results()) value += (value.empty() ? "" : ",") + r;
        } else {
            value = opt->get_default_str();
        }
        flags[name] = value;
    }
    return flags;
}

class Context {
public:
    Context(const CLI::App& app, std::ostream& out, std::ostream& err) : app_(app), out(out), err(err) {}

    void write_manifest(const Manifest& m, const fs::path& path) const {
        ordered_json j;
        j["tool"] = "retforge";
        j["version"] = kVersion;
        j["command"] = m.command;
        ordered_json flags = option_values(app_);
        for (const CLI::App* sub : app_.get_subcommands()) {
            const ordered_json sub_flags = option_values(*sub);
            for (const auto& [k, v] : sub_flags.items()) flags[k] = v;
        }
        j["flags"] = flags;
        ordered_json inputs = ordered_json::array();
        for (const auto& p : m.inputs) inputs.push_back({{"path", p.string()}, {"sha256", sha256_file(p.string())}});
        j["inputs"] = inputs;
        j["seeds"] = m.seeds;
        ordered_json outputs = ordered_json::array();
        for (const auto& p : m.outputs) outputs.push_back(p.string());
        outputs.push_back(path.string());
        j["outputs"] = outputs;
        report::write_text(j.dump(2) + "\n", path);
    }

private:
    const CLI::App& app_;

public:
    std::ostream& out;
    std::ostream& err;
};

fs::path with_suffix(const std::string& prefix, const char* suffix) { return fs::path(prefix + suffix); }

std::vector<std::size_t> resolve_ks(const std::vector<std::size_t>& given, std::size_t n_paragraphs) {
    if (!given.empty()) return given;
    std::vector<std::size_t> ks;
    for (const std::size_t k : metrics::kDefaultKs) {
        if (k <= n_paragraphs) ks.push_back(k);
    }
    return ks;
}

std::string pct(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", 100.0 * v);
    return buf;
}

// ---- gen ----

struct GenArgs {
    datagen::SynthSpec spec;
    std::string out;
};

void add_gen(CLI::App& app, GenArgs& a) {
    auto* c = app.add_subcommand("gen", "Write a synthetic store, index and token lists");
    c->add_option("--pairs", a.spec.n_pairs, "Question/paragraph pairs");
    c->add_option("--dim", a.spec.dim, "Embedding width");
    c->add_option("--layers", a.spec.n_layers, "Layers per token");
    c->add_option("--tokens-min", a.spec.tokens_min, "Shortest document");
    c->add_option("--tokens-max", a.spec.tokens_max, "Longest document");
    c->add_option("--signal-layer", a.spec.signal_layer, "Layer carrying pair identity");
    c->add_option("--noise-sigma", a.spec.noise_sigma, "Token noise scale");
    c->add_option("--overlap", a.spec.distractor_overlap, "Weight of the shared topic direction");
    c->add_option("--stopword-fraction", a.spec.stopword_fraction, "Share of stopword tokens per document");
    c->add_option("--topics", a.spec.n_topics, "Distractor topics");
    c->add_option("--distractor-rank", a.spec.distractor_rank, "Dimension of the topic subspace");
    c->add_option("--seed", a.spec.seed, "Generator seed");
    c->add_option("--out", a.out, "Output prefix")->required();
}

int cmd_gen(const Context& ctx, const GenArgs& a) {
    datagen::validate(a.spec);
    const fs::path emb = with_suffix(a.out, ".emb");
    const fs::path idx = with_suffix(a.out, ".idx");
    const fs::path tok = with_suffix(a.out, ".tok");
    ctx.write_manifest({"gen", {}, {a.spec.seed}, {emb, idx, tok}}, with_suffix(a.out, ".manifest.json"));
    const auto corpus = datagen::generate(a.spec);
    embedstore::save_store(corpus.store, emb);
    embedstore::save_index(corpus.index, idx);
    aggregate::save_token_lists(corpus.index, corpus.tokens, tok);
    ctx.out << "questions\t" << a.spec.n_pairs << "\nparagraphs\t" << a.spec.n_pairs << "\ntokens\t"
            << corpus.store.n_tokens() << "\n";
    return ok;
}

// ---- ingest ----

struct IngestArgs {
    std::string store;
    std::string index;
};

void add_ingest(CLI::App& app, IngestArgs& a) {
    auto* c = app.add_subcommand("ingest", "Validate a store against its index and print counts");
    c->add_option("--store", a.store, "EMB1 token store")->required();
    c->add_option("--index", a.index, "Index sidecar")->required();
}

int cmd_ingest(const Context& ctx, const IngestArgs& a) {
    const auto store = embedstore::load_store(a.store);
    const auto index = embedstore::load_index(a.index);
    const auto violations = embedstore::validate(store, index);
    const auto counts = embedstore::count_documents(index);
    ctx.out << "questions\t" << counts.n_questions << "\nparagraphs\t" << counts.n_paragraphs << "\ntokens\t"
            << store.n_tokens() << "\nlayers\t" << store.n_layers() << "\ndim\t" << store.dim() << "\n";
    for (const auto& v : violations) ctx.err << "violation\t" << v.doc_id << "\t" << v.rule << "\t" << v.detail << "\n";
    return violations.empty() ? ok : data_error;
}

// ---- idf ----

struct IdfArgs {
    std::string index;
    std::string tokens;
    std::string out;
};

void add_idf(CLI::App& app, IdfArgs& a) {
    auto* c = app.add_subcommand("idf", "Compute ln(N/df) over a token-list file");
    c->add_option("--index", a.index, "Index sidecar")->required();
    c->add_option("--tokens", a.tokens, "Token lists")->required();
    c->add_option("--out", a.out, "IDF table")->required();
}

int cmd_idf(const Context& ctx, const IdfArgs& a) {
    const auto index = embedstore::load_index(a.index);
    const auto tokens = aggregate::load_token_lists(index, a.tokens);
    ctx.write_manifest({"idf", {a.index, a.tokens}, {}, {a.out}}, with_suffix(a.out, ".manifest.json"));
    const auto table = aggregate::compute_idf(tokens);
    aggregate::save_idf(table, a.out);
    ctx.out << "documents\t" << table.n_documents << "\ndistinct tokens\t" << table.weights.size() << "\n";
    return ok;
}

// ---- aggregate ----

struct AggregateArgs {
    std::string store;
    std::string index;
    std::vector<double> weights;
    std::string tokens;
    std::string idf;
    std::string out;
};

void add_aggregate(CLI::App& app, AggregateArgs& a) {
    auto* c = app.add_subcommand("aggregate", "Pool token embeddings into a document matrix");
    c->add_option("--store", a.store, "EMB1 token store")->required();
    c->add_option("--index", a.index, "Index sidecar")->required();
    c->add_option("--weights", a.weights, "Layer weights a,b,c summing to 1")->required()->delimiter(',');
    c->add_option("--tokens", a.tokens, "Token lists, enables IDF weighting");
    c->add_option("--idf", a.idf, "Precomputed IDF table (computed from --tokens when absent)");
    c->add_option("--out", a.out, "Output prefix for .emb/.idx")->required();
}

struct IdfInputs {
    aggregate::TokenLists tokens;
    aggregate::IdfTable table;
    bool enabled = false;
};

IdfInputs load_idf_inputs(const embedstore::DocIndex& index, const std::string& tokens, const std::string& idf) {
    IdfInputs in;
    if (tokens.empty()) {
        if (!idf.empty()) throw ArgumentError("--idf needs --tokens");
        return in;
    }
    in.tokens = aggregate::load_token_lists(index, tokens);
    in.table = idf.empty() ? aggregate::compute_idf(in.tokens) : aggregate::load_idf(idf);
    in.enabled = true;
    return in;
}

std::vector<fs::path> idf_paths(const std::string& tokens, const std::string& idf) {
    std::vector<fs::path> out;
    if (!tokens.empty()) out.emplace_back(tokens);
    if (!idf.empty()) out.emplace_back(idf);
    return out;
}

int cmd_aggregate(const Context& ctx, const AggregateArgs& a) {
    double sum = 0.0;
    for (const double w : a.weights) sum += w;
    if (std::abs(sum - 1.0) > 1e-6) throw ArgumentError("--weights must sum to 1, got " + std::to_string(sum));
    const aggregate::LayerWeights weights(a.weights);
    const auto store = embedstore::load_store(a.store);
    const auto index = embedstore::load_index(a.index);
    if (weights.size() != store.n_layers()) {
        throw ArgumentError("--weights has " + std::to_string(weights.size()) + " entries, store has " +
                            std::to_string(store.n_layers()) + " layers");
    }
    const IdfInputs idf = load_idf_inputs(index, a.tokens, a.idf);

    std::vector<fs::path> inputs{a.store, a.index};
    for (auto& p : idf_paths(a.tokens, a.idf)) inputs.push_back(p);
    const fs::path emb = with_suffix(a.out, ".emb");
    const fs::path idx = with_suffix(a.out, ".idx");
    ctx.write_manifest({"aggregate", inputs, {}, {emb, idx}}, with_suffix(a.out, ".manifest.json"));

    aggregate::BuildStats stats;
    std::optional<aggregate::IdfInjection> inj;
    if (idf.enabled) inj.emplace(aggregate::IdfInjection{idf.table, idf.tokens});
    const auto m = aggregate::build_matrix(store, index, weights, inj, &stats);
    aggregate::save_matrix(m, emb, idx);
    const auto counts = embedstore::count_documents(index);
    ctx.out << "questions\t" << counts.n_questions << "\nparagraphs\t" << counts.n_paragraphs << "\n";
    if (idf.enabled) ctx.out << "idf fallback tokens\t" << stats.missing_idf_tokens << "\n";
    return ok;
}

// ---- grid ----

struct GridArgs {
    std::string store;
    std::string index;
    std::size_t step = 3;
    std::string tokens;
    std::string idf;
    std::vector<std::size_t> ks;
    std::string out;
};

void add_grid(CLI::App& app, GridArgs& a) {
    auto* c = app.add_subcommand("grid", "Rank layer-weight configurations by recall@1");
    c->add_option("--store", a.store, "EMB1 token store")->required();
    c->add_option("--index", a.index, "Index sidecar")->required();
    c->add_option("--step", a.step, "Simplex denominator")->check(CLI::PositiveNumber);
    c->add_option("--tokens", a.tokens, "Token lists, enables IDF weighting");
    c->add_option("--idf", a.idf, "Precomputed IDF table");
    c->add_option("--ks", a.ks, "Recall cutoffs")->delimiter(',');
    c->add_option("--out", a.out, "Ranked table (TSV)");
}

int cmd_grid(const Context& ctx, const GridArgs& a) {
    const auto store = embedstore::load_store(a.store);
    const auto index = embedstore::load_index(a.index);
    const IdfInputs idf = load_idf_inputs(index, a.tokens, a.idf);
    const auto ks = resolve_ks(a.ks, embedstore::count_documents(index).n_paragraphs);
    const auto configs = aggregate::simplex_grid(store.n_layers(), a.step);

    std::vector<fs::path> inputs{a.store, a.index};
    for (auto& p : idf_paths(a.tokens, a.idf)) inputs.push_back(p);
    if (!a.out.empty()) ctx.write_manifest({"grid", inputs, {}, {a.out}}, with_suffix(a.out, ".manifest.json"));

    std::optional<aggregate::IdfInjection> inj;
    if (idf.enabled) inj.emplace(aggregate::IdfInjection{idf.table, idf.tokens});
    const auto results = aggregate::grid_search(store, index, configs, aggregate::recall_evaluator(ks), inj);
    std::string table = "rank\tweights\trecall_at_1\tavg_recall\n";
    for (std::size_t i = 0; i < results.size(); ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "\t%.6f\t%.6f\n", results[i].recall_at_1, results[i].avg_recall);
        table += std::to_string(i + 1) + "\t" + results[i].weights.label() + buf;
    }
    ctx.out << table;
    if (!a.out.empty()) report::write_text(table, a.out);
    return ok;
}

// ---- train ----

struct TrainArgs {
    std::string matrix;
    std::string model = "fcrr";
    std::string loss = "triplet";
    std::optional<float> margin;
    train::TrainConfig cfg;
    std::vector<std::uint64_t> seeds{0};
    std::size_t recall_val = 5000;
    std::size_t loss_val = 10000;
    std::uint64_t split_seed = 0;
    std::string side = "question";
    bool three_stage = false;
    std::size_t hidden_dim = 0;
    std::size_t fcrr_layers = 2;
    std::size_t kernel = 5;
    std::size_t stride = 2;
    float scaling_factor = 1.0f;
    std::vector<std::size_t> ks;
    std::string out;
};

void add_train(CLI::App& app, TrainArgs& a) {
    auto* c = app.add_subcommand("train", "Train residual retrieval models");
    c->add_option("--matrix", a.matrix, "Matrix prefix (.emb/.idx)")->required();
    c->add_option("--model", a.model, "fcrr|convrr|composite");
    c->add_option("--loss", a.loss, "triplet|quadratic");
    c->add_option("--margin", a.margin, "Triplet margin m")->required();
    c->add_option("--lr", a.cfg.learning_rate, "Learning rate");
    c->add_option("--wd", a.cfg.weight_decay, "Decoupled weight decay");
    c->add_option("--dropout", a.cfg.dropout, "Dropout rate");
    c->add_option("--batch", a.cfg.batch_size, "Questions per batch");
    c->add_option("--epochs", a.cfg.epochs, "Passes over the training questions");
    c->add_option("--eval-every", a.cfg.eval_every, "Epochs between validation passes");
    c->add_option("--seeds", a.seeds, "Training seeds")->delimiter(',');
    c->add_option("--recall-val", a.recall_val, "Recall-validation questions");
    c->add_option("--loss-val", a.loss_val, "Loss-validation questions");
    c->add_option("--split-seed", a.split_seed, "Split seed");
    c->add_option("--side", a.side, "question|paragraph");
    c->add_flag("--three-stage", a.three_stage, "Question, paragraph, then question again");
    c->add_flag("--corpus-negatives", a.cfg.corpus_negatives, "Mine negatives over all paragraphs");
    c->add_option("--hidden-dim", a.hidden_dim, "FCRR hidden width (default: input width)");
    c->add_option("--fcrr-layers", a.fcrr_layers, "FCRR dense layers");
    c->add_option("--kernel", a.kernel, "ConvRR kernel length");
    c->add_option("--stride", a.stride, "ConvRR stride");
    c->add_option("--sf", a.scaling_factor, "Residual scaling factor");
    c->add_option("--ks", a.ks, "Recall cutoffs")->delimiter(',');
    c->add_option("--out", a.out, "Output directory")->required();
}

model::ModelKind validated_kind(const TrainArgs& a) {
    try {
        return model::parse_model_kind(a.model);
    } catch (const Error& e) {
        throw ArgumentError(e.what());
    }
}

int cmd_train(const Context& ctx, TrainArgs a) {
    if (a.cfg.epochs == 0) throw ArgumentError("--epochs must be >= 1");
    if (a.seeds.empty()) throw ArgumentError("--seeds needs at least one seed");
    const auto kind = validated_kind(a);
    train::Side side;
    try {
        a.cfg.loss = train::parse_loss_kind(a.loss);
        side = train::parse_side(a.side);
    } catch (const Error& e) {
        throw ArgumentError(e.what());
    }
    a.cfg.margin = *a.margin;

    const fs::path emb = with_suffix(a.matrix, ".emb");
    const fs::path idx = with_suffix(a.matrix, ".idx");
    const auto matrix = aggregate::load_matrix(emb, idx);
    const auto part = aggregate::partition(matrix);
    const std::size_t dim = part.questions.cols();
    a.cfg.eval_ks = resolve_ks(a.ks, part.paragraphs.rows());
    train::validate(a.cfg);

    std::optional<model::FcrrConfig> fc;
    std::optional<model::ConvRrConfig> conv;
    if (kind != model::ModelKind::convrr) {
        fc = model::FcrrConfig{dim, a.fcrr_layers, a.hidden_dim ? a.hidden_dim : dim, a.cfg.dropout,
                               a.scaling_factor};
        model::validate_config(*fc);
    }
    if (kind != model::ModelKind::fcrr) {
        conv = model::ConvRrConfig{dim, dim, a.kernel, a.stride, a.cfg.dropout, a.scaling_factor};
        model::validate_config(*conv);
    }
    const auto splits = train::make_splits(part.questions.rows(), {a.recall_val, a.loss_val, a.split_seed});

    const fs::path dir(a.out);
    fs::create_directories(dir);
    std::vector<fs::path> outputs;
    for (const std::uint64_t s : a.seeds) {
        const std::string base = "seed-" + std::to_string(s);
        if (a.three_stage) {
            for (const char* f : {".question.rrm", ".paragraph.rrm", ".stage1.history.json", ".stage2.history.json",
                                  ".stage3.history.json", ".stages.json"}) {
                outputs.push_back(dir / (base + f));
            }
        } else {
            outputs.push_back(dir / (base + ".rrm"));
            outputs.push_back(dir / (base + ".history.json"));
        }
    }
    outputs.push_back(dir / "report.json");
    ctx.write_manifest({"train", {emb, idx}, a.seeds, outputs}, dir / "manifest.json");

    const auto factory = [&](std::uint64_t seed) { return model::init_params(kind, fc, conv, seed); };
    std::vector<report::SeedOutcome> outcomes;
    for (const std::uint64_t s : a.seeds) {
        const std::string base = "seed-" + std::to_string(s);
        const auto log = [&](const train::EpochRecord& r) {
            char buf[256];
            std::snprintf(buf, sizeof(buf), "seed %llu epoch %zu train_loss %s val_loss %s r@1 %s avg %s %.2fs\n",
                          static_cast<unsigned long long>(s), r.epoch,
                          r.train_loss ? std::to_string(*r.train_loss).c_str() : "-",
                          r.val_loss ? std::to_string(*r.val_loss).c_str() : "-", pct(r.recall_at_1).c_str(),
                          pct(r.avg_recall).c_str(), r.seconds);
            ctx.err << buf << std::flush;
        };
        train::TrainConfig cfg = a.cfg;
        cfg.seed = s;
        try {
            if (a.three_stage) {
                auto result = train::pipeline_three_stage(part.questions, part.paragraphs, part.truth, cfg, splits,
                                                          factory, log);
                model::save_checkpoint(result.question_model, dir / (base + ".question.rrm"));
                model::save_checkpoint(result.paragraph_model, dir / (base + ".paragraph.rrm"));
                report::write_history(result.stage1.history, dir / (base + ".stage1.history.json"));
                report::write_history(result.stage2.history, dir / (base + ".stage2.history.json"));
                report::write_history(result.stage3.history, dir / (base + ".stage3.history.json"));
                report::write_text(report::pipeline_report_json(result), dir / (base + ".stages.json"));
                ctx.out << "seed " << s << " question side\n"
                        << report::stage_table(result.question_table) << "seed " << s << " paragraph side\n"
                        << report::stage_table(result.paragraph_table);
                const auto& last = result.question_table.back();
                outcomes.push_back({s, result.stage3.best_epoch, last.recall_at_1, last.avg_recall, {}});
            } else {
                auto result = train::train_epochal(factory(s), part.questions, part.paragraphs, part.truth, cfg,
                                                   splits, side, log);
                model::save_checkpoint(result.best_model, dir / (base + ".rrm"));
                report::write_history(result.history, dir / (base + ".history.json"));
                const auto best = std::find_if(result.history.begin(), result.history.end(),
                                               [&](const auto& r) { return r.epoch == result.best_epoch; });
                outcomes.push_back({s, result.best_epoch, best->recall_at_1, best->avg_recall, best->recall});
                ctx.out << "seed " << s << " best epoch " << result.best_epoch << " recall@1 "
                        << pct(best->recall_at_1) << " (epoch 0: " << pct(result.history.front().recall_at_1)
                        << ")\n";
            }
        } catch (const NumericError& e) {
            throw NumericError("seed " + std::to_string(s) + ": " + e.what());
        }
    }
    const std::string summary = report::seeds_report_json(outcomes);
    report::write_text(summary, dir / "report.json");
    std::vector<double> r1;
    for (const auto& o : outcomes) r1.push_back(o.recall_at_1);
    const auto sp = report::spread(r1);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "recall@1 %.2f%% +/- %.2f over %zu seed(s)\n", 100.0 * sp.mean,
                  100.0 * sp.half_range, outcomes.size());
    ctx.out << buf;
    return ok;
}

// ---- eval ----

struct EvalArgs {
    std::string matrix;
    std::string question_model;
    std::string paragraph_model;
    std::vector<std::size_t> ks;
    bool auc = false;
    std::string out;
};

void add_eval(CLI::App& app, EvalArgs& a) {
    auto* c = app.add_subcommand("eval", "Recall@k, P-R curve, AP and AUC for a matrix");
    c->add_option("--matrix", a.matrix, "Matrix prefix (.emb/.idx)")->required();
    c->add_option("--question-model", a.question_model, "Checkpoint applied to question rows");
    c->add_option("--paragraph-model", a.paragraph_model, "Checkpoint applied to paragraph rows");
    c->add_option("--ks", a.ks, "Recall cutoffs")->delimiter(',');
    c->add_flag("--auc", a.auc, "Also report ROC AUC");
    c->add_option("--out", a.out, "Output prefix for .report.json/.pr.csv")->required();
}

int cmd_eval(const Context& ctx, const EvalArgs& a) {
    const fs::path emb = with_suffix(a.matrix, ".emb");
    const fs::path idx = with_suffix(a.matrix, ".idx");
    const auto part = aggregate::partition(aggregate::load_matrix(emb, idx));
    std::vector<fs::path> inputs{emb, idx};
    std::optional<model::RetrievalModel> qm;
    std::optional<model::RetrievalModel> pm;
    if (!a.question_model.empty()) {
        qm.emplace(model::load_checkpoint(a.question_model));
        inputs.emplace_back(a.question_model);
    }
    if (!a.paragraph_model.empty()) {
        pm.emplace(model::load_checkpoint(a.paragraph_model));
        inputs.emplace_back(a.paragraph_model);
    }
    const auto ks = resolve_ks(a.ks, part.paragraphs.rows());
    const fs::path json_path = with_suffix(a.out, ".report.json");
    const fs::path csv_path = with_suffix(a.out, ".pr.csv");
    ctx.write_manifest({"eval", inputs, {}, {json_path, csv_path}}, with_suffix(a.out, ".manifest.json"));

    const Matrix q = qm ? qm->infer(part.questions) : part.questions;
    const Matrix p = pm ? pm->infer(part.paragraphs) : part.paragraphs;
    const auto rep = metrics::evaluate(metrics::pairwise_distances(q, p), part.truth, ks, a.auc);
    report::write_eval_report(rep, json_path);
    report::write_pr_csv(rep.pr_curve, csv_path);
    ctx.out << report::recall_table(rep);
    char buf[64];
    std::snprintf(buf, sizeof(buf), "AP\t%.6f\n", rep.average_precision);
    ctx.out << buf;
    if (rep.auc) {
        std::snprintf(buf, sizeof(buf), "AUC\t%.6f\n", *rep.auc);
        ctx.out << buf;
    }
    return ok;
}

// ---- report ----

struct ReportArgs {
    std::vector<std::string> inputs;
};

void add_report(CLI::App& app, ReportArgs& a) {
    auto* c = app.add_subcommand("report", "Summarise eval or train report files");
    c->add_option("inputs", a.inputs, "report.json files")->required();
}

int cmd_report(const Context& ctx, const ReportArgs& a) {
    for (const auto& path : a.inputs) {
        std::ifstream in(path);
        if (!in) throw DataIntegrityError("cannot read " + path);
        ordered_json j;
        try {
            j = ordered_json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw FormatError(path + ": " + e.what());
        }
        ctx.out << path << "\n";
        if (j.contains("runs")) {
            for (const auto& r : j["runs"]) {
                ctx.out << "seed " << r["seed"].get<std::uint64_t>() << "\trecall@1 "
                        << pct(r["recall_at_1"].get<double>()) << "\tavg " << pct(r["avg_recall"].get<double>())
                        << "\n";
            }
            char buf[128];
            std::snprintf(buf, sizeof(buf), "recall@1 %.2f%% +/- %.2f\tavg %.2f%% +/- %.2f\n",
                          100.0 * j["recall_at_1"]["mean"].get<double>(),
                          100.0 * j["recall_at_1"]["half_range"].get<double>(),
                          100.0 * j["avg_recall"]["mean"].get<double>(),
                          100.0 * j["avg_recall"]["half_range"].get<double>());
            ctx.out << buf;
        } else if (j.contains("recall")) {
            metrics::EvalReport rep;
            for (const auto& e : j["recall"]) {
                rep.recall_at.push_back({e["k"].get<std::size_t>(), e["hits"].get<std::size_t>(),
                                         e["fraction"].get<double>()});
            }
            ctx.out << report::recall_table(rep) << "AP\t" << j["average_precision"].get<double>() << "\n";
            if (j.contains("auc")) ctx.out << "AUC\t" << j["auc"].get<double>() << "\n";
        } else {
            throw FormatError(path + ": not a retforge report");
        }
    }
    return ok;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const ArgumentError*>(&e)) return usage_error;
    if (dynamic_cast<const NormalizationError*>(&e)) return data_error;
    if (dynamic_cast<const NumericError*>(&e)) return numeric_failure;
    return data_error;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Dense question-to-paragraph retrieval toolkit", "retforge"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_version_flag("--version", kVersion);
    std::size_t threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: RETFORGE_THREADS or 1)");

    GenArgs gen;
    IngestArgs ingest;
    IdfArgs idf;
    AggregateArgs agg;
    GridArgs grid;
    TrainArgs trn;
    EvalArgs ev;
    ReportArgs rep;
    add_gen(app, gen);
    add_ingest(app, ingest);
    add_idf(app, idf);
    add_aggregate(app, agg);
    add_grid(app, grid);
    add_train(app, trn);
    add_eval(app, ev);
    add_report(app, rep);
    for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ok : usage_error;
    }
    if (threads > 0) set_thread_count(threads);

    const Context ctx(app, out, err);
    const std::string cmd = app.get_subcommands().front()->get_name();
    try {
        if (cmd == "gen") return cmd_gen(ctx, gen);
        if (cmd == "ingest") return cmd_ingest(ctx, ingest);
        if (cmd == "idf") return cmd_idf(ctx, idf);
        if (cmd == "aggregate") return cmd_aggregate(ctx, agg);
        if (cmd == "grid") return cmd_grid(ctx, grid);
        if (cmd == "train") return cmd_train(ctx, trn);
        if (cmd == "eval") return cmd_eval(ctx, ev);
        if (cmd == "report") return cmd_report(ctx, rep);
    } catch (const std::exception& e) {
        err << "retforge " << cmd << ": " << e.what() << "\n";
        return exit_code_for(e);
    }
    err << "unknown command " << cmd << "\n";
    return usage_error;
}

}  // namespace retforge::cli
