#include "retforge/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "retforge/error.hpp"

namespace retforge::report {

using nlohmann::ordered_json;

namespace {

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

ordered_json recall_json(std::span<const metrics::RecallEntry> recall) {
    ordered_json out = ordered_json::array();
    for (const auto& e : recall) out.push_back({{"k", e.k}, {"hits", e.hits}, {"fraction", e.fraction}});
    return out;
}

ordered_json stage_json(std::span<const train::StageRow> rows) {
    ordered_json out = ordered_json::array();
    for (const auto& r : rows) {
        out.push_back({{"name", r.name},
                       {"recall_at_1", r.recall_at_1},
                       {"avg_recall", r.avg_recall},
                       {"delta_recall_at_1_pts", r.delta_recall_at_1},
                       {"delta_avg_recall_pts", r.delta_avg_recall}});
    }
    return out;
}

ordered_json train_json(const train::TrainResult& t) {
    const auto it = std::find_if(t.history.begin(), t.history.end(),
                                 [&](const train::EpochRecord& r) { return r.epoch == t.best_epoch; });
    if (it == t.history.end()) throw StateError("best epoch missing from history");
    const auto& best = *it;
    return {{"best_epoch", t.best_epoch}, {"recall_at_1", best.recall_at_1}, {"avg_recall", best.avg_recall}};
}

}  // namespace

std::string recall_table(const metrics::EvalReport& r) {
    std::string out = "k\thits\tpercent\n";
    for (const auto& e : r.recall_at) {
        out += std::to_string(e.k) + "\t" + std::to_string(e.hits) + "\t" + fmt("%.1f%%", 100.0 * e.fraction) + "\n";
    }
    out += "avg\t-\t" + fmt("%.1f%%", 100.0 * r.avg_recall()) + "\n";
    return out;
}

std::string eval_report_json(const metrics::EvalReport& r) {
    ordered_json j;
    j["n_questions"] = r.n_questions;
    j["n_paragraphs"] = r.n_paragraphs;
    j["recall"] = recall_json(r.recall_at);
    j["avg_recall"] = r.avg_recall();
    j["average_precision"] = r.average_precision;
    if (r.auc) j["auc"] = *r.auc;
    return j.dump(2) + "\n";
}

void write_eval_report(const metrics::EvalReport& r, const std::filesystem::path& path) {
    write_text(eval_report_json(r), path);
}

void write_pr_csv(std::span<const metrics::PrPoint> points, const std::filesystem::path& path) {
    std::string out = "recall,precision\n";
    for (const auto& p : points) out += fmt("%.9g", p.recall) + "," + fmt("%.9g", p.precision) + "\n";
    write_text(out, path);
}

std::string history_json(std::span<const train::EpochRecord> history) {
    ordered_json out = ordered_json::array();
    const auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
    for (const auto& rec : history) {
        out.push_back({{"epoch", rec.epoch},
                       {"train_loss", opt(rec.train_loss)},
                       {"val_loss", opt(rec.val_loss)},
                       {"best_val_loss", opt(rec.best_val_loss)},
                       {"recall", recall_json(rec.recall)},
                       {"recall_at_1", rec.recall_at_1},
                       {"avg_recall", rec.avg_recall}});
    }
    return out.dump(2) + "\n";
}

void write_history(std::span<const train::EpochRecord> history, const std::filesystem::path& path) {
    write_text(history_json(history), path);
}

Spread spread(std::span<const double> values) {
    if (values.empty()) return {};
    double sum = 0.0;
    for (const double v : values) sum += v;
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    return {sum / static_cast<double>(values.size()), (*hi - *lo) / 2.0};
}

std::string seeds_report_json(std::span<const SeedOutcome> runs) {
    ordered_json j;
    ordered_json per_seed = ordered_json::array();
    std::vector<double> r1;
    std::vector<double> avg;
    for (const auto& run : runs) {
        per_seed.push_back({{"seed", run.seed},
                            {"best_epoch", run.best_epoch},
                            {"recall_at_1", run.recall_at_1},
                            {"avg_recall", run.avg_recall},
                            {"recall", recall_json(run.recall)}});
        r1.push_back(run.recall_at_1);
        avg.push_back(run.avg_recall);
    }
    const Spread s1 = spread(r1);
    const Spread sa = spread(avg);
    j["runs"] = per_seed;
    j["recall_at_1"] = {{"mean", s1.mean}, {"half_range", s1.half_range}};
    j["avg_recall"] = {{"mean", sa.mean}, {"half_range", sa.half_range}};
    return j.dump(2) + "\n";
}

std::string stage_table(std::span<const train::StageRow> rows) {
    std::string out = "model\trecall@1\tavg recall\tdelta r@1 (pts)\tdelta avg (pts)\n";
    for (const auto& r : rows) {
        out += r.name + "\t" + fmt("%.2f%%", 100.0 * r.recall_at_1) + "\t" + fmt("%.2f%%", 100.0 * r.avg_recall) +
               "\t" + fmt("%+.2f", r.delta_recall_at_1) + "\t" + fmt("%+.2f", r.delta_avg_recall) + "\n";
    }
    return out;
}

std::string pipeline_report_json(const train::PipelineResult& r) {
    ordered_json j;
    j["stage1"] = train_json(r.stage1);
    j["stage2"] = train_json(r.stage2);
    j["stage3"] = train_json(r.stage3);
    j["question_table"] = stage_json(r.question_table);
    j["paragraph_table"] = stage_json(r.paragraph_table);
    return j.dump(2) + "\n";
}

void write_text(const std::string& text, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataIntegrityError("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw DataIntegrityError("write failed: " + path.string());
}

}  // namespace retforge::report
