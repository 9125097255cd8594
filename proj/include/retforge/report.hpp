#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "retforge/metrics.hpp"
#include "retforge/train.hpp"

namespace retforge::report {

// Recall table in the "k  hits  percent" shape, one row per k.
std::string recall_table(const metrics::EvalReport& r);

std::string eval_report_json(const metrics::EvalReport& r);
void write_eval_report(const metrics::EvalReport& r, const std::filesystem::path& path);

// "recall,precision" with a header row, %.9g values.
void write_pr_csv(std::span<const metrics::PrPoint> points, const std::filesystem::path& path);

// One object per evaluated epoch, recall entries shaped like the eval report.
// Wall-clock time is left out so repeated runs produce identical files;
// missing losses are null.
std::string history_json(std::span<const train::EpochRecord> history);
void write_history(std::span<const train::EpochRecord> history, const std::filesystem::path& path);

struct Spread {
    double mean = 0.0;
    double half_range = 0.0;  // (max - min) / 2
};

Spread spread(std::span<const double> values);

struct SeedOutcome {
    std::uint64_t seed = 0;
    std::size_t best_epoch = 0;
    double recall_at_1 = 0.0;
    double avg_recall = 0.0;
    std::vector<metrics::RecallEntry> recall;
};

std::string seeds_report_json(std::span<const SeedOutcome> runs);

std::string stage_table(std::span<const train::StageRow> rows);
std::string pipeline_report_json(const train::PipelineResult& r);

void write_text(const std::string& text, const std::filesystem::path& path);

}  // namespace retforge::report
