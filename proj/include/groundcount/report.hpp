#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "groundcount/evaluator.hpp"

namespace groundcount::eval {

enum class ReportFormat { markdown, heatmap_csv, log_jsonl };

/// Byte-deterministic renderings of a report.
///  markdown:    task x variant accuracy (%) and mean latency tables, plus totals
///  heatmap_csv: one line per (model, ablation)
///  log_jsonl:   one JSON object per evaluated record
std::string render(const Report& report, ReportFormat format);
std::string render_heatmap(const std::vector<Report>& reports);

/// Writes accuracy.md, heatmap.csv, records.jsonl and config.json into `dir`.
void emit_report(const Report& report, const std::filesystem::path& dir);

}  // namespace groundcount::eval
