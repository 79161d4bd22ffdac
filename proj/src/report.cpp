#include "groundcount/report.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace groundcount::eval {

namespace {

std::string fixed(double v, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    return buf;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

template <typename Cell>
std::string task_variant_table(const Report& report, Cell cell) {
    std::map<std::pair<Task, Variant>, const ResultRow*> rows;
    for (const auto& r : report.rows) rows[{r.task, r.variant}] = &r;

    std::string out = "| task |";
    for (Variant v : kAllVariants) out += " " + std::string(to_string(v)) + " |";
    out += "\n|---|";
    for (std::size_t i = 0; i < std::size(kAllVariants); ++i) out += "---:|";
    out += "\n";
    for (Task t : kAllTasks) {
        bool any = false;
        for (Variant v : kAllVariants) any |= rows.count({t, v}) > 0;
        if (!any) continue;
        out += "| " + std::string(to_string(t)) + " |";
        for (Variant v : kAllVariants) {
            auto it = rows.find({t, v});
            out += " " + (it == rows.end() ? std::string("-") : cell(*it->second)) + " |";
        }
        out += "\n";
    }
    return out;
}

std::string render_markdown(const Report& report) {
    std::string out = "# Evaluation report\n\n";
    out += "- model: " + report.model + "\n";
    out += "- ablation: " + report.ablation + "\n\n";
    out += "## Accuracy (%)\n\n";
    out += task_variant_table(report, [](const ResultRow& r) { return fixed(100.0 * r.accuracy, 1); });
    out += "\n## Mean latency (s)\n\n";
    out += task_variant_table(report, [](const ResultRow& r) { return fixed(r.mean_latency, 3); });

    const Totals t = totals(report.log);
    out += "\n## Totals\n\n";
    out += "- records: " + std::to_string(t.n) + "\n";
    out += "- correct: " + std::to_string(t.correct) + "\n";
    out += "- accuracy: " + fixed(100.0 * t.accuracy, 1) + "%\n";
    out += "- indeterminate: " + std::to_string(t.indeterminate) + "\n";
    out += "- failed: " + std::to_string(t.failed) + "\n";
    out += "- mean latency: " + fixed(t.mean_latency, 3) + " s\n";
    return out;
}

std::string heatmap_line(const Report& report) {
    const Totals t = totals(report.log);
    return csv_field(report.model) + "," + csv_field(report.ablation) + "," + std::to_string(t.n) +
           "," + std::to_string(t.correct) + "," + fixed(100.0 * t.accuracy, 1) + "," +
           fixed(t.mean_latency, 3) + "," + fixed(t.mean_provider_latency, 3) + "\n";
}

constexpr const char* kHeatmapHeader =
    "model,ablation,n,correct,accuracy_pct,mean_latency_s,mean_provider_latency_s\n";

std::string render_log(const Report& report) {
    std::string out;
    for (const auto& e : report.log) {
        nlohmann::json j = {{"record_id", e.record_id},
                            {"task", to_string(e.task)},
                            {"variant", to_string(e.variant)},
                            {"prompt_hash", e.prompt_hash},
                            {"verdict", to_string(e.verdict)},
                            {"gold", to_string(e.gold)},
                            {"correct", e.correct},
                            {"latency_s", e.latency_seconds},
                            {"provider_latency_s", e.provider_seconds},
                            {"grounding_lines", e.grounding_lines},
                            {"retries", e.retries},
                            {"failed", e.failed}};
        if (!e.error.empty()) j["error"] = e.error;
        out += j.dump() + "\n";
    }
    return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

}  // namespace

std::string render(const Report& report, ReportFormat format) {
    switch (format) {
        case ReportFormat::markdown: return render_markdown(report);
        case ReportFormat::heatmap_csv: return render_heatmap({report});
        case ReportFormat::log_jsonl: return render_log(report);
    }
    return {};
}

std::string render_heatmap(const std::vector<Report>& reports) {
    std::string out = kHeatmapHeader;
    for (const auto& r : reports)
        if (!r.log.empty()) out += heatmap_line(r);
    return out;
}

void emit_report(const Report& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    write_text(dir / "accuracy.md", render(report, ReportFormat::markdown));
    write_text(dir / "heatmap.csv", render(report, ReportFormat::heatmap_csv));
    write_text(dir / "records.jsonl", render(report, ReportFormat::log_jsonl));
    write_text(dir / "config.json", report.config.dump(2) + "\n");
}

}  // namespace groundcount::eval
