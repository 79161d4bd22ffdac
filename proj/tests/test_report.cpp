#include <doctest.h>

#include "groundcount/report.hpp"
#include "support.hpp"

using namespace groundcount;
using namespace groundcount::eval;

namespace {

LogEntry entry(std::string id, Task t, Variant v, Verdict verdict, Answer gold, double latency,
               bool failed = false) {
    LogEntry e;
    e.record_id = std::move(id);
    e.task = t;
    e.variant = v;
    e.prompt_hash = "0123456789abcdef";
    e.verdict = verdict;
    e.gold = gold;
    e.correct = score(verdict, gold);
    e.latency_seconds = latency;
    e.failed = failed;
    return e;
}

Report small_report() {
    Report r;
    r.model = "toy-vlm";
    r.ablation = "full";
    r.log = {entry("a", Task::counting, Variant::base, Verdict::yes, Answer::yes, 1.0),
             entry("b", Task::counting, Variant::base, Verdict::no, Answer::yes, 3.0),
             entry("c", Task::counting, Variant::sec, Verdict::indeterminate, Answer::no, 2.0),
             entry("d", Task::object, Variant::ccs, Verdict::indeterminate, Answer::yes, 9.0, true)};
    r.rows = aggregate(r.log, r.ablation);
    r.config = {{"ablation", "full"}};
    return r;
}

}  // namespace

TEST_CASE("markdown golden") {
    const std::string golden =
        "# Evaluation report\n"
        "\n"
        "- model: toy-vlm\n"
        "- ablation: full\n"
        "\n"
        "## Accuracy (%)\n"
        "\n"
        "| task | base | sec | icc | ccs |\n"
        "|---|---:|---:|---:|---:|\n"
        "| object | - | - | - | 0.0 |\n"
        "| counting | 50.0 | 0.0 | - | - |\n"
        "\n"
        "## Mean latency (s)\n"
        "\n"
        "| task | base | sec | icc | ccs |\n"
        "|---|---:|---:|---:|---:|\n"
        "| object | - | - | - | 0.000 |\n"
        "| counting | 2.000 | 2.000 | - | - |\n"
        "\n"
        "## Totals\n"
        "\n"
        "- records: 4\n"
        "- correct: 1\n"
        "- accuracy: 25.0%\n"
        "- indeterminate: 1\n"
        "- failed: 1\n"
        "- mean latency: 2.000 s\n";
    CHECK(render(small_report(), ReportFormat::markdown) == golden);
}

TEST_CASE("heatmap CSV: one line per non-empty report, header only when empty") {
    const auto csv = render(small_report(), ReportFormat::heatmap_csv);
    CHECK(csv ==
          "model,ablation,n,correct,accuracy_pct,mean_latency_s,mean_provider_latency_s\n"
          "toy-vlm,full,4,1,25.0,2.000,0.000\n");

    Report empty;
    empty.model = "m";
    CHECK(render(empty, ReportFormat::heatmap_csv) ==
          "model,ablation,n,correct,accuracy_pct,mean_latency_s,mean_provider_latency_s\n");

    auto other = small_report();
    other.model = "a,b";
    const auto two = render_heatmap({small_report(), other, empty});
    CHECK(std::count(two.begin(), two.end(), '\n') == 3);
    CHECK(two.find("\"a,b\",full") != std::string::npos);
}

TEST_CASE("per-record log is one JSON object per record") {
    const auto log = render(small_report(), ReportFormat::log_jsonl);
    std::istringstream in(log);
    std::string line;
    std::vector<nlohmann::json> rows;
    while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
    REQUIRE(rows.size() == 4);
    CHECK(rows[0]["record_id"] == "a");
    CHECK(rows[2]["verdict"] == "indeterminate");
    CHECK(rows[3]["failed"] == true);
}

TEST_CASE("rows aggregate exactly the log") {
    const auto r = small_report();
    std::size_t n = 0, correct = 0, failed = 0;
    for (const auto& row : r.rows) {
        n += row.n;
        correct += row.correct;
        failed += row.failed;
        CHECK(row.correct <= row.n);
    }
    CHECK(n == r.log.size());
    CHECK(correct == 1);
    CHECK(failed == 1);
}

TEST_CASE("emit_report writes four byte-deterministic files") {
    gc_test::TempDir a, b;
    emit_report(small_report(), a.path());
    emit_report(small_report(), b.path() / "nested");
    for (const char* name : {"accuracy.md", "heatmap.csv", "records.jsonl", "config.json"}) {
        CHECK(std::filesystem::exists(a / name));
        CHECK(gc_test::read_text(a / name) == gc_test::read_text(b.path() / "nested" / name));
    }
}
