#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundcount/grounding.hpp"
#include "groundcount/lexicon.hpp"
#include "groundcount/odm_backend.hpp"
#include "groundcount/types.hpp"
#include "groundcount/vlm_client.hpp"

namespace groundcount::eval {

enum class Ablation { none, full_odm, no_confidence, no_position, low_threshold, pointing };

inline constexpr double kLowThreshold = 0.3;

/// CLI token: none, full, noconf, nopos, lowthr, pointing.
std::string_view to_token(Ablation a);
std::optional<Ablation> parse_ablation(std::string_view token);

struct RunSpec {
    Ablation ablation = Ablation::none;
    grounding::GroundingConfig grounding;
    std::vector<Task> tasks;        // empty = all
    std::vector<Variant> variants;  // empty = all
    int parallelism = 1;
    nlohmann::json backend_snapshot = nlohmann::json::object();
};

/// Grounding settings the ablation actually uses.
grounding::GroundingConfig effective_grounding(const RunSpec& spec);

/// Resolves an image_ref to the bytes sent to the VLM (nullopt = text only).
using ImageResolver = std::function<std::optional<vlm::ImagePayload>(const std::string& image_ref)>;

/// Monotonic seconds; injectable so tests can freeze time.
using Stopwatch = std::function<double()>;
double steady_seconds();

struct EvalResources {
    vlm::VlmBackend& backend;
    odm::DetectorProvider* provider = nullptr;
    odm::DetectionCache* cache = nullptr;  // a private cache is used when null
    ImageResolver images;
    Stopwatch clock = steady_seconds;
};

struct LogEntry {
    std::string record_id;
    Task task = Task::object;
    Variant variant = Variant::base;
    std::string prompt_hash;
    Verdict verdict = Verdict::indeterminate;
    Answer gold = Answer::no;
    bool correct = false;
    double latency_seconds = 0.0;   // VLM exchange plus grounding time
    double provider_seconds = 0.0;  // detector time; 0 for file-backed providers
    std::size_t grounding_lines = 0;
    int retries = 0;
    bool failed = false;
    std::string error;
};

struct ResultRow {
    Task task = Task::object;
    Variant variant = Variant::base;
    std::string ablation;
    std::size_t n = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;
    double mean_latency = 0.0;  // over non-failed records
    double mean_provider_latency = 0.0;
    std::size_t indeterminate = 0;
    std::size_t failed = 0;
};

struct Report {
    std::string model;
    std::string ablation;
    std::vector<ResultRow> rows;
    std::vector<LogEntry> log;
    nlohmann::json config = nlohmann::json::object();
};

struct Totals {
    std::size_t n = 0, correct = 0, failed = 0, indeterminate = 0;
    double accuracy = 0.0;
    double mean_latency = 0.0;
    double mean_provider_latency = 0.0;
};

bool score(Verdict verdict, Answer gold);

/// Pure fold of a per-record log into (task, variant) rows, enum order.
std::vector<ResultRow> aggregate(const std::vector<LogEntry>& log, std::string_view ablation);
Totals totals(const std::vector<LogEntry>& log);

/// First 16 hex digits of SHA-256.
std::string prompt_hash(std::string_view prompt);

/// Runs every record passing the run's task/variant filter through the
/// backend. Backend failures become flagged, incorrect log entries. Throws
/// ConfigError for unsatisfiable specs (missing provider/images, prefiltered
/// provider for low_threshold).
Report run_eval(const RunSpec& spec, const std::vector<VqaRecord>& records, EvalResources res);

struct CountAssertion {
    std::string category;
    int count = 0;
    bool operator==(const CountAssertion&) const = default;
};

/// Extracts "(category, k)" from questions such as "Is the number of bowls in
/// the image 2?" or "Are there 3 dogs?". Unmapped nouns give nullopt.
std::optional<CountAssertion> parse_count_assertion(std::string_view question, const Lexicon& lexicon);

enum class Fallback { answer_no, abstain };

/// Answers a count assertion from detector output alone. Unparsable questions
/// answer "no" (or indeterminate under Fallback::abstain).
Verdict odm_only_answer(std::string_view question, const DetectionSet& set, double threshold,
                        const Lexicon& lexicon, Fallback fallback = Fallback::answer_no);

struct OdmOnlySpec {
    double threshold = 0.5;
    std::vector<Task> tasks;
    std::vector<Variant> variants;
    Fallback fallback = Fallback::answer_no;
};

Report run_odm_only(const OdmOnlySpec& spec, const std::vector<VqaRecord>& records,
                    odm::DetectorProvider& provider, const Lexicon& lexicon,
                    odm::DetectionCache* cache = nullptr, const Stopwatch& clock = steady_seconds);

}  // namespace groundcount::eval
