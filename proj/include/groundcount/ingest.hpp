#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "groundcount/types.hpp"

namespace groundcount::ingest {

/// One validation failure. `line` is 1-based for line-delimited inputs and 0
/// for whole-document inputs, where `field` carries a JSON path instead.
struct Issue {
    std::size_t line = 0;
    std::string field;
    std::string message;

    std::string describe() const;
};

class IngestError : public std::runtime_error {
public:
    IngestError(std::string source, std::vector<Issue> issues);

    const std::string& source() const { return source_; }
    const std::vector<Issue>& issues() const { return issues_; }

private:
    std::string source_;
    std::vector<Issue> issues_;
};

enum class Strictness { strict, lenient };

using RecordFilter = std::function<bool(const VqaRecord&)>;

/// Predicate accepting records whose task/variant appear in the given lists.
/// An empty list accepts everything on that axis.
RecordFilter make_filter(std::vector<Task> tasks, std::vector<Variant> variants);

struct BenchmarkLoad {
    std::vector<VqaRecord> records;
    std::vector<Issue> skipped;  // only populated in lenient mode
};

/// Reads a JSON Lines benchmark file. Strict mode throws one IngestError that
/// lists every bad line; lenient mode drops bad lines and reports them in
/// `skipped`. Blank lines are ignored.
BenchmarkLoad load_benchmark(const std::filesystem::path& path, const RecordFilter& filter = {},
                             Strictness strictness = Strictness::strict);

/// Parses one benchmark line. Issues are appended to `issues`; the returned
/// record is meaningful only when no issue was added.
VqaRecord parse_record(const nlohmann::json& j, std::size_t line, std::vector<Issue>& issues);

nlohmann::json to_json(const VqaRecord& r);
std::string to_jsonl(const std::vector<VqaRecord>& records);

using AnnotationMap = std::map<std::string, AnnotationSet>;

/// COCO instances document -> per-image ground truth in corner form.
AnnotationMap load_annotations(const std::filesystem::path& path);
AnnotationMap parse_annotations(const nlohmann::json& doc, const std::string& source = "<memory>");

using DetectionMap = std::map<std::string, DetectionSet>;

DetectionMap load_detections(const std::filesystem::path& path);
DetectionMap parse_detections(const nlohmann::json& doc, const std::string& source = "<memory>");
nlohmann::json to_json(const DetectionMap& detections);
void save_detections(const std::filesystem::path& path, const DetectionMap& detections);

/// Checks the DetectionSet invariants; returns the violations found.
std::vector<Issue> validate(const DetectionSet& set, const std::string& field_prefix = "");

}  // namespace groundcount::ingest
