#include "groundcount/ingest.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace groundcount::ingest {

using nlohmann::json;

namespace {

// COCO boxes are stored as floats and occasionally overshoot the image edge
// by a rounding step. Anything within this slack is clamped; beyond it is an error.
constexpr double kBoundsSlack = 1.0;

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IngestError(path.string(), {{0, "", "cannot open file"}});
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_document(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw IngestError(path.string(), {{0, "", std::string("malformed JSON: ") + e.what()}});
    }
}

std::string id_string(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_number_integer()) return std::to_string(v.get<long long>());
    if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
    return {};
}

bool read_string(const json& obj, const char* key, std::string& out, std::size_t line,
                 const std::string& prefix, std::vector<Issue>& issues, bool required = true) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        if (required) issues.push_back({line, prefix + key, "missing field"});
        return false;
    }
    if (!it->is_string()) {
        issues.push_back({line, prefix + key, "expected a string"});
        return false;
    }
    out = it->get<std::string>();
    return true;
}

std::optional<int> read_dimension(const json& obj, const char* key, std::size_t line,
                                  const std::string& prefix, std::vector<Issue>& issues) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        issues.push_back({line, prefix + key, "missing image dimension"});
        return std::nullopt;
    }
    if (!it->is_number_integer() && !it->is_number_unsigned()) {
        issues.push_back({line, prefix + key, "image dimension must be an integer"});
        return std::nullopt;
    }
    const auto v = it->get<long long>();
    if (v <= 0) {
        issues.push_back({line, prefix + key, "image dimension must be positive"});
        return std::nullopt;
    }
    return static_cast<int>(v);
}

std::optional<std::array<double, 4>> read_quad(const json& obj, const char* key,
                                               const std::string& prefix,
                                               std::vector<Issue>& issues) {
    auto it = obj.find(key);
    if (it == obj.end()) {
        issues.push_back({0, prefix + key, "missing field"});
        return std::nullopt;
    }
    if (!it->is_array() || it->size() != 4 ||
        !std::all_of(it->begin(), it->end(), [](const json& x) { return x.is_number(); })) {
        issues.push_back({0, prefix + key, "expected an array of 4 numbers"});
        return std::nullopt;
    }
    return std::array<double, 4>{(*it)[0].get<double>(), (*it)[1].get<double>(),
                                 (*it)[2].get<double>(), (*it)[3].get<double>()};
}

}  // namespace

std::string Issue::describe() const {
    std::string out;
    if (line > 0) out += "line " + std::to_string(line) + ": ";
    if (!field.empty()) out += field + ": ";
    out += message;
    return out;
}

IngestError::IngestError(std::string source, std::vector<Issue> issues)
    : std::runtime_error([&] {
          std::string msg = source + ": " + std::to_string(issues.size()) + " problem(s)";
          for (std::size_t i = 0; i < issues.size() && i < 20; ++i)
              msg += "\n  " + issues[i].describe();
          if (issues.size() > 20) msg += "\n  ...";
          return msg;
      }()),
      source_(std::move(source)),
      issues_(std::move(issues)) {}

RecordFilter make_filter(std::vector<Task> tasks, std::vector<Variant> variants) {
    return [tasks = std::move(tasks), variants = std::move(variants)](const VqaRecord& r) {
        const bool task_ok =
            tasks.empty() || std::find(tasks.begin(), tasks.end(), r.task) != tasks.end();
        const bool variant_ok = variants.empty() ||
                                std::find(variants.begin(), variants.end(), r.variant) !=
                                    variants.end();
        return task_ok && variant_ok;
    };
}

VqaRecord parse_record(const json& j, std::size_t line, std::vector<Issue>& issues) {
    VqaRecord r;
    if (!j.is_object()) {
        issues.push_back({line, "", "expected a JSON object"});
        return r;
    }
    const auto before = issues.size();
    read_string(j, "id", r.record_id, line, "", issues);
    read_string(j, "image", r.image_ref, line, "", issues);

    std::string token;
    if (read_string(j, "task", token, line, "", issues)) {
        if (auto t = parse_task(token))
            r.task = *t;
        else
            issues.push_back({line, "task", "unknown task '" + token + "'"});
    }
    if (read_string(j, "variant", token, line, "", issues)) {
        if (auto v = parse_variant(token))
            r.variant = *v;
        else
            issues.push_back({line, "variant", "unknown variant '" + token + "'"});
    }
    if (read_string(j, "question", r.question, line, "", issues) && r.question.empty())
        issues.push_back({line, "question", "question is empty"});
    if (read_string(j, "gold", token, line, "", issues)) {
        if (auto a = parse_answer(token))
            r.gold = *a;
        else
            issues.push_back({line, "gold", "gold must be \"yes\" or \"no\", got '" + token + "'"});
    }
    if (auto it = j.find("context"); it != j.end() && !it->is_null()) {
        if (!it->is_string())
            issues.push_back({line, "context", "expected a string"});
        else
            r.context = it->get<std::string>();
    }
    if (r.context && issues.size() == before && r.variant != Variant::sec &&
        r.variant != Variant::icc)
        issues.push_back({line, "context",
                          "context is only allowed for variants sec and icc, not '" +
                              std::string(to_string(r.variant)) + "'"});
    if (r.record_id.empty() && issues.size() == before)
        issues.push_back({line, "id", "id is empty"});
    return r;
}

BenchmarkLoad load_benchmark(const std::filesystem::path& path, const RecordFilter& filter,
                             Strictness strictness) {
    std::ifstream in(path);
    if (!in) throw IngestError(path.string(), {{0, "", "cannot open file"}});

    BenchmarkLoad out;
    std::vector<Issue> issues;
    std::string text;
    std::size_t line_no = 0;
    while (std::getline(in, text)) {
        ++line_no;
        if (!text.empty() && text.back() == '\r') text.pop_back();
        if (text.find_first_not_of(" \t") == std::string::npos) continue;

        std::vector<Issue> line_issues;
        VqaRecord rec;
        try {
            rec = parse_record(json::parse(text), line_no, line_issues);
        } catch (const json::parse_error& e) {
            line_issues.push_back({line_no, "", std::string("malformed JSON: ") + e.what()});
        }
        if (!line_issues.empty()) {
            issues.insert(issues.end(), line_issues.begin(), line_issues.end());
            continue;
        }
        if (!filter || filter(rec)) out.records.push_back(std::move(rec));
    }

    if (!issues.empty()) {
        if (strictness == Strictness::strict) throw IngestError(path.string(), std::move(issues));
        out.skipped = std::move(issues);
    }
    return out;
}

json to_json(const VqaRecord& r) {
    json j = {{"id", r.record_id},
              {"image", r.image_ref},
              {"task", to_string(r.task)},
              {"variant", to_string(r.variant)},
              {"question", r.question},
              {"gold", to_string(r.gold)}};
    if (r.context) j["context"] = *r.context;
    return j;
}

std::string to_jsonl(const std::vector<VqaRecord>& records) {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    return out;
}

AnnotationMap load_annotations(const std::filesystem::path& path) {
    return parse_annotations(parse_document(path), path.string());
}

AnnotationMap parse_annotations(const json& doc, const std::string& source) {
    std::vector<Issue> issues;
    AnnotationMap out;
    if (!doc.is_object()) throw IngestError(source, {{0, "", "expected a JSON object"}});

    auto array_at = [&](const char* key) -> const json* {
        auto it = doc.find(key);
        if (it == doc.end()) return nullptr;
        if (!it->is_array()) {
            issues.push_back({0, key, "expected an array"});
            return nullptr;
        }
        return &*it;
    };

    std::unordered_map<std::string, std::string> categories;
    if (const json* cats = array_at("categories")) {
        for (std::size_t i = 0; i < cats->size(); ++i) {
            const json& c = (*cats)[i];
            const std::string prefix = "categories[" + std::to_string(i) + "].";
            const std::string id = c.contains("id") ? id_string(c["id"]) : "";
            std::string name;
            if (id.empty()) issues.push_back({0, prefix + "id", "missing or invalid id"});
            if (read_string(c, "name", name, 0, prefix, issues) && name.empty())
                issues.push_back({0, prefix + "name", "category name is empty"});
            if (!id.empty() && !name.empty()) categories[id] = name;
        }
    } else if (!doc.contains("categories")) {
        issues.push_back({0, "categories", "missing field"});
    }

    if (const json* images = array_at("images")) {
        for (std::size_t i = 0; i < images->size(); ++i) {
            const json& im = (*images)[i];
            const std::string prefix = "images[" + std::to_string(i) + "].";
            AnnotationSet set;
            set.image_id = im.contains("id") ? id_string(im["id"]) : "";
            if (set.image_id.empty()) {
                issues.push_back({0, prefix + "id", "missing or invalid id"});
                continue;
            }
            read_string(im, "file_name", set.file_name, 0, prefix, issues, false);
            auto w = read_dimension(im, "width", 0, prefix, issues);
            auto h = read_dimension(im, "height", 0, prefix, issues);
            if (!w || !h) continue;
            set.width = *w;
            set.height = *h;
            if (!out.emplace(set.image_id, set).second)
                issues.push_back({0, prefix + "id", "duplicate image id " + set.image_id});
        }
    } else if (!doc.contains("images")) {
        issues.push_back({0, "images", "missing field"});
    }

    if (const json* anns = array_at("annotations")) {
        for (std::size_t i = 0; i < anns->size(); ++i) {
            const json& a = (*anns)[i];
            const std::string prefix = "annotations[" + std::to_string(i) + "].";
            const std::string image_id = a.contains("image_id") ? id_string(a["image_id"]) : "";
            const std::string category_id =
                a.contains("category_id") ? id_string(a["category_id"]) : "";
            auto image = out.find(image_id);
            if (image == out.end()) {
                issues.push_back({0, prefix + "image_id", "unknown image id '" + image_id + "'"});
                continue;
            }
            auto cat = categories.find(category_id);
            if (cat == categories.end()) {
                issues.push_back(
                    {0, prefix + "category_id", "unknown category id '" + category_id + "'"});
                continue;
            }
            auto quad = read_quad(a, "bbox", prefix, issues);
            if (!quad) continue;
            const auto [x, y, w, h] = *quad;
            if (w <= 0 || h <= 0) {
                issues.push_back({0, prefix + "bbox", "non-positive width or height"});
                continue;
            }
            const double W = image->second.width, H = image->second.height;
            if (x < -kBoundsSlack || y < -kBoundsSlack || x + w > W + kBoundsSlack ||
                y + h > H + kBoundsSlack) {
                issues.push_back({0, prefix + "bbox", "box lies outside the image"});
                continue;
            }
            Box box{std::max(0.0, x), std::max(0.0, y), std::min(W, x + w), std::min(H, y + h)};
            if (box.x1 >= box.x2 || box.y1 >= box.y2) {
                issues.push_back({0, prefix + "bbox", "box has no area inside the image"});
                continue;
            }
            image->second.objects.push_back({cat->second, box});
        }
    } else if (!doc.contains("annotations")) {
        issues.push_back({0, "annotations", "missing field"});
    }

    if (!issues.empty()) throw IngestError(source, std::move(issues));
    return out;
}

std::vector<Issue> validate(const DetectionSet& set, const std::string& field_prefix) {
    std::vector<Issue> issues;
    if (set.width <= 0 || set.height <= 0)
        issues.push_back({0, field_prefix + "width", "image dimensions must be positive"});
    for (std::size_t i = 0; i < set.detections.size(); ++i) {
        const Detection& d = set.detections[i];
        const std::string prefix = field_prefix + "detections[" + std::to_string(i) + "].";
        if (d.category.empty()) issues.push_back({0, prefix + "category", "category is empty"});
        if (!(d.confidence >= 0.0 && d.confidence <= 1.0))
            issues.push_back({0, prefix + "confidence", "confidence out of range [0,1]"});
        if (!(d.box.x1 < d.box.x2) || !(d.box.y1 < d.box.y2))
            issues.push_back({0, prefix + "bbox", "inverted box"});
        else if (d.box.x1 < 0 || d.box.y1 < 0 || d.box.x2 > set.width || d.box.y2 > set.height)
            issues.push_back({0, prefix + "bbox", "box lies outside the image"});
    }
    return issues;
}

DetectionMap load_detections(const std::filesystem::path& path) {
    return parse_detections(parse_document(path), path.string());
}

DetectionMap parse_detections(const json& doc, const std::string& source) {
    std::vector<Issue> issues;
    DetectionMap out;
    auto images = doc.is_object() ? doc.find("images") : doc.end();
    if (!doc.is_object() || images == doc.end() || !images->is_array())
        throw IngestError(source, {{0, "images", "expected an \"images\" array"}});

    for (std::size_t i = 0; i < images->size(); ++i) {
        const json& im = (*images)[i];
        const std::string prefix = "images[" + std::to_string(i) + "].";
        if (!im.is_object()) {
            issues.push_back({0, prefix, "expected an object"});
            continue;
        }
        DetectionSet set;
        set.image_id = im.contains("image_id") ? id_string(im["image_id"]) : "";
        if (set.image_id.empty()) {
            issues.push_back({0, prefix + "image_id", "missing or invalid image_id"});
            continue;
        }
        auto w = read_dimension(im, "width", 0, prefix, issues);
        auto h = read_dimension(im, "height", 0, prefix, issues);
        if (!w || !h) continue;
        set.width = *w;
        set.height = *h;

        auto dets = im.find("detections");
        if (dets == im.end() || !dets->is_array()) {
            issues.push_back({0, prefix + "detections", "expected an array"});
            continue;
        }
        bool ok = true;
        for (std::size_t k = 0; k < dets->size(); ++k) {
            const json& d = (*dets)[k];
            const std::string dprefix = prefix + "detections[" + std::to_string(k) + "].";
            Detection det;
            if (!d.is_object()) {
                issues.push_back({0, dprefix, "expected an object"});
                ok = false;
                continue;
            }
            ok &= read_string(d, "category", det.category, 0, dprefix, issues);
            auto conf = d.find("confidence");
            if (conf == d.end() || !conf->is_number()) {
                issues.push_back({0, dprefix + "confidence", "missing or non-numeric confidence"});
                ok = false;
            } else {
                det.confidence = conf->get<double>();
            }
            auto quad = read_quad(d, "bbox", dprefix, issues);
            if (!quad) {
                ok = false;
                continue;
            }
            det.box = {(*quad)[0], (*quad)[1], (*quad)[2], (*quad)[3]};
            set.detections.push_back(std::move(det));
        }
        if (!ok) continue;
        auto problems = validate(set, prefix);
        if (!problems.empty()) {
            issues.insert(issues.end(), problems.begin(), problems.end());
            continue;
        }
        const std::string id = set.image_id;
        if (!out.emplace(id, std::move(set)).second)
            issues.push_back({0, prefix + "image_id", "duplicate image id " + id});
    }
    if (!issues.empty()) throw IngestError(source, std::move(issues));
    return out;
}

json to_json(const DetectionMap& detections) {
    json images = json::array();
    for (const auto& [id, set] : detections) {
        json dets = json::array();
        for (const auto& d : set.detections)
            dets.push_back({{"category", d.category},
                            {"confidence", d.confidence},
                            {"bbox", {d.box.x1, d.box.y1, d.box.x2, d.box.y2}}});
        images.push_back({{"image_id", set.image_id},
                          {"width", set.width},
                          {"height", set.height},
                          {"detections", std::move(dets)}});
    }
    return {{"images", std::move(images)}};
}

void save_detections(const std::filesystem::path& path, const DetectionMap& detections) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << to_json(detections).dump(2) << "\n";
}

}  // namespace groundcount::ingest
