#include "groundcount/evaluator.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <map>
#include <thread>

#include <openssl/evp.h>

namespace groundcount::eval {

using nlohmann::json;

namespace {

constexpr std::array<std::pair<Ablation, std::string_view>, 6> kAblationTokens{{
    {Ablation::none, "none"},
    {Ablation::full_odm, "full"},
    {Ablation::no_confidence, "noconf"},
    {Ablation::no_position, "nopos"},
    {Ablation::low_threshold, "lowthr"},
    {Ablation::pointing, "pointing"},
}};

constexpr std::array<std::string_view, 21> kNumberWords{
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
    "nineteen", "twenty"};

std::optional<int> as_number(const std::string& word) {
    if (!word.empty() && word.size() <= 6 &&
        std::all_of(word.begin(), word.end(), [](unsigned char c) { return std::isdigit(c); }))
        return std::stoi(word);
    for (std::size_t i = 0; i < kNumberWords.size(); ++i)
        if (word == kNumberWords[i]) return static_cast<int>(i);
    return std::nullopt;
}

std::vector<std::string> words_of(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur += static_cast<char>(std::tolower(c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

bool selected(const VqaRecord& r, const std::vector<Task>& tasks, const std::vector<Variant>& variants) {
    return (tasks.empty() || std::find(tasks.begin(), tasks.end(), r.task) != tasks.end()) &&
           (variants.empty() ||
            std::find(variants.begin(), variants.end(), r.variant) != variants.end());
}

json to_json(const grounding::GroundingConfig& g) {
    return {{"confidence_threshold", g.confidence_threshold},
            {"include_position", g.include_position},
            {"include_confidence", g.include_confidence},
            {"confidence_decimals", g.confidence_decimals},
            {"empty_sentinel", g.empty_sentinel}};
}

template <typename T>
json token_list(const std::vector<T>& items) {
    json out = json::array();
    for (const auto& i : items) out.push_back(to_string(i));
    return out;
}

// Runs fn(i) for i in [0, n) on `workers` threads. Each index is visited once.
template <typename Fn>
void parallel_for(std::size_t n, int workers, Fn fn) {
    const std::size_t count = std::min<std::size_t>(std::max(workers, 1), std::max<std::size_t>(n, 1));
    if (count <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::jthread> pool;
    pool.reserve(count);
    for (std::size_t t = 0; t < count; ++t)
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) fn(i);
        });
}

}  // namespace

std::string_view to_token(Ablation a) {
    for (const auto& [value, token] : kAblationTokens)
        if (value == a) return token;
    return "?";
}

std::optional<Ablation> parse_ablation(std::string_view token) {
    for (const auto& [value, t] : kAblationTokens)
        if (t == token) return value;
    return std::nullopt;
}

grounding::GroundingConfig effective_grounding(const RunSpec& spec) {
    grounding::GroundingConfig g = spec.grounding;
    switch (spec.ablation) {
        case Ablation::no_confidence: g.include_confidence = false; break;
        case Ablation::no_position: g.include_position = false; break;
        case Ablation::low_threshold: g.confidence_threshold = kLowThreshold; break;
        default: break;
    }
    return g;
}

double steady_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

bool score(Verdict verdict, Answer gold) {
    return (verdict == Verdict::yes && gold == Answer::yes) ||
           (verdict == Verdict::no && gold == Answer::no);
}

std::string prompt_hash(std::string_view prompt) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(prompt.data(), prompt.size(), digest, &len, EVP_sha256(), nullptr);
    static constexpr char kHex[] = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < 8 && i < len; ++i) {
        out += kHex[digest[i] >> 4];
        out += kHex[digest[i] & 0xf];
    }
    return out;
}

std::vector<ResultRow> aggregate(const std::vector<LogEntry>& log, std::string_view ablation) {
    struct Acc {
        ResultRow row;
        double latency_sum = 0, provider_sum = 0;
    };
    std::map<std::pair<Task, Variant>, Acc> groups;
    for (const auto& e : log) {
        auto& acc = groups[{e.task, e.variant}];
        acc.row.task = e.task;
        acc.row.variant = e.variant;
        ++acc.row.n;
        acc.row.correct += e.correct ? 1 : 0;
        acc.row.indeterminate += (!e.failed && e.verdict == Verdict::indeterminate) ? 1 : 0;
        if (e.failed) {
            ++acc.row.failed;
        } else {
            acc.latency_sum += e.latency_seconds;
            acc.provider_sum += e.provider_seconds;
        }
    }
    std::vector<ResultRow> rows;
    rows.reserve(groups.size());
    for (auto& [key, acc] : groups) {
        ResultRow row = acc.row;
        row.ablation = std::string(ablation);
        row.accuracy = static_cast<double>(row.correct) / static_cast<double>(row.n);
        const std::size_t ok = row.n - row.failed;
        row.mean_latency = ok ? acc.latency_sum / static_cast<double>(ok) : 0.0;
        row.mean_provider_latency = ok ? acc.provider_sum / static_cast<double>(ok) : 0.0;
        rows.push_back(std::move(row));
    }
    return rows;
}

Totals totals(const std::vector<LogEntry>& log) {
    Totals t;
    double latency = 0, provider = 0;
    for (const auto& e : log) {
        ++t.n;
        t.correct += e.correct ? 1 : 0;
        if (e.failed) {
            ++t.failed;
            continue;
        }
        t.indeterminate += e.verdict == Verdict::indeterminate ? 1 : 0;
        latency += e.latency_seconds;
        provider += e.provider_seconds;
    }
    if (t.n) t.accuracy = static_cast<double>(t.correct) / static_cast<double>(t.n);
    if (const auto ok = t.n - t.failed) {
        t.mean_latency = latency / static_cast<double>(ok);
        t.mean_provider_latency = provider / static_cast<double>(ok);
    }
    return t;
}

Report run_eval(const RunSpec& spec, const std::vector<VqaRecord>& records, EvalResources res) {
    if (spec.parallelism < 1) throw ConfigError("parallelism must be >= 1");
    const auto gcfg = effective_grounding(spec);
    gcfg.validate();
    const bool grounded = spec.ablation != Ablation::none;
    if (grounded && !res.provider)
        throw ConfigError("ablation '" + std::string(to_token(spec.ablation)) +
                          "' needs a detection provider");
    if (spec.ablation == Ablation::pointing && !res.images)
        throw ConfigError("pointing mode needs image assets");
    if (grounded) {
        try {
            odm::check_threshold(*res.provider, gcfg.confidence_threshold);
        } catch (const odm::PrefilterError& e) {
            throw ConfigError(e.what());
        }
    }

    odm::DetectionCache local_cache;
    odm::DetectionCache& cache = res.cache ? *res.cache : local_cache;

    std::vector<const VqaRecord*> work;
    for (const auto& r : records)
        if (selected(r, spec.tasks, spec.variants)) work.push_back(&r);

    Report report;
    report.model = res.backend.label();
    report.ablation = std::string(to_token(spec.ablation));
    report.config = {{"ablation", report.ablation},
                     {"grounding", to_json(gcfg)},
                     {"tasks", token_list(spec.tasks)},
                     {"variants", token_list(spec.variants)},
                     {"parallelism", spec.parallelism},
                     {"backend", spec.backend_snapshot},
                     {"model", report.model}};
    if (res.provider) report.config["provider"] = res.provider->source();
    report.log.resize(work.size());

    parallel_for(work.size(), spec.parallelism, [&](std::size_t i) {
        const VqaRecord& rec = *work[i];
        LogEntry& e = report.log[i];
        e.record_id = rec.record_id;
        e.task = rec.task;
        e.variant = rec.variant;
        e.gold = rec.gold;

        double grounding_seconds = 0.0;
        try {
            std::string prompt = grounding::base_user_prompt(rec.question, rec.context);
            std::optional<vlm::ImagePayload> image;
            if (res.images) image = res.images(rec.image_ref);

            if (grounded) {
                const double t0 = res.clock();
                DetectionSet dets = cache.get(*res.provider, rec.image_ref, gcfg.confidence_threshold);
                const double t1 = res.clock();
                if (res.provider->kind() == odm::ProviderKind::external_service)
                    e.provider_seconds = t1 - t0;

                if (spec.ablation == Ablation::pointing) {
                    if (!image) throw std::runtime_error("no image for '" + rec.image_ref + "'");
                    const auto kept = grounding::filter_detections(dets, gcfg.confidence_threshold);
                    const Raster overlaid =
                        grounding::overlay_boxes(decode_png(image->bytes), kept);
                    image = vlm::ImagePayload{encode_png(overlaid), "image/png"};
                    e.grounding_lines = kept.detections.size();
                } else {
                    const auto gp = grounding::render_prompt(dets, gcfg);
                    prompt = grounding::augment_user_prompt(rec.question, rec.context, gp);
                    e.grounding_lines = gp.source_count;
                }
                grounding_seconds = res.clock() - t1;
            }

            e.prompt_hash = prompt_hash(prompt);
            const vlm::VlmResponse resp = res.backend.send(prompt, image);
            e.verdict = resp.verdict;
            e.retries = resp.retries;
            e.latency_seconds = resp.latency_seconds + grounding_seconds;
            e.correct = score(e.verdict, e.gold);
        } catch (const std::exception& ex) {
            e.failed = true;
            e.error = ex.what();
            e.verdict = Verdict::indeterminate;
            e.correct = false;
        }
    });

    report.rows = aggregate(report.log, report.ablation);
    return report;
}

std::optional<CountAssertion> parse_count_assertion(std::string_view question, const Lexicon& lexicon) {
    const auto words = words_of(question);

    // "... number of <noun> ... <k>"
    for (std::size_t i = 0; i + 2 < words.size(); ++i) {
        if (words[i] != "number" || words[i + 1] != "of") continue;
        std::size_t pos = i + 2;
        while (pos < words.size() && (words[pos] == "the" || words[pos] == "all")) ++pos;
        auto noun = lexicon.match_at(words, pos);
        if (!noun) return std::nullopt;
        for (std::size_t j = pos + noun->second; j < words.size(); ++j)
            if (auto k = as_number(words[j])) return CountAssertion{noun->first, *k};
        return std::nullopt;
    }

    // "<k> <noun>" or "<k> <adjective> <noun>"
    for (std::size_t i = 0; i + 1 < words.size(); ++i) {
        auto k = as_number(words[i]);
        if (!k) continue;
        if (auto noun = lexicon.match_at(words, i + 1)) return CountAssertion{noun->first, *k};
        if (i + 2 < words.size() && !as_number(words[i + 1]))
            if (auto noun = lexicon.match_at(words, i + 2)) return CountAssertion{noun->first, *k};
    }
    return std::nullopt;
}

Verdict odm_only_answer(std::string_view question, const DetectionSet& set, double threshold,
                        const Lexicon& lexicon, Fallback fallback) {
    const auto claim = parse_count_assertion(question, lexicon);
    if (!claim) return fallback == Fallback::abstain ? Verdict::indeterminate : Verdict::no;
    const auto kept = grounding::filter_detections(set, threshold);
    const auto n = std::count_if(kept.detections.begin(), kept.detections.end(),
                                 [&](const Detection& d) { return d.category == claim->category; });
    return n == claim->count ? Verdict::yes : Verdict::no;
}

Report run_odm_only(const OdmOnlySpec& spec, const std::vector<VqaRecord>& records,
                    odm::DetectorProvider& provider, const Lexicon& lexicon,
                    odm::DetectionCache* cache, const Stopwatch& clock) {
    try {
        odm::check_threshold(provider, spec.threshold);
    } catch (const odm::PrefilterError& e) {
        throw ConfigError(e.what());
    }
    odm::DetectionCache local_cache;
    odm::DetectionCache& c = cache ? *cache : local_cache;

    Report report;
    report.model = "odm-only";
    report.ablation = "odm_only";
    report.config = {{"threshold", spec.threshold},
                     {"tasks", token_list(spec.tasks)},
                     {"variants", token_list(spec.variants)},
                     {"fallback", spec.fallback == Fallback::abstain ? "abstain" : "no"},
                     {"provider", provider.source()}};

    for (const auto& rec : records) {
        if (!selected(rec, spec.tasks, spec.variants)) continue;
        LogEntry e;
        e.record_id = rec.record_id;
        e.task = rec.task;
        e.variant = rec.variant;
        e.gold = rec.gold;
        e.prompt_hash = prompt_hash(rec.question);
        const double t0 = clock();
        try {
            const DetectionSet set = c.get(provider, rec.image_ref, spec.threshold);
            e.verdict = odm_only_answer(rec.question, set, spec.threshold, lexicon, spec.fallback);
            e.correct = score(e.verdict, e.gold);
        } catch (const std::exception& ex) {
            e.failed = true;
            e.error = ex.what();
        }
        e.latency_seconds = clock() - t0;
        report.log.push_back(std::move(e));
    }
    report.rows = aggregate(report.log, report.ablation);
    return report;
}

}  // namespace groundcount::eval
