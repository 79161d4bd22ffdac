// groundcount: evaluation, grounding and fusion-check command line.
//
// Exit codes: 0 success, 1 configuration or input error, 2 failure ceiling
// exceeded (backend failure rate for eval, gradient tolerance for fusion-check).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "groundcount/evaluator.hpp"
#include "groundcount/fusion_train.hpp"
#include "groundcount/grounding.hpp"
#include "groundcount/ingest.hpp"
#include "groundcount/lexicon.hpp"
#include "groundcount/odm_backend.hpp"
#include "groundcount/raster.hpp"
#include "groundcount/report.hpp"
#include "groundcount/vlm_client.hpp"

namespace fs = std::filesystem;
using namespace groundcount;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitCeiling = 2;

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::vector<Task> parse_tasks(const std::string& csv) {
    std::vector<Task> out;
    for (const auto& t : split_csv(csv)) {
        auto v = parse_task(t);
        if (!v) throw ConfigError("unknown task '" + t + "'");
        out.push_back(*v);
    }
    return out;
}

std::vector<Variant> parse_variants(const std::string& csv) {
    std::vector<Variant> out;
    for (const auto& t : split_csv(csv)) {
        auto v = parse_variant(t);
        if (!v) throw ConfigError("unknown variant '" + t + "'");
        out.push_back(*v);
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string mime_for(const fs::path& p) {
    const auto ext = p.extension().string();
    if (ext == ".jpg" || ext == ".jpeg") return "image/jpeg";
    return "image/png";
}

eval::ImageResolver image_resolver(const std::string& root) {
    if (root.empty()) return {};
    return [root](const std::string& ref) -> std::optional<vlm::ImagePayload> {
        const fs::path path = fs::path(root) / ref;
        return vlm::ImagePayload{read_bytes(path), mime_for(path)};
    };
}

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

void print_totals(const eval::Report& report) {
    const auto t = eval::totals(report.log);
    std::printf("%s/%s: accuracy %.1f%% (%zu/%zu), failed %zu, indeterminate %zu, mean latency %.3fs\n",
                report.model.c_str(), report.ablation.c_str(), 100.0 * t.accuracy, t.correct, t.n,
                t.failed, t.indeterminate, t.mean_latency);
}

// ---- eval ---------------------------------------------------------------

struct EvalArgs {
    std::string backend = vlm::BackendConfig{}.endpoint;
    std::string model = "unnamed";
    std::string mock_script;
    std::string benchmark;
    std::string detections;
    std::string ablation = "none";
    std::string tasks, variants;
    std::string out;
    std::string image_root;
    double threshold = 0.5;
    double provider_threshold = 0.0;
    int parallelism = 1;
    double timeout = 120.0;
    int max_retries = 2;
    int max_tokens = 1024;
    bool lenient = false;
    double max_failure_rate = 0.05;
};

int run_eval_cmd(const EvalArgs& a) {
    auto ablation = eval::parse_ablation(a.ablation);
    if (!ablation) throw ConfigError("unknown ablation '" + a.ablation + "'");

    eval::RunSpec spec;
    spec.ablation = *ablation;
    spec.grounding.confidence_threshold = a.threshold;
    spec.tasks = parse_tasks(a.tasks);
    spec.variants = parse_variants(a.variants);
    spec.parallelism = a.parallelism;

    std::unique_ptr<vlm::VlmBackend> backend;
    if (!a.mock_script.empty()) {
        backend = vlm::MockBackend::from_json(read_json(a.mock_script));
        spec.backend_snapshot = {{"mock_script", a.mock_script}};
    } else {
        vlm::BackendConfig cfg;
        cfg.endpoint = a.backend;
        cfg.model = a.model;
        cfg.timeout_seconds = a.timeout;
        cfg.max_retries = a.max_retries;
        cfg.max_tokens = a.max_tokens;
        vlm::apply_env_overrides(cfg);
        cfg.validate();
        spec.backend_snapshot = cfg.snapshot();
        backend = std::make_unique<vlm::HttpBackend>(cfg);
    }

    const auto load = ingest::load_benchmark(
        a.benchmark, ingest::make_filter(spec.tasks, spec.variants),
        a.lenient ? ingest::Strictness::lenient : ingest::Strictness::strict);
    for (const auto& issue : load.skipped) std::cerr << "skipped: " << issue.describe() << '\n';

    std::unique_ptr<odm::FileProvider> provider;
    if (!a.detections.empty()) provider = std::make_unique<odm::FileProvider>(a.detections, a.provider_threshold);

    eval::EvalResources res{*backend, provider.get(), nullptr, image_resolver(a.image_root)};
    const auto report = eval::run_eval(spec, load.records, res);
    if (!a.out.empty()) eval::emit_report(report, a.out);
    print_totals(report);

    const auto t = eval::totals(report.log);
    if (t.n > 0 && static_cast<double>(t.failed) / static_cast<double>(t.n) > a.max_failure_rate) {
        std::cerr << "failure rate " << t.failed << "/" << t.n << " exceeds ceiling " << a.max_failure_rate << '\n';
        return kExitCeiling;
    }
    return kExitOk;
}

// ---- odm-only -----------------------------------------------------------

struct OdmOnlyArgs {
    std::string benchmark, detections, tasks, variants, out;
    double threshold = 0.5;
    bool abstain = false;
};

int run_odm_only_cmd(const OdmOnlyArgs& a) {
    eval::OdmOnlySpec spec;
    spec.threshold = a.threshold;
    spec.tasks = parse_tasks(a.tasks);
    spec.variants = parse_variants(a.variants);
    spec.fallback = a.abstain ? eval::Fallback::abstain : eval::Fallback::answer_no;

    const auto load = ingest::load_benchmark(a.benchmark, ingest::make_filter(spec.tasks, spec.variants));
    odm::FileProvider provider(a.detections);
    const auto report = eval::run_odm_only(spec, load.records, provider, Lexicon::coco());
    if (!a.out.empty()) eval::emit_report(report, a.out);
    print_totals(report);
    return kExitOk;
}

// ---- ground -------------------------------------------------------------

struct GroundArgs {
    std::string image_id, detections, question, context, overlay_in, overlay_out;
    double threshold = 0.5;
    bool no_confidence = false, no_position = false;
};

int run_ground_cmd(const GroundArgs& a) {
    odm::FileProvider provider(a.detections);
    const DetectionSet set = provider.fetch(a.image_id);

    grounding::GroundingConfig cfg;
    cfg.confidence_threshold = a.threshold;
    cfg.include_confidence = !a.no_confidence;
    cfg.include_position = !a.no_position;
    const auto gp = grounding::render_prompt(set, cfg);

    if (a.question.empty()) {
        std::cout << gp.rendered << '\n';
    } else {
        std::optional<std::string> ctx;
        if (!a.context.empty()) ctx = a.context;
        std::cout << grounding::augment_user_prompt(a.question, ctx, gp);
    }

    if (!a.overlay_in.empty()) {
        if (a.overlay_out.empty()) throw ConfigError("--overlay-in needs --overlay-out");
        const auto kept = grounding::filter_detections(set, a.threshold);
        write_png(a.overlay_out, grounding::overlay_boxes(read_png(a.overlay_in), kept));
    }
    return kExitOk;
}

// ---- prep-train ---------------------------------------------------------

int run_prep_train_cmd(const std::string& coco, const std::string& out_path) {
    const auto anns = ingest::load_annotations(coco);
    std::ofstream out(out_path);
    if (!out) throw ConfigError("cannot write " + out_path);
    std::size_t n = 0;
    for (const auto& [id, ann] : anns) {
        if (ann.objects.empty()) continue;
        out << nlohmann::json{{"image_id", id},
                              {"file_name", ann.file_name},
                              {"target", grounding::render_training_target(ann)}}
                   .dump()
            << '\n';
        ++n;
    }
    std::printf("wrote %zu targets to %s\n", n, out_path.c_str());
    return kExitOk;
}

// ---- fusion-check -------------------------------------------------------

struct FusionArgs {
    std::string dims = "16,12,8,8";
    int seeds = 10;
    std::uint64_t seed = 1;
    double tolerance = 1e-4;
    bool train = false;
    int steps = 200;
    double lr = fusion::TrainConfig{}.learning_rate;
    bool shuffle_labels = false;
    std::string out;
};

fusion::FusionDims parse_dims(const std::string& s) {
    const auto parts = split_csv(s);
    if (parts.size() != 4) throw ConfigError("--dims expects d_vit,d_cnn,d_attn,d_out");
    fusion::FusionDims d{std::stoi(parts[0]), std::stoi(parts[1]), std::stoi(parts[2]), std::stoi(parts[3])};
    try {
        d.validate();
    } catch (const fusion::ShapeError& e) {
        throw ConfigError(e.what());
    }
    return d;
}

int run_fusion_check_cmd(const FusionArgs& a) {
    const auto dims = parse_dims(a.dims);
    double worst = 0.0;
    for (int s = 0; s < a.seeds; ++s) {
        const auto report = fusion::gradient_check(dims, a.seed + static_cast<std::uint64_t>(s));
        worst = std::max(worst, report.worst_relative_error());
    }
    std::printf("gradient check: %d seeds, worst relative error %.3e (tolerance %.1e)\n", a.seeds, worst,
                a.tolerance);
    int code = worst <= a.tolerance ? kExitOk : kExitCeiling;

    if (a.train) {
        fusion::ToyTask task;
        task.shuffle_labels = a.shuffle_labels;
        fusion::TrainConfig cfg;
        cfg.steps = a.steps;
        cfg.learning_rate = a.lr;
        cfg.seed = a.seed;
        const auto curve = fusion::toy_train(dims, task, cfg);
        std::printf("toy training (%s labels): loss %.4f -> %.4f over %d steps\n",
                    a.shuffle_labels ? "shuffled" : "separable", curve.initial(), curve.final_loss, a.steps);
        if (!a.out.empty()) {
            std::ofstream out(a.out);
            if (!out) throw ConfigError("cannot write " + a.out);
            out << "step,learning_rate,loss\n";
            char buf[96];
            for (std::size_t i = 0; i < curve.loss.size(); ++i) {
                std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", i, curve.learning_rate[i], curve.loss[i]);
                out << buf;
            }
            std::snprintf(buf, sizeof buf, "%zu,,%.9g\n", curve.loss.size(), curve.final_loss);
            out << buf;
        }
    }
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Detection-grounded yes/no VQA evaluation toolkit"};
    app.require_subcommand(1);

    EvalArgs ea;
    auto* ev = app.add_subcommand("eval", "Run a benchmark through a VLM backend");
    ev->add_option("--backend", ea.backend, "Chat-completion endpoint URL");
    ev->add_option("--model", ea.model, "Model id sent to the backend");
    ev->add_option("--mock-script", ea.mock_script, "Use a scripted offline backend (JSON rules file)");
    ev->add_option("--benchmark", ea.benchmark, "Benchmark JSONL")->required();
    ev->add_option("--detections", ea.detections, "Detections JSON (required unless --ablation none)");
    ev->add_option("--ablation", ea.ablation, "none|full|noconf|nopos|lowthr|pointing");
    ev->add_option("--tasks", ea.tasks, "Comma-separated task filter");
    ev->add_option("--variants", ea.variants, "Comma-separated variant filter");
    ev->add_option("--out", ea.out, "Report directory");
    ev->add_option("--image-root", ea.image_root, "Directory that image_ref paths are relative to");
    ev->add_option("--threshold", ea.threshold, "Grounding confidence threshold")->check(CLI::Range(0.0, 1.0));
    ev->add_option("--provider-threshold", ea.provider_threshold, "Threshold already applied to the detections file")
        ->check(CLI::Range(0.0, 1.0));
    ev->add_option("--parallelism", ea.parallelism, "Concurrent requests")->check(CLI::PositiveNumber);
    ev->add_option("--timeout", ea.timeout, "Per-request timeout (s)");
    ev->add_option("--max-retries", ea.max_retries, "Retries on transport errors");
    ev->add_option("--max-tokens", ea.max_tokens, "Generation budget");
    ev->add_flag("--lenient", ea.lenient, "Skip malformed benchmark lines instead of failing");
    ev->add_option("--max-failure-rate", ea.max_failure_rate, "Exit 2 above this backend failure rate")
        ->check(CLI::Range(0.0, 1.0));

    OdmOnlyArgs oa;
    auto* odm_cmd = app.add_subcommand("odm-only", "Answer count assertions from detections alone");
    odm_cmd->add_option("--benchmark", oa.benchmark)->required();
    odm_cmd->add_option("--detections", oa.detections)->required();
    odm_cmd->add_option("--threshold", oa.threshold)->check(CLI::Range(0.0, 1.0));
    odm_cmd->add_option("--tasks", oa.tasks);
    odm_cmd->add_option("--variants", oa.variants);
    odm_cmd->add_option("--out", oa.out);
    odm_cmd->add_flag("--abstain", oa.abstain, "Unparsable questions are indeterminate instead of 'no'");

    GroundArgs ga;
    auto* gr = app.add_subcommand("ground", "Print the grounding block for one image");
    gr->add_option("--image-id", ga.image_id)->required();
    gr->add_option("--detections", ga.detections)->required();
    gr->add_option("--threshold", ga.threshold)->check(CLI::Range(0.0, 1.0));
    gr->add_option("--question", ga.question, "Print the full augmented prompt for this question");
    gr->add_option("--context", ga.context);
    gr->add_flag("--no-confidence", ga.no_confidence);
    gr->add_flag("--no-position", ga.no_position);
    gr->add_option("--overlay-in", ga.overlay_in, "PNG to draw boxes on");
    gr->add_option("--overlay-out", ga.overlay_out);

    std::string coco, targets;
    auto* pt = app.add_subcommand("prep-train", "Render spatial training targets from COCO annotations");
    pt->add_option("--coco", coco)->required();
    pt->add_option("--out", targets)->required();

    FusionArgs fa;
    auto* fc = app.add_subcommand("fusion-check", "Gradient check and toy training of the fusion block");
    fc->add_option("--dims", fa.dims, "d_vit,d_cnn,d_attn,d_out");
    fc->add_option("--seeds", fa.seeds)->check(CLI::PositiveNumber);
    fc->add_option("--seed", fa.seed);
    fc->add_option("--tolerance", fa.tolerance);
    fc->add_flag("--train", fa.train);
    fc->add_option("--steps", fa.steps)->check(CLI::NonNegativeNumber);
    fc->add_option("--lr", fa.lr);
    fc->add_flag("--shuffle-labels", fa.shuffle_labels);
    fc->add_option("--out", fa.out, "Loss curve CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*ev) return run_eval_cmd(ea);
        if (*odm_cmd) return run_odm_only_cmd(oa);
        if (*gr) return run_ground_cmd(ga);
        if (*pt) return run_prep_train_cmd(coco, targets);
        if (*fc) return run_fusion_check_cmd(fa);
    } catch (const ingest::IngestError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return kExitOk;
}
