// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "counting_corpus.hpp"
#include "fusion_oracle.hpp"
#include "groundcount/evaluator.hpp"
#include "groundcount/fusion_train.hpp"
#include "groundcount/grounding.hpp"
#include "groundcount/ingest.hpp"
#include "groundcount/lexicon.hpp"
#include "support.hpp"

using namespace groundcount;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
    bool pass = true;
    std::string detail;
};

// Collects failures; `detail` is replaced by the first failure message.
class Check {
public:
    void require(bool ok, const std::string& what) {
        if (!ok && out_.pass) {
            out_.pass = false;
            out_.detail = what;
        }
    }
    bool ok() const { return out_.pass; }
    Outcome done(std::string summary) {
        if (out_.pass) out_.detail = std::move(summary);
        return out_;
    }

private:
    Outcome out_;
};

// ---------------------------------------------------------------- E2E-1

std::string csv_field(const std::string& csv_text, int column) {
    std::istringstream in(csv_text);
    std::string header, row;
    std::getline(in, header);
    std::getline(in, row);
    std::istringstream cells(row);
    std::string cell;
    for (int i = 0; i <= column && std::getline(cells, cell, ','); ++i) {
    }
    return cell;
}

Outcome e2e_harness() {
    Check chk;
    const auto t0 = Clock::now();
    gc_test::TempDir dir;
    const auto corpus = gc_test::make_counting_corpus();
    gc_test::write_text(dir / "bench.jsonl", ingest::to_jsonl(corpus.records));
    ingest::save_detections(dir / "dets.json", corpus.detections);
    gc_test::write_text(dir / "mock.json", corpus.mock_script.dump());

    std::string summary;
    const std::vector<std::pair<std::string, std::string>> runs = {{"none", "74.7"}, {"full", "81.3"}};
    for (const auto& [ablation, expect] : runs) {
        const fs::path out = dir / ("report_" + ablation);
        const std::string cmd = std::string("\"") + GC_CLI_PATH + "\" eval --mock-script \"" +
                                (dir / "mock.json").string() + "\" --benchmark \"" +
                                (dir / "bench.jsonl").string() + "\" --detections \"" +
                                (dir / "dets.json").string() + "\" --ablation " + ablation +
                                " --tasks counting --parallelism 4 --out \"" + out.string() + "\" > \"" +
                                (dir / "stdout.txt").string() + "\"";
        const int rc = std::system(cmd.c_str());
        chk.require(rc == 0, ablation + ": eval exited with " + std::to_string(rc));
        if (!chk.ok()) break;

        const std::string csv = gc_test::read_text(out / "heatmap.csv");
        const std::string n = csv_field(csv, 2), correct = csv_field(csv, 3), pct = csv_field(csv, 4);
        chk.require(n == "1000", ablation + ": n = " + n);
        chk.require(pct == expect, ablation + ": accuracy " + pct + "%, expected " + expect + "%");
        const std::string expect_correct = ablation == "none" ? "747" : "813";
        chk.require(correct == expect_correct, ablation + ": correct " + correct);

        // recount from the per-record log
        std::istringstream log(gc_test::read_text(out / "records.jsonl"));
        std::string line;
        int rows = 0, right = 0;
        while (std::getline(log, line)) {
            const auto j = nlohmann::json::parse(line);
            ++rows;
            right += j["verdict"] == j["gold"] ? 1 : 0;
        }
        chk.require(rows == 1000 && std::to_string(right) == expect_correct,
                    ablation + ": log recount " + std::to_string(right) + "/" + std::to_string(rows));
        const std::string md = gc_test::read_text(out / "accuracy.md");
        chk.require(md.find("- accuracy: " + expect + "%") != std::string::npos, ablation + ": markdown total");
        summary += (summary.empty() ? "" : ", ") + ablation + " " + pct + "% (" + correct + "/1000)";
    }
    const double elapsed = seconds_since(t0);
    chk.require(elapsed < 10.0, "runtime " + std::to_string(elapsed) + " s >= 10 s");
    char buf[64];
    std::snprintf(buf, sizeof buf, " in %.2f s", elapsed);
    return chk.done(summary + buf);
}

// ---------------------------------------------------------------- GRD-1

Outcome golden_grounding() {
    Check chk;
    DetectionSet s{"skate", 640, 480, {}};
    auto add = [&](const char* cat, double conf, double x1, double y1, double x2, double y2) {
        s.detections.push_back({cat, conf, {x1, y1, x2, y2}});
    };
    add("person", 0.94, 40, 100, 140, 400);
    add("person", 0.91, 180, 60, 260, 300);
    add("person", 0.88, 300, 20, 380, 200);
    add("person", 0.86, 450, 120, 540, 420);
    add("person", 0.67, 560, 200, 630, 460);
    add("skateboard", 0.81, 55, 380, 125, 420);
    add("skateboard", 0.58, 470, 410, 540, 450);
    add("skateboard", 0.42, 200, 290, 250, 310);
    add("skateboard", 0.31, 570, 440, 620, 470);

    const std::string full_golden =
        "skateboard 1 lower-left: 0.81; person 1 middle-left: 0.94; person 2 middle-center: 0.91; "
        "person 3 upper-center: 0.88; person 4 middle-right: 0.86; skateboard 2 lower-right: 0.58; "
        "person 5 lower-right: 0.67";
    const std::string noconf_golden =
        "skateboard 1 lower-left; person 1 middle-left; person 2 middle-center; person 3 upper-center; "
        "person 4 middle-right; skateboard 2 lower-right; person 5 lower-right";

    const auto full = grounding::render_prompt(s);
    chk.require(full.rendered == full_golden, "full: " + full.rendered);

    eval::RunSpec spec;
    spec.ablation = eval::Ablation::no_confidence;
    const auto noconf = grounding::render_prompt(s, eval::effective_grounding(spec));
    chk.require(noconf.rendered == noconf_golden, "noconf: " + noconf.rendered);

    std::string stripped = full_golden;
    for (std::size_t pos; (pos = stripped.find(": 0.")) != std::string::npos;) stripped.erase(pos, 6);
    chk.require(stripped == noconf.rendered, "noconf != full without confidences");

    const std::string prompt = grounding::augment_user_prompt("How many skateboards are there?", std::nullopt, full);
    chk.require(prompt == "How many skateboards are there?\n\nDetected objects (from an object detection model):\n" +
                              full_golden + "\n",
                "augmented prompt layout");
    return chk.done("7 of 9 detections kept, byte-exact full and no-confidence renderings");
}

// ---------------------------------------------------------------- GRD-2

std::string oracle_cell(const Box& b, int w, int h) {
    auto idx = [](double c, int extent) { return 3.0 * c >= 2.0 * extent ? 2 : (3.0 * c >= extent ? 1 : 0); };
    static const char* rows[] = {"upper", "middle", "lower"};
    static const char* cols[] = {"left", "center", "right"};
    return std::string(rows[idx(b.center_y(), h)]) + "-" + cols[idx(b.center_x(), w)];
}

// Selection by repeated minimum over the emission key; ties keep input order.
std::vector<Detection> brute_force_order(const std::vector<Detection>& dets) {
    auto precedes = [](const Detection& a, const Detection& b) {
        if (a.box.center_x() != b.box.center_x()) return a.box.center_x() < b.box.center_x();
        if (a.box.center_y() != b.box.center_y()) return a.box.center_y() > b.box.center_y();
        if (a.category != b.category) return a.category < b.category;
        return a.confidence > b.confidence;
    };
    std::vector<bool> used(dets.size(), false);
    std::vector<Detection> out;
    for (std::size_t round = 0; round < dets.size(); ++round) {
        std::size_t best = dets.size();
        for (std::size_t i = 0; i < dets.size(); ++i)
            if (!used[i] && (best == dets.size() || precedes(dets[i], dets[best]))) best = i;
        used[best] = true;
        out.push_back(dets[best]);
    }
    return out;
}

std::string oracle_render(const DetectionSet& s, double threshold) {
    std::vector<Detection> kept;
    for (const auto& d : s.detections)
        if (d.confidence >= threshold) kept.push_back(d);
    if (kept.empty()) return "no objects detected";
    std::map<std::string, int> idx;
    std::string out;
    for (const auto& d : brute_force_order(kept)) {
        char conf[32];
        std::snprintf(conf, sizeof conf, "%.2f", d.confidence);
        if (!out.empty()) out += "; ";
        out += d.category + " " + std::to_string(++idx[d.category]) + " " + oracle_cell(d.box, s.width, s.height) +
               ": " + conf;
    }
    return out;
}

Outcome ordering_property() {
    Check chk;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(2024);
    for (int iter = 0; iter < 1000 && chk.ok(); ++iter) {
        auto s = gc_test::random_scene(rng, 40, iter % 2 == 1);
        const std::string rendered = grounding::render_prompt(s).rendered;
        chk.require(rendered == oracle_render(s, 0.5), "scene " + std::to_string(iter) + " differs from oracle");

        const auto ordered = grounding::order_detections(s);
        const auto expect = brute_force_order(s.detections);
        chk.require(ordered == expect, "scene " + std::to_string(iter) + " order differs from brute force");

        for (int k = 0; k < 3; ++k) {
            std::shuffle(s.detections.begin(), s.detections.end(), rng);
            chk.require(grounding::render_prompt(s).rendered == rendered,
                        "scene " + std::to_string(iter) + " not permutation invariant");
        }
    }
    const double elapsed = seconds_since(t0);
    chk.require(elapsed < 5.0, "runtime " + std::to_string(elapsed) + " s >= 5 s");
    char buf[96];
    std::snprintf(buf, sizeof buf, "1000 random scenes x 4 permutations match the oracle in %.2f s", elapsed);
    return chk.done(buf);
}

// ---------------------------------------------------------------- GRD-3

Outcome threshold_monotonicity() {
    Check chk;
    std::mt19937_64 rng(77);
    eval::RunSpec base, low;
    low.ablation = eval::Ablation::low_threshold;
    const auto gbase = eval::effective_grounding(base), glow = eval::effective_grounding(low);
    chk.require(glow.confidence_threshold == 0.3 && gbase.confidence_threshold == 0.5, "ablation thresholds");
    std::size_t strictly_more = 0;
    for (int iter = 0; iter < 1000; ++iter) {
        const auto s = gc_test::random_scene(rng, 40);
        const auto hi = grounding::filter_detections(s, 0.5).detections;
        const auto lo = grounding::filter_detections(s, 0.3).detections;
        for (const auto& d : hi)
            chk.require(std::find(lo.begin(), lo.end(), d) != lo.end(), "survivor lost at 0.3");
        const auto a = grounding::render_prompt(s, gbase).lines.size();
        const auto b = grounding::render_prompt(s, glow).lines.size();
        chk.require(b >= a, "low threshold produced fewer lines");
        strictly_more += b > a;
    }
    return chk.done("1000 scenes, survivors(0.3) contain survivors(0.5); more lines in " +
                    std::to_string(strictly_more));
}

// ---------------------------------------------------------------- ODM-1

std::string plural_of(const std::string& name) {
    static const std::map<std::string, std::string> irregular = {
        {"person", "people"}, {"mouse", "mice"}, {"knife", "knives"}, {"sheep", "sheep"},
        {"skis", "skis"},     {"scissors", "scissors"}, {"broccoli", "broccoli"}};
    if (auto it = irregular.find(name); it != irregular.end()) return it->second;
    for (const char* suffix : {"s", "x", "ch", "sh"}) {
        const std::string sfx = suffix;
        if (name.size() >= sfx.size() && name.compare(name.size() - sfx.size(), sfx.size(), sfx) == 0)
            return name + "es";
    }
    return name + "s";
}

Outcome odm_only_oracle() {
    Check chk;
    const auto t0 = Clock::now();
    const auto lexicon = Lexicon::coco();
    const auto& cats = kCocoCategories;
    static const char* kWords[] = {"zero", "one", "two", "three", "four", "five", "six"};
    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> pick_cat(0, cats.size() - 1);
    std::uniform_int_distribution<int> pick_k(0, 6), pick_form(0, 4), pick_n(0, 5);

    std::size_t yes_answers = 0;
    for (int iter = 0; iter < 1000 && chk.ok(); ++iter) {
        // scene focused on a few categories so true counts hit the asked k often
        std::vector<std::string> pool = {cats[pick_cat(rng)], cats[pick_cat(rng)], cats[pick_cat(rng)]};
        DetectionSet s{"scene", 640, 480, {}};
        for (const auto& c : pool)
            for (int k = pick_n(rng); k > 0; --k) {
                const double x = u(rng) * 600, y = u(rng) * 440;
                s.detections.push_back({c, u(rng), {x, y, x + 30, y + 30}});
            }
        const std::string cat = pool[static_cast<std::size_t>(iter) % 3];
        const int k = pick_k(rng);
        const double threshold = iter % 4 == 0 ? 0.3 : 0.5;

        std::string noun = k == 1 ? cat : plural_of(cat);
        std::string q;
        bool parsable = true;
        switch (pick_form(rng)) {
            case 0: q = "Is the number of " + plural_of(cat) + " in the image " + std::to_string(k) + "?"; break;
            case 1: q = "Are there " + std::to_string(k) + " " + noun + " in the picture?"; break;
            case 2: q = "Are there " + std::string(kWords[k]) + " " + noun + "?"; break;
            case 3: q = "Is the number of all the " + plural_of(cat) + " equal to " + kWords[k] + "?"; break;
            default: q = "Is the " + cat + " on the left side?"; parsable = false; break;
        }

        int count = 0;
        for (const auto& d : s.detections) count += d.category == cat && d.confidence >= threshold;
        const Verdict expect = parsable && count == k ? Verdict::yes : Verdict::no;
        const Verdict got = eval::odm_only_answer(q, s, threshold, lexicon);
        chk.require(got == expect, "disagreement on \"" + q + "\" (count " + std::to_string(count) + ")");
        yes_answers += expect == Verdict::yes;
    }
    const double elapsed = seconds_since(t0);
    chk.require(elapsed < 5.0, "runtime " + std::to_string(elapsed) + " s >= 5 s");
    char buf[128];
    std::snprintf(buf, sizeof buf, "1000/1000 agree (%zu yes), %.2f s", yes_answers, elapsed);
    return chk.done(buf);
}

// ---------------------------------------------------------------- FUS-1

Outcome gradient_check() {
    Check chk;
    const auto t0 = Clock::now();
    const fusion::FusionDims dims{16, 12, 8, 8};
    double worst = 0.0;
    for (std::uint64_t seed = 1; seed <= 10; ++seed)
        worst = std::max(worst, gc_test::gradient_check_worst(dims, seed, 4, 1e-5));
    chk.require(worst <= 1e-4, "worst relative error " + std::to_string(worst));
    const double elapsed = seconds_since(t0);
    chk.require(elapsed < 30.0, "runtime " + std::to_string(elapsed) + " s >= 30 s");
    char buf[128];
    std::snprintf(buf, sizeof buf, "10 seeds, worst relative error %.2e, %.2f s", worst, elapsed);
    return chk.done(buf);
}

// ---------------------------------------------------------------- FUS-2

Outcome fusion_identities() {
    using namespace groundcount::fusion;
    Check chk;
    const FusionDims dims{16, 12, 8, 8};
    const double eps = std::numeric_limits<double>::epsilon();
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        std::mt19937_64 rng(seed);
        std::normal_distribution<double> nd;
        auto fill = [&](Eigen::Index r, Eigen::Index c) {
            Matrix m(r, c);
            for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = nd(rng);
            return m;
        };
        FusionInputs in{fill(10, 16), fill(10, 12), fill(12, 1)};

        auto film = FusionParams::init(dims, seed);
        film.film_w2.setZero();
        film.film_b2 << Vector::Ones(16), Vector::Zero(16);
        chk.require(fuse_forward(in, film).hA == in.p, "FiLM identity");

        auto same = in;
        for (Eigen::Index i = 0; i < 10; ++i) same.c.row(i) = same.g.transpose();
        const auto params = FusionParams::init(dims, seed + 100);
        const auto eq = fuse_forward(same, params);
        const Vector v = params.attn_wv * same.g;
        for (Eigen::Index i = 0; i < 10; ++i) {
            chk.require(eq.cache.attn(i, 0) == 0.5 && eq.cache.attn(i, 1) == 0.5, "equal-key weights");
            chk.require(eq.hB.row(i) == v.transpose(), "equal-key value");
        }

        auto zero_gate = params;
        zero_gate.gate_w2.setZero();
        zero_gate.gate_b2.setZero();
        const auto zg = fuse_forward(in, zero_gate);
        chk.require((zg.alpha.array() == 0.5).all(), "alpha at zero gate weights");

        const auto out = fuse_forward(in, params);
        for (Eigen::Index i = 0; i < out.h_pre.rows(); ++i)
            for (Eigen::Index j = 0; j < out.h_pre.cols(); ++j) {
                const double lo = std::min(out.hA(i, j), out.hB(i, j)), hi = std::max(out.hA(i, j), out.hB(i, j));
                const double slack = 4 * eps * std::max(std::abs(lo), std::abs(hi));
                chk.require(out.h_pre(i, j) >= lo - slack && out.h_pre(i, j) <= hi + slack, "convexity");
            }
    }
    return chk.done("FiLM identity, equal-key attention, alpha = 0.5, convex mix hold on 20 random draws");
}

// ---------------------------------------------------------------- FUS-3

Outcome toy_training() {
    Check chk;
    const auto t0 = Clock::now();
    const fusion::FusionDims dims{16, 12, 8, 8};
    fusion::ToyTask task;
    fusion::TrainConfig cfg;
    chk.require(cfg.steps == 200, "default step count");
    const auto sep = fusion::toy_train(dims, task, cfg);
    chk.require(sep.final_loss < 0.5 * sep.initial(),
                "separable: " + std::to_string(sep.initial()) + " -> " + std::to_string(sep.final_loss));
    task.shuffle_labels = true;
    const auto shuf = fusion::toy_train(dims, task, cfg);
    const double ln9 = std::log(9.0);
    const double dev = std::abs(shuf.final_loss - ln9) / ln9;
    chk.require(dev <= 0.05, "shuffled final loss " + std::to_string(shuf.final_loss) + " deviates " +
                                 std::to_string(100 * dev) + "% from ln 9");
    const double elapsed = seconds_since(t0);
    chk.require(elapsed < 60.0, "runtime " + std::to_string(elapsed) + " s >= 60 s");
    char buf[160];
    std::snprintf(buf, sizeof buf, "separable %.3f -> %.3f; shuffled %.3f (%.1f%% from ln 9); %.2f s", sep.initial(),
                  sep.final_loss, shuf.final_loss, 100 * dev, elapsed);
    return chk.done(buf);
}

// ---------------------------------------------------------------- TGT-1

Outcome training_target() {
    Check chk;
    AnnotationSet ann{"birds", "birds.jpg", 300, 300, {}};
    ann.objects = {{"bird", {20, 30, 80, 70}}, {"bird", {120, 130, 180, 170}}, {"bird", {225, 235, 275, 265}}};
    const std::string expect = "bird 1 in upper-left; bird 2 in middle-center; bird 3 in lower-right";
    const std::string got = grounding::render_training_target(ann);
    chk.require(got == expect, got);
    std::mt19937_64 rng(1);
    for (int i = 0; i < 10; ++i) {
        std::shuffle(ann.objects.begin(), ann.objects.end(), rng);
        chk.require(grounding::render_training_target(ann) == expect, "order dependence");
    }
    return chk.done("\"" + expect + "\"");
}

// ---------------------------------------------------------------- PERF-1

Outcome plumbing_latency() {
    Check chk;
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<DetectionSet> scenes;
    for (int i = 0; i < 500; ++i) {
        DetectionSet s{"perf", 1280, 720, {}};
        for (int k = 0; k < 100; ++k) {
            const double x = u(rng) * 1200, y = u(rng) * 660;
            s.detections.push_back({kCocoCategories[static_cast<std::size_t>(k) % 20], u(rng), {x, y, x + 60, y + 50}});
        }
        scenes.push_back(std::move(s));
    }
    std::size_t bytes = 0;
    const auto t0 = Clock::now();
    for (const auto& s : scenes) {
        const auto gp = grounding::render_prompt(s);
        bytes += grounding::augment_user_prompt("Is the number of cars in the image 3?", std::nullopt, gp).size();
    }
    const double per_image_ms = 1e3 * seconds_since(t0) / static_cast<double>(scenes.size());
    chk.require(bytes > 0, "no output");
    chk.require(per_image_ms < 1.0, "per image " + std::to_string(per_image_ms) + " ms");
    char buf[96];
    std::snprintf(buf, sizeof buf, "%.4f ms per 100-detection image (500 images)", per_image_ms);
    return chk.done(buf);
}

}  // namespace

int main() {
    const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria = {
        {"E2E-1", e2e_harness},          {"GRD-1", golden_grounding},  {"GRD-2", ordering_property},
        {"GRD-3", threshold_monotonicity}, {"ODM-1", odm_only_oracle}, {"FUS-1", gradient_check},
        {"FUS-2", fusion_identities},    {"FUS-3", toy_training},      {"TGT-1", training_target},
        {"PERF-1", plumbing_latency},
    };
    const auto t0 = Clock::now();
    int failures = 0;
    for (const auto& [id, run] : criteria) {
        Outcome o;
        try {
            o = run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += o.pass ? 0 : 1;
        std::printf("%s %s: %s\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str());
        std::fflush(stdout);
    }
    const double total = seconds_since(t0);
    const bool in_budget = total < 180.0;
    std::printf("%s TOTAL: %d/%zu criteria passed in %.1f s (budget 180 s)\n", failures == 0 && in_budget ? "PASS" : "FAIL",
                static_cast<int>(criteria.size()) - failures, criteria.size(), total);
    return failures == 0 && in_budget ? 0 : 1;
}
