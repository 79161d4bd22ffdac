#include <doctest.h>

#include <random>

#include "groundcount/ingest.hpp"
#include "support.hpp"

using namespace groundcount;
using namespace groundcount::ingest;
using gc_test::fixture;

TEST_CASE("benchmark fixture with one record per task loads all five") {
    const auto load = load_benchmark(fixture("benchmark_tasks.jsonl"));
    REQUIRE(load.records.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(load.records[i].task == kAllTasks[i]);
    CHECK(load.skipped.empty());

    const auto& ccs = load.records[3];
    CHECK(ccs.variant == Variant::ccs);
    CHECK_FALSE(ccs.context.has_value());
    CHECK(ccs.gold == Answer::yes);
    CHECK(load.records[1].context == "The dog in this photo is white.");
}

TEST_CASE("unknown task token is reported with its line") {
    try {
        load_benchmark(fixture("benchmark_bad_task.jsonl"));
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        REQUIRE(e.issues().size() == 2);
        CHECK(e.issues()[0].line == 2);
        CHECK(e.issues()[0].message.find("colour") != std::string::npos);
        CHECK(e.issues()[1].line == 3);
        CHECK(e.issues()[1].field == "gold");
        CHECK(std::string(e.what()).find("line 2") != std::string::npos);
    }
}

TEST_CASE("lenient mode keeps good lines and reports the rest") {
    const auto load = load_benchmark(fixture("benchmark_bad_task.jsonl"), {}, Strictness::lenient);
    REQUIRE(load.records.size() == 1);
    CHECK(load.records[0].record_id == "r1");
    CHECK(load.skipped.size() == 2);
}

TEST_CASE("record validation") {
    std::vector<Issue> issues;
    auto rec = [&](nlohmann::json j) {
        issues.clear();
        return parse_record(j, 7, issues);
    };
    nlohmann::json good = {{"id", "a"}, {"image", "i.png"}, {"task", "counting"},
                           {"variant", "base"}, {"question", "Q?"}, {"gold", "no"}};
    rec(good);
    CHECK(issues.empty());

    auto j = good;
    j["question"] = "";
    rec(j);
    CHECK(issues.size() == 1);

    j = good;
    j["context"] = "misleading";
    rec(j);
    REQUIRE(issues.size() == 1);
    CHECK(issues[0].field == "context");
    CHECK(issues[0].line == 7);

    j["variant"] = "icc";
    const auto r = rec(j);
    CHECK(issues.empty());
    CHECK(r.context == "misleading");

    j = good;
    j.erase("gold");
    rec(j);
    CHECK(issues.size() == 1);

    rec(nlohmann::json::array());
    CHECK_FALSE(issues.empty());
}

TEST_CASE("malformed JSON line is a located error") {
    gc_test::TempDir dir;
    gc_test::write_text(dir / "b.jsonl",
                        "{\"id\":\"a\",\"image\":\"i\",\"task\":\"object\",\"variant\":\"base\",\"question\":\"q\",\"gold\":\"yes\"}\n{oops\n");
    try {
        load_benchmark(dir / "b.jsonl");
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        REQUIRE(e.issues().size() == 1);
        CHECK(e.issues()[0].line == 2);
    }
    CHECK_THROWS_AS(load_benchmark(dir / "missing.jsonl"), IngestError);
}

TEST_CASE("filtered load is exactly the predicate subset of the unfiltered load") {
    const auto all = load_benchmark(fixture("benchmark_tasks.jsonl")).records;
    const std::vector<std::pair<std::vector<Task>, std::vector<Variant>>> filters = {
        {{Task::counting}, {}},
        {{}, {Variant::base}},
        {{Task::object, Task::attribute}, {Variant::sec, Variant::base}},
        {{Task::sentiment}, {Variant::ccs}},
    };
    for (const auto& [tasks, variants] : filters) {
        const auto got = load_benchmark(fixture("benchmark_tasks.jsonl"), make_filter(tasks, variants)).records;
        std::vector<VqaRecord> expect;
        for (const auto& r : all) {
            const bool t = tasks.empty() || std::find(tasks.begin(), tasks.end(), r.task) != tasks.end();
            const bool v = variants.empty() ||
                           std::find(variants.begin(), variants.end(), r.variant) != variants.end();
            if (t && v) expect.push_back(r);
        }
        CHECK(to_jsonl(got) == to_jsonl(expect));
    }
}

TEST_CASE("benchmark round-trip: serialize(load(x)) == canonical(x)") {
    const auto first = load_benchmark(fixture("benchmark_tasks.jsonl")).records;
    gc_test::TempDir dir;
    gc_test::write_text(dir / "rt.jsonl", to_jsonl(first));
    const auto second = load_benchmark(dir / "rt.jsonl").records;
    CHECK(to_jsonl(second) == to_jsonl(first));
    CHECK(second == first);
}

TEST_CASE("COCO annotations convert to corner form and resolve names") {
    const auto anns = load_annotations(fixture("coco_birds.json"));
    REQUIRE(anns.size() == 2);
    const auto& a = anns.at("17");
    CHECK(a.width == 300);
    CHECK(a.file_name == "000000000017.jpg");
    REQUIRE(a.objects.size() == 3);
    for (const auto& o : a.objects) CHECK(o.category == "bird");
    CHECK(a.objects[0].box == Box{230, 230, 270, 270});
    CHECK(anns.at("18").objects.empty());
}

TEST_CASE("COCO referential integrity errors name the id") {
    try {
        load_annotations(fixture("coco_bad_category.json"));
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        CHECK(std::string(e.what()).find("99") != std::string::npos);
    }

    nlohmann::json doc = {{"images", {{{"id", 1}, {"file_name", "a"}, {"width", 10}, {"height", 10}}}},
                          {"annotations", {{{"image_id", 5}, {"category_id", 1}, {"bbox", {1, 1, 2, 2}}}}},
                          {"categories", {{{"id", 1}, {"name", "cat"}}}}};
    try {
        parse_annotations(doc);
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        CHECK(std::string(e.what()).find("5") != std::string::npos);
    }

    doc["annotations"][0]["image_id"] = 1;
    doc["annotations"][0]["bbox"] = {1, 1, 0, 2};
    CHECK_THROWS_AS(parse_annotations(doc), IngestError);

    doc["annotations"][0]["bbox"] = {1, 1, 9.5, 2};  // overshoot by 0.5 px is clamped
    const auto anns = parse_annotations(doc);
    CHECK(anns.at("1").objects[0].box.x2 == 10.0);

    doc["annotations"][0]["bbox"] = {1, 1, 15, 2};
    CHECK_THROWS_AS(parse_annotations(doc), IngestError);
}

TEST_CASE("detections file: sizes, keys and normalization") {
    const auto dets = load_detections(fixture("detections_two.json"));
    REQUIRE(dets.size() == 2);
    CHECK(dets.at("img_a.png").detections.size() == 1);
    CHECK(dets.at("img_a.png").detections[0].confidence == 0.9);
    CHECK(dets.at("img_b.png").width == 320);

    try {
        load_detections(fixture("detections_inverted.json"));
        FAIL("expected IngestError");
    } catch (const IngestError& e) {
        CHECK(std::string(e.what()).find("inverted box") != std::string::npos);
    }
}

TEST_CASE("detections file rejects out-of-range confidence and missing dimensions") {
    nlohmann::json doc = {{"images", {{{"image_id", "x"}, {"width", 10}, {"height", 10},
                                       {"detections", {{{"category", "cat"}, {"confidence", 1.2},
                                                        {"bbox", {1, 1, 5, 5}}}}}}}}};
    CHECK_THROWS_AS(parse_detections(doc), IngestError);
    doc["images"][0]["detections"][0]["confidence"] = 0.5;
    CHECK_NOTHROW(parse_detections(doc));
    doc["images"][0].erase("height");
    CHECK_THROWS_AS(parse_detections(doc), IngestError);
}

TEST_CASE("detections round-trip and loader invariants on random sets") {
    std::mt19937_64 rng(11);
    DetectionMap map;
    for (int i = 0; i < 20; ++i) {
        auto s = gc_test::random_scene(rng, 15);
        s.image_id = "img" + std::to_string(i);
        CHECK(validate(s).empty());
        map[s.image_id] = s;
    }
    gc_test::TempDir dir;
    save_detections(dir / "d.json", map);
    const auto back = load_detections(dir / "d.json");
    CHECK(to_json(back) == to_json(map));
    for (const auto& [id, set] : back) {
        for (const auto& d : set.detections) {
            CHECK(d.box.x1 < d.box.x2);
            CHECK(d.box.y1 < d.box.y2);
            CHECK(d.confidence >= 0.0);
            CHECK(d.confidence <= 1.0);
        }
    }
}
