#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "vqamoe/rng.hpp"
#include "vqamoe/vqa_metric.hpp"

using namespace vqamoe;
using namespace vqamoe::vqa_metric;

namespace {

AnnotationRecord record_with_matches(int k) {
    AnnotationRecord r;
    r.question_id = "q" + std::to_string(k);
    r.question = "what is it";
    for (int i = 0; i < 10; ++i) r.answers.push_back(i < k ? "cat" : "dog");
    return r;
}

} // namespace

TEST_CASE("answer normalization: case, articles, digits, punctuation") {
    CHECK(normalize_answer("  The  CAT ") == "cat");
    CHECK(normalize_answer("a dog") == "dog");
    CHECK(normalize_answer("an apple") == "apple");
    CHECK(normalize_answer("the") == "the"); // lone article survives
    CHECK(normalize_answer("two") == "2");
    CHECK(normalize_answer("ten birds") == "10 birds");
    CHECK(normalize_answer("yes!") == "yes");
    CHECK(normalize_answer("traffic light.") == "traffic light");
}

TEST_CASE("closed-form accuracy equals brute force for every match count") {
    for (int k = 0; k <= 10; ++k) {
        auto rec = record_with_matches(k);
        const double closed = accuracy("cat", rec);
        const double brute = accuracy_brute_force("cat", rec);
        CHECK(closed == brute); // exact, no tolerance
        const double expected =
            (k * std::min((k - 1) / 3.0, 1.0) + (10 - k) * std::min(k / 3.0, 1.0)) / 10.0;
        CHECK(closed == doctest::Approx(expected).epsilon(1e-15));
    }
    CHECK(accuracy("cat", record_with_matches(0)) == 0.0);
    CHECK(accuracy("cat", record_with_matches(10)) == 1.0);
    // Matching is on normalized strings.
    CHECK(accuracy("The Cat!", record_with_matches(10)) == 1.0);
}

TEST_CASE("closed form equals brute force on random annotation mixes") {
    Rng rng(7);
    const std::vector<std::string> pool = {"cat", "dog", "bird", "fish"};
    for (int trial = 0; trial < 200; ++trial) {
        AnnotationRecord rec;
        rec.question_id = "q";
        rec.question = "?";
        for (int i = 0; i < 10; ++i) {
            rec.answers.push_back(pool[static_cast<std::size_t>(rng.randint(0, 3))]);
        }
        const auto& answer = pool[static_cast<std::size_t>(rng.randint(0, 3))];
        CHECK(accuracy(answer, rec) == accuracy_brute_force(answer, rec));
    }
}

TEST_CASE("soft targets score each distinct annotation by consensus") {
    auto rec = record_with_matches(7); // 7x cat, 3x dog
    auto targets = soft_targets(rec);
    REQUIRE(targets.size() == 2);
    CHECK(targets.at("cat") == doctest::Approx(accuracy("cat", rec)));
    CHECK(targets.at("dog") == doctest::Approx(accuracy("dog", rec)));
}

TEST_CASE("validation demands exactly ten answers") {
    auto rec = record_with_matches(5);
    CHECK_NOTHROW(rec.validate());
    rec.answers.pop_back();
    CHECK_THROWS(rec.validate());
}

TEST_CASE("evaluate aggregates by type, counts missing, rejects duplicates") {
    std::vector<AnnotationRecord> records;
    auto r1 = record_with_matches(10);
    r1.question_id = "a";
    r1.answer_type = AnswerType::other;
    auto r2 = record_with_matches(10);
    r2.question_id = "b";
    r2.answer_type = AnswerType::yes_no;
    records = {r1, r2};

    std::map<std::string, std::string> preds{{"a", "cat"}};
    auto report = evaluate(preds, records);
    CHECK(report.total_questions == 2);
    CHECK(report.missing_predictions == 1);
    CHECK(report.overall == doctest::Approx(0.5));
    CHECK(report.per_type.at("other") == doctest::Approx(1.0));
    CHECK(report.per_type.at("yes/no") == doctest::Approx(0.0));
    CHECK(report_table(report).find("overall") != std::string::npos);

    auto dup = records;
    dup.push_back(r1);
    CHECK_THROWS(evaluate(preds, dup));
}

TEST_CASE("annotation and prediction JSONL round trips") {
    std::vector<AnnotationRecord> records = {record_with_matches(4)};
    records[0].answer_type = AnswerType::number;
    const auto tmp = std::filesystem::temp_directory_path();
    const std::string apath = (tmp / "vqamoe_ann_test.jsonl").string();
    save_annotations_jsonl(apath, records);
    auto loaded = load_annotations_jsonl(apath);
    REQUIRE(loaded.size() == 1);
    CHECK(loaded[0].question_id == records[0].question_id);
    CHECK(loaded[0].answer_type == AnswerType::number);
    CHECK(loaded[0].answers == records[0].answers);

    std::map<std::string, std::string> preds{{"a", "cat"}, {"b", "2"}};
    const std::string ppath = (tmp / "vqamoe_pred_test.jsonl").string();
    save_predictions_jsonl(ppath, preds);
    CHECK(load_predictions_jsonl(ppath) == preds);
    std::filesystem::remove(apath);
    std::filesystem::remove(ppath);
}
