#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <set>

#include "vqamoe/rng.hpp"
#include "vqamoe/text_expert.hpp"

using namespace vqamoe;
using namespace vqamoe::text_expert;

namespace {

OcrCell cell(std::vector<std::string> words, double x1, double y1, double x2, double y2) {
    OcrCell c;
    c.words = std::move(words);
    c.box = {x1, y1, x2, y2};
    return c;
}

} // namespace

TEST_CASE("serialization orders cells top-left to bottom-right with row bands") {
    // Two bands: the first two cells share a band despite y jitter.
    std::vector<OcrCell> cells = {
        cell({"right", "top"}, 50, 2, 90, 12),
        cell({"left", "top"}, 0, 0, 40, 10),
        cell({"bottom"}, 10, 40, 60, 50),
    };
    auto doc = serialize_cells({"what", "is", "it"}, cells);
    CHECK(doc.question_length == 3);
    std::vector<std::string> expected = {"what", "is",  "it",    "[SEP]", "left",  "top",
                                         "[SEP]", "right", "top", "[SEP]", "bottom"};
    CHECK(doc.tokens == expected);
    for (std::size_t p : doc.separator_positions) {
        CHECK(doc.is_separator[p]);
        CHECK(doc.tokens[p] == SerializedDoc::kSeparator);
        CHECK(doc.cell_index[p] == SerializedDoc::kNoCell);
    }
    for (std::size_t i = 0; i < doc.question_length; ++i) {
        CHECK(doc.cell_index[i] == SerializedDoc::kNoCell);
    }
}

TEST_CASE("split_cells inverts serialization on random documents") {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<OcrCell> cells;
        const int n = 1 + static_cast<int>(rng.randint(0, 6));
        for (int i = 0; i < n; ++i) {
            std::vector<std::string> words;
            const int w = 1 + static_cast<int>(rng.randint(0, 3));
            for (int j = 0; j < w; ++j) words.push_back("w" + std::to_string(rng.randint(0, 20)));
            const double x1 = rng.uniform(0, 80), y1 = rng.uniform(0, 80);
            cells.push_back(cell(std::move(words), x1, y1, x1 + rng.uniform(5, 20),
                                 y1 + rng.uniform(5, 12)));
        }
        auto doc = serialize_cells({"q"}, cells);
        auto restored = split_cells(doc);
        REQUIRE(restored.size() == cells.size());
        // Same multiset of cells: serialization may reorder, never alter.
        std::multiset<std::vector<std::string>> a, b;
        for (const auto& c : cells) a.insert(c.words);
        for (const auto& r : restored) b.insert(r);
        CHECK(a == b);
    }
}

TEST_CASE("span prediction respects eligibility, length, and separators") {
    std::vector<OcrCell> cells = {
        cell({"open", "daily"}, 0, 0, 30, 10),
        cell({"nine", "to", "five"}, 0, 20, 30, 30),
    };
    auto doc = serialize_cells({"when", "is", "it", "open"}, cells);
    const std::size_t n = doc.tokens.size();

    SUBCASE("picks the best-scoring cell span") {
        std::vector<double> start(n, 0.0), end(n, 0.0);
        // Question token "open" scores high but is ineligible.
        start[3] = 10.0;
        end[3] = 10.0;
        const std::size_t nine = 8; // question(4) [SEP] open daily [SEP] nine
        REQUIRE(doc.tokens[nine] == "nine");
        start[nine] = 5.0;
        end[nine + 2] = 5.0;
        auto span = predict_span(doc, start, end);
        CHECK_FALSE(span.empty);
        CHECK(span.answer == "nine to five");
        CHECK(span.start == nine);
        CHECK(span.end == nine + 2);
    }

    SUBCASE("separators inside a span are dropped from the answer") {
        std::vector<double> start(n, 0.0), end(n, 0.0);
        start[5] = 8.0; // "open" (cell), span crosses the [SEP] before "nine"
        end[9] = 8.0;   // "to"
        auto span = predict_span(doc, start, end);
        CHECK(span.answer == "open daily nine to");
        for (char c : span.answer) CHECK(c != '[');
    }

    SUBCASE("max length bounds the candidates") {
        std::vector<double> start(n, 0.0), end(n, 0.0);
        start[5] = 8.0;
        end[9] = 8.0;
        auto span = predict_span(doc, start, end, 1);
        CHECK(span.start == span.end);
    }

    CHECK_THROWS(predict_span(doc, std::vector<double>(n - 1, 0.0),
                              std::vector<double>(n, 0.0)));
}

TEST_CASE("edit distance against known values") {
    CHECK(edit_distance("", "") == 0);
    CHECK(edit_distance("abc", "") == 3);
    CHECK(edit_distance("kitten", "sitting") == 3);
    CHECK(edit_distance("flaw", "lawn") == 2);
    CHECK(edit_distance("same", "same") == 0);
}

TEST_CASE("anls follows the 0.5 threshold rule") {
    CHECK(anls_pair("exact", "exact") == 1.0);
    CHECK(anls_pair("", "") == 1.0);
    CHECK(anls_pair("abcd", "abce") == doctest::Approx(0.75));
    CHECK(anls_pair("abcd", "wxyz") == 0.0); // NL = 1 >= 0.5
    CHECK(anls_pair("ab", "abcd") == 0.0);   // NL = 0.5, threshold is strict
    // Normalization: case, whitespace runs, and surrounding punctuation are ignored.
    CHECK(anls_pair("  Hello   World! ", "hello world") == 1.0);
    CHECK(anls("near", {"far", "near", "none"}) == 1.0);
    CHECK(anls("abcd", {"wxyz"}) == 0.0);
}

TEST_CASE("OCR JSONL round trip") {
    std::vector<OcrRecord> records(2);
    records[0].question = "what does it say";
    records[0].cells = {cell({"stop"}, 1, 2, 3, 4)};
    records[0].answers = {"stop"};
    records[1].question = "empty image";
    const std::string path =
        (std::filesystem::temp_directory_path() / "vqamoe_ocr_test.jsonl").string();
    save_ocr_jsonl(path, records);
    auto loaded = load_ocr_jsonl(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].question == records[0].question);
    REQUIRE(loaded[0].cells.size() == 1);
    CHECK(loaded[0].cells[0].words == records[0].cells[0].words);
    CHECK(loaded[0].cells[0].box == records[0].cells[0].box);
    CHECK(loaded[0].answers == records[0].answers);
    CHECK(loaded[1].cells.empty());
    std::filesystem::remove(path);
}
