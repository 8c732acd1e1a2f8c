#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sstream>

#include "vqamoe/knowledge_mining.hpp"

using namespace vqamoe;
using namespace vqamoe::knowledge_mining;

namespace {

std::vector<ScoredExample> three_topics(std::uint64_t seed, std::size_t per_topic,
                                        double spread) {
    Rng rng(seed);
    const std::vector<std::string> labels = {"vision", "ocr", "clock"};
    const std::vector<std::vector<double>> centers = {
        {10.0, 0.0, 0.0}, {0.0, 10.0, 0.0}, {0.0, 0.0, 10.0}};
    std::vector<ScoredExample> out;
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t i = 0; i < per_topic; ++i) {
            ScoredExample e;
            e.id = labels[t] + std::to_string(i);
            e.embedding = centers[t];
            for (double& v : e.embedding) v += rng.normal(0.0, spread);
            e.confidence = rng.uniform(0.0, 0.09);
            e.reference_label = labels[t];
            out.push_back(std::move(e));
        }
    }
    return out;
}

} // namespace

TEST_CASE("filtering keeps strictly-below-threshold examples in order") {
    std::vector<ScoredExample> ex(4);
    ex[0].confidence = 0.05;
    ex[1].confidence = 0.1;
    ex[2].confidence = 0.0999;
    ex[3].confidence = 0.5;
    for (std::size_t i = 0; i < 4; ++i) ex[i].id = std::to_string(i);
    auto kept = filter_low_confidence(ex, 0.1);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].id == "0");
    CHECK(kept[1].id == "2"); // 0.1 itself excluded
    CHECK_THROWS(filter_low_confidence(ex, 0.0));
    CHECK_THROWS(filter_low_confidence(ex, 1.5));
}

TEST_CASE("kmeans is deterministic and inertia never increases across runs") {
    auto data = three_topics(7, 30, 0.5);
    std::vector<std::vector<double>> embeddings;
    for (const auto& e : data) embeddings.push_back(e.embedding);

    auto a = kmeans(embeddings, 3, 42);
    auto b = kmeans(embeddings, 3, 42);
    CHECK(a.assignment == b.assignment);
    CHECK(a.inertia == b.inertia);
    auto c = kmeans(embeddings, 3, 43);
    CHECK(c.centroids.size() == 3);

    CHECK_THROWS(kmeans(embeddings, 0, 1));
    CHECK_THROWS(kmeans(embeddings, embeddings.size() + 1, 1));
    std::vector<std::vector<double>> ragged = {{1.0, 2.0}, {3.0}};
    CHECK_THROWS(kmeans(ragged, 1, 1));
}

TEST_CASE("kmeans separates well-spaced topics with k-means++ seeding") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        auto data = three_topics(seed, 25, 0.4);
        std::vector<std::vector<double>> embeddings;
        std::vector<std::string> refs;
        for (const auto& e : data) {
            embeddings.push_back(e.embedding);
            refs.push_back(e.reference_label);
        }
        auto clustering = kmeans(embeddings, 3, seed * 31 + 1);
        auto projected = project_clusters(clustering, refs);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < refs.size(); ++i) {
            if (projected[clustering.assignment[i]] == refs[i]) ++correct;
        }
        CHECK(double(correct) / double(refs.size()) >= 0.95);
    }
}

TEST_CASE("cluster projection breaks ties lexicographically") {
    Clustering c;
    c.centroids.resize(1);
    c.assignment = {0, 0, 0, 0};
    auto out = project_clusters(c, {"zebra", "apple", "zebra", "apple"});
    CHECK(out[0] == "apple");
    CHECK_THROWS(project_clusters(c, {"a", "b"}));
    CHECK_THROWS(project_clusters(c, {"a", "", "c", "d"}));
}

TEST_CASE("consistency metrics match a hand-computed confusion matrix") {
    std::vector<std::string> ref = {"a", "a", "a", "b", "b", "c"};
    std::vector<std::string> pred = {"a", "a", "b", "b", "c", "c"};
    auto m = consistency_metrics(pred, ref);
    CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));
    // a: P=1, R=2/3; b: P=1/2, R=1/2; c: P=1/2, R=1
    CHECK(m.macro_precision == doctest::Approx((1.0 + 0.5 + 0.5) / 3.0));
    CHECK(m.macro_recall == doctest::Approx((2.0 / 3.0 + 0.5 + 1.0) / 3.0));
    const double f_a = 2.0 * (2.0 / 3.0) / (1.0 + 2.0 / 3.0);
    const double f_b = 0.5;
    const double f_c = 2.0 * 0.5 / 1.5;
    CHECK(m.macro_f1 == doctest::Approx((f_a + f_b + f_c) / 3.0));
}

TEST_CASE("mine reports sizes, exemplars, and failure modes") {
    auto data = three_topics(3, 20, 0.4);
    auto report = mine(data, 0.1, 3, 5);
    CHECK(report.total_count == 60);
    CHECK(report.filtered_count == 60);
    REQUIRE(report.clusters.size() == 3);
    double pct = 0.0;
    std::size_t total = 0;
    for (const auto& c : report.clusters) {
        pct += c.percent;
        total += c.size;
        CHECK(c.exemplar_ids.size() <= 5);
        CHECK_FALSE(c.majority_label.empty());
    }
    CHECK(total == 60);
    CHECK(pct == doctest::Approx(100.0));
    CHECK(report.has_labels);
    CHECK(report.metrics.accuracy >= 0.95);

    auto confident = data;
    for (auto& e : confident) e.confidence = 0.9;
    CHECK_THROWS(mine(confident, 0.1, 3, 5));
    CHECK_THROWS(mine(data, 0.1, 100, 5)); // K larger than the filtered pool
}

TEST_CASE("k sweep emits one CSV row per K") {
    auto data = three_topics(5, 20, 0.4);
    auto csv = k_sweep_csv(data, 0.1, 3, 5, 11);
    std::istringstream is(csv);
    std::string line;
    std::getline(is, line);
    CHECK(line == "k,accuracy,macro_precision,macro_recall,macro_f1");
    int rows = 0;
    while (std::getline(is, line)) {
        if (!line.empty()) ++rows;
    }
    CHECK(rows == 3);
}
