#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vqamoe/moe.hpp"
#include "vqamoe/synthetic.hpp"

using namespace vqamoe;
using namespace vqamoe::moe;

TEST_CASE("gating features validate confidences and type scores") {
    GatingFeatures f{0.5, kAbsentSentinel, 0.9, 0.2, 0.3, 0.5};
    CHECK_NOTHROW(f.validate());
    CHECK(f.as_vector() == std::vector<double>{0.5, -1.0, 0.9, 0.2, 0.3, 0.5});

    GatingFeatures bad_conf = f;
    bad_conf.conf_visual = -0.5;
    CHECK_THROWS(bad_conf.validate());
    bad_conf.conf_visual = 1.2;
    CHECK_THROWS(bad_conf.validate());
    GatingFeatures bad_sum = f;
    bad_sum.p_vision = 0.6;
    CHECK_THROWS(bad_sum.validate());
}

TEST_CASE("gating network emits three scores in (0,1)") {
    Rng rng(7);
    auto net = GatingNetwork::init(rng);
    GatingFeatures f{0.9, 0.1, kAbsentSentinel, 0.1, 0.1, 0.8};
    auto s = net.scores(f);
    for (double v : s) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
    }
    CHECK(net.parameters().size() == 6);
}

TEST_CASE("routing takes the argmax with fixed tie priority") {
    CHECK(route({0.2, 0.9, 0.1}) == ExpertId::text);
    CHECK(route({0.5, 0.5, 0.5}) == ExpertId::visual);
    CHECK(route({0.1, 0.6, 0.6}) == ExpertId::text);
    CHECK(route({0.1, 0.2, 0.9}) == ExpertId::clock);
}

TEST_CASE("reward scores equal the consensus metric per expert") {
    vqa_metric::AnnotationRecord ann;
    ann.question_id = "q";
    ann.question = "what";
    ann.answers = {"cat", "cat", "cat", "cat", "cat", "cat", "cat", "dog", "dog", "bird"};
    auto rewards = reward_scores({"cat", "dog", "fish"}, ann);
    CHECK(rewards[0] == doctest::Approx(vqa_metric::accuracy("cat", ann)));
    CHECK(rewards[1] == doctest::Approx(vqa_metric::accuracy("dog", ann)));
    CHECK(rewards[2] == 0.0);
}

TEST_CASE("ensemble vote counts votes, then score sums, then first seen") {
    CHECK(ensemble_vote({{"a", 0.1}, {"b", 0.9}, {"a", 0.1}}) == "a");
    CHECK(ensemble_vote({{"a", 0.1}, {"b", 0.9}}) == "b");
    CHECK(ensemble_vote({{"b", 0.5}, {"a", 0.5}}) == "b"); // full tie -> first seen
    CHECK_THROWS(ensemble_vote({}));
}

TEST_CASE("gating training learns confidence-revealed rewards") {
    Rng rng(11);
    std::vector<GatingExample> data;
    for (int i = 0; i < 600; ++i) {
        const auto good = static_cast<std::size_t>(rng.randint(0, 2));
        GatingExample ex;
        double confs[3];
        for (std::size_t t = 0; t < 3; ++t) {
            const bool correct = t == good;
            confs[t] = correct ? rng.uniform(0.7, 0.95) : rng.uniform(0.05, 0.3);
            ex.rewards[t] = correct ? 1.0 : 0.0;
        }
        ex.features = {confs[0], confs[1], confs[2], 1.0 / 3, 1.0 / 3, 1.0 / 3};
        data.push_back(ex);
    }
    auto net = GatingNetwork::init(rng);
    GatingTrainConfig cfg;
    cfg.epochs = 8;
    auto curve = train_gating(data, net, cfg, rng);
    CHECK(curve.back() < curve.front());

    std::size_t routed_right = 0;
    for (const auto& ex : data) {
        const auto choice = route(net.scores(ex.features));
        if (ex.rewards[static_cast<std::size_t>(choice)] == 1.0) ++routed_right;
    }
    CHECK(double(routed_right) / double(data.size()) > 0.95);

    std::vector<GatingExample> bad = {data[0]};
    bad[0].rewards[1] = 1.5;
    CHECK_THROWS(train_gating(bad, net, cfg, rng));
}

TEST_CASE("question-type classifier keys on clock keywords and OCR labels") {
    CHECK(QuestionTypeClassifier::has_clock_keywords("What TIME is it?"));
    CHECK(QuestionTypeClassifier::has_clock_keywords("is there a clock"));
    CHECK_FALSE(QuestionTypeClassifier::has_clock_keywords("what does the sign say"));

    auto ds = synthetic::generate({});
    embedders::Tokenizer tok(synthetic::vocabulary());
    Rng rng(13);
    auto qtype = QuestionTypeClassifier::init(tok, 16, rng);
    auto curve = qtype.train(synthetic::type_corpus(ds), 10, 0.05, rng);
    CHECK(curve.back() < curve.front());

    auto clock_scores = qtype.scores("what time is it on the clock");
    CHECK(clock_scores[1] > clock_scores[0]);
    CHECK(clock_scores[1] > clock_scores[2]);
    auto ocr_scores = qtype.scores("what does the sign say");
    CHECK(ocr_scores[0] > ocr_scores[1]);
    double sum = 0.0;
    for (double v : ocr_scores) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("benchmark routing beats every single expert") {
    synthetic::GenConfig gen;
    gen.count = 300;
    auto ds = synthetic::generate(gen);
    embedders::Tokenizer tok(synthetic::vocabulary());
    Rng rng(17);
    auto qtype = QuestionTypeClassifier::init(tok, 16, rng);
    qtype.train(synthetic::type_corpus(ds), 10, 0.05, rng);

    auto bench = synthetic::make_moe_benchmark(ds, qtype, {});
    REQUIRE(bench.examples.size() == 300);
    // Sentinels appear exactly where the modality is absent.
    for (std::size_t i = 0; i < bench.examples.size(); ++i) {
        const auto& f = bench.examples[i].features;
        CHECK((f.conf_text == kAbsentSentinel) == ds.ocr[i].cells.empty());
        CHECK((f.conf_clock == kAbsentSentinel) == !ds.has_clock[i]);
        CHECK(f.conf_visual != kAbsentSentinel);
    }

    auto net = GatingNetwork::init(rng);
    train_gating(bench.examples, net, {}, rng);
    auto ev = synthetic::evaluate_routing(net, bench);
    for (double single : ev.single_expert_rewards) CHECK(ev.routed_reward > single);
    CHECK(ev.routed_reward <= ev.oracle_reward + 1e-12);
}
