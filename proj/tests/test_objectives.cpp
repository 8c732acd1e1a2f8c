#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "vqamoe/objectives.hpp"
#include "vqamoe/optim.hpp"

using namespace vqamoe;
using namespace vqamoe::objectives;
using embedders::Tokenizer;

namespace {

embedders::TextSequence make_seq(std::size_t words) {
    embedders::TextSequence seq;
    seq.ids.push_back(Tokenizer::kCls);
    for (std::size_t i = 0; i < words; ++i) seq.ids.push_back(4 + (i % 10));
    seq.ids.push_back(Tokenizer::kSep);
    return seq;
}

} // namespace

TEST_CASE("mask_text masks round(rate * eligible) positions, never the specials") {
    Rng rng(7);
    for (std::size_t words : {std::size_t{1}, std::size_t{7}, std::size_t{20}}) {
        auto seq = make_seq(words);
        auto masked = mask_text(seq, 30, 0.15, rng);
        const auto expected =
            static_cast<std::size_t>(std::lround(0.15 * static_cast<double>(words)));
        CHECK(masked.plan.positions.size() == expected);
        CHECK(masked.target_ids.size() == expected);
        std::set<std::size_t> seen;
        for (std::size_t i = 0; i < masked.plan.positions.size(); ++i) {
            const std::size_t p = masked.plan.positions[i];
            CHECK(p >= 1);
            CHECK(p < seq.ids.size() - 1);
            CHECK(seen.insert(p).second);
            CHECK(masked.target_ids[i] == seq.ids[p]);
        }
        // Unmasked positions are untouched.
        for (std::size_t p = 0; p < seq.ids.size(); ++p) {
            if (!seen.count(p)) CHECK(masked.corrupted_ids[p] == seq.ids[p]);
        }
    }
}

TEST_CASE("mask_text corruption follows the 80/10/10 policy") {
    Rng rng(11);
    std::size_t n_mask = 0, n_keep = 0, n_random = 0, total = 0;
    for (int trial = 0; trial < 400; ++trial) {
        auto seq = make_seq(20);
        auto masked = mask_text(seq, 30, 0.15, rng);
        for (std::size_t i = 0; i < masked.plan.positions.size(); ++i) {
            const std::size_t p = masked.plan.positions[i];
            const std::size_t c = masked.corrupted_ids[p];
            CHECK(c != Tokenizer::kCls);
            CHECK(c != Tokenizer::kSep);
            if (c == Tokenizer::kMask) ++n_mask;
            else if (c == seq.ids[p]) ++n_keep;
            else ++n_random;
            ++total;
        }
    }
    const double f_mask = double(n_mask) / double(total);
    CHECK(f_mask == doctest::Approx(0.8).epsilon(0.08));
    // "keep" absorbs random draws that happen to hit the original id.
    CHECK(double(n_keep) / double(total) == doctest::Approx(0.1).epsilon(0.5));
    CHECK(double(n_random) / double(total) == doctest::Approx(0.1).epsilon(0.5));
}

TEST_CASE("mask_visual samples distinct relative positions") {
    Rng rng(13);
    auto plan = mask_visual(20, 0.15, rng);
    CHECK(plan.positions.size() == 3);
    for (std::size_t p : plan.positions) CHECK(p < 20);
    CHECK(mask_visual(2, 0.15, rng).positions.empty());
}

TEST_CASE("masked_lm_loss flags empty plans and scores a known case") {
    Rng rng(17);
    Heads heads = Heads::init(4, 6, 3, rng);
    Tensor seq_out = Tensor::randn({5, 4}, rng);

    bool empty = false;
    Tensor zero = masked_lm_loss(seq_out, {}, {}, heads.vocab_w, heads.vocab_b, &empty);
    CHECK(empty);
    CHECK(zero.value() == 0.0);

    MaskingPlan plan;
    plan.positions = {1, 3};
    Tensor l = masked_lm_loss(seq_out, plan, {4, 5}, heads.vocab_w, heads.vocab_b, &empty);
    CHECK_FALSE(empty);
    CHECK(l.value() > 0.0);
    CHECK_THROWS(masked_lm_loss(seq_out, plan, {4}, heads.vocab_w, heads.vocab_b));
}

TEST_CASE("masked_object_loss is restricted to region mode and visual positions") {
    Rng rng(19);
    Heads heads = Heads::init(4, 6, 3, rng);
    Tensor seq_out = Tensor::randn({5, 4}, rng);
    MaskingPlan plan;
    plan.positions = {3, 4};
    Tensor rows = Tensor::randn({2, 4}, rng);

    CHECK(masked_object_loss(seq_out, 2, plan, rows, heads.obj_w, heads.obj_b,
                             FeatureMode::region)
              .value() > 0.0);
    CHECK_THROWS(masked_object_loss(seq_out, 2, plan, rows, heads.obj_w, heads.obj_b,
                                    FeatureMode::grid));
    MaskingPlan text_plan;
    text_plan.positions = {1};
    CHECK_THROWS(masked_object_loss(seq_out, 2, text_plan, rows, heads.obj_w, heads.obj_b,
                                    FeatureMode::region));
}

TEST_CASE("itm_loss matches the BCE formula on both labels") {
    Rng rng(23);
    Heads heads = Heads::init(4, 6, 3, rng);
    Tensor cls = Tensor::randn({1, 4}, rng);
    Tensor logits = add_rowvec(matmul(cls, heads.itm_w.tensor), heads.itm_b.tensor);
    const double p = 1.0 / (1.0 + std::exp(-logits.data()[0]));
    CHECK(itm_loss(cls, true, heads.itm_w, heads.itm_b).value() ==
          doctest::Approx(-std::log(p)).epsilon(1e-10));
    CHECK(itm_loss(cls, false, heads.itm_w, heads.itm_b).value() ==
          doctest::Approx(-std::log(1.0 - p)).epsilon(1e-10));
}

TEST_CASE("vqa_head_loss validates soft targets") {
    Rng rng(29);
    Heads heads = Heads::init(4, 6, 3, rng);
    Tensor cls = Tensor::randn({1, 4}, rng);
    CHECK(vqa_head_loss(cls, {0.3, 1.0, 0.0}, heads.qa_w, heads.qa_b).value() > 0.0);
    CHECK_THROWS(vqa_head_loss(cls, {1.2, 0.0, 0.0}, heads.qa_w, heads.qa_b));
    CHECK_THROWS(vqa_head_loss(cls, {0.5, 0.5}, heads.qa_w, heads.qa_b));
}

TEST_CASE("pretrain_step sums enabled tasks and gates QA on ITM match") {
    Rng rng(31);
    attention::StackConfig sc{8, 1, 2, 16, attention::EpsVariant::param, false};
    auto stack = attention::EncoderStack::init(sc, rng);
    Heads heads = Heads::init(8, 12, 3, rng);

    PretrainExample ex;
    ex.batch.sequence = Tensor::randn({6, 8}, rng, 0.5);
    ex.batch.boundary = 3;
    ex.batch.is_visual = {false, false, false, true, true, true};
    ex.text_plan.positions = {1};
    ex.mlm_targets = {5};
    ex.visual_plan.positions = {4};
    ex.original_visual_rows = Tensor::randn({1, 8}, rng);
    ex.itm_matched = true;
    ex.qa_targets = {1.0, 0.0, 0.3};

    PretrainTasks all{true, true, true, true};
    auto res = pretrain_step(ex, stack, heads, all, FeatureMode::region);
    CHECK(res.total.value() ==
          doctest::Approx(res.mlm + res.mop + res.itm + res.qa).epsilon(1e-12));
    CHECK(res.qa > 0.0);

    ex.itm_matched = false;
    auto mismatched = pretrain_step(ex, stack, heads, all, FeatureMode::region);
    CHECK(mismatched.qa == 0.0);

    ex.itm_matched = true;
    PretrainTasks no_qa{true, true, true, false};
    auto staged = pretrain_step(ex, stack, heads, no_qa, FeatureMode::region);
    CHECK(staged.qa == 0.0);
    CHECK(staged.total.value() ==
          doctest::Approx(staged.mlm + staged.mop + staged.itm).epsilon(1e-12));
}

TEST_CASE("pretraining objectives are differentiable through the encoder") {
    Rng rng(37);
    attention::StackConfig sc{8, 1, 2, 16, attention::EpsVariant::param, false};
    auto stack = attention::EncoderStack::init(sc, rng);
    Heads heads = Heads::init(8, 12, 3, rng);

    PretrainExample ex;
    ex.batch.sequence = Tensor::randn({5, 8}, rng, 0.5);
    ex.batch.boundary = 2;
    ex.batch.is_visual = {false, false, true, true, true};
    ex.text_plan.positions = {1};
    ex.mlm_targets = {7};
    ex.visual_plan.positions = {3};
    ex.original_visual_rows = Tensor::randn({1, 8}, rng);
    ex.qa_targets = {0.9, 0.0, 0.3};

    std::vector<Parameter> params = stack.parameters();
    for (const auto& p : heads.parameters()) params.push_back(p);
    PretrainTasks all{true, true, true, true};
    const double err = grad_check(
        [&] { return pretrain_step(ex, stack, heads, all, FeatureMode::region).total; },
        params);
    CHECK(err < 1e-5);
}
