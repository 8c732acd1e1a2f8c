#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "vqamoe/attention.hpp"
#include "vqamoe/optim.hpp"

using namespace vqamoe;
using namespace vqamoe::attention;

namespace {

embedders::MultimodalBatch make_batch(Rng& rng, std::size_t text, std::size_t visual,
                                      std::size_t dim) {
    embedders::MultimodalBatch b;
    b.sequence = Tensor::randn({text + visual, dim}, rng, 0.5);
    b.boundary = text;
    for (std::size_t i = 0; i < text + visual; ++i) b.is_visual.push_back(i >= text);
    return b;
}

} // namespace

TEST_CASE("partition and reassembly of the score matrix is the identity") {
    Rng rng(7);
    Tensor q = Tensor::randn({6, 4}, rng);
    Tensor k = Tensor::randn({6, 4}, rng);
    for (std::size_t boundary : {std::size_t{0}, std::size_t{2}, std::size_t{6}}) {
        ScoreBlocks blocks = partition_scores(q, k, boundary);
        Tensor full = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(4.0));
        Tensor back = assemble_scores(blocks);
        REQUIRE(back.numel() == full.numel());
        for (std::size_t i = 0; i < full.numel(); ++i) {
            CHECK(back.data()[i] == doctest::Approx(full.data()[i]).epsilon(1e-14));
        }
    }
    CHECK_THROWS(partition_scores(q, k, 7));
    CHECK_THROWS(partition_scores(q, Tensor::randn({5, 4}, rng), 2));
}

TEST_CASE("unit weights leave the scores untouched") {
    Rng rng(9);
    ScoreBlocks blocks = partition_scores(Tensor::randn({5, 4}, rng),
                                          Tensor::randn({5, 4}, rng), 2);
    Tensor one = Tensor::full({1}, 1.0);
    Tensor weighted = weighted_scores(blocks, one, one);
    Tensor plain = assemble_scores(blocks);
    for (std::size_t i = 0; i < plain.numel(); ++i) {
        CHECK(weighted.data()[i] == doctest::Approx(plain.data()[i]).epsilon(1e-15));
    }
}

TEST_CASE("weighted scores scale intra and inter blocks separately") {
    Rng rng(11);
    ScoreBlocks blocks = partition_scores(Tensor::randn({5, 4}, rng),
                                          Tensor::randn({5, 4}, rng), 2);
    Tensor w = weighted_scores(blocks, Tensor::full({1}, 2.0), Tensor::full({1}, 0.5));
    Tensor plain = assemble_scores(blocks);
    for (std::size_t i = 0; i < 5; ++i) {
        for (std::size_t j = 0; j < 5; ++j) {
            const bool intra = (i < 2) == (j < 2);
            CHECK(w(i, j) == doctest::Approx((intra ? 2.0 : 0.5) * plain(i, j)).epsilon(1e-14));
        }
    }
}

TEST_CASE("ffn-variant weights are sigmoid outputs in (0,1)") {
    Rng rng(13);
    Parameter w{"eps_w", Tensor::randn({8, 2}, rng, 0.5, true)};
    Parameter b{"eps_b", Tensor::randn({2}, rng, 0.5, true)};
    for (int trial = 0; trial < 20; ++trial) {
        Tensor cls = Tensor::randn({1, 8}, rng, 1.0);
        auto [e1, e2] = learn_weights_ffn(cls, w, b);
        CHECK(e1.numel() == 1);
        CHECK(e2.numel() == 1);
        CHECK(e1.data()[0] > 0.0);
        CHECK(e1.data()[0] < 1.0);
        CHECK(e2.data()[0] > 0.0);
        CHECK(e2.data()[0] < 1.0);
    }
}

TEST_CASE("param-variant weights initialize to 1 and layer/total exactly") {
    for (std::size_t total : {std::size_t{1}, std::size_t{4}, std::size_t{12}}) {
        for (std::size_t layer = 1; layer <= total; ++layer) {
            auto [e1, e2] = learn_weights_param(layer, total, "t");
            CHECK(e1.tensor.data()[0] == 1.0);
            CHECK(e2.tensor.data()[0] ==
                  static_cast<double>(layer) / static_cast<double>(total));
        }
    }
    CHECK_THROWS(learn_weights_param(0, 4, "t"));
    CHECK_THROWS(learn_weights_param(5, 4, "t"));
}

TEST_CASE("stack layers report the initialization schedule") {
    Rng rng(17);
    StackConfig cfg{16, 4, 2, 32, EpsVariant::param, false};
    auto stack = EncoderStack::init(cfg, rng);
    REQUIRE(stack.layers().size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(stack.layers()[i].eps1_value() == 1.0);
        CHECK(stack.layers()[i].eps2_value() == static_cast<double>(i + 1) / 4.0);
    }
}

TEST_CASE("encoder handles all-text and all-visual boundaries") {
    Rng rng(19);
    StackConfig cfg{8, 2, 2, 16, EpsVariant::param, false};
    auto stack = EncoderStack::init(cfg, rng);
    for (std::size_t text : {std::size_t{0}, std::size_t{3}, std::size_t{5}}) {
        auto batch = make_batch(rng, text, 5 - text, 8);
        auto out = stack.encode(batch);
        CHECK(out.sequence.rows() == 5);
        CHECK(out.cls.rows() == 1);
        CHECK(out.cls.cols() == 8);
        for (double v : out.sequence.data()) CHECK(std::isfinite(v));
    }
    embedders::MultimodalBatch empty;
    CHECK_THROWS(stack.encode(empty));
}

TEST_CASE("per-head eps gives each head its own weight") {
    Rng rng(23);
    StackConfig cfg{8, 1, 4, 16, EpsVariant::param, true};
    auto stack = EncoderStack::init(cfg, rng);
    auto& eps2 = stack.layers()[0].eps2();
    REQUIRE(eps2.tensor.numel() == 4);
    // Perturbing one head's weight changes the output; identical weights do not.
    auto batch = make_batch(rng, 2, 3, 8);
    auto base = stack.encode(batch).sequence.data();
    eps2.tensor.data()[2] = 0.123;
    auto perturbed = stack.encode(batch).sequence.data();
    CHECK(base != perturbed);
}

TEST_CASE("both variants are differentiable end to end") {
    Rng rng(29);
    for (auto variant : {EpsVariant::param, EpsVariant::ffn}) {
        StackConfig cfg{8, 2, 2, 16, variant, false};
        auto stack = EncoderStack::init(cfg, rng);
        auto batch = make_batch(rng, 2, 3, 8);
        auto params = stack.parameters();
        const double err =
            grad_check([&] { return mean(stack.encode(batch).sequence); }, params);
        CHECK(err < 1e-6);
    }
}
