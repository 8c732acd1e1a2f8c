#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "vqamoe/embedders.hpp"

using namespace vqamoe;
using namespace vqamoe::embedders;

TEST_CASE("region features validate box geometry") {
    RegionFeature f;
    f.appearance = {1.0, 2.0};
    f.box = {0.1, 0.2, 0.6, 0.9};
    CHECK_NOTHROW(f.validate());
    f.box = {0.6, 0.2, 0.1, 0.9}; // x2 < x1
    CHECK_THROWS(f.validate());
    f.box = {0.1, 0.2, 1.4, 0.9}; // outside [0,1]
    CHECK_THROWS(f.validate());
    f.box = {0.1, 0.2, 0.6, 0.9};
    f.appearance.clear();
    CHECK_THROWS(f.validate());
}

TEST_CASE("grid and patch shapes follow the downsampling rules") {
    auto g = GridFeatureMap::from_image_size(256, 640, 640);
    CHECK(g.height == 20);
    CHECK(g.width == 20);
    CHECK(g.height * g.width == 400);
    CHECK(g.values.size() == 256 * 400);
    CHECK_THROWS(GridFeatureMap::from_image_size(8, 100, 640));

    auto p = PatchGrid::from_image(3, 224, 224, 112);
    CHECK(p.patch_count == 4);
    CHECK(p.patch_dim == 112 * 112 * 3);
    CHECK_THROWS(PatchGrid::from_image(3, 224, 225, 112));
}

TEST_CASE("tokenizer keeps specials at fixed ids and drops punctuation") {
    Tokenizer tok({"what", "time", "is", "it"});
    CHECK(tok.id_of("[CLS]") == Tokenizer::kCls);
    CHECK(tok.id_of("[SEP]") == Tokenizer::kSep);
    CHECK(tok.id_of("[MASK]") == Tokenizer::kMask);
    CHECK(tok.id_of("unknown-word") == Tokenizer::kUnk);
    auto ids = tok.encode_words("What time, is it?");
    REQUIRE(ids.size() == 4);
    CHECK(ids[0] == tok.id_of("what"));
    CHECK(ids[3] == tok.id_of("it"));

    auto seq = TextSequence::from_text(tok, "what time");
    CHECK(seq.ids.front() == Tokenizer::kCls);
    CHECK(seq.ids.back() == Tokenizer::kSep);
    CHECK_NOTHROW(seq.validate());
    seq.ids.push_back(Tokenizer::kCls);
    CHECK_THROWS(seq.validate());
}

TEST_CASE("embedders produce D-wide rows for every input row") {
    Rng rng(7);
    const std::size_t dim = 16;
    auto embedder = TextEmbedder::init(32, 12, dim, rng);
    Tokenizer tok({"a", "b", "c"});
    Tensor text = embed_text(TextSequence::from_text(tok, "a b c"), embedder);
    CHECK(text.rows() == 5);
    CHECK(text.cols() == dim);

    std::vector<RegionFeature> regions(3);
    for (auto& r : regions) {
        r.appearance = {1.0, 2.0, 3.0};
        r.box = {0.0, 0.0, 0.5, 0.5};
    }
    Parameter region_proj{"rp", Tensor::randn({3 + 4, dim}, rng, 0.1, true)};
    Tensor rr = embed_region(regions, region_proj);
    CHECK(rr.rows() == 3);
    CHECK(rr.cols() == dim);

    auto map = GridFeatureMap::from_image_size(6, 64, 64);
    for (std::size_t i = 0; i < map.values.size(); ++i) map.values[i] = 0.01 * double(i);
    Parameter grid_proj{"gp", Tensor::randn({6, dim}, rng, 0.1, true)};
    Parameter modal{"mt", Tensor::randn({dim}, rng, 0.1, true)};
    Tensor gg = embed_grid(map, grid_proj, modal);
    CHECK(gg.rows() == map.height * map.width);
    CHECK(gg.cols() == dim);

    auto patches = PatchGrid::from_image(1, 64, 64, 32);
    Parameter patch_proj{"pp", Tensor::randn({patches.patch_dim, dim}, rng, 0.1, true)};
    Parameter positions{"pos", Tensor::randn({8, dim}, rng, 0.1, true)};
    Tensor pp = embed_patch(patches, patch_proj, positions);
    CHECK(pp.rows() == patches.patch_count);
    CHECK(pp.cols() == dim);

    MultimodalBatch fused = fuse(text, {rr, gg, pp});
    CHECK(fused.boundary == text.rows());
    CHECK(fused.sequence.rows() == text.rows() + rr.rows() + gg.rows() + pp.rows());
    REQUIRE(fused.is_visual.size() == fused.sequence.rows());
    CHECK_FALSE(fused.is_visual[0]);
    CHECK(fused.is_visual[fused.boundary]);
    CHECK(fused.is_visual.back());
}

TEST_CASE("sample_grids keeps order and is the identity at full count") {
    Rng rng(13);
    Tensor seq = Tensor::randn({10, 4}, rng);
    Tensor all = sample_grids(seq, 10, rng);
    CHECK(all.data() == seq.data());

    Tensor some = sample_grids(seq, 4, rng);
    REQUIRE(some.rows() == 4);
    // Each sampled row must be one of the originals, in ascending order.
    std::size_t last = 0;
    for (std::size_t i = 0; i < 4; ++i) {
        bool found = false;
        for (std::size_t j = last; j < 10 && !found; ++j) {
            bool same = true;
            for (std::size_t c = 0; c < 4; ++c) same = same && some(i, c) == seq(j, c);
            if (same) {
                found = true;
                last = j + 1;
            }
        }
        CHECK(found);
    }
    CHECK_THROWS(sample_grids(seq, 11, rng));
}

TEST_CASE("features JSONL round trip preserves all values") {
    Rng rng(19);
    std::vector<ImageFeatures> images(3);
    for (auto& img : images) {
        for (int r = 0; r < 2; ++r) {
            RegionFeature f;
            for (int i = 0; i < 5; ++i) f.appearance.push_back(rng.normal());
            f.box = {0.1, 0.2, 0.7, 0.8};
            img.regions.push_back(std::move(f));
        }
        img.grid = GridFeatureMap::from_image_size(2, 64, 64);
        for (auto& v : img.grid.values) v = rng.normal();
        img.patches = PatchGrid::from_image(1, 64, 64, 32);
        for (auto& v : img.patches.values) v = rng.normal();
    }
    const std::string path =
        (std::filesystem::temp_directory_path() / "vqamoe_features_test.jsonl").string();
    save_features_jsonl(path, images);
    auto loaded = load_features_jsonl(path);
    REQUIRE(loaded.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        REQUIRE(loaded[i].regions.size() == images[i].regions.size());
        for (std::size_t r = 0; r < images[i].regions.size(); ++r) {
            CHECK(loaded[i].regions[r].appearance == images[i].regions[r].appearance);
            CHECK(loaded[i].regions[r].box == images[i].regions[r].box);
        }
        CHECK(loaded[i].grid.values == images[i].grid.values);
        CHECK(loaded[i].patches.values == images[i].patches.values);
        CHECK(loaded[i].patches.patch_count == images[i].patches.patch_count);
    }
    std::filesystem::remove(path);
}
