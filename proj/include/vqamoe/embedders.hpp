#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "vqamoe/tensor.hpp"

namespace vqamoe::embedders {

// One detected object: appearance vector plus its normalized box
// (x1/W, y1/H, x2/W, y2/H), all coordinates in [0,1].
struct RegionFeature {
    std::vector<double> appearance;
    std::array<double, 4> box;

    void validate() const;
};

// CNN activation map with H = H0/32, W = W0/32 for a source image H0 x W0.
struct GridFeatureMap {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> values; // C*H*W, channel-major

    static GridFeatureMap from_image_size(std::size_t channels, std::size_t h0, std::size_t w0);
    double at(std::size_t c, std::size_t y, std::size_t x) const {
        return values[(c * height + y) * width + x];
    }
};

// Flattened fixed-size image tiles; N = H0*W0 / P^2.
struct PatchGrid {
    std::size_t patch_size = 0;
    std::size_t patch_count = 0;
    std::size_t patch_dim = 0;      // P^2 * C
    std::vector<double> values;     // N x patch_dim

    static PatchGrid from_image(std::size_t channels, std::size_t h0, std::size_t w0,
                                std::size_t patch_size);
};

// Whitespace tokenizer over a fixed vocabulary with the special tokens at
// fixed ids. Stands in for WordPiece at desk scale.
class Tokenizer {
public:
    static constexpr std::size_t kCls = 0;
    static constexpr std::size_t kSep = 1;
    static constexpr std::size_t kMask = 2;
    static constexpr std::size_t kUnk = 3;

    explicit Tokenizer(const std::vector<std::string>& words);

    std::size_t vocab_size() const { return id_to_word_.size(); }
    std::size_t id_of(const std::string& word) const; // kUnk when absent
    const std::string& word_of(std::size_t id) const { return id_to_word_.at(id); }

    // Lowercases, strips punctuation, splits on whitespace. No [CLS]/[SEP].
    std::vector<std::size_t> encode_words(const std::string& text) const;

private:
    std::vector<std::string> id_to_word_;
    std::map<std::string, std::size_t> word_to_id_;
};

// Token ids with [CLS] first and [SEP] last.
struct TextSequence {
    std::vector<std::size_t> ids;

    static TextSequence from_text(const Tokenizer& tok, const std::string& text);
    void validate() const;
    std::size_t length() const { return ids.size(); }
};

// Concatenated [text | visual] embedded sequence with the modality boundary.
struct MultimodalBatch {
    Tensor sequence;                 // (m_L + m_V) x D
    std::size_t boundary = 0;        // text prefix length
    std::vector<bool> is_visual;     // per position
};

struct TextEmbedder {
    Parameter token_table;     // vocab x D
    Parameter type_table;      // 2 x D (text, visual)
    Parameter position_table;  // max_len x D
    Parameter norm_gain;       // D
    Parameter norm_bias;       // D

    static TextEmbedder init(std::size_t vocab, std::size_t max_len, std::size_t dim, Rng& rng,
                             const std::string& prefix = "text_embed");
    std::vector<Parameter> parameters() const;
};

Tensor embed_region(const std::vector<RegionFeature>& features, const Parameter& projection);
Tensor embed_grid(const GridFeatureMap& map, const Parameter& projection,
                  const Parameter& modal_type);
Tensor embed_patch(const PatchGrid& grid, const Parameter& projection,
                   const Parameter& positions);
Tensor embed_text(const TextSequence& seq, const TextEmbedder& embedder);

// Uniform sample without replacement, original order preserved. Pre-training
// only; fine-tuning consumes the complete sequence.
Tensor sample_grids(const Tensor& sequence, std::size_t count, Rng& rng);

MultimodalBatch fuse(const Tensor& text, const std::vector<Tensor>& visual_parts);

// JSONL ingestion of pre-extracted features, one record per image.
struct ImageFeatures {
    std::vector<RegionFeature> regions;
    GridFeatureMap grid;
    PatchGrid patches;
};

std::vector<ImageFeatures> load_features_jsonl(const std::string& path);
void save_features_jsonl(const std::string& path, const std::vector<ImageFeatures>& images);

} // namespace vqamoe::embedders
