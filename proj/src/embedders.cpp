#include "vqamoe/embedders.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace vqamoe::embedders {

void RegionFeature::validate() const {
    if (appearance.empty()) {
        throw std::invalid_argument("RegionFeature: empty appearance vector");
    }
    for (double c : box) {
        if (c < 0.0 || c > 1.0) {
            throw std::invalid_argument("RegionFeature: box coordinate outside [0,1]: " +
                                        std::to_string(c));
        }
    }
    if (box[0] > box[2] || box[1] > box[3]) {
        throw std::invalid_argument("RegionFeature: degenerate box ordering");
    }
}

GridFeatureMap GridFeatureMap::from_image_size(std::size_t channels, std::size_t h0,
                                               std::size_t w0) {
    if (h0 % 32 != 0 || w0 % 32 != 0) {
        throw std::invalid_argument("GridFeatureMap: image extents must be divisible by 32");
    }
    GridFeatureMap m;
    m.channels = channels;
    m.height = h0 / 32;
    m.width = w0 / 32;
    m.values.assign(channels * m.height * m.width, 0.0);
    return m;
}

PatchGrid PatchGrid::from_image(std::size_t channels, std::size_t h0, std::size_t w0,
                                std::size_t patch_size) {
    if (patch_size == 0 || h0 % patch_size != 0 || w0 % patch_size != 0) {
        throw std::invalid_argument("PatchGrid: image extents must be divisible by patch size " +
                                    std::to_string(patch_size));
    }
    PatchGrid g;
    g.patch_size = patch_size;
    g.patch_count = (h0 / patch_size) * (w0 / patch_size);
    g.patch_dim = patch_size * patch_size * channels;
    g.values.assign(g.patch_count * g.patch_dim, 0.0);
    return g;
}

// ---- tokenizer --------------------------------------------------------

Tokenizer::Tokenizer(const std::vector<std::string>& words) {
    id_to_word_ = {"[CLS]", "[SEP]", "[MASK]", "[UNK]"};
    for (std::size_t i = 0; i < id_to_word_.size(); ++i) word_to_id_[id_to_word_[i]] = i;
    for (const auto& w : words) {
        if (word_to_id_.count(w) || w.empty()) continue;
        word_to_id_[w] = id_to_word_.size();
        id_to_word_.push_back(w);
    }
}

std::size_t Tokenizer::id_of(const std::string& word) const {
    auto it = word_to_id_.find(word);
    return it == word_to_id_.end() ? kUnk : it->second;
}

std::vector<std::size_t> Tokenizer::encode_words(const std::string& text) const {
    std::vector<std::size_t> out;
    std::string cur;
    auto flush = [&] {
        if (!cur.empty()) {
            out.push_back(id_of(cur));
            cur.clear();
        }
    };
    for (char ch : text) {
        unsigned char c = static_cast<unsigned char>(ch);
        if (std::isspace(c)) {
            flush();
        } else if (std::isalnum(c) || ch == ':') {
            cur.push_back(static_cast<char>(std::tolower(c)));
        }
        // other punctuation dropped
    }
    flush();
    return out;
}

TextSequence TextSequence::from_text(const Tokenizer& tok, const std::string& text) {
    TextSequence s;
    s.ids.push_back(Tokenizer::kCls);
    for (std::size_t id : tok.encode_words(text)) s.ids.push_back(id);
    s.ids.push_back(Tokenizer::kSep);
    return s;
}

void TextSequence::validate() const {
    if (ids.size() < 2 || ids.front() != Tokenizer::kCls || ids.back() != Tokenizer::kSep) {
        throw std::invalid_argument("TextSequence: must be [CLS] ... [SEP]");
    }
    for (std::size_t i = 1; i < ids.size(); ++i) {
        if (ids[i] == Tokenizer::kCls) {
            throw std::invalid_argument("TextSequence: duplicate [CLS]");
        }
    }
}

// ---- embedders --------------------------------------------------------

TextEmbedder TextEmbedder::init(std::size_t vocab, std::size_t max_len, std::size_t dim,
                                Rng& rng, const std::string& prefix) {
    TextEmbedder e;
    e.token_table = {prefix + ".token_table", Tensor::randn({vocab, dim}, rng, 0.02, true)};
    e.type_table = {prefix + ".type_table", Tensor::randn({2, dim}, rng, 0.02, true)};
    e.position_table = {prefix + ".position_table", Tensor::randn({max_len, dim}, rng, 0.02, true)};
    e.norm_gain = {prefix + ".norm_gain", Tensor::full({dim}, 1.0, true)};
    e.norm_bias = {prefix + ".norm_bias", Tensor::zeros({dim}, true)};
    return e;
}

std::vector<Parameter> TextEmbedder::parameters() const {
    return {token_table, type_table, position_table, norm_gain, norm_bias};
}

Tensor embed_region(const std::vector<RegionFeature>& features, const Parameter& projection) {
    if (features.empty()) throw std::invalid_argument("embed_region: no features");
    const std::size_t fr = features.front().appearance.size();
    std::vector<double> rows;
    rows.reserve(features.size() * (fr + 4));
    for (const auto& f : features) {
        f.validate();
        if (f.appearance.size() != fr) {
            throw std::invalid_argument("embed_region: inconsistent appearance widths");
        }
        rows.insert(rows.end(), f.appearance.begin(), f.appearance.end());
        rows.insert(rows.end(), f.box.begin(), f.box.end());
    }
    Tensor x = Tensor::from({features.size(), fr + 4}, std::move(rows));
    return matmul(x, projection.tensor);
}

Tensor embed_grid(const GridFeatureMap& map, const Parameter& projection,
                  const Parameter& modal_type) {
    const std::size_t hw = map.height * map.width;
    if (hw == 0) throw std::invalid_argument("embed_grid: empty map");
    // Row-major spatial flattening: position (y,x) -> row y*W + x.
    std::vector<double> rows(hw * map.channels);
    for (std::size_t y = 0; y < map.height; ++y)
        for (std::size_t x = 0; x < map.width; ++x)
            for (std::size_t c = 0; c < map.channels; ++c)
                rows[(y * map.width + x) * map.channels + c] = map.at(c, y, x);
    Tensor x = Tensor::from({hw, map.channels}, std::move(rows));
    return add_rowvec(matmul(x, projection.tensor), modal_type.tensor);
}

Tensor embed_patch(const PatchGrid& grid, const Parameter& projection,
                   const Parameter& positions) {
    if (grid.patch_count == 0) throw std::invalid_argument("embed_patch: no patches");
    Tensor x = Tensor::from({grid.patch_count, grid.patch_dim}, grid.values);
    Tensor projected = matmul(x, projection.tensor);
    if (positions.tensor.rows() < grid.patch_count) {
        throw std::invalid_argument("embed_patch: position table too short");
    }
    std::vector<std::size_t> idx(grid.patch_count);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return add(projected, gather_rows(positions.tensor, idx));
}

Tensor embed_text(const TextSequence& seq, const TextEmbedder& embedder) {
    seq.validate();
    const std::size_t n = seq.ids.size();
    for (std::size_t id : seq.ids) {
        if (id >= embedder.token_table.tensor.rows()) {
            throw std::out_of_range("embed_text: token id " + std::to_string(id) +
                                    " outside vocabulary");
        }
    }
    Tensor tok = gather_rows(embedder.token_table.tensor, seq.ids);
    std::vector<std::size_t> pos(n), typ(n, 0);
    for (std::size_t i = 0; i < n; ++i) pos[i] = i;
    Tensor posv = gather_rows(embedder.position_table.tensor, pos);
    Tensor typv = gather_rows(embedder.type_table.tensor, typ);
    Tensor summed = add(add(tok, typv), posv);
    return layer_norm(summed, embedder.norm_gain.tensor, embedder.norm_bias.tensor);
}

Tensor sample_grids(const Tensor& sequence, std::size_t count, Rng& rng) {
    if (count > sequence.rows()) {
        throw std::invalid_argument("sample_grids: count " + std::to_string(count) +
                                    " exceeds sequence length " +
                                    std::to_string(sequence.rows()));
    }
    if (count == sequence.rows()) return sequence;
    std::vector<std::size_t> keep = rng.sample_indices(sequence.rows(), count);
    // gather_rows would route gradients through a trainable sequence too,
    // but sampled inputs here are leaves; the gather keeps it general.
    Tensor picked = Tensor::zeros({count, sequence.cols()});
    for (std::size_t i = 0; i < count; ++i)
        for (std::size_t j = 0; j < sequence.cols(); ++j)
            picked.data()[i * sequence.cols() + j] = sequence(keep[i], j);
    return picked;
}

MultimodalBatch fuse(const Tensor& text, const std::vector<Tensor>& visual_parts) {
    std::vector<Tensor> parts{text};
    for (const Tensor& v : visual_parts) {
        if (v.cols() != text.cols()) {
            throw std::invalid_argument("fuse: width mismatch " + std::to_string(text.cols()) +
                                        " vs " + std::to_string(v.cols()));
        }
        parts.push_back(v);
    }
    MultimodalBatch batch;
    batch.sequence = parts.size() == 1 ? text : concat_rows(parts);
    batch.boundary = text.rows();
    batch.is_visual.assign(batch.sequence.rows(), true);
    for (std::size_t i = 0; i < batch.boundary; ++i) batch.is_visual[i] = false;
    return batch;
}

// ---- JSONL ------------------------------------------------------------

namespace {
using nlohmann::json;
}

std::vector<ImageFeatures> load_features_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open features file: " + path);
    std::vector<ImageFeatures> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line);
        ImageFeatures img;
        for (const auto& r : j.value("regions", json::array())) {
            RegionFeature f;
            f.appearance = r.at("r").get<std::vector<double>>();
            auto box = r.at("box").get<std::vector<double>>();
            const double w = r.value("image_w", 1.0), h = r.value("image_h", 1.0);
            f.box = {box[0] / w, box[1] / h, box[2] / w, box[3] / h};
            f.validate();
            img.regions.push_back(std::move(f));
        }
        if (j.contains("grid")) {
            const auto& g = j["grid"];
            img.grid.channels = g.at("c").get<std::size_t>();
            img.grid.height = g.at("h").get<std::size_t>();
            img.grid.width = g.at("w").get<std::size_t>();
            img.grid.values = g.at("values").get<std::vector<double>>();
            if (img.grid.values.size() != img.grid.channels * img.grid.height * img.grid.width) {
                throw std::runtime_error("features: grid value count mismatch in " + path);
            }
        }
        if (j.contains("patches")) {
            const auto& p = j["patches"];
            img.patches.patch_size = p.at("p").get<std::size_t>();
            for (const auto& row : p.at("values")) {
                auto v = row.get<std::vector<double>>();
                if (img.patches.patch_dim == 0) img.patches.patch_dim = v.size();
                if (v.size() != img.patches.patch_dim) {
                    throw std::runtime_error("features: ragged patch rows in " + path);
                }
                img.patches.values.insert(img.patches.values.end(), v.begin(), v.end());
                ++img.patches.patch_count;
            }
        }
        out.push_back(std::move(img));
    }
    return out;
}

void save_features_jsonl(const std::string& path, const std::vector<ImageFeatures>& images) {
    std::ofstream outf(path);
    if (!outf) throw std::runtime_error("cannot write features file: " + path);
    for (const auto& img : images) {
        json j;
        j["regions"] = json::array();
        for (const auto& r : img.regions) {
            json rj;
            rj["r"] = r.appearance;
            rj["box"] = {r.box[0], r.box[1], r.box[2], r.box[3]};
            rj["image_w"] = 1.0;
            rj["image_h"] = 1.0;
            j["regions"].push_back(rj);
        }
        if (!img.grid.values.empty()) {
            j["grid"] = {{"c", img.grid.channels},
                         {"h", img.grid.height},
                         {"w", img.grid.width},
                         {"values", img.grid.values}};
        }
        if (!img.patches.values.empty()) {
            json rows = json::array();
            for (std::size_t i = 0; i < img.patches.patch_count; ++i) {
                rows.push_back(std::vector<double>(
                    img.patches.values.begin() + i * img.patches.patch_dim,
                    img.patches.values.begin() + (i + 1) * img.patches.patch_dim));
            }
            j["patches"] = {{"p", img.patches.patch_size}, {"values", rows}};
        }
        outf << j.dump() << "\n";
    }
}

} // namespace vqamoe::embedders
