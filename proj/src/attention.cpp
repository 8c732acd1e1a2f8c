#include "vqamoe/attention.hpp"

#include <cmath>
#include <stdexcept>

namespace vqamoe::attention {

ScoreBlocks partition_scores(const Tensor& q, const Tensor& k, std::size_t boundary) {
    if (q.cols() != k.cols()) {
        throw std::invalid_argument("partition_scores: query/key width mismatch");
    }
    const std::size_t n = q.rows();
    if (k.rows() != n) {
        throw std::invalid_argument("partition_scores: query/key length mismatch");
    }
    if (boundary > n) {
        throw std::out_of_range("partition_scores: boundary " + std::to_string(boundary) +
                                " beyond sequence length " + std::to_string(n));
    }
    Tensor s = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
    ScoreBlocks b;
    b.boundary = boundary;
    b.ll = slice_cols(slice_rows(s, 0, boundary), 0, boundary);
    b.lv = slice_cols(slice_rows(s, 0, boundary), boundary, n);
    b.vl = slice_cols(slice_rows(s, boundary, n), 0, boundary);
    b.vv = slice_cols(slice_rows(s, boundary, n), boundary, n);
    return b;
}

namespace {

Tensor stack_blocks(const Tensor& ll, const Tensor& lv, const Tensor& vl, const Tensor& vv) {
    const std::size_t b = ll.rows(), v = vv.rows();
    if (b == 0) return concat_cols(std::vector<Tensor>{vl, vv});
    if (v == 0) return concat_cols(std::vector<Tensor>{ll, lv});
    Tensor top = concat_cols(std::vector<Tensor>{ll, lv});
    Tensor bottom = concat_cols(std::vector<Tensor>{vl, vv});
    return concat_rows(std::vector<Tensor>{top, bottom});
}

} // namespace

Tensor assemble_scores(const ScoreBlocks& blocks) {
    return stack_blocks(blocks.ll, blocks.lv, blocks.vl, blocks.vv);
}

Tensor weighted_scores(const ScoreBlocks& blocks, const Tensor& eps1, const Tensor& eps2) {
    return stack_blocks(scalar_mul(eps1, blocks.ll), scalar_mul(eps2, blocks.lv),
                        scalar_mul(eps2, blocks.vl), scalar_mul(eps1, blocks.vv));
}

std::pair<Tensor, Tensor> learn_weights_ffn(const Tensor& v_cls, const Parameter& weight,
                                            const Parameter& bias) {
    Tensor s = sigmoid(add_rowvec(matmul(v_cls, weight.tensor), bias.tensor)); // 1 x 2
    return {slice_cols(s, 0, 1), slice_cols(s, 1, 2)};
}

std::pair<Parameter, Parameter> learn_weights_param(std::size_t layer_index,
                                                    std::size_t total_layers,
                                                    const std::string& prefix) {
    if (layer_index < 1 || layer_index > total_layers) {
        throw std::invalid_argument("learn_weights_param: layer index " +
                                    std::to_string(layer_index) + " outside 1.." +
                                    std::to_string(total_layers));
    }
    const double init2 =
        static_cast<double>(layer_index) / static_cast<double>(total_layers);
    return {Parameter{prefix + ".eps1", Tensor::full({1}, 1.0, true)},
            Parameter{prefix + ".eps2", Tensor::full({1}, init2, true)}};
}

EncoderLayer EncoderLayer::init(const LayerConfig& cfg, std::size_t layer_index,
                                std::size_t total_layers, Rng& rng,
                                const std::string& prefix) {
    if (cfg.dim % cfg.heads != 0) {
        throw std::invalid_argument("EncoderLayer: head count must divide model width");
    }
    EncoderLayer l;
    l.cfg_ = cfg;
    const std::size_t d = cfg.dim, f = cfg.ffn_dim;
    const double std_attn = 0.02;
    auto mk = [&](const char* name, std::vector<std::size_t> shape) {
        return Parameter{prefix + "." + name, Tensor::randn(std::move(shape), rng, std_attn, true)};
    };
    l.wq_ = mk("wq", {d, d});
    l.bq_ = Parameter{prefix + ".bq", Tensor::zeros({d}, true)};
    l.wk_ = mk("wk", {d, d});
    l.bk_ = Parameter{prefix + ".bk", Tensor::zeros({d}, true)};
    l.wv_ = mk("wv", {d, d});
    l.bv_ = Parameter{prefix + ".bv", Tensor::zeros({d}, true)};
    l.wo_ = mk("wo", {d, d});
    l.bo_ = Parameter{prefix + ".bo", Tensor::zeros({d}, true)};
    l.ff_w1_ = mk("ff_w1", {d, f});
    l.ff_b1_ = Parameter{prefix + ".ff_b1", Tensor::zeros({f}, true)};
    l.ff_w2_ = mk("ff_w2", {f, d});
    l.ff_b2_ = Parameter{prefix + ".ff_b2", Tensor::zeros({d}, true)};
    l.ln1_gain_ = Parameter{prefix + ".ln1_gain", Tensor::full({d}, 1.0, true)};
    l.ln1_bias_ = Parameter{prefix + ".ln1_bias", Tensor::zeros({d}, true)};
    l.ln2_gain_ = Parameter{prefix + ".ln2_gain", Tensor::full({d}, 1.0, true)};
    l.ln2_bias_ = Parameter{prefix + ".ln2_bias", Tensor::zeros({d}, true)};

    const double init2 =
        static_cast<double>(layer_index) / static_cast<double>(total_layers);
    const std::size_t eps_n = cfg.per_head_eps ? cfg.heads : 1;
    l.eps1_ = Parameter{prefix + ".eps1", Tensor::full({eps_n}, 1.0, true)};
    l.eps2_ = Parameter{prefix + ".eps2", Tensor::full({eps_n}, init2, true)};
    l.eps_w_ = mk("eps_w", {d, 2});
    l.eps_b_ = Parameter{prefix + ".eps_b", Tensor::zeros({2}, true)};
    return l;
}

Tensor EncoderLayer::forward(const Tensor& x, std::size_t boundary) const {
    const std::size_t n = x.rows(), d = cfg_.dim;
    if (n == 0) throw std::invalid_argument("EncoderLayer: empty sequence");
    if (x.cols() != d) throw std::invalid_argument("EncoderLayer: width mismatch");
    const std::size_t dh = d / cfg_.heads;

    Tensor e1, e2;
    if (cfg_.variant == EpsVariant::ffn) {
        auto [a, b] = learn_weights_ffn(slice_rows(x, 0, 1), eps_w_, eps_b_);
        e1 = a;
        e2 = b;
    } else {
        e1 = eps1_.tensor;
        e2 = eps2_.tensor;
    }

    Tensor q = add_rowvec(matmul(x, wq_.tensor), bq_.tensor);
    Tensor k = add_rowvec(matmul(x, wk_.tensor), bk_.tensor);
    Tensor v = add_rowvec(matmul(x, wv_.tensor), bv_.tensor);

    std::vector<Tensor> heads;
    heads.reserve(cfg_.heads);
    for (std::size_t h = 0; h < cfg_.heads; ++h) {
        Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
        Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
        Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
        ScoreBlocks blocks = partition_scores(qh, kh, boundary);
        Tensor e1h = cfg_.per_head_eps ? slice_cols(e1, h, h + 1) : e1;
        Tensor e2h = cfg_.per_head_eps ? slice_cols(e2, h, h + 1) : e2;
        Tensor sg = weighted_scores(blocks, e1h, e2h);
        Tensor attn = softmax_rows(sg);
        heads.push_back(matmul(attn, vh));
    }
    Tensor o = cfg_.heads == 1 ? heads[0] : concat_cols(heads);
    o = add_rowvec(matmul(o, wo_.tensor), bo_.tensor);

    Tensor x1 = layer_norm(add(x, o), ln1_gain_.tensor, ln1_bias_.tensor);
    Tensor ff = add_rowvec(
        matmul(gelu(add_rowvec(matmul(x1, ff_w1_.tensor), ff_b1_.tensor)), ff_w2_.tensor),
        ff_b2_.tensor);
    return layer_norm(add(x1, ff), ln2_gain_.tensor, ln2_bias_.tensor);
}

std::vector<Parameter> EncoderLayer::parameters() const {
    std::vector<Parameter> out = {wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_,
                                  ff_w1_, ff_b1_, ff_w2_, ff_b2_,
                                  ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_};
    if (cfg_.variant == EpsVariant::param) {
        out.push_back(eps1_);
        out.push_back(eps2_);
    } else {
        out.push_back(eps_w_);
        out.push_back(eps_b_);
    }
    return out;
}

EncoderStack EncoderStack::init(const StackConfig& cfg, Rng& rng, const std::string& prefix) {
    EncoderStack s;
    s.cfg_ = cfg;
    LayerConfig lc{cfg.dim, cfg.heads, cfg.ffn_dim, cfg.variant, cfg.per_head_eps};
    for (std::size_t i = 1; i <= cfg.layers; ++i) {
        s.layers_.push_back(
            EncoderLayer::init(lc, i, cfg.layers, rng, prefix + ".layer" + std::to_string(i)));
    }
    return s;
}

EncoderStack::Output EncoderStack::encode(const embedders::MultimodalBatch& batch) const {
    if (!batch.sequence.defined() || batch.sequence.rows() == 0) {
        throw std::invalid_argument("EncoderStack::encode: empty batch");
    }
    Tensor x = batch.sequence;
    for (const EncoderLayer& layer : layers_) x = layer.forward(x, batch.boundary);
    return {x, slice_rows(x, 0, 1)};
}

std::vector<Parameter> EncoderStack::parameters() const {
    std::vector<Parameter> out;
    for (const EncoderLayer& l : layers_) {
        auto p = l.parameters();
        out.insert(out.end(), p.begin(), p.end());
    }
    return out;
}

} // namespace vqamoe::attention
