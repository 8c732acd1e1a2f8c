#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vqamoe/embedders.hpp"
#include "vqamoe/tensor.hpp"

namespace vqamoe::attention {

enum class EpsVariant { ffn, param };

// The four sub-blocks of S = QK^T / sqrt(d_head), split at the modality
// boundary on both axes.
struct ScoreBlocks {
    Tensor ll, lv, vl, vv;
    std::size_t boundary = 0;
};

ScoreBlocks partition_scores(const Tensor& q, const Tensor& k, std::size_t boundary);

// Reassembles the blocks into the full score matrix.
Tensor assemble_scores(const ScoreBlocks& blocks);

// S_gamma: intra-modal blocks scaled by eps1, inter-modal blocks by eps2.
Tensor weighted_scores(const ScoreBlocks& blocks, const Tensor& eps1, const Tensor& eps2);

// eps from a single-layer FFN with sigmoid over the [CLS] row. Returns
// (eps1, eps2) as 1-element tensors, differentiable into both the FFN
// parameters and v_cls.
std::pair<Tensor, Tensor> learn_weights_ffn(const Tensor& v_cls, const Parameter& weight,
                                            const Parameter& bias);

// eps as free parameters initialized eps1 = 1.0, eps2 = layer_index / total.
std::pair<Parameter, Parameter> learn_weights_param(std::size_t layer_index,
                                                    std::size_t total_layers,
                                                    const std::string& prefix);

struct LayerConfig {
    std::size_t dim = 32;
    std::size_t heads = 4;
    std::size_t ffn_dim = 64;
    EpsVariant variant = EpsVariant::param;
    bool per_head_eps = false; // param variant only
};

class EncoderLayer {
public:
    static EncoderLayer init(const LayerConfig& cfg, std::size_t layer_index,
                             std::size_t total_layers, Rng& rng, const std::string& prefix);

    Tensor forward(const Tensor& x, std::size_t boundary) const;

    std::vector<Parameter> parameters() const;
    const LayerConfig& config() const { return cfg_; }

    // param-variant eps values (first entry when per-head).
    double eps1_value() const { return eps1_.tensor.data()[0]; }
    double eps2_value() const { return eps2_.tensor.data()[0]; }
    Parameter& eps1() { return eps1_; }
    Parameter& eps2() { return eps2_; }

private:
    LayerConfig cfg_;
    Parameter wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_;
    Parameter ff_w1_, ff_b1_, ff_w2_, ff_b2_;
    Parameter ln1_gain_, ln1_bias_, ln2_gain_, ln2_bias_;
    Parameter eps1_, eps2_;       // param variant
    Parameter eps_w_, eps_b_;     // ffn variant
};

struct StackConfig {
    std::size_t dim = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 64;
    EpsVariant variant = EpsVariant::param;
    bool per_head_eps = false;
};

class EncoderStack {
public:
    static EncoderStack init(const StackConfig& cfg, Rng& rng,
                             const std::string& prefix = "encoder");

    struct Output {
        Tensor sequence;
        Tensor cls; // 1 x D
    };

    Output encode(const embedders::MultimodalBatch& batch) const;

    std::vector<Parameter> parameters() const;
    std::vector<EncoderLayer>& layers() { return layers_; }
    const std::vector<EncoderLayer>& layers() const { return layers_; }
    const StackConfig& config() const { return cfg_; }

private:
    StackConfig cfg_;
    std::vector<EncoderLayer> layers_;
};

} // namespace vqamoe::attention
