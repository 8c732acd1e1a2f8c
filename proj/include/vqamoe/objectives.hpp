#pragma once

#include <cstddef>
#include <vector>

#include "vqamoe/attention.hpp"
#include "vqamoe/embedders.hpp"
#include "vqamoe/tensor.hpp"

namespace vqamoe::objectives {

enum class FeatureMode { region, grid, patch, fusion };

// Masked positions within one modality's span of the fused sequence.
// Text plans never include [CLS]/[SEP]; positions are disjoint by
// construction (sampled without replacement).
struct MaskingPlan {
    std::vector<std::size_t> positions;
    double rate = 0.15;
};

// BERT-style corruption of a token sequence: round(rate * eligible)
// positions masked; 80% [MASK], 10% kept, 10% random vocabulary token.
struct MaskedText {
    std::vector<std::size_t> corrupted_ids;
    MaskingPlan plan;                     // absolute positions in the sequence
    std::vector<std::size_t> target_ids;  // original ids at plan.positions
};

MaskedText mask_text(const embedders::TextSequence& seq, std::size_t vocab_size, double rate,
                     Rng& rng);

// Picks round(rate * count) visual positions (relative to the visual span).
MaskingPlan mask_visual(std::size_t count, double rate, Rng& rng);

struct Heads {
    Parameter vocab_w, vocab_b; // D x V  (masked LM)
    Parameter obj_w, obj_b;     // D x D  (masked object feature regression)
    Parameter itm_w, itm_b;     // D x 1
    Parameter qa_w, qa_b;       // D x A

    static Heads init(std::size_t dim, std::size_t vocab, std::size_t answers, Rng& rng,
                      const std::string& prefix = "heads");
    std::vector<Parameter> parameters() const;
};

// Mean cross-entropy over masked token predictions. Empty plans yield a
// zero loss and set *empty_flag when provided.
Tensor masked_lm_loss(const Tensor& sequence_out, const MaskingPlan& plan,
                      const std::vector<std::size_t>& target_ids, const Parameter& vocab_w,
                      const Parameter& vocab_b, bool* empty_flag = nullptr);

// MSE between a linear head on the output rows at masked visual positions
// and the original (pre-mask) projected features. Region mode only.
Tensor masked_object_loss(const Tensor& sequence_out, std::size_t boundary,
                          const MaskingPlan& visual_plan, const Tensor& original_rows,
                          const Parameter& obj_w, const Parameter& obj_b, FeatureMode mode);

Tensor itm_loss(const Tensor& cls, bool matched, const Parameter& itm_w,
                const Parameter& itm_b);

// Per-answer BCE against sigmoid head outputs, summed over the answer set.
Tensor vqa_head_loss(const Tensor& cls, const std::vector<double>& soft_targets,
                     const Parameter& qa_w, const Parameter& qa_b);

struct PretrainTasks {
    bool mlm = true;
    bool mop = false;
    bool itm = true;
    bool qa = false;
};

struct PretrainExample {
    embedders::MultimodalBatch batch; // embedded, with masking corruption applied
    MaskingPlan text_plan;            // absolute sequence positions
    std::vector<std::size_t> mlm_targets;
    MaskingPlan visual_plan;          // absolute sequence positions
    Tensor original_visual_rows;      // |visual_plan| x D, pre-mask
    bool itm_matched = true;
    std::vector<double> qa_targets;   // empty when the example has none
};

struct PretrainLosses {
    Tensor total;
    double mlm = 0.0, mop = 0.0, itm = 0.0, qa = 0.0;
    bool mlm_empty = false;
};

// Runs the encoder and sums the enabled task losses with equal weights.
// Backward is the caller's job (one optimizer step may span many examples).
PretrainLosses pretrain_step(const PretrainExample& example,
                             const attention::EncoderStack& stack, const Heads& heads,
                             const PretrainTasks& tasks, FeatureMode mode);

} // namespace vqamoe::objectives
