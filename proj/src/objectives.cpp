#include "vqamoe/objectives.hpp"

#include <cmath>
#include <stdexcept>

namespace vqamoe::objectives {

using embedders::Tokenizer;

MaskedText mask_text(const embedders::TextSequence& seq, std::size_t vocab_size, double rate,
                     Rng& rng) {
    seq.validate();
    MaskedText out;
    out.corrupted_ids = seq.ids;
    out.plan.rate = rate;
    const std::size_t eligible = seq.ids.size() - 2; // [CLS]/[SEP] excluded
    const std::size_t n_mask =
        static_cast<std::size_t>(std::lround(rate * static_cast<double>(eligible)));
    if (n_mask == 0) return out;
    for (std::size_t rel : rng.sample_indices(eligible, n_mask)) {
        const std::size_t pos = rel + 1;
        out.plan.positions.push_back(pos);
        out.target_ids.push_back(seq.ids[pos]);
        const double roll = rng.uniform();
        if (roll < 0.8) {
            out.corrupted_ids[pos] = Tokenizer::kMask;
        } else if (roll < 0.9) {
            // keep
        } else if (vocab_size > Tokenizer::kUnk + 1) {
            // Random replacement draws real words only, never the specials.
            out.corrupted_ids[pos] = static_cast<std::size_t>(rng.randint(
                Tokenizer::kUnk + 1, static_cast<std::int64_t>(vocab_size) - 1));
        }
    }
    return out;
}

MaskingPlan mask_visual(std::size_t count, double rate, Rng& rng) {
    MaskingPlan plan;
    plan.rate = rate;
    const std::size_t n_mask =
        static_cast<std::size_t>(std::lround(rate * static_cast<double>(count)));
    if (n_mask > 0) plan.positions = rng.sample_indices(count, n_mask);
    return plan;
}

Heads Heads::init(std::size_t dim, std::size_t vocab, std::size_t answers, Rng& rng,
                  const std::string& prefix) {
    Heads h;
    h.vocab_w = {prefix + ".vocab_w", Tensor::randn({dim, vocab}, rng, 0.02, true)};
    h.vocab_b = {prefix + ".vocab_b", Tensor::zeros({vocab}, true)};
    h.obj_w = {prefix + ".obj_w", Tensor::randn({dim, dim}, rng, 0.02, true)};
    h.obj_b = {prefix + ".obj_b", Tensor::zeros({dim}, true)};
    h.itm_w = {prefix + ".itm_w", Tensor::randn({dim, 1}, rng, 0.02, true)};
    h.itm_b = {prefix + ".itm_b", Tensor::zeros({1}, true)};
    h.qa_w = {prefix + ".qa_w", Tensor::randn({dim, answers}, rng, 0.02, true)};
    h.qa_b = {prefix + ".qa_b", Tensor::zeros({answers}, true)};
    return h;
}

std::vector<Parameter> Heads::parameters() const {
    return {vocab_w, vocab_b, obj_w, obj_b, itm_w, itm_b, qa_w, qa_b};
}

Tensor masked_lm_loss(const Tensor& sequence_out, const MaskingPlan& plan,
                      const std::vector<std::size_t>& target_ids, const Parameter& vocab_w,
                      const Parameter& vocab_b, bool* empty_flag) {
    if (plan.positions.size() != target_ids.size()) {
        throw std::invalid_argument("masked_lm_loss: plan/target size mismatch");
    }
    if (empty_flag) *empty_flag = plan.positions.empty();
    if (plan.positions.empty()) return Tensor::scalar(0.0, true);
    for (std::size_t p : plan.positions) {
        if (p >= sequence_out.rows()) {
            throw std::out_of_range("masked_lm_loss: masked position out of sequence");
        }
    }
    Tensor picked = gather_rows(sequence_out, plan.positions);
    Tensor probs = softmax_rows(add_rowvec(matmul(picked, vocab_w.tensor), vocab_b.tensor));
    const std::size_t vocab = probs.cols();
    Tensor onehot = Tensor::zeros({target_ids.size(), vocab});
    for (std::size_t i = 0; i < target_ids.size(); ++i) {
        if (target_ids[i] >= vocab) throw std::out_of_range("masked_lm_loss: target id");
        onehot.data()[i * vocab + target_ids[i]] = 1.0;
    }
    return cross_entropy_loss(probs, onehot);
}

Tensor masked_object_loss(const Tensor& sequence_out, std::size_t boundary,
                          const MaskingPlan& visual_plan, const Tensor& original_rows,
                          const Parameter& obj_w, const Parameter& obj_b, FeatureMode mode) {
    if (mode != FeatureMode::region) {
        throw std::invalid_argument(
            "masked_object_loss: only available in region feature mode");
    }
    if (visual_plan.positions.empty()) return Tensor::scalar(0.0, true);
    for (std::size_t p : visual_plan.positions) {
        if (p < boundary || p >= sequence_out.rows()) {
            throw std::out_of_range("masked_object_loss: plan must target visual positions");
        }
    }
    if (original_rows.rows() != visual_plan.positions.size()) {
        throw std::invalid_argument("masked_object_loss: original rows/plan size mismatch");
    }
    Tensor picked = gather_rows(sequence_out, visual_plan.positions);
    Tensor predicted = add_rowvec(matmul(picked, obj_w.tensor), obj_b.tensor);
    return mse_loss(predicted, original_rows);
}

Tensor itm_loss(const Tensor& cls, bool matched, const Parameter& itm_w,
                const Parameter& itm_b) {
    Tensor p = sigmoid(add_rowvec(matmul(cls, itm_w.tensor), itm_b.tensor));
    Tensor target = Tensor::full({1, 1}, matched ? 1.0 : 0.0);
    return binary_cross_entropy_loss(p, target);
}

Tensor vqa_head_loss(const Tensor& cls, const std::vector<double>& soft_targets,
                     const Parameter& qa_w, const Parameter& qa_b) {
    for (double t : soft_targets) {
        if (t < 0.0 || t > 1.0) {
            throw std::invalid_argument("vqa_head_loss: soft target outside [0,1]: " +
                                        std::to_string(t));
        }
    }
    Tensor probs = sigmoid(add_rowvec(matmul(cls, qa_w.tensor), qa_b.tensor));
    if (probs.cols() != soft_targets.size()) {
        throw std::invalid_argument("vqa_head_loss: target size " +
                                    std::to_string(soft_targets.size()) +
                                    " vs answer set " + std::to_string(probs.cols()));
    }
    Tensor target = Tensor::from({1, soft_targets.size()}, soft_targets);
    return binary_cross_entropy_loss(probs, target);
}

PretrainLosses pretrain_step(const PretrainExample& example,
                             const attention::EncoderStack& stack, const Heads& heads,
                             const PretrainTasks& tasks, FeatureMode mode) {
    auto out = stack.encode(example.batch);
    PretrainLosses res;
    std::vector<Tensor> parts;

    if (tasks.mlm) {
        Tensor l = masked_lm_loss(out.sequence, example.text_plan, example.mlm_targets,
                                  heads.vocab_w, heads.vocab_b, &res.mlm_empty);
        res.mlm = l.value();
        parts.push_back(l);
    }
    if (tasks.mop) {
        Tensor l = masked_object_loss(out.sequence, example.batch.boundary,
                                      example.visual_plan, example.original_visual_rows,
                                      heads.obj_w, heads.obj_b, mode);
        res.mop = l.value();
        parts.push_back(l);
    }
    if (tasks.itm) {
        Tensor l = itm_loss(out.cls, example.itm_matched, heads.itm_w, heads.itm_b);
        res.itm = l.value();
        parts.push_back(l);
    }
    if (tasks.qa && !example.qa_targets.empty() && example.itm_matched) {
        Tensor l = vqa_head_loss(out.cls, example.qa_targets, heads.qa_w, heads.qa_b);
        res.qa = l.value();
        parts.push_back(l);
    }

    if (parts.empty()) {
        res.total = Tensor::scalar(0.0, true);
        return res;
    }
    Tensor total = parts[0];
    for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
    res.total = total;
    return res;
}

} // namespace vqamoe::objectives
