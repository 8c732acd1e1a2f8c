#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

#include "vqamoe/attention.hpp"
#include "vqamoe/embedders.hpp"
#include "vqamoe/optim.hpp"
#include "vqamoe/tensor.hpp"
#include "vqamoe/vqa_metric.hpp"

namespace vqamoe::moe {

enum class ExpertId { visual = 0, text = 1, clock = 2 };

std::string expert_name(ExpertId id);

// Confidence of -1 marks an absent modality (no text / no clock in the image).
constexpr double kAbsentSentinel = -1.0;

// Fixed layout: three expert confidences followed by the three
// question-type scores.
struct GatingFeatures {
    double conf_visual = 0.0;
    double conf_text = 0.0;
    double conf_clock = 0.0;
    double p_ocr = 0.0;
    double p_clock = 0.0;
    double p_vision = 0.0;

    void validate() const;
    std::vector<double> as_vector() const;
};

// 6 -> 100 -> 50 -> 3 MLP with tanh activations; outputs squashed by a
// sigmoid so the BCE reward objective is well defined.
class GatingNetwork {
public:
    static GatingNetwork init(Rng& rng, const std::string& prefix = "gating");

    Tensor forward(const GatingFeatures& x) const; // 1 x 3 scores in (0,1)
    std::array<double, 3> scores(const GatingFeatures& x) const;
    std::vector<Parameter> parameters() const;

private:
    Parameter w1_, b1_, w2_, b2_, w3_, b3_;
};

struct ExpertPrediction {
    ExpertId expert = ExpertId::visual;
    std::string answer;
    double confidence = 0.0; // [0,1] or exactly -1
};

// Consensus accuracy of each expert's answer against the ten annotations.
std::array<double, 3> reward_scores(const std::array<std::string, 3>& expert_answers,
                                    const vqa_metric::AnnotationRecord& annotation);

struct GatingTrainConfig {
    double learning_rate = 1e-3;
    std::size_t epochs = 5;
    std::size_t batch_size = 256;
};

struct GatingExample {
    GatingFeatures features;
    std::array<double, 3> rewards;
};

// Minimizes the negative of the summed reward-weighted log-likelihood via
// Adam. Returns the mean training loss per epoch.
std::vector<double> train_gating(const std::vector<GatingExample>& dataset, GatingNetwork& net,
                                 const GatingTrainConfig& cfg, Rng& rng);

// Argmax routing; exact ties take the fixed priority visual > text > clock.
ExpertId route(const std::array<double, 3>& scores);

// Maximum voting over model predictions; vote ties break by the higher
// summed prediction score, then by first appearance.
std::string ensemble_vote(const std::vector<std::pair<std::string, double>>& predictions);

// Three-class question-type classifier over mean-pooled toy token
// embeddings. Training labels follow the keyword recipe: clock questions
// matched by "clock"/"what time", OCR questions from the OCR-labeled
// slice, and visual negatives sampled at twice the positive count.
class QuestionTypeClassifier {
public:
    static QuestionTypeClassifier init(const embedders::Tokenizer& tokenizer, std::size_t dim,
                                       Rng& rng);

    Tensor forward(const std::vector<std::size_t>& token_ids) const; // 1 x 3 softmax
    // (p_ocr, p_clock, p_vision)
    std::array<double, 3> scores(const std::string& question) const;
    std::vector<Parameter> parameters() const;

    struct LabeledQuestion {
        std::string text;
        ExpertId label = ExpertId::visual; // text => ocr, clock => clock, visual => negative
    };

    // Builds the keyword/ratio training set from the corpus and trains with
    // cross-entropy. Returns per-epoch mean loss.
    std::vector<double> train(const std::vector<LabeledQuestion>& corpus, std::size_t epochs,
                              double learning_rate, Rng& rng);

    static bool has_clock_keywords(const std::string& question);

private:
    const embedders::Tokenizer* tokenizer_ = nullptr;
    Parameter embed_, w_, b_;
};

} // namespace vqamoe::moe
