#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "vqamoe/attention.hpp"
#include "vqamoe/clock_expert.hpp"
#include "vqamoe/embedders.hpp"
#include "vqamoe/moe.hpp"
#include "vqamoe/objectives.hpp"
#include "vqamoe/text_expert.hpp"
#include "vqamoe/vqa_metric.hpp"

namespace vqamoe::synthetic {

// ---- three-competence VQA world ---------------------------------------

struct GenConfig {
    std::uint64_t seed = 7;
    std::size_t count = 500;
    double vision_frac = 0.60;
    double ocr_frac = 0.25; // clock takes the rest
    double disagreement = 0.10;
    std::size_t regions_per_image = 6;
    std::size_t region_feature_dim = 32; // >= answer-set size
    std::size_t image_size = 32;         // square source images
    std::size_t grid_channels = 8;
    std::size_t patch_size = 16;
};

struct Dataset {
    std::vector<vqa_metric::AnnotationRecord> annotations;
    std::vector<embedders::ImageFeatures> features; // aligned with annotations
    std::vector<text_expert::OcrRecord> ocr;        // aligned; empty cells when no text
    std::vector<bool> has_clock;                    // aligned
    std::vector<clock_expert::ClockRecord> clocks;  // clock questions only, in order
    std::vector<std::string> competence;            // "vision" | "ocr" | "clock"
    std::vector<std::string> answer_key;            // intended answer per question
};

// Every question is answerable by exactly one competence; the image
// features carry the answer signal so a fused model can learn the task.
Dataset generate(const GenConfig& cfg);

void write_dataset(const Dataset& ds, const std::string& dir);
Dataset load_dataset(const std::string& dir);

const std::vector<std::string>& vocabulary();
const std::vector<std::string>& answer_set();

// ---- toy VQA model ----------------------------------------------------

struct ModelConfig {
    std::size_t dim = 32;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t ffn_dim = 64;
    attention::EpsVariant variant = attention::EpsVariant::param;
    objectives::FeatureMode mode = objectives::FeatureMode::region;
    std::size_t max_text_len = 16;
    std::size_t grid_sample = 100; // pre-training grid sampling budget
    std::size_t region_feature_dim = 32;
    std::size_t grid_channels = 8;
    std::size_t patch_dim = 256;
    std::size_t max_patches = 8;
};

class VqaModel {
public:
    static VqaModel init(const ModelConfig& cfg, std::uint64_t seed);

    const ModelConfig& config() const { return cfg_; }
    const embedders::Tokenizer& tokenizer() const { return tokenizer_; }
    attention::EncoderStack& stack() { return stack_; }
    const std::vector<std::string>& answers() const { return answers_; }

    struct EmbedOptions {
        const std::vector<std::size_t>* corrupted_ids = nullptr; // MLM corruption
        const std::vector<std::size_t>* masked_regions = nullptr; // relative indices
        bool pretraining = false; // enables grid sampling
        Rng* rng = nullptr;       // required when pretraining with grid features
    };

    embedders::MultimodalBatch embed(const std::string& question,
                                     const embedders::ImageFeatures& features,
                                     const EmbedOptions& opts) const;
    embedders::MultimodalBatch embed(const std::string& question,
                                     const embedders::ImageFeatures& features) const;

    // Projected region rows before masking (constant wrt the graph).
    Tensor original_region_rows(const embedders::ImageFeatures& features,
                                const std::vector<std::size_t>& region_indices) const;

    struct Prediction {
        std::string answer;
        double confidence = 0.0;        // max sigmoid score
        std::vector<double> cls;        // pooled [CLS] embedding
    };
    Prediction predict(const std::string& question,
                       const embedders::ImageFeatures& features) const;

    Tensor answer_scores(const attention::EncoderStack::Output& out) const; // 1 x A sigmoid
    const objectives::Heads& heads() const { return heads_; }

    std::vector<Parameter> parameters() const;
    void save(const std::string& path_prefix) const;
    void load(const std::string& path_prefix);

private:
    ModelConfig cfg_;
    embedders::Tokenizer tokenizer_{vocabulary()};
    embedders::TextEmbedder text_embedder_;
    Parameter region_proj_, grid_proj_, patch_proj_, patch_pos_, visual_type_;
    attention::EncoderStack stack_;
    objectives::Heads heads_;
    std::vector<std::string> answers_;
};

// ---- training ---------------------------------------------------------

struct TrainConfig {
    std::size_t pretrain_steps = 300;
    std::size_t finetune_steps = 700;
    std::size_t batch_size = 8;
    double pretrain_lr = 1e-3;
    double finetune_lr = 1e-3;
    bool two_stage = true; // QA head off for the first half of pre-training
    std::uint64_t seed = 7;
};

struct LossCurveRow {
    std::size_t step = 0;
    std::string phase; // "pretrain1" | "pretrain2" | "finetune"
    double mlm = 0.0, mop = 0.0, itm = 0.0, qa = 0.0, total = 0.0;
};

struct TrainResult {
    std::vector<LossCurveRow> curve;
    // Mean total over the first/last 5 steps of the final pre-training
    // stage (both ends see the same task mix).
    double initial_pretrain_loss = 0.0;
    double final_pretrain_loss = 0.0;
    double finetune_accuracy = 0.0;     // consensus accuracy on the dataset
};

TrainResult train(VqaModel& model, const Dataset& ds, const TrainConfig& cfg);

void write_loss_csv(const std::string& path, const std::vector<LossCurveRow>& curve);

// ---- MoE benchmark ----------------------------------------------------

struct MoeBenchmark {
    std::vector<moe::GatingExample> examples;             // aligned with dataset
    std::vector<std::array<std::string, 3>> expert_answers;
    std::vector<moe::ExpertId> competence;
};

struct MoeSimConfig {
    double p_in = 0.9;  // expert correct on its own competence
    double p_out = 0.1; // and elsewhere
    std::uint64_t seed = 7;
};

// Simulated experts plus a freshly trained question-type classifier supply
// the gating features; rewards come from the consensus metric.
MoeBenchmark make_moe_benchmark(const Dataset& ds, const moe::QuestionTypeClassifier& qtype,
                                const MoeSimConfig& cfg);

struct RoutingEvaluation {
    double routed_reward = 0.0;
    double oracle_reward = 0.0;
    std::array<double, 3> single_expert_rewards{};
    double routing_vs_oracle = 0.0; // routed / oracle
};

RoutingEvaluation evaluate_routing(const moe::GatingNetwork& net, const MoeBenchmark& bench);

// Labeled corpus for the question-type classifier, from the dataset's
// competence tags.
std::vector<moe::QuestionTypeClassifier::LabeledQuestion> type_corpus(const Dataset& ds);

// ---- clock harness ----------------------------------------------------

// Angle features (sin/cos of both hands plus noise) for the toy reader.
std::vector<double> clock_features(int hour, int minute, Rng& rng, double noise = 0.05);

} // namespace vqamoe::synthetic
