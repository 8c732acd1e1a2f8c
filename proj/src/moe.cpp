#include "vqamoe/moe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vqamoe::moe {

std::string expert_name(ExpertId id) {
    switch (id) {
        case ExpertId::visual: return "visual";
        case ExpertId::text: return "text";
        case ExpertId::clock: return "clock";
    }
    return "visual";
}

namespace {

void check_confidence(double c, const char* what) {
    if (c == kAbsentSentinel) return;
    if (c < 0.0 || c > 1.0 || !std::isfinite(c)) {
        throw std::invalid_argument(std::string(what) + ": confidence must be in [0,1] or -1, got " +
                                    std::to_string(c));
    }
}

} // namespace

void GatingFeatures::validate() const {
    check_confidence(conf_visual, "GatingFeatures.conf_visual");
    check_confidence(conf_text, "GatingFeatures.conf_text");
    check_confidence(conf_clock, "GatingFeatures.conf_clock");
    for (double p : {p_ocr, p_clock, p_vision}) {
        if (p < 0.0 || p > 1.0) {
            throw std::invalid_argument("GatingFeatures: type score outside [0,1]");
        }
    }
    if (std::abs(p_ocr + p_clock + p_vision - 1.0) > 1e-9) {
        throw std::invalid_argument("GatingFeatures: type scores must sum to 1");
    }
}

std::vector<double> GatingFeatures::as_vector() const {
    return {conf_visual, conf_text, conf_clock, p_ocr, p_clock, p_vision};
}

GatingNetwork GatingNetwork::init(Rng& rng, const std::string& prefix) {
    GatingNetwork n;
    n.w1_ = {prefix + ".w1", Tensor::randn({6, 100}, rng, 0.2, true)};
    n.b1_ = {prefix + ".b1", Tensor::zeros({100}, true)};
    n.w2_ = {prefix + ".w2", Tensor::randn({100, 50}, rng, 0.2, true)};
    n.b2_ = {prefix + ".b2", Tensor::zeros({50}, true)};
    n.w3_ = {prefix + ".w3", Tensor::randn({50, 3}, rng, 0.2, true)};
    n.b3_ = {prefix + ".b3", Tensor::zeros({3}, true)};
    return n;
}

Tensor GatingNetwork::forward(const GatingFeatures& x) const {
    x.validate();
    Tensor in = Tensor::from({1, 6}, x.as_vector());
    Tensor h1 = tanh_op(add_rowvec(matmul(in, w1_.tensor), b1_.tensor));
    Tensor h2 = tanh_op(add_rowvec(matmul(h1, w2_.tensor), b2_.tensor));
    return sigmoid(add_rowvec(matmul(h2, w3_.tensor), b3_.tensor));
}

std::array<double, 3> GatingNetwork::scores(const GatingFeatures& x) const {
    const Tensor out = forward(x);
    const auto& d = out.data();
    return {d[0], d[1], d[2]};
}

std::vector<Parameter> GatingNetwork::parameters() const {
    return {w1_, b1_, w2_, b2_, w3_, b3_};
}

std::array<double, 3> reward_scores(const std::array<std::string, 3>& expert_answers,
                                    const vqa_metric::AnnotationRecord& annotation) {
    std::array<double, 3> out{};
    for (std::size_t t = 0; t < 3; ++t) {
        out[t] = vqa_metric::accuracy(expert_answers[t], annotation);
    }
    return out;
}

std::vector<double> train_gating(const std::vector<GatingExample>& dataset, GatingNetwork& net,
                                 const GatingTrainConfig& cfg, Rng& rng) {
    if (dataset.empty()) throw std::invalid_argument("train_gating: empty dataset");
    for (const auto& ex : dataset) {
        for (double r : ex.rewards) {
            if (r < 0.0 || r > 1.0) {
                throw std::invalid_argument("train_gating: reward outside [0,1]");
            }
        }
    }
    Adam opt({.learning_rate = cfg.learning_rate});
    std::vector<Parameter> params = net.parameters();
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> curve;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
            Tensor batch_loss;
            for (std::size_t i = start; i < stop; ++i) {
                const GatingExample& ex = dataset[order[i]];
                Tensor pred = net.forward(ex.features);
                Tensor target = Tensor::from({1, 3}, {ex.rewards[0], ex.rewards[1], ex.rewards[2]});
                Tensor l = binary_cross_entropy_loss(pred, target);
                batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
            }
            batch_loss = scale(batch_loss, 1.0 / static_cast<double>(stop - start));
            epoch_loss += batch_loss.value() * static_cast<double>(stop - start);
            batch_loss.backward();
            opt.step(params);
        }
        curve.push_back(epoch_loss / static_cast<double>(order.size()));
    }
    return curve;
}

ExpertId route(const std::array<double, 3>& scores) {
    // Priority order on exact ties: visual, then text, then clock.
    std::size_t best = 0;
    for (std::size_t t = 1; t < 3; ++t) {
        if (scores[t] > scores[best]) best = t;
    }
    return static_cast<ExpertId>(best);
}

std::string ensemble_vote(const std::vector<std::pair<std::string, double>>& predictions) {
    if (predictions.empty()) throw std::invalid_argument("ensemble_vote: no predictions");
    struct Tally {
        std::size_t votes = 0;
        double score_sum = 0.0;
        std::size_t first_seen = 0;
    };
    std::map<std::string, Tally> tallies;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        auto [it, inserted] = tallies.try_emplace(predictions[i].first);
        if (inserted) it->second.first_seen = i;
        ++it->second.votes;
        it->second.score_sum += predictions[i].second;
    }
    const Tally* best = nullptr;
    const std::string* best_answer = nullptr;
    for (const auto& [answer, t] : tallies) {
        if (!best || t.votes > best->votes ||
            (t.votes == best->votes && t.score_sum > best->score_sum) ||
            (t.votes == best->votes && t.score_sum == best->score_sum &&
             t.first_seen < best->first_seen)) {
            best = &t;
            best_answer = &answer;
        }
    }
    return *best_answer;
}

// ---- question-type classifier -----------------------------------------

QuestionTypeClassifier QuestionTypeClassifier::init(const embedders::Tokenizer& tokenizer,
                                                    std::size_t dim, Rng& rng) {
    QuestionTypeClassifier c;
    c.tokenizer_ = &tokenizer;
    c.embed_ = {"qtype.embed", Tensor::randn({tokenizer.vocab_size(), dim}, rng, 0.1, true)};
    c.w_ = {"qtype.w", Tensor::randn({dim, 3}, rng, 0.1, true)};
    c.b_ = {"qtype.b", Tensor::zeros({3}, true)};
    return c;
}

Tensor QuestionTypeClassifier::forward(const std::vector<std::size_t>& token_ids) const {
    std::vector<std::size_t> ids = token_ids;
    if (ids.empty()) ids.push_back(embedders::Tokenizer::kUnk);
    Tensor rows = gather_rows(embed_.tensor, ids);
    Tensor pooled = scale(matmul(Tensor::full({1, ids.size()}, 1.0), rows),
                          1.0 / static_cast<double>(ids.size()));
    return softmax_rows(add_rowvec(matmul(pooled, w_.tensor), b_.tensor));
}

std::array<double, 3> QuestionTypeClassifier::scores(const std::string& question) const {
    const Tensor out = forward(tokenizer_->encode_words(question));
    const auto& d = out.data();
    return {d[0], d[1], d[2]};
}

std::vector<Parameter> QuestionTypeClassifier::parameters() const {
    return {embed_, w_, b_};
}

bool QuestionTypeClassifier::has_clock_keywords(const std::string& question) {
    std::string lowered;
    for (char ch : question) {
        lowered.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
    return lowered.find("clock") != std::string::npos ||
           lowered.find("what time") != std::string::npos;
}

std::vector<double> QuestionTypeClassifier::train(const std::vector<LabeledQuestion>& corpus,
                                                  std::size_t epochs, double learning_rate,
                                                  Rng& rng) {
    // Keyword/ratio recipe: clock positives by keyword retrieval, OCR
    // positives from the OCR-labeled slice, negatives sampled 1:2.
    struct Item {
        std::vector<std::size_t> ids;
        std::size_t cls; // 0 ocr, 1 clock, 2 vision
    };
    std::vector<Item> positives;
    std::vector<Item> negatives_pool;
    for (const auto& q : corpus) {
        Item item{tokenizer_->encode_words(q.text), 2};
        if (has_clock_keywords(q.text) || q.label == ExpertId::clock) {
            item.cls = 1;
            positives.push_back(std::move(item));
        } else if (q.label == ExpertId::text) {
            item.cls = 0;
            positives.push_back(std::move(item));
        } else {
            negatives_pool.push_back(std::move(item));
        }
    }
    if (positives.empty()) {
        throw std::invalid_argument("QuestionTypeClassifier::train: no positive questions");
    }
    const std::size_t want_neg = std::min(negatives_pool.size(), 2 * positives.size());
    std::vector<Item> data = positives;
    for (std::size_t idx : rng.sample_indices(negatives_pool.size(), want_neg)) {
        data.push_back(negatives_pool[idx]);
    }

    Adam opt({.learning_rate = learning_rate});
    std::vector<Parameter> params = parameters();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> curve;
    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t idx : order) {
            Tensor probs = forward(data[idx].ids);
            Tensor target = Tensor::zeros({1, 3});
            target.data()[data[idx].cls] = 1.0;
            Tensor l = cross_entropy_loss(probs, target);
            total += l.value();
            l.backward();
            opt.step(params);
        }
        curve.push_back(total / static_cast<double>(data.size()));
    }
    return curve;
}

} // namespace vqamoe::moe
