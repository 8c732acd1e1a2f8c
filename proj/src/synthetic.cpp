#include "vqamoe/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "vqamoe/checkpoint.hpp"
#include "vqamoe/optim.hpp"

namespace vqamoe::synthetic {

namespace {

const std::vector<std::string> kColors = {"red",    "blue",   "green",
                                          "yellow", "purple", "orange"};
const std::vector<std::string> kCounts = {"1", "2", "3", "4", "5", "6"};
const std::vector<std::string> kOcrWords = {"stop", "exit", "open", "closed", "sale", "menu"};
const std::vector<std::pair<int, int>> kTimePairs = {{1, 0},  {2, 30}, {3, 15}, {4, 45},
                                                     {6, 5},  {7, 50}, {9, 20}, {10, 35}};

std::vector<std::string> time_strings() {
    std::vector<std::string> out;
    for (auto [h, m] : kTimePairs) out.push_back(clock_expert::format_time(h, m));
    return out;
}

std::string pick_other(const std::vector<std::string>& pool, const std::string& avoid, Rng& rng) {
    if (pool.size() < 2) return pool.front();
    for (;;) {
        const auto& cand =
            pool[static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(pool.size()) - 1))];
        if (cand != avoid) return cand;
    }
}

std::size_t answer_index(const std::string& answer) {
    const auto& all = answer_set();
    auto it = std::find(all.begin(), all.end(), answer);
    if (it == all.end()) throw std::logic_error("synthetic: answer outside the answer set");
    return static_cast<std::size_t>(it - all.begin());
}

} // namespace

const std::vector<std::string>& answer_set() {
    static const std::vector<std::string> all = [] {
        std::vector<std::string> v = {"yes", "no"};
        v.insert(v.end(), kColors.begin(), kColors.end());
        v.insert(v.end(), kCounts.begin(), kCounts.end());
        v.insert(v.end(), kOcrWords.begin(), kOcrWords.end());
        auto times = time_strings();
        v.insert(v.end(), times.begin(), times.end());
        return v;
    }();
    return all;
}

const std::vector<std::string>& vocabulary() {
    static const std::vector<std::string> words = [] {
        std::vector<std::string> v = {"what", "color", "is",   "the",  "shape", "how",
                                      "many", "shapes", "are", "in",   "image", "does",
                                      "sign", "say",    "time", "it",  "on",    "clock"};
        const auto& answers = answer_set();
        v.insert(v.end(), answers.begin(), answers.end());
        return v;
    }();
    return words;
}

Dataset generate(const GenConfig& cfg) {
    if (cfg.count == 0) throw std::invalid_argument("generate: count must be positive");
    if (cfg.region_feature_dim < answer_set().size()) {
        throw std::invalid_argument("generate: region_feature_dim must cover the answer set");
    }
    if (cfg.image_size % 32 != 0 || cfg.image_size % cfg.patch_size != 0) {
        throw std::invalid_argument("generate: image_size must be divisible by 32 and patch_size");
    }

    const auto n_vision = static_cast<std::size_t>(
        std::llround(cfg.vision_frac * static_cast<double>(cfg.count)));
    const auto n_ocr = static_cast<std::size_t>(
        std::llround(cfg.ocr_frac * static_cast<double>(cfg.count)));
    if (n_vision + n_ocr > cfg.count) {
        throw std::invalid_argument("generate: competence fractions exceed 1");
    }
    std::vector<std::string> mix;
    mix.insert(mix.end(), n_vision, "vision");
    mix.insert(mix.end(), n_ocr, "ocr");
    mix.insert(mix.end(), cfg.count - n_vision - n_ocr, "clock");
    Rng::stream(cfg.seed, "mix").shuffle(mix);

    Rng qrng = Rng::stream(cfg.seed, "questions");
    Rng frng = Rng::stream(cfg.seed, "features");
    Rng arng = Rng::stream(cfg.seed, "annotators");
    Rng crng = Rng::stream(cfg.seed, "clock");

    const auto times = time_strings();
    Dataset ds;
    for (std::size_t i = 0; i < cfg.count; ++i) {
        const std::string& comp = mix[i];
        vqa_metric::AnnotationRecord ann;
        char idbuf[16];
        std::snprintf(idbuf, sizeof idbuf, "q%05zu", i);
        ann.question_id = idbuf;

        std::string answer;
        const std::vector<std::string>* pool = nullptr;
        if (comp == "vision") {
            switch (qrng.randint(0, 2)) {
                case 0: {
                    answer = kColors[static_cast<std::size_t>(qrng.randint(0, 5))];
                    ann.question = "what color is the shape";
                    pool = &kColors;
                    break;
                }
                case 1: {
                    answer = kCounts[static_cast<std::size_t>(qrng.randint(0, 5))];
                    ann.question = "how many shapes are in the image";
                    ann.answer_type = vqa_metric::AnswerType::number;
                    pool = &kCounts;
                    break;
                }
                default: {
                    const auto& color = kColors[static_cast<std::size_t>(qrng.randint(0, 5))];
                    answer = qrng.bernoulli(0.5) ? "yes" : "no";
                    ann.question = "is the shape " + color;
                    ann.answer_type = vqa_metric::AnswerType::yes_no;
                    static const std::vector<std::string> yesno = {"yes", "no"};
                    pool = &yesno;
                    break;
                }
            }
        } else if (comp == "ocr") {
            answer = kOcrWords[static_cast<std::size_t>(qrng.randint(0, 5))];
            ann.question = "what does the sign say";
            pool = &kOcrWords;
        } else {
            answer = times[static_cast<std::size_t>(
                qrng.randint(0, static_cast<std::int64_t>(times.size()) - 1))];
            ann.question = "what time is it on the clock";
            pool = &times;
        }

        for (int a = 0; a < 10; ++a) {
            ann.answers.push_back(arng.bernoulli(cfg.disagreement)
                                      ? pick_other(*pool, answer, arng)
                                      : answer);
        }
        ann.validate();

        // Image features: noise plus a bump on the answer's channel.
        const std::size_t aid = answer_index(answer);
        embedders::ImageFeatures img;
        for (std::size_t r = 0; r < cfg.regions_per_image; ++r) {
            embedders::RegionFeature f;
            f.appearance.resize(cfg.region_feature_dim);
            for (double& v : f.appearance) v = frng.normal(0.0, 0.3);
            f.appearance[aid] += 3.0;
            const double x1 = frng.uniform(0.0, 0.5), y1 = frng.uniform(0.0, 0.5);
            f.box = {x1, y1, x1 + frng.uniform(0.1, 0.5), y1 + frng.uniform(0.1, 0.5)};
            img.regions.push_back(std::move(f));
        }
        img.grid = embedders::GridFeatureMap::from_image_size(cfg.grid_channels, cfg.image_size,
                                                              cfg.image_size);
        for (double& v : img.grid.values) v = frng.normal(0.0, 0.3);
        for (std::size_t y = 0; y < img.grid.height; ++y) {
            for (std::size_t x = 0; x < img.grid.width; ++x) {
                img.grid.values[((aid % cfg.grid_channels) * img.grid.height + y) * img.grid.width +
                                x] += 2.0;
            }
        }
        img.patches = embedders::PatchGrid::from_image(1, cfg.image_size, cfg.image_size,
                                                       cfg.patch_size);
        for (double& v : img.patches.values) v = frng.normal(0.0, 0.3);
        for (std::size_t p = 0; p < img.patches.patch_count; ++p) {
            img.patches.values[p * img.patches.patch_dim + aid] += 2.0;
        }

        // OCR cells only when the question reads text off the image.
        text_expert::OcrRecord ocr;
        ocr.question = ann.question;
        ocr.answers = {answer};
        if (comp == "ocr") {
            const double px = static_cast<double>(cfg.image_size);
            const auto answer_band = static_cast<std::size_t>(arng.randint(0, 2));
            for (std::size_t band = 0; band < 3; ++band) {
                text_expert::OcrCell cell;
                cell.words = {band == answer_band ? answer : pick_other(kOcrWords, answer, arng)};
                const double y1 = px * (0.05 + 0.3 * static_cast<double>(band));
                cell.box = {px * 0.05, y1, px * 0.5, y1 + px * 0.2};
                ocr.cells.push_back(std::move(cell));
            }
        }

        ds.has_clock.push_back(comp == "clock");
        if (comp == "clock") {
            const auto t = static_cast<std::size_t>(
                std::find(times.begin(), times.end(), answer) - times.begin());
            clock_expert::ClockRecord rec;
            rec.label = {kTimePairs[t].first, kTimePairs[t].second};
            rec.features = clock_features(rec.label.hour, rec.label.minute, crng);
            ds.clocks.push_back(std::move(rec));
        }

        ds.annotations.push_back(std::move(ann));
        ds.features.push_back(std::move(img));
        ds.ocr.push_back(std::move(ocr));
        ds.competence.push_back(comp);
        ds.answer_key.push_back(answer);
    }
    return ds;
}

void write_dataset(const Dataset& ds, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::filesystem::path root(dir);
    vqa_metric::save_annotations_jsonl((root / "annotations.jsonl").string(), ds.annotations);
    embedders::save_features_jsonl((root / "features.jsonl").string(), ds.features);
    text_expert::save_ocr_jsonl((root / "ocr.jsonl").string(), ds.ocr);
    clock_expert::save_clock_jsonl((root / "clock.jsonl").string(), ds.clocks);

    std::ofstream meta(root / "meta.jsonl");
    if (!meta) throw std::runtime_error("cannot write " + (root / "meta.jsonl").string());
    for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
        nlohmann::json j{{"question_id", ds.annotations[i].question_id},
                         {"competence", ds.competence[i]},
                         {"answer", ds.answer_key[i]},
                         {"has_clock", static_cast<bool>(ds.has_clock[i])}};
        meta << j.dump() << "\n";
    }
}

Dataset load_dataset(const std::string& dir) {
    const std::filesystem::path root(dir);
    Dataset ds;
    ds.annotations = vqa_metric::load_annotations_jsonl((root / "annotations.jsonl").string());
    ds.features = embedders::load_features_jsonl((root / "features.jsonl").string());
    ds.ocr = text_expert::load_ocr_jsonl((root / "ocr.jsonl").string());
    ds.clocks = clock_expert::load_clock_jsonl((root / "clock.jsonl").string());

    std::ifstream meta(root / "meta.jsonl");
    if (!meta) throw std::runtime_error("cannot open " + (root / "meta.jsonl").string());
    std::string line;
    while (std::getline(meta, line)) {
        if (line.empty()) continue;
        nlohmann::json j = nlohmann::json::parse(line);
        ds.competence.push_back(j.at("competence").get<std::string>());
        ds.answer_key.push_back(j.at("answer").get<std::string>());
        ds.has_clock.push_back(j.at("has_clock").get<bool>());
    }
    if (ds.competence.size() != ds.annotations.size() ||
        ds.features.size() != ds.annotations.size() || ds.ocr.size() != ds.annotations.size()) {
        throw std::runtime_error("load_dataset: inconsistent record counts in " + dir);
    }
    return ds;
}

// ---- toy VQA model ----------------------------------------------------

VqaModel VqaModel::init(const ModelConfig& cfg, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "model");
    VqaModel m;
    m.cfg_ = cfg;
    m.answers_ = answer_set();
    m.text_embedder_ = embedders::TextEmbedder::init(m.tokenizer_.vocab_size(), cfg.max_text_len,
                                                     cfg.dim, rng, "model.text_embed");
    m.region_proj_ = {"model.region_proj",
                      Tensor::randn({cfg.region_feature_dim + 4, cfg.dim}, rng, 0.05, true)};
    m.grid_proj_ = {"model.grid_proj", Tensor::randn({cfg.grid_channels, cfg.dim}, rng, 0.05, true)};
    m.patch_proj_ = {"model.patch_proj", Tensor::randn({cfg.patch_dim, cfg.dim}, rng, 0.02, true)};
    m.patch_pos_ = {"model.patch_pos", Tensor::randn({cfg.max_patches, cfg.dim}, rng, 0.02, true)};
    m.visual_type_ = {"model.visual_type", Tensor::randn({cfg.dim}, rng, 0.02, true)};
    attention::StackConfig sc{cfg.dim, cfg.layers, cfg.heads, cfg.ffn_dim, cfg.variant, false};
    m.stack_ = attention::EncoderStack::init(sc, rng, "model.encoder");
    m.heads_ = objectives::Heads::init(cfg.dim, m.tokenizer_.vocab_size(), m.answers_.size(), rng,
                                       "model.heads");
    return m;
}

embedders::MultimodalBatch VqaModel::embed(const std::string& question,
                                           const embedders::ImageFeatures& features,
                                           const EmbedOptions& opts) const {
    embedders::TextSequence seq;
    if (opts.corrupted_ids) {
        seq.ids = *opts.corrupted_ids;
    } else {
        seq = embedders::TextSequence::from_text(tokenizer_, question);
    }
    Tensor text = embed_text(seq, text_embedder_);

    const auto mode = cfg_.mode;
    const bool want_region =
        mode == objectives::FeatureMode::region || mode == objectives::FeatureMode::fusion;
    const bool want_grid =
        mode == objectives::FeatureMode::grid || mode == objectives::FeatureMode::fusion;
    const bool want_patch =
        mode == objectives::FeatureMode::patch || mode == objectives::FeatureMode::fusion;

    std::vector<Tensor> parts;
    if (want_region) {
        std::vector<embedders::RegionFeature> regions = features.regions;
        if (opts.masked_regions) {
            for (std::size_t rel : *opts.masked_regions) {
                if (rel >= regions.size()) {
                    throw std::out_of_range("VqaModel::embed: masked region index out of range");
                }
                std::fill(regions[rel].appearance.begin(), regions[rel].appearance.end(), 0.0);
            }
        }
        parts.push_back(add_rowvec(embed_region(regions, region_proj_), visual_type_.tensor));
    }
    if (want_grid) {
        Tensor g = embed_grid(features.grid, grid_proj_, visual_type_);
        if (opts.pretraining && g.rows() > cfg_.grid_sample) {
            if (!opts.rng) {
                throw std::invalid_argument("VqaModel::embed: grid sampling needs an rng");
            }
            g = embedders::sample_grids(g, cfg_.grid_sample, *opts.rng);
        }
        parts.push_back(g);
    }
    if (want_patch) {
        parts.push_back(
            add_rowvec(embed_patch(features.patches, patch_proj_, patch_pos_), visual_type_.tensor));
    }
    return embedders::fuse(text, parts);
}

embedders::MultimodalBatch VqaModel::embed(const std::string& question,
                                           const embedders::ImageFeatures& features) const {
    return embed(question, features, EmbedOptions{});
}

Tensor VqaModel::original_region_rows(const embedders::ImageFeatures& features,
                                      const std::vector<std::size_t>& region_indices) const {
    Tensor all = add_rowvec(embed_region(features.regions, region_proj_), visual_type_.tensor);
    const std::size_t d = all.cols();
    std::vector<double> data;
    data.reserve(region_indices.size() * d);
    for (std::size_t rel : region_indices) {
        if (rel >= all.rows()) {
            throw std::out_of_range("original_region_rows: region index out of range");
        }
        for (std::size_t j = 0; j < d; ++j) data.push_back(all(rel, j));
    }
    return Tensor::from({region_indices.size(), d}, std::move(data));
}

Tensor VqaModel::answer_scores(const attention::EncoderStack::Output& out) const {
    return sigmoid(add_rowvec(matmul(out.cls, heads_.qa_w.tensor), heads_.qa_b.tensor));
}

VqaModel::Prediction VqaModel::predict(const std::string& question,
                                       const embedders::ImageFeatures& features) const {
    auto out = stack_.encode(embed(question, features));
    const Tensor score_tensor = answer_scores(out);
    const auto& scores = score_tensor.data();
    std::size_t best = 0;
    for (std::size_t i = 1; i < scores.size(); ++i) {
        if (scores[i] > scores[best]) best = i;
    }
    return {answers_[best], scores[best], out.cls.data()};
}

std::vector<Parameter> VqaModel::parameters() const {
    std::vector<Parameter> out = text_embedder_.parameters();
    out.push_back(region_proj_);
    out.push_back(grid_proj_);
    out.push_back(patch_proj_);
    out.push_back(patch_pos_);
    out.push_back(visual_type_);
    for (const auto& p : stack_.parameters()) out.push_back(p);
    for (const auto& p : heads_.parameters()) out.push_back(p);
    return out;
}

void VqaModel::save(const std::string& path_prefix) const {
    checkpoint::save(path_prefix, parameters());
}

void VqaModel::load(const std::string& path_prefix) {
    std::vector<Parameter> params = parameters();
    checkpoint::load(path_prefix, params);
}

// ---- training ---------------------------------------------------------

namespace {

std::vector<double> qa_target_vector(const vqa_metric::AnnotationRecord& ann,
                                     const std::map<std::string, std::size_t>& answer_index_map,
                                     std::size_t n_answers) {
    std::vector<double> targets(n_answers, 0.0);
    for (const auto& [answer, score] : vqa_metric::soft_targets(ann)) {
        auto it = answer_index_map.find(answer);
        if (it != answer_index_map.end()) targets[it->second] = score;
    }
    return targets;
}

} // namespace

TrainResult train(VqaModel& model, const Dataset& ds, const TrainConfig& cfg) {
    if (ds.annotations.empty()) throw std::invalid_argument("train: empty dataset");
    const std::size_t n = ds.annotations.size();
    const auto mode = model.config().mode;
    Rng rng = Rng::stream(cfg.seed, "train");

    std::map<std::string, std::size_t> answer_index_map;
    for (std::size_t i = 0; i < model.answers().size(); ++i) {
        answer_index_map[vqa_metric::normalize_answer(model.answers()[i])] = i;
    }

    std::vector<Parameter> params = model.parameters();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = n; // forces a shuffle on first use
    auto next_index = [&] {
        if (cursor >= n) {
            rng.shuffle(order);
            cursor = 0;
        }
        return order[cursor++];
    };

    TrainResult result;
    Adam pre_opt({.learning_rate = cfg.pretrain_lr});
    const bool use_mop = mode == objectives::FeatureMode::region;
    for (std::size_t step = 0; step < cfg.pretrain_steps; ++step) {
        const bool second_stage = !cfg.two_stage || step >= cfg.pretrain_steps / 2;
        objectives::PretrainTasks tasks{true, use_mop, true, second_stage};

        Tensor batch_loss;
        LossCurveRow row{step, second_stage && cfg.two_stage ? "pretrain2" : "pretrain1",
                         0.0, 0.0, 0.0, 0.0, 0.0};
        if (!cfg.two_stage) row.phase = "pretrain1";
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t i = next_index();
            objectives::PretrainExample ex;
            ex.itm_matched = rng.bernoulli(0.5);
            std::size_t img = i;
            if (!ex.itm_matched && n > 1) {
                do {
                    img = static_cast<std::size_t>(rng.randint(0, static_cast<std::int64_t>(n) - 1));
                } while (img == i);
            }

            auto seq = embedders::TextSequence::from_text(model.tokenizer(),
                                                          ds.annotations[i].question);
            auto masked = objectives::mask_text(seq, model.tokenizer().vocab_size(), 0.15, rng);
            ex.text_plan = masked.plan;
            ex.mlm_targets = masked.target_ids;

            VqaModel::EmbedOptions opts;
            opts.corrupted_ids = &masked.corrupted_ids;
            opts.pretraining = true;
            opts.rng = &rng;
            std::vector<std::size_t> masked_regions;
            if (use_mop) {
                masked_regions =
                    objectives::mask_visual(ds.features[img].regions.size(), 0.15, rng).positions;
                opts.masked_regions = &masked_regions;
                ex.original_visual_rows =
                    model.original_region_rows(ds.features[img], masked_regions);
            }
            ex.batch = model.embed(ds.annotations[i].question, ds.features[img], opts);
            if (use_mop) {
                for (std::size_t rel : masked_regions) {
                    ex.visual_plan.positions.push_back(ex.batch.boundary + rel);
                }
            }
            if (ex.itm_matched) {
                ex.qa_targets = qa_target_vector(ds.annotations[i], answer_index_map,
                                                 model.answers().size());
            }

            auto losses = objectives::pretrain_step(ex, model.stack(), model.heads(), tasks, mode);
            batch_loss = batch_loss.defined() ? add(batch_loss, losses.total) : losses.total;
            row.mlm += losses.mlm;
            row.mop += losses.mop;
            row.itm += losses.itm;
            row.qa += losses.qa;
        }
        batch_loss = scale(batch_loss, 1.0 / static_cast<double>(cfg.batch_size));
        const double total = batch_loss.value();
        if (!std::isfinite(total)) {
            throw std::runtime_error("train: non-finite pre-training loss at step " +
                                     std::to_string(step) + "; lower the learning rate");
        }
        row.mlm /= static_cast<double>(cfg.batch_size);
        row.mop /= static_cast<double>(cfg.batch_size);
        row.itm /= static_cast<double>(cfg.batch_size);
        row.qa /= static_cast<double>(cfg.batch_size);
        row.total = total;
        result.curve.push_back(row);

        batch_loss.backward();
        pre_opt.step(params);
    }

    if (cfg.pretrain_steps > 0) {
        // Measured over the final stage so the task mix is the same at both ends.
        const std::size_t stage_start = cfg.two_stage ? cfg.pretrain_steps / 2 : 0;
        const std::size_t stage_len = cfg.pretrain_steps - stage_start;
        const std::size_t edge = std::min<std::size_t>(5, stage_len);
        double head = 0.0, tail = 0.0;
        for (std::size_t i = 0; i < edge; ++i) {
            head += result.curve[stage_start + i].total;
            tail += result.curve[cfg.pretrain_steps - 1 - i].total;
        }
        result.initial_pretrain_loss = head / static_cast<double>(edge);
        result.final_pretrain_loss = tail / static_cast<double>(edge);
    }

    Adam fine_opt({.learning_rate = cfg.finetune_lr});
    cursor = n;
    for (std::size_t step = 0; step < cfg.finetune_steps; ++step) {
        Tensor batch_loss;
        for (std::size_t b = 0; b < cfg.batch_size; ++b) {
            const std::size_t i = next_index();
            auto out = model.stack().encode(
                model.embed(ds.annotations[i].question, ds.features[i]));
            Tensor l = objectives::vqa_head_loss(
                out.cls,
                qa_target_vector(ds.annotations[i], answer_index_map, model.answers().size()),
                model.heads().qa_w, model.heads().qa_b);
            batch_loss = batch_loss.defined() ? add(batch_loss, l) : l;
        }
        batch_loss = scale(batch_loss, 1.0 / static_cast<double>(cfg.batch_size));
        const double total = batch_loss.value();
        if (!std::isfinite(total)) {
            throw std::runtime_error("train: non-finite fine-tuning loss at step " +
                                     std::to_string(step) + "; lower the learning rate");
        }
        result.curve.push_back({step, "finetune", 0.0, 0.0, 0.0, total, total});
        batch_loss.backward();
        fine_opt.step(params);
    }

    std::map<std::string, std::string> predictions;
    for (std::size_t i = 0; i < n; ++i) {
        predictions[ds.annotations[i].question_id] =
            model.predict(ds.annotations[i].question, ds.features[i]).answer;
    }
    result.finetune_accuracy = vqa_metric::evaluate(predictions, ds.annotations).overall;
    return result;
}

void write_loss_csv(const std::string& path, const std::vector<LossCurveRow>& curve) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << "step,phase,mlm,mop,itm,qa,total\n";
    for (const auto& row : curve) {
        out << row.step << "," << row.phase << "," << row.mlm << "," << row.mop << "," << row.itm
            << "," << row.qa << "," << row.total << "\n";
    }
}

// ---- MoE benchmark ----------------------------------------------------

MoeBenchmark make_moe_benchmark(const Dataset& ds, const moe::QuestionTypeClassifier& qtype,
                                const MoeSimConfig& cfg) {
    Rng rng = Rng::stream(cfg.seed, "moe");
    const auto& answers = answer_set();
    MoeBenchmark bench;
    for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
        const std::string& comp = ds.competence[i];
        const auto comp_id = comp == "ocr"     ? moe::ExpertId::text
                             : comp == "clock" ? moe::ExpertId::clock
                                               : moe::ExpertId::visual;
        const bool text_absent = ds.ocr[i].cells.empty();
        const bool clock_absent = !ds.has_clock[i];

        std::array<std::string, 3> expert_answers;
        moe::GatingFeatures feat;
        double confs[3];
        for (std::size_t t = 0; t < 3; ++t) {
            const bool absent = (t == 1 && text_absent) || (t == 2 && clock_absent);
            const bool correct =
                !absent &&
                rng.bernoulli(static_cast<std::size_t>(comp_id) == t ? cfg.p_in : cfg.p_out);
            expert_answers[t] =
                correct ? ds.answer_key[i] : pick_other(answers, ds.answer_key[i], rng);
            confs[t] = absent ? moe::kAbsentSentinel
                              : (correct ? rng.uniform(0.6, 0.95) : rng.uniform(0.05, 0.4));
        }
        feat.conf_visual = confs[0];
        feat.conf_text = confs[1];
        feat.conf_clock = confs[2];
        const auto type_scores = qtype.scores(ds.annotations[i].question);
        feat.p_ocr = type_scores[0];
        feat.p_clock = type_scores[1];
        feat.p_vision = type_scores[2];
        feat.validate();

        bench.examples.push_back(
            {feat, moe::reward_scores(expert_answers, ds.annotations[i])});
        bench.expert_answers.push_back(expert_answers);
        bench.competence.push_back(comp_id);
    }
    return bench;
}

RoutingEvaluation evaluate_routing(const moe::GatingNetwork& net, const MoeBenchmark& bench) {
    if (bench.examples.empty()) throw std::invalid_argument("evaluate_routing: empty benchmark");
    RoutingEvaluation ev;
    for (const auto& ex : bench.examples) {
        const auto routed = moe::route(net.scores(ex.features));
        ev.routed_reward += ex.rewards[static_cast<std::size_t>(routed)];
        ev.oracle_reward += *std::max_element(ex.rewards.begin(), ex.rewards.end());
        for (std::size_t t = 0; t < 3; ++t) ev.single_expert_rewards[t] += ex.rewards[t];
    }
    const double n = static_cast<double>(bench.examples.size());
    ev.routed_reward /= n;
    ev.oracle_reward /= n;
    for (double& r : ev.single_expert_rewards) r /= n;
    ev.routing_vs_oracle = ev.oracle_reward > 0.0 ? ev.routed_reward / ev.oracle_reward : 1.0;
    return ev;
}

std::vector<moe::QuestionTypeClassifier::LabeledQuestion> type_corpus(const Dataset& ds) {
    std::vector<moe::QuestionTypeClassifier::LabeledQuestion> out;
    for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
        const auto label = ds.competence[i] == "ocr"     ? moe::ExpertId::text
                           : ds.competence[i] == "clock" ? moe::ExpertId::clock
                                                         : moe::ExpertId::visual;
        out.push_back({ds.annotations[i].question, label});
    }
    return out;
}

// ---- clock harness ----------------------------------------------------

std::vector<double> clock_features(int hour, int minute, Rng& rng, double noise) {
    const double pi = std::acos(-1.0);
    const double th = 2.0 * pi * (static_cast<double>(hour) + static_cast<double>(minute) / 60.0) /
                      12.0;
    const double tm = 2.0 * pi * static_cast<double>(minute) / 60.0;
    std::vector<double> f = {std::sin(th), std::cos(th), std::sin(tm), std::cos(tm),
                             0.0,          0.0,          0.0,          0.0};
    for (double& v : f) v += rng.normal(0.0, noise);
    return f;
}

} // namespace vqamoe::synthetic
