#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "vqamoe/attention.hpp"
#include "vqamoe/clock_expert.hpp"
#include "vqamoe/knowledge_mining.hpp"
#include "vqamoe/moe.hpp"
#include "vqamoe/objectives.hpp"
#include "vqamoe/optim.hpp"
#include "vqamoe/synthetic.hpp"
#include "vqamoe/vqa_metric.hpp"

namespace {

using namespace vqamoe;

using ConfigMap = std::map<std::string, std::string>;

ConfigMap load_config_file(const std::string& path) {
    ConfigMap cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw CLI::ValidationError("--config", "cannot open config file: " + path);
    std::string line;
    while (std::getline(in, line)) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        if (!key.empty()) cfg[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

struct Options {
    std::string config_path;
    std::string out = "out";
    std::string data;
    std::uint64_t seed = 7;
    bool seed_set = false;
    std::vector<std::string> overrides;

    ConfigMap resolve() const {
        ConfigMap cfg = load_config_file(config_path);
        for (const auto& kv : overrides) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) {
                throw CLI::ValidationError("--set", "expected key=value, got: " + kv);
            }
            cfg[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
        if (seed_set || !cfg.count("seed")) cfg["seed"] = std::to_string(seed);
        return cfg;
    }
};

std::string get_str(const ConfigMap& cfg, const std::string& key, const std::string& dflt) {
    auto it = cfg.find(key);
    return it == cfg.end() ? dflt : it->second;
}

double get_num(const ConfigMap& cfg, const std::string& key, double dflt) {
    auto it = cfg.find(key);
    return it == cfg.end() ? dflt : std::stod(it->second);
}

std::size_t get_size(const ConfigMap& cfg, const std::string& key, std::size_t dflt) {
    return static_cast<std::size_t>(get_num(cfg, key, static_cast<double>(dflt)));
}

bool get_bool(const ConfigMap& cfg, const std::string& key, bool dflt) {
    auto it = cfg.find(key);
    if (it == cfg.end()) return dflt;
    return it->second == "1" || it->second == "true" || it->second == "yes";
}

synthetic::GenConfig gen_config(const ConfigMap& cfg) {
    synthetic::GenConfig g;
    g.seed = static_cast<std::uint64_t>(get_num(cfg, "seed", 7));
    g.count = get_size(cfg, "count", g.count);
    g.vision_frac = get_num(cfg, "vision_frac", g.vision_frac);
    g.ocr_frac = get_num(cfg, "ocr_frac", g.ocr_frac);
    g.disagreement = get_num(cfg, "disagreement", g.disagreement);
    g.regions_per_image = get_size(cfg, "regions_per_image", g.regions_per_image);
    return g;
}

synthetic::ModelConfig model_config(const ConfigMap& cfg) {
    synthetic::ModelConfig m;
    m.dim = get_size(cfg, "dim", m.dim);
    m.layers = get_size(cfg, "layers", m.layers);
    m.heads = get_size(cfg, "heads", m.heads);
    m.ffn_dim = get_size(cfg, "ffn_dim", m.ffn_dim);
    const std::string variant = get_str(cfg, "variant", "param");
    if (variant == "param") m.variant = attention::EpsVariant::param;
    else if (variant == "ffn") m.variant = attention::EpsVariant::ffn;
    else throw CLI::ValidationError("variant", "expected param|ffn, got: " + variant);
    const std::string mode = get_str(cfg, "mode", "region");
    if (mode == "region") m.mode = objectives::FeatureMode::region;
    else if (mode == "grid") m.mode = objectives::FeatureMode::grid;
    else if (mode == "patch") m.mode = objectives::FeatureMode::patch;
    else if (mode == "fusion") m.mode = objectives::FeatureMode::fusion;
    else throw CLI::ValidationError("mode", "expected region|grid|patch|fusion, got: " + mode);
    return m;
}

std::string data_dir(const Options& opt, const ConfigMap& cfg) {
    std::string dir = opt.data.empty() ? get_str(cfg, "data_dir", "") : opt.data;
    if (dir.empty()) {
        throw CLI::ValidationError(
            "--data", "no dataset directory; pass --data or set data_dir, or run `gen` first");
    }
    if (!std::filesystem::exists(std::filesystem::path(dir) / "annotations.jsonl")) {
        throw CLI::ValidationError("--data", "no annotations.jsonl under " + dir +
                                                 "; run the gen subcommand first");
    }
    return dir;
}

void write_text(const std::string& path, const std::string& body) {
    std::filesystem::create_directories(std::filesystem::path(path).parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    out << body;
}

int cmd_gen(const Options& opt) {
    const ConfigMap cfg = opt.resolve();
    const synthetic::Dataset ds = synthetic::generate(gen_config(cfg));
    std::filesystem::create_directories(opt.out);
    synthetic::write_dataset(ds, opt.out);
    std::map<std::string, std::size_t> counts;
    for (const auto& c : ds.competence) ++counts[c];
    nlohmann::json j{{"questions", ds.annotations.size()}, {"competence_counts", counts}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_train(const Options& opt) {
    const ConfigMap cfg = opt.resolve();
    const synthetic::Dataset ds = synthetic::load_dataset(data_dir(opt, cfg));
    synthetic::VqaModel model = synthetic::VqaModel::init(
        model_config(cfg), static_cast<std::uint64_t>(get_num(cfg, "seed", 7)));

    synthetic::TrainConfig tc;
    tc.seed = static_cast<std::uint64_t>(get_num(cfg, "seed", 7));
    tc.pretrain_steps = get_size(cfg, "pretrain_steps", tc.pretrain_steps);
    tc.finetune_steps = get_size(cfg, "finetune_steps", tc.finetune_steps);
    tc.batch_size = get_size(cfg, "batch_size", tc.batch_size);
    tc.pretrain_lr = get_num(cfg, "pretrain_lr", tc.pretrain_lr);
    tc.finetune_lr = get_num(cfg, "finetune_lr", tc.finetune_lr);
    tc.two_stage = get_bool(cfg, "two_stage", tc.two_stage);

    const synthetic::TrainResult result = synthetic::train(model, ds, tc);
    std::filesystem::create_directories(opt.out);
    model.save((std::filesystem::path(opt.out) / "model").string());
    synthetic::write_loss_csv((std::filesystem::path(opt.out) / "loss_curve.csv").string(),
                              result.curve);
    nlohmann::json j{{"initial_pretrain_loss", result.initial_pretrain_loss},
                     {"final_pretrain_loss", result.final_pretrain_loss},
                     {"finetune_accuracy", result.finetune_accuracy}};
    write_text((std::filesystem::path(opt.out) / "train_report.json").string(), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_mine(const Options& opt) {
    const ConfigMap cfg = opt.resolve();
    const synthetic::Dataset ds = synthetic::load_dataset(data_dir(opt, cfg));
    const auto seed = static_cast<std::uint64_t>(get_num(cfg, "seed", 7));

    // Pooled embeddings stand in for the base model: one tight cluster per
    // competence, low confidence on a seeded subset of each.
    Rng rng = Rng::stream(seed, "mine");
    std::map<std::string, std::vector<double>> centers = {
        {"vision", {10.0, 0.0, 0.0, 0.0}},
        {"ocr", {0.0, 10.0, 0.0, 0.0}},
        {"clock", {0.0, 0.0, 10.0, 0.0}},
    };
    std::vector<knowledge_mining::ScoredExample> examples;
    for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
        knowledge_mining::ScoredExample e;
        e.id = ds.annotations[i].question_id;
        e.embedding = centers.at(ds.competence[i]);
        for (double& v : e.embedding) v += rng.normal(0.0, 0.5);
        e.confidence = rng.bernoulli(0.3) ? rng.uniform(0.0, 0.09) : rng.uniform(0.5, 1.0);
        e.reference_label = ds.competence[i];
        examples.push_back(std::move(e));
    }

    const double threshold = get_num(cfg, "confidence_threshold", 0.1);
    const std::size_t k = get_size(cfg, "k", 3);
    const auto report = knowledge_mining::mine(examples, threshold, k, seed);
    std::filesystem::create_directories(opt.out);
    write_text((std::filesystem::path(opt.out) / "mining.json").string(),
               knowledge_mining::report_json(report) + "\n");
    write_text((std::filesystem::path(opt.out) / "k_sweep.csv").string(),
               knowledge_mining::k_sweep_csv(examples, threshold, get_size(cfg, "k_min", 3),
                                             get_size(cfg, "k_max", 5), seed));
    std::cout << knowledge_mining::report_json(report) << "\n";
    const double min_purity = get_num(cfg, "min_purity", 0.95);
    if (report.has_labels && report.metrics.accuracy < min_purity) {
        std::cerr << "mine: cluster purity " << report.metrics.accuracy << " below "
                  << min_purity << "\n";
        return 1;
    }
    return 0;
}

int cmd_route(const Options& opt) {
    const ConfigMap cfg = opt.resolve();
    const synthetic::Dataset ds = synthetic::load_dataset(data_dir(opt, cfg));
    const auto seed = static_cast<std::uint64_t>(get_num(cfg, "seed", 7));

    embedders::Tokenizer tokenizer(synthetic::vocabulary());
    Rng qrng = Rng::stream(seed, "qtype");
    auto qtype = moe::QuestionTypeClassifier::init(tokenizer, 16, qrng);
    qtype.train(synthetic::type_corpus(ds), get_size(cfg, "qtype_epochs", 10), 0.05, qrng);

    synthetic::MoeSimConfig sim;
    sim.seed = seed;
    sim.p_in = get_num(cfg, "p_in", sim.p_in);
    sim.p_out = get_num(cfg, "p_out", sim.p_out);
    const auto bench = synthetic::make_moe_benchmark(ds, qtype, sim);

    Rng grng = Rng::stream(seed, "gating");
    auto net = moe::GatingNetwork::init(grng);
    moe::GatingTrainConfig gc;
    gc.epochs = get_size(cfg, "gating_epochs", gc.epochs);
    gc.learning_rate = get_num(cfg, "gating_lr", gc.learning_rate);
    moe::train_gating(bench.examples, net, gc, grng);

    const auto ev = synthetic::evaluate_routing(net, bench);
    nlohmann::json j{{"routed_reward", ev.routed_reward},
                     {"oracle_reward", ev.oracle_reward},
                     {"routing_vs_oracle", ev.routing_vs_oracle},
                     {"single_expert_rewards", ev.single_expert_rewards}};
    std::filesystem::create_directories(opt.out);
    write_text((std::filesystem::path(opt.out) / "routing.json").string(), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    const double best_single =
        *std::max_element(ev.single_expert_rewards.begin(), ev.single_expert_rewards.end());
    if (ev.routed_reward <= best_single) {
        std::cerr << "route: routed reward " << ev.routed_reward
                  << " does not beat the best single expert " << best_single << "\n";
        return 1;
    }
    return 0;
}

int cmd_eval(const Options& opt) {
    const ConfigMap cfg = opt.resolve();
    const synthetic::Dataset ds = synthetic::load_dataset(data_dir(opt, cfg));
    std::map<std::string, std::string> predictions;
    const std::string pred_path = get_str(cfg, "predictions", "");
    if (pred_path.empty()) {
        // Oracle predictions straight from the generator's answer key.
        for (std::size_t i = 0; i < ds.annotations.size(); ++i) {
            predictions[ds.annotations[i].question_id] = ds.answer_key[i];
        }
    } else {
        predictions = vqa_metric::load_predictions_jsonl(pred_path);
    }
    const auto report = vqa_metric::evaluate(predictions, ds.annotations);
    std::filesystem::create_directories(opt.out);
    nlohmann::json j{{"overall", report.overall},
                     {"per_type", report.per_type},
                     {"type_counts", report.type_counts},
                     {"total_questions", report.total_questions},
                     {"missing_predictions", report.missing_predictions}};
    write_text((std::filesystem::path(opt.out) / "eval.json").string(), j.dump(2) + "\n");
    std::cout << vqa_metric::report_table(report);
    return 0;
}

int cmd_clock_check(const Options& opt) {
    const ConfigMap cfg = opt.resolve();
    const auto seed = static_cast<std::uint64_t>(get_num(cfg, "seed", 7));
    Rng rng = Rng::stream(seed, "clock-check");

    std::vector<clock_expert::ClockRecord> data;
    const std::size_t count = get_size(cfg, "clock_count", 300);
    for (std::size_t i = 0; i < count; ++i) {
        clock_expert::ClockRecord rec;
        rec.label = {static_cast<int>(rng.randint(0, 11)),
                     static_cast<int>(rng.randint(0, 11)) * 5};
        rec.features = synthetic::clock_features(rec.label.hour, rec.label.minute, rng);
        data.push_back(std::move(rec));
    }

    auto reader = clock_expert::ToyClockReader::init(data.front().features.size(), 32, rng);
    Adam opt_state({.learning_rate = get_num(cfg, "clock_lr", 0.01)});
    const auto curve = reader.train(data, get_size(cfg, "clock_epochs", 60), opt_state, rng);

    std::size_t correct = 0;
    for (const auto& rec : data) {
        const auto [h, m] = clock_expert::decode_time(reader.predict(rec.features));
        if (h == rec.label.hour && m == rec.label.minute) ++correct;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(data.size());
    nlohmann::json j{{"examples", data.size()},
                     {"decode_accuracy", acc},
                     {"first_epoch_loss", curve.front()},
                     {"last_epoch_loss", curve.back()}};
    std::filesystem::create_directories(opt.out);
    write_text((std::filesystem::path(opt.out) / "clock_check.json").string(), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    const double min_acc = get_num(cfg, "clock_min_accuracy", 0.8);
    if (acc < min_acc) {
        std::cerr << "clock-check: decode accuracy " << acc << " below " << min_acc << "\n";
        return 1;
    }
    return 0;
}

double check_encoder(attention::EpsVariant variant, std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "grad-encoder");
    attention::StackConfig sc{8, 2, 2, 16, variant, false};
    auto stack = attention::EncoderStack::init(sc, rng, "gc");
    embedders::MultimodalBatch batch;
    batch.sequence = Tensor::randn({5, 8}, rng, 0.5);
    batch.boundary = 2;
    batch.is_visual = {false, false, true, true, true};
    auto params = stack.parameters();
    return grad_check([&] { return mean(stack.encode(batch).sequence); }, params);
}

double check_losses(std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "grad-losses");
    double worst = 0.0;
    {
        Parameter logits{"gc.ce", Tensor::randn({3, 4}, rng, 0.5, true)};
        Tensor target = Tensor::from({3, 4}, {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1});
        std::vector<Parameter> ps{logits};
        worst = std::max(worst, grad_check(
            [&] { return cross_entropy_loss(softmax_rows(logits.tensor), target); }, ps));
    }
    {
        Parameter raw{"gc.bce", Tensor::randn({2, 3}, rng, 0.5, true)};
        Tensor target = Tensor::from({2, 3}, {1, 0, 0.5, 0.25, 1, 0});
        std::vector<Parameter> ps{raw};
        worst = std::max(worst, grad_check(
            [&] { return binary_cross_entropy_loss(sigmoid(raw.tensor), target); }, ps));
    }
    {
        Parameter pred{"gc.sl1", Tensor::randn({2, 3}, rng, 2.0, true)};
        Tensor target = Tensor::randn({2, 3}, rng, 2.0);
        std::vector<Parameter> ps{pred};
        worst = std::max(worst, grad_check(
            [&] { return smooth_l1_loss(pred.tensor, target); }, ps));
    }
    return worst;
}

double check_clock_loss(std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "grad-clock");
    Parameter hour_logits{"gc.hl", Tensor::randn({1, 12}, rng, 0.5, true)};
    Parameter minute_logits{"gc.ml", Tensor::randn({1, 12}, rng, 0.5, true)};
    Parameter hands{"gc.hands", Tensor::from({1, 2}, {0.3, -0.4}, true)};
    std::vector<Parameter> ps{hour_logits, minute_logits, hands};
    clock_expert::ClockLabel label{4, 35};
    return grad_check([&] {
        // Hand values stay away from the floor discontinuities by construction.
        Tensor hv = add_scalar(scale(sigmoid(slice_cols(hands.tensor, 0, 1)), 11.0), 0.4);
        Tensor mv = add_scalar(scale(sigmoid(slice_cols(hands.tensor, 1, 2)), 58.0), 0.7);
        return clock_expert::clock_total_loss(softmax_rows(hour_logits.tensor),
                                              softmax_rows(minute_logits.tensor), hv, mv, label)
            .total;
    }, ps);
}

double check_gating(std::uint64_t seed) {
    Rng rng = Rng::stream(seed, "grad-gating");
    auto net = moe::GatingNetwork::init(rng, "gc.gating");
    moe::GatingFeatures x{0.8, -1.0, 0.3, 0.2, 0.1, 0.7};
    Tensor target = Tensor::from({1, 3}, {0.9, 0.0, 0.4});
    auto params = net.parameters();
    return grad_check([&] { return binary_cross_entropy_loss(net.forward(x), target); }, params);
}

int cmd_grad_check(const Options& opt) {
    const ConfigMap cfg = opt.resolve();
    const auto seed = static_cast<std::uint64_t>(get_num(cfg, "seed", 7));
    const double tolerance = get_num(cfg, "grad_tolerance", 1e-4);

    std::map<std::string, double> errors;
    errors["encoder_param_eps"] = check_encoder(attention::EpsVariant::param, seed);
    errors["encoder_ffn_eps"] = check_encoder(attention::EpsVariant::ffn, seed);
    errors["losses"] = check_losses(seed);
    errors["clock_total_loss"] = check_clock_loss(seed);
    errors["gating_mlp"] = check_gating(seed);

    double worst = 0.0;
    nlohmann::json j;
    for (const auto& [name, err] : errors) {
        j[name] = err;
        worst = std::max(worst, err);
    }
    j["max_relative_error"] = worst;
    j["tolerance"] = tolerance;
    std::filesystem::create_directories(opt.out);
    write_text((std::filesystem::path(opt.out) / "grad_check.json").string(), j.dump(2) + "\n");
    std::cout << j.dump(2) << "\n";
    if (worst >= tolerance) {
        std::cerr << "grad-check: max relative error " << worst << " exceeds " << tolerance
                  << "\n";
        return 1;
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Desk-scale multimodal VQA toolkit: synthetic data, toy training, "
                 "expert routing, mining, and evaluation"};
    app.require_subcommand(1);

    Options opt;
    app.add_option("--config", opt.config_path, "key=value config file");
    app.add_option("--seed", opt.seed, "RNG seed (overrides the config)")
        ->each([&](const std::string&) { opt.seed_set = true; });
    app.add_option("--out", opt.out, "output directory");
    app.add_option("--data", opt.data, "dataset directory (from the gen subcommand)");
    app.add_option("--set", opt.overrides, "config override, key=value; wins over --config");

    int rc = 0;
    auto bind = [&](const char* name, const char* desc, int (*fn)(const Options&)) {
        auto* sub = app.add_subcommand(name, desc);
        sub->fallthrough();
        sub->callback([&opt, &rc, fn] { rc = fn(opt); });
    };
    bind("gen", "generate the synthetic three-competence dataset", cmd_gen);
    bind("train", "pre-train and fine-tune the toy VQA model", cmd_train);
    bind("mine", "cluster low-confidence questions and report consistency", cmd_mine);
    bind("route", "train gating on the expert benchmark and evaluate routing", cmd_route);
    bind("eval", "score predictions with the consensus metric", cmd_eval);
    bind("clock-check", "train the toy clock reader and check decoding", cmd_clock_check);
    bind("grad-check", "finite-difference checks across the differentiable stack",
         cmd_grad_check);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return rc;
}
