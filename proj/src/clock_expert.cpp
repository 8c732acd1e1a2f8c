#include "vqamoe/clock_expert.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace vqamoe::clock_expert {

namespace {

void check_distribution(const std::vector<double>& p, const char* what) {
    if (p.size() != 12) {
        throw std::invalid_argument(std::string(what) + ": expected 12 categories, got " +
                                    std::to_string(p.size()));
    }
    double z = 0.0;
    for (double v : p) {
        if (v < 0.0 || !std::isfinite(v)) {
            throw std::invalid_argument(std::string(what) + ": malformed probability");
        }
        z += v;
    }
    if (std::abs(z - 1.0) > 1e-9) {
        throw std::invalid_argument(std::string(what) + ": probabilities sum to " +
                                    std::to_string(z));
    }
}

} // namespace

void ClockPrediction::validate() const {
    check_distribution(hour_probs, "ClockPrediction.hour");
    check_distribution(minute_probs, "ClockPrediction.minute");
    if (hour_value < 0.0 || hour_value >= 12.0 || minute_value < 0.0 || minute_value >= 60.0) {
        throw std::invalid_argument("ClockPrediction: continuous value out of range");
    }
}

void ClockLabel::validate() const {
    if (hour < 0 || hour > 11 || minute < 0 || minute > 59) {
        throw std::invalid_argument("ClockLabel: out of range " + std::to_string(hour) + ":" +
                                    std::to_string(minute));
    }
}

Tensor clock_cls_loss(const Tensor& hour_probs, const Tensor& minute_probs,
                      const ClockLabel& label) {
    label.validate();
    if (hour_probs.numel() != 12 || minute_probs.numel() != 12) {
        throw std::invalid_argument("clock_cls_loss: heads must have 12 categories");
    }
    Tensor hour_target = Tensor::zeros(hour_probs.shape());
    hour_target.data()[static_cast<std::size_t>(label.hour)] = 1.0;
    Tensor minute_target = Tensor::zeros(minute_probs.shape());
    minute_target.data()[static_cast<std::size_t>(label.minute / 5)] = 1.0;
    return add(cross_entropy_loss(hour_probs, hour_target),
               cross_entropy_loss(minute_probs, minute_target));
}

Tensor clock_reg_loss(const Tensor& predictions, const Tensor& targets, double period) {
    if (period <= 0.0) throw std::invalid_argument("clock_reg_loss: period must be positive");
    if (predictions.shape() != targets.shape()) {
        throw std::invalid_argument("clock_reg_loss: shape mismatch");
    }
    const double w = 2.0 * M_PI / period;
    Tensor phase = add_scalar(scale(sub(predictions, targets), w), -M_PI);
    return sum(add_scalar(cos_op(phase), 1.0));
}

Tensor clock_self_loss(const Tensor& hour_values, const Tensor& minute_values, double period) {
    if (hour_values.shape() != minute_values.shape()) {
        throw std::invalid_argument("clock_self_loss: shape mismatch");
    }
    // floor(p_h) enters as a constant; its gradient is zero almost everywhere.
    Tensor floors = Tensor::zeros(hour_values.shape());
    for (std::size_t i = 0; i < hour_values.numel(); ++i) {
        floors.data()[i] = std::floor(hour_values.data()[i]);
    }
    Tensor residual = sub(scale(sub(hour_values, floors), period), minute_values);
    return smooth_l1_loss(residual, Tensor::zeros(residual.shape()));
}

ClockLosses clock_total_loss(const Tensor& hour_probs, const Tensor& minute_probs,
                             const Tensor& hour_value, const Tensor& minute_value,
                             const ClockLabel& label, const TotalLossConfig& cfg) {
    if (cfg.lambda < 0.0) throw std::invalid_argument("clock_total_loss: lambda must be >= 0");
    label.validate();
    Tensor cls = clock_cls_loss(hour_probs, minute_probs, label);
    Tensor self = clock_self_loss(hour_value, minute_value, 60.0);
    const double hour_period = cfg.hour_period_12 ? 12.0 : 60.0;
    Tensor reg_h = clock_reg_loss(hour_value,
                                  Tensor::full(hour_value.shape(), static_cast<double>(label.hour)),
                                  hour_period);
    Tensor reg_m = clock_reg_loss(
        minute_value, Tensor::full(minute_value.shape(), static_cast<double>(label.minute)), 60.0);

    ClockLosses out;
    out.cls = cls.value();
    out.self = self.value();
    out.reg_hour = reg_h.value();
    out.reg_minute = reg_m.value();
    out.total = add(add(cls, self), scale(add(reg_h, reg_m), cfg.lambda));
    return out;
}

std::pair<int, int> decode_time(const ClockPrediction& pred) {
    pred.validate();
    const auto hour_it = std::max_element(pred.hour_probs.begin(), pred.hour_probs.end());
    const auto min_it = std::max_element(pred.minute_probs.begin(), pred.minute_probs.end());
    const int hour = static_cast<int>(hour_it - pred.hour_probs.begin());
    const int minute = 5 * static_cast<int>(min_it - pred.minute_probs.begin());
    return {hour, minute};
}

std::string format_time(int hour, int minute) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "%d:%02d", hour, minute);
    return buf;
}

// ---- JSONL ------------------------------------------------------------

std::vector<ClockRecord> load_clock_jsonl(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open clock file: " + path);
    std::vector<ClockRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        auto j = nlohmann::json::parse(line);
        ClockRecord r;
        r.label.hour = j.at("hour").get<int>();
        r.label.minute = j.at("minute").get<int>();
        r.label.validate();
        r.features = j.at("features").get<std::vector<double>>();
        out.push_back(std::move(r));
    }
    return out;
}

void save_clock_jsonl(const std::string& path, const std::vector<ClockRecord>& records) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write clock file: " + path);
    for (const auto& r : records) {
        nlohmann::json j{{"hour", r.label.hour},
                         {"minute", r.label.minute},
                         {"features", r.features}};
        out << j.dump() << "\n";
    }
}

// ---- toy reader -------------------------------------------------------

ToyClockReader ToyClockReader::init(std::size_t feature_dim, std::size_t hidden, Rng& rng) {
    ToyClockReader r;
    r.feature_dim_ = feature_dim;
    r.w1_ = {"clock.w1", Tensor::randn({feature_dim, hidden}, rng, 0.3, true)};
    r.b1_ = {"clock.b1", Tensor::zeros({hidden}, true)};
    r.hour_w_ = {"clock.hour_w", Tensor::randn({hidden, 12}, rng, 0.3, true)};
    r.hour_b_ = {"clock.hour_b", Tensor::zeros({12}, true)};
    r.minute_w_ = {"clock.minute_w", Tensor::randn({hidden, 12}, rng, 0.3, true)};
    r.minute_b_ = {"clock.minute_b", Tensor::zeros({12}, true)};
    r.reg_w_ = {"clock.reg_w", Tensor::randn({hidden, 2}, rng, 0.3, true)};
    r.reg_b_ = {"clock.reg_b", Tensor::zeros({2}, true)};
    return r;
}

ToyClockReader::Forward ToyClockReader::forward(const std::vector<double>& features) const {
    if (features.size() != feature_dim_) {
        throw std::invalid_argument("ToyClockReader: feature width mismatch");
    }
    Tensor x = Tensor::from({1, feature_dim_}, features);
    Tensor h = tanh_op(add_rowvec(matmul(x, w1_.tensor), b1_.tensor));
    Forward f;
    f.hour_probs = softmax_rows(add_rowvec(matmul(h, hour_w_.tensor), hour_b_.tensor));
    f.minute_probs = softmax_rows(add_rowvec(matmul(h, minute_w_.tensor), minute_b_.tensor));
    Tensor reg = sigmoid(add_rowvec(matmul(h, reg_w_.tensor), reg_b_.tensor));
    // Continuous hands squashed into their half-open ranges.
    f.hour_value = scale(slice_cols(reg, 0, 1), 12.0 * (1.0 - 1e-9));
    f.minute_value = scale(slice_cols(reg, 1, 2), 60.0 * (1.0 - 1e-9));
    return f;
}

ClockPrediction ToyClockReader::predict(const std::vector<double>& features) const {
    Forward f = forward(features);
    ClockPrediction p;
    p.hour_probs = f.hour_probs.data();
    p.minute_probs = f.minute_probs.data();
    p.hour_value = f.hour_value.data()[0];
    p.minute_value = f.minute_value.data()[0];
    return p;
}

std::vector<Parameter> ToyClockReader::parameters() const {
    return {w1_, b1_, hour_w_, hour_b_, minute_w_, minute_b_, reg_w_, reg_b_};
}

std::vector<double> ToyClockReader::train(const std::vector<ClockRecord>& data,
                                          std::size_t epochs, Adam& opt, Rng& rng,
                                          const TotalLossConfig& cfg) {
    if (data.empty()) throw std::invalid_argument("ToyClockReader::train: empty dataset");
    std::vector<Parameter> params = parameters();
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<double> curve;
    for (std::size_t e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        double total = 0.0;
        for (std::size_t idx : order) {
            const ClockRecord& r = data[idx];
            Forward f = forward(r.features);
            ClockLosses l = clock_total_loss(f.hour_probs, f.minute_probs, f.hour_value,
                                             f.minute_value, r.label, cfg);
            total += l.total.value();
            l.total.backward();
            opt.step(params);
        }
        curve.push_back(total / static_cast<double>(data.size()));
    }
    return curve;
}

} // namespace vqamoe::clock_expert
