#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "vqamoe/optim.hpp"
#include "vqamoe/tensor.hpp"

namespace vqamoe::clock_expert {

// One clock reading: two 12-way classification heads plus continuous
// regression values for each hand.
struct ClockPrediction {
    std::vector<double> hour_probs;   // 12
    std::vector<double> minute_probs; // 12 five-minute bins
    double hour_value = 0.0;          // hours in [0, 12)
    double minute_value = 0.0;        // minutes in [0, 60)

    void validate() const;
};

struct ClockLabel {
    int hour = 0;   // 0..11
    int minute = 0; // 0..59

    void validate() const;
};

// Cross-entropy over the hour head and the 5-minute-bin head (bin =
// floor(minute / 5)), summed.
Tensor clock_cls_loss(const Tensor& hour_probs, const Tensor& minute_probs,
                      const ClockLabel& label);

// Per-item cos(2*pi*(p-g)/C - pi) + 1, summed over the batch. Equal to
// 1 - cos(2*pi*(p-g)/C): zero at p == g (mod C), maximum 2 at half period.
Tensor clock_reg_loss(const Tensor& predictions, const Tensor& targets, double period);

// Smooth-L1 of C*(p_h - floor(p_h)) - p_m, summed over the batch. Zero on
// the manifold where the minute hand matches the hour hand's fractional
// progress.
Tensor clock_self_loss(const Tensor& hour_values, const Tensor& minute_values,
                       double period = 60.0);

struct TotalLossConfig {
    double lambda = 0.01;
    // The hour head gets its own period by default; set false to apply
    // C = 60 to both hands.
    bool hour_period_12 = true;
};

struct ClockLosses {
    Tensor total;
    double cls = 0.0, self = 0.0, reg_hour = 0.0, reg_minute = 0.0;
};

// L = L_cls + L_self + lambda * (L_reg over both hands).
ClockLosses clock_total_loss(const Tensor& hour_probs, const Tensor& minute_probs,
                             const Tensor& hour_value, const Tensor& minute_value,
                             const ClockLabel& label, const TotalLossConfig& cfg = {});

// Argmax decode at five-minute granularity; ties break to the lowest index.
std::pair<int, int> decode_time(const ClockPrediction& pred);
std::string format_time(int hour, int minute);

// ---- synthetic trainer ------------------------------------------------

// JSONL records {hour, minute, features:[...]} for the toy reader below.
struct ClockRecord {
    ClockLabel label;
    std::vector<double> features;
};

std::vector<ClockRecord> load_clock_jsonl(const std::string& path);
void save_clock_jsonl(const std::string& path, const std::vector<ClockRecord>& records);

// A small two-head regressor/classifier over clock-angle features. It
// stands in for the CNN reader so the loss stack can be trained end to end.
class ToyClockReader {
public:
    static ToyClockReader init(std::size_t feature_dim, std::size_t hidden, Rng& rng);

    struct Forward {
        Tensor hour_probs, minute_probs; // 1 x 12 each
        Tensor hour_value, minute_value; // 1 x 1 each
    };
    Forward forward(const std::vector<double>& features) const;

    ClockPrediction predict(const std::vector<double>& features) const;
    std::vector<Parameter> parameters() const;

    // Returns mean training loss per epoch.
    std::vector<double> train(const std::vector<ClockRecord>& data, std::size_t epochs,
                              Adam& opt, Rng& rng, const TotalLossConfig& cfg = {});

private:
    std::size_t feature_dim_ = 0;
    Parameter w1_, b1_, hour_w_, hour_b_, minute_w_, minute_b_, reg_w_, reg_b_;
};

} // namespace vqamoe::clock_expert
