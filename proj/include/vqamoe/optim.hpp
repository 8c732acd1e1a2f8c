#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "vqamoe/tensor.hpp"

namespace vqamoe {

// Bias-corrected Adam with optional decoupled weight decay (AdamW when
// weight_decay > 0). Moments are zero-initialized per parameter name;
// gradients are cleared after each step.
class Adam {
public:
    struct Config {
        double learning_rate = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double epsilon = 1e-8;
        double weight_decay = 0.0;
    };

    Adam() = default;
    explicit Adam(const Config& cfg) : cfg_(cfg) {}

    void step(std::vector<Parameter>& params);
    std::size_t step_count() const { return step_count_; }
    const Config& config() const { return cfg_; }
    Config& config() { return cfg_; }

private:
    struct Moments {
        std::vector<double> m, v;
    };
    Config cfg_;
    std::size_t step_count_ = 0;
    std::map<std::string, Moments> state_;
};

// Max over all parameter coordinates of the relative error between the
// reverse-mode gradient of f and a central finite difference with the
// given step. f must rebuild its graph from the parameters' current
// values on every call.
double grad_check(const std::function<Tensor()>& f, std::vector<Parameter>& params,
                  double step = 1e-5);

} // namespace vqamoe
