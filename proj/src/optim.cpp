#include "vqamoe/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace vqamoe {

void Adam::step(std::vector<Parameter>& params) {
    ++step_count_;
    const double t = static_cast<double>(step_count_);
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t);

    for (Parameter& p : params) {
        if (!p.tensor.requires_grad()) {
            throw std::invalid_argument("Adam::step: parameter '" + p.name +
                                        "' has no gradient buffer");
        }
        auto& data = p.tensor.data();
        auto& grad = p.tensor.grad();

        Moments& mom = state_[p.name];
        if (mom.m.empty()) {
            mom.m.assign(data.size(), 0.0);
            mom.v.assign(data.size(), 0.0);
        } else if (mom.m.size() != data.size()) {
            throw std::logic_error("Adam::step: parameter '" + p.name + "' changed size");
        }

        for (std::size_t i = 0; i < data.size(); ++i) {
            const double g = grad[i];
            mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g;
            mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = mom.m[i] / bc1;
            const double vhat = mom.v[i] / bc2;
            data[i] -= cfg_.learning_rate *
                       (mhat / (std::sqrt(vhat) + cfg_.epsilon) + cfg_.weight_decay * data[i]);
        }
        std::fill(grad.begin(), grad.end(), 0.0);
    }
}

double grad_check(const std::function<Tensor()>& f, std::vector<Parameter>& params,
                  double step) {
    if (step < 1e-7 || step > 1e-3) {
        throw std::invalid_argument("grad_check: step must lie in [1e-7, 1e-3]");
    }

    for (Parameter& p : params) p.tensor.zero_grad();
    Tensor out = f();
    if (!std::isfinite(out.value())) {
        throw std::domain_error("grad_check: function value is not finite");
    }
    out.backward();

    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (Parameter& p : params) analytic.push_back(p.tensor.grad());

    double worst = 0.0;
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& data = params[k].tensor.data();
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double saved = data[i];
            data[i] = saved + step;
            const double fp = f().value();
            data[i] = saved - step;
            const double fm = f().value();
            data[i] = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                throw std::domain_error("grad_check: perturbed function value is not finite");
            }
            const double numeric = (fp - fm) / (2.0 * step);
            const double a = analytic[k][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1.0});
            worst = std::max(worst, rel);
        }
    }
    for (Parameter& p : params) p.tensor.zero_grad();
    return worst;
}

} // namespace vqamoe
