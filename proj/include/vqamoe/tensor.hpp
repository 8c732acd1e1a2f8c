#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vqamoe/rng.hpp"

namespace vqamoe {

// Dense row-major tensor of doubles with reverse-mode differentiation.
// A Tensor is a shared handle to its storage; ops build a graph of parent
// links and backward closures, and backward() on a scalar walks it in
// reverse topological order. Parameters keep their storage across steps,
// so gradients accumulate until the optimizer clears them.
class Tensor {
public:
    struct Impl {
        std::vector<std::size_t> shape;
        std::vector<double> data;
        std::vector<double> grad; // same size as data iff requires_grad
        bool requires_grad = false;
        std::vector<std::shared_ptr<Impl>> parents;
        std::function<void(const Impl&)> backprop;
    };

    Tensor() = default;

    static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
    static Tensor full(std::vector<std::size_t> shape, double value, bool requires_grad = false);
    static Tensor from(std::vector<std::size_t> shape, std::vector<double> data,
                       bool requires_grad = false);
    static Tensor scalar(double v, bool requires_grad = false);
    static Tensor randn(std::vector<std::size_t> shape, Rng& rng, double stddev = 1.0,
                        bool requires_grad = false);

    bool defined() const { return impl_ != nullptr; }
    const std::vector<std::size_t>& shape() const { return impl_->shape; }
    std::size_t ndim() const { return impl_->shape.size(); }
    std::size_t numel() const { return impl_->data.size(); }

    // 2-D accessors; 1-D tensors count as a single row.
    std::size_t rows() const;
    std::size_t cols() const;
    double operator()(std::size_t i, std::size_t j) const { return impl_->data[i * cols() + j]; }

    std::vector<double>& data() { return impl_->data; }
    const std::vector<double>& data() const { return impl_->data; }
    std::vector<double>& grad();
    const std::vector<double>& grad() const;

    bool requires_grad() const { return impl_->requires_grad; }
    double value() const; // scalar tensors only

    void zero_grad();
    void backward(); // scalar tensors only

    std::shared_ptr<Impl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<Impl> impl) : impl_(std::move(impl)) {}

private:
    std::shared_ptr<Impl> impl_;
};

// A named trainable tensor. Names must be unique within a model; the
// checkpoint format keys tensors by this name.
struct Parameter {
    std::string name;
    Tensor tensor;
};

// ---- ops --------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);      // same shape
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);      // elementwise
Tensor add_rowvec(const Tensor& a, const Tensor& v); // v broadcast over rows
Tensor scale(const Tensor& a, double c);
Tensor add_scalar(const Tensor& a, double c);
Tensor scalar_mul(const Tensor& s, const Tensor& a); // s is a 1-element tensor

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }

Tensor softmax(const Tensor& a, std::size_t axis);
inline Tensor softmax_rows(const Tensor& a) { return softmax(a, a.ndim() - 1); }
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor cos_op(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_cols(std::span<const Tensor> parts);
Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices);

// ---- losses -----------------------------------------------------------

enum class LossKind { cross_entropy, binary_cross_entropy, smooth_l1 };

// cross_entropy: prediction rows are probability distributions, target rows
//   sum the per-class -t*log(p) terms; result is the mean over rows.
// binary_cross_entropy: prediction entries are probabilities, targets in
//   [0,1]; per-row sum of BCE terms, mean over rows. Minimizing it maximizes
//   the log-likelihood objective.
// smooth_l1: piecewise quadratic/linear on prediction-target residuals with
//   transition at `beta`; summed over elements.
// Probabilities are clamped at 1e-12 before logs; entries outside [0,1]
// beyond that clamp raise std::domain_error.
Tensor loss(LossKind kind, const Tensor& prediction, const Tensor& target, double beta = 1.0);

Tensor cross_entropy_loss(const Tensor& probs, const Tensor& target);
Tensor binary_cross_entropy_loss(const Tensor& probs, const Tensor& target);
Tensor smooth_l1_loss(const Tensor& prediction, const Tensor& target, double beta = 1.0);
Tensor mse_loss(const Tensor& prediction, const Tensor& target); // mean over elements

} // namespace vqamoe
