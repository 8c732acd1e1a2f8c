#include "vqamoe/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace vqamoe {

namespace {

using Impl = Tensor::Impl;

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
}

std::shared_ptr<Impl> make_node(std::vector<std::size_t> shape,
                                std::vector<std::shared_ptr<Impl>> parents) {
    auto n = std::make_shared<Impl>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), 0.0);
    for (const auto& p : parents) {
        if (p->requires_grad) n->requires_grad = true;
    }
    if (n->requires_grad) {
        n->grad.assign(n->data.size(), 0.0);
        n->parents = std::move(parents);
    }
    return n;
}

// 2-D view helpers; 1-D tensors act as a single row.
std::size_t view_rows(const Impl& t) { return t.shape.size() >= 2 ? t.shape[0] : 1; }
std::size_t view_cols(const Impl& t) { return t.shape.empty() ? 1 : t.shape.back(); }

constexpr double kProbClamp = 1e-12;

void check_probability(double p, const char* what) {
    if (p < -1e-9 || p > 1.0 + 1e-9 || !std::isfinite(p)) {
        throw std::domain_error(std::string(what) + ": probability out of [0,1]: " +
                                std::to_string(p));
    }
}

} // namespace

// ---- Tensor -----------------------------------------------------------

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value, bool requires_grad) {
    auto n = std::make_shared<Impl>();
    n->shape = std::move(shape);
    n->data.assign(shape_numel(n->shape), value);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->data.size(), 0.0);
    return Tensor(std::move(n));
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> data,
                    bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw std::invalid_argument("Tensor::from: shape " + shape_str(shape) +
                                    " does not match data length " + std::to_string(data.size()));
    }
    auto n = std::make_shared<Impl>();
    n->shape = std::move(shape);
    n->data = std::move(data);
    n->requires_grad = requires_grad;
    if (requires_grad) n->grad.assign(n->data.size(), 0.0);
    return Tensor(std::move(n));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
    return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(std::vector<std::size_t> shape, Rng& rng, double stddev,
                     bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (double& v : t.data()) v = rng.normal(0.0, stddev);
    return t;
}

std::size_t Tensor::rows() const { return view_rows(*impl_); }
std::size_t Tensor::cols() const { return view_cols(*impl_); }

std::vector<double>& Tensor::grad() {
    if (!impl_->requires_grad) throw std::logic_error("Tensor::grad: tensor has no gradient");
    return impl_->grad;
}

const std::vector<double>& Tensor::grad() const {
    if (!impl_->requires_grad) throw std::logic_error("Tensor::grad: tensor has no gradient");
    return impl_->grad;
}

double Tensor::value() const {
    if (impl_->data.size() != 1) {
        throw std::logic_error("Tensor::value: not a scalar, shape " + shape_str(impl_->shape));
    }
    return impl_->data[0];
}

void Tensor::zero_grad() {
    if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

void Tensor::backward() {
    if (numel() != 1) {
        throw std::logic_error("backward: root must be scalar, shape " + shape_str(impl_->shape));
    }
    if (!impl_->requires_grad) return;

    // Iterative post-order DFS for the reverse topological order.
    std::vector<Impl*> order;
    std::unordered_set<Impl*> visited;
    std::vector<std::pair<Impl*, std::size_t>> stack;
    stack.emplace_back(impl_.get(), 0);
    visited.insert(impl_.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Impl* p = node->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    impl_->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backprop) (*it)->backprop(**it);
    }
}

// ---- elementwise and linear algebra -----------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    const std::size_t n = a.rows(), k = a.cols(), k2 = b.rows(), m = b.cols();
    if (k != k2) {
        throw std::invalid_argument("matmul: inner dimensions disagree, " +
                                    shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    auto out = make_node({n, m}, {a.impl(), b.impl()});
    const auto& A = a.data();
    const auto& B = b.data();
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
            const double av = A[i * k + p];
            if (av == 0.0) continue;
            for (std::size_t j = 0; j < m; ++j) out->data[i * m + j] += av * B[p * m + j];
        }
    }
    if (out->requires_grad) {
        auto ai = a.impl(), bi = b.impl();
        out->backprop = [ai, bi, n, k, m](const Impl& self) {
            if (ai->requires_grad) {
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (std::size_t j = 0; j < m; ++j)
                            acc += self.grad[i * m + j] * bi->data[p * m + j];
                        ai->grad[i * k + p] += acc;
                    }
            }
            if (bi->requires_grad) {
                for (std::size_t p = 0; p < k; ++p)
                    for (std::size_t j = 0; j < m; ++j) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < n; ++i)
                            acc += ai->data[i * k + p] * self.grad[i * m + j];
                        bi->grad[p * m + j] += acc;
                    }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor transpose(const Tensor& a) {
    const std::size_t n = a.rows(), m = a.cols();
    auto out = make_node({m, n}, {a.impl()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) out->data[j * n + i] = a.data()[i * m + j];
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai, n, m](const Impl& self) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j)
                    ai->grad[i * m + j] += self.grad[j * n + i];
        };
    }
    return Tensor(std::move(out));
}

namespace {

Tensor binary_same_shape(const Tensor& a, const Tensor& b, const char* name,
                         double (*fwd)(double, double),
                         void (*bwd)(double ga, double gb, double av, double bv, double g,
                                     double* da, double* db)) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(name) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
    auto out = make_node(a.shape(), {a.impl(), b.impl()});
    for (std::size_t i = 0; i < out->data.size(); ++i)
        out->data[i] = fwd(a.data()[i], b.data()[i]);
    if (out->requires_grad) {
        auto ai = a.impl(), bi = b.impl();
        out->backprop = [ai, bi, bwd](const Impl& self) {
            for (std::size_t i = 0; i < self.data.size(); ++i) {
                double da = 0.0, db = 0.0;
                bwd(0, 0, ai->data[i], bi->data[i], self.grad[i], &da, &db);
                if (ai->requires_grad) ai->grad[i] += da;
                if (bi->requires_grad) bi->grad[i] += db;
            }
        };
    }
    return Tensor(std::move(out));
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_same_shape(a, b, "add",
        [](double x, double y) { return x + y; },
        [](double, double, double, double, double g, double* da, double* db) {
            *da = g; *db = g;
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_same_shape(a, b, "sub",
        [](double x, double y) { return x - y; },
        [](double, double, double, double, double g, double* da, double* db) {
            *da = g; *db = -g;
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_same_shape(a, b, "mul",
        [](double x, double y) { return x * y; },
        [](double, double, double x, double y, double g, double* da, double* db) {
            *da = g * y; *db = g * x;
        });
}

Tensor add_rowvec(const Tensor& a, const Tensor& v) {
    const std::size_t n = a.rows(), m = a.cols();
    if (v.numel() != m) {
        throw std::invalid_argument("add_rowvec: vector length " + std::to_string(v.numel()) +
                                    " vs row width " + std::to_string(m));
    }
    auto out = make_node(a.shape(), {a.impl(), v.impl()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j)
            out->data[i * m + j] = a.data()[i * m + j] + v.data()[j];
    if (out->requires_grad) {
        auto ai = a.impl(), vi = v.impl();
        out->backprop = [ai, vi, n, m](const Impl& self) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < m; ++j) {
                    if (ai->requires_grad) ai->grad[i * m + j] += self.grad[i * m + j];
                    if (vi->requires_grad) vi->grad[j] += self.grad[i * m + j];
                }
        };
    }
    return Tensor(std::move(out));
}

namespace {

Tensor unary_map(const Tensor& a, double (*fwd)(double), double (*dfdx)(double x, double y)) {
    auto out = make_node(a.shape(), {a.impl()});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = fwd(a.data()[i]);
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai, dfdx](const Impl& self) {
            for (std::size_t i = 0; i < self.data.size(); ++i)
                ai->grad[i] += self.grad[i] * dfdx(ai->data[i], self.data[i]);
        };
    }
    return Tensor(std::move(out));
}

} // namespace

Tensor scale(const Tensor& a, double c) {
    auto out = make_node(a.shape(), {a.impl()});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = c * a.data()[i];
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai, c](const Impl& self) {
            for (std::size_t i = 0; i < self.data.size(); ++i) ai->grad[i] += c * self.grad[i];
        };
    }
    return Tensor(std::move(out));
}

Tensor add_scalar(const Tensor& a, double c) {
    auto out = make_node(a.shape(), {a.impl()});
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = a.data()[i] + c;
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai](const Impl& self) {
            for (std::size_t i = 0; i < self.data.size(); ++i) ai->grad[i] += self.grad[i];
        };
    }
    return Tensor(std::move(out));
}

Tensor scalar_mul(const Tensor& s, const Tensor& a) {
    if (s.numel() != 1) {
        throw std::invalid_argument("scalar_mul: scale must have a single element, got " +
                                    shape_str(s.shape()));
    }
    auto out = make_node(a.shape(), {s.impl(), a.impl()});
    const double sv = s.data()[0];
    for (std::size_t i = 0; i < out->data.size(); ++i) out->data[i] = sv * a.data()[i];
    if (out->requires_grad) {
        auto si = s.impl(), ai = a.impl();
        out->backprop = [si, ai](const Impl& self) {
            if (si->requires_grad) {
                double acc = 0.0;
                for (std::size_t i = 0; i < self.data.size(); ++i)
                    acc += self.grad[i] * ai->data[i];
                si->grad[0] += acc;
            }
            if (ai->requires_grad) {
                for (std::size_t i = 0; i < self.data.size(); ++i)
                    ai->grad[i] += self.grad[i] * si->data[0];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    if (axis >= std::max<std::size_t>(a.ndim(), 1)) {
        throw std::invalid_argument("softmax: axis " + std::to_string(axis) +
                                    " out of range for shape " + shape_str(a.shape()));
    }
    const std::size_t n = a.rows(), m = a.cols();
    const bool over_cols = (a.ndim() <= 1) || (axis == a.ndim() - 1);
    auto out = make_node(a.shape(), {a.impl()});
    const std::size_t groups = over_cols ? n : m;
    const std::size_t len = over_cols ? m : n;
    auto idx = [over_cols, m](std::size_t g, std::size_t i) {
        return over_cols ? g * m + i : i * m + g;
    };
    for (std::size_t g = 0; g < groups; ++g) {
        double mx = a.data()[idx(g, 0)];
        for (std::size_t i = 1; i < len; ++i) mx = std::max(mx, a.data()[idx(g, i)]);
        double z = 0.0;
        for (std::size_t i = 0; i < len; ++i) {
            double e = std::exp(a.data()[idx(g, i)] - mx);
            out->data[idx(g, i)] = e;
            z += e;
        }
        for (std::size_t i = 0; i < len; ++i) out->data[idx(g, i)] /= z;
    }
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai, groups, len, idx](const Impl& self) {
            for (std::size_t g = 0; g < groups; ++g) {
                double dot = 0.0;
                for (std::size_t i = 0; i < len; ++i)
                    dot += self.grad[idx(g, i)] * self.data[idx(g, i)];
                for (std::size_t i = 0; i < len; ++i)
                    ai->grad[idx(g, i)] +=
                        self.data[idx(g, i)] * (self.grad[idx(g, i)] - dot);
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const std::size_t n = x.rows(), m = x.cols();
    if (gain.numel() != m || bias.numel() != m) {
        throw std::invalid_argument("layer_norm: gain/bias length must equal last extent " +
                                    std::to_string(m));
    }
    auto out = make_node(x.shape(), {x.impl(), gain.impl(), bias.impl()});
    auto xhat = std::make_shared<std::vector<double>>(n * m);
    auto inv_std = std::make_shared<std::vector<double>>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < m; ++j) mu += x.data()[i * m + j];
        mu /= static_cast<double>(m);
        double var = 0.0;
        for (std::size_t j = 0; j < m; ++j) {
            double d = x.data()[i * m + j] - mu;
            var += d * d;
        }
        var /= static_cast<double>(m);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv_std)[i] = is;
        for (std::size_t j = 0; j < m; ++j) {
            const double xh = (x.data()[i * m + j] - mu) * is;
            (*xhat)[i * m + j] = xh;
            out->data[i * m + j] = gain.data()[j] * xh + bias.data()[j];
        }
    }
    if (out->requires_grad) {
        auto xi = x.impl(), gi = gain.impl(), bi = bias.impl();
        out->backprop = [xi, gi, bi, xhat, inv_std, n, m](const Impl& self) {
            for (std::size_t i = 0; i < n; ++i) {
                double mean_dxh = 0.0, mean_dxh_xh = 0.0;
                for (std::size_t j = 0; j < m; ++j) {
                    const double g = self.grad[i * m + j];
                    const double xh = (*xhat)[i * m + j];
                    if (gi->requires_grad) gi->grad[j] += g * xh;
                    if (bi->requires_grad) bi->grad[j] += g;
                    const double dxh = g * gi->data[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh;
                }
                if (!xi->requires_grad) continue;
                mean_dxh /= static_cast<double>(m);
                mean_dxh_xh /= static_cast<double>(m);
                for (std::size_t j = 0; j < m; ++j) {
                    const double dxh = self.grad[i * m + j] * gi->data[j];
                    const double xh = (*xhat)[i * m + j];
                    xi->grad[i * m + j] +=
                        (*inv_std)[i] * (dxh - mean_dxh - xh * mean_dxh_xh);
                }
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor sigmoid(const Tensor& a) {
    return unary_map(a,
        [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& a) {
    return unary_map(a,
        [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor gelu(const Tensor& a) {
    return unary_map(a,
        [](double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); },
        [](double x, double) {
            const double cdf = 0.5 * (1.0 + std::erf(x / std::sqrt(2.0)));
            const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
            return cdf + x * pdf;
        });
}

Tensor cos_op(const Tensor& a) {
    return unary_map(a,
        [](double x) { return std::cos(x); },
        [](double x, double) { return -std::sin(x); });
}

Tensor sum(const Tensor& a) {
    auto out = make_node({1}, {a.impl()});
    out->data[0] = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai](const Impl& self) {
            for (double& g : ai->grad) g += self.grad[0];
        };
    }
    return Tensor(std::move(out));
}

Tensor mean(const Tensor& a) {
    const double inv = 1.0 / static_cast<double>(a.numel());
    return scale(sum(a), inv);
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
    const std::size_t n = a.rows(), m = a.cols();
    if (begin > end || end > n) {
        throw std::invalid_argument("slice_rows: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + std::to_string(n));
    }
    auto out = make_node({end - begin, m}, {a.impl()});
    std::copy(a.data().begin() + begin * m, a.data().begin() + end * m, out->data.begin());
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai, begin, m](const Impl& self) {
            for (std::size_t i = 0; i < self.data.size(); ++i)
                ai->grad[begin * m + i] += self.grad[i];
        };
    }
    return Tensor(std::move(out));
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
    const std::size_t n = a.rows(), m = a.cols();
    if (begin > end || end > m) {
        throw std::invalid_argument("slice_cols: range [" + std::to_string(begin) + "," +
                                    std::to_string(end) + ") out of " + std::to_string(m));
    }
    const std::size_t w = end - begin;
    auto out = make_node({n, w}, {a.impl()});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < w; ++j)
            out->data[i * w + j] = a.data()[i * m + begin + j];
    if (out->requires_grad) {
        auto ai = a.impl();
        out->backprop = [ai, begin, n, m, w](const Impl& self) {
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < w; ++j)
                    ai->grad[i * m + begin + j] += self.grad[i * w + j];
        };
    }
    return Tensor(std::move(out));
}

Tensor concat_rows(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
    const std::size_t m = parts.front().cols();
    std::size_t n = 0;
    std::vector<std::shared_ptr<Impl>> parents;
    for (const Tensor& p : parts) {
        if (p.cols() != m) {
            throw std::invalid_argument("concat_rows: width mismatch " + std::to_string(m) +
                                        " vs " + std::to_string(p.cols()));
        }
        n += p.rows();
        parents.push_back(p.impl());
    }
    auto out = make_node({n, m}, parents);
    std::size_t off = 0;
    for (const auto& p : parents) {
        std::copy(p->data.begin(), p->data.end(), out->data.begin() + off);
        off += p->data.size();
    }
    if (out->requires_grad) {
        out->backprop = [parents](const Impl& self) {
            std::size_t off = 0;
            for (const auto& p : parents) {
                if (p->requires_grad)
                    for (std::size_t i = 0; i < p->data.size(); ++i)
                        p->grad[i] += self.grad[off + i];
                off += p->data.size();
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
    const std::size_t n = parts.front().rows();
    std::size_t m = 0;
    std::vector<std::shared_ptr<Impl>> parents;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
        if (p.rows() != n) {
            throw std::invalid_argument("concat_cols: height mismatch " + std::to_string(n) +
                                        " vs " + std::to_string(p.rows()));
        }
        widths.push_back(p.cols());
        m += p.cols();
        parents.push_back(p.impl());
    }
    auto out = make_node({n, m}, parents);
    std::size_t off = 0;
    for (std::size_t k = 0; k < parents.size(); ++k) {
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < widths[k]; ++j)
                out->data[i * m + off + j] = parents[k]->data[i * widths[k] + j];
        off += widths[k];
    }
    if (out->requires_grad) {
        out->backprop = [parents, widths, n, m](const Impl& self) {
            std::size_t off = 0;
            for (std::size_t k = 0; k < parents.size(); ++k) {
                if (parents[k]->requires_grad)
                    for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < widths[k]; ++j)
                            parents[k]->grad[i * widths[k] + j] +=
                                self.grad[i * m + off + j];
                off += widths[k];
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor gather_rows(const Tensor& table, const std::vector<std::size_t>& indices) {
    const std::size_t n = table.rows(), m = table.cols();
    for (std::size_t id : indices) {
        if (id >= n) {
            throw std::out_of_range("gather_rows: index " + std::to_string(id) +
                                    " out of table with " + std::to_string(n) + " rows");
        }
    }
    auto out = make_node({indices.size(), m}, {table.impl()});
    for (std::size_t i = 0; i < indices.size(); ++i)
        std::copy(table.data().begin() + indices[i] * m,
                  table.data().begin() + (indices[i] + 1) * m, out->data.begin() + i * m);
    if (out->requires_grad) {
        auto ti = table.impl();
        out->backprop = [ti, indices, m](const Impl& self) {
            for (std::size_t i = 0; i < indices.size(); ++i)
                for (std::size_t j = 0; j < m; ++j)
                    ti->grad[indices[i] * m + j] += self.grad[i * m + j];
        };
    }
    return Tensor(std::move(out));
}

// ---- losses -----------------------------------------------------------

Tensor cross_entropy_loss(const Tensor& probs, const Tensor& target) {
    if (probs.shape() != target.shape()) {
        throw std::invalid_argument("cross_entropy: shape mismatch " + shape_str(probs.shape()) +
                                    " vs " + shape_str(target.shape()));
    }
    const std::size_t n = probs.rows(), m = probs.cols();
    auto out = make_node({1}, {probs.impl(), target.impl()});
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        check_probability(probs.data()[i], "cross_entropy");
        const double p = std::max(probs.data()[i], kProbClamp);
        acc -= target.data()[i] * std::log(p);
    }
    out->data[0] = acc / static_cast<double>(n);
    if (out->requires_grad) {
        auto pi = probs.impl(), ti = target.impl();
        out->backprop = [pi, ti, n, m](const Impl& self) {
            const double g = self.grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < n * m; ++i) {
                const double p = std::max(pi->data[i], kProbClamp);
                if (pi->requires_grad && pi->data[i] >= kProbClamp)
                    pi->grad[i] += g * (-ti->data[i] / p);
                if (ti->requires_grad) ti->grad[i] += g * (-std::log(p));
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor binary_cross_entropy_loss(const Tensor& probs, const Tensor& target) {
    if (probs.shape() != target.shape()) {
        throw std::invalid_argument("binary_cross_entropy: shape mismatch " +
                                    shape_str(probs.shape()) + " vs " +
                                    shape_str(target.shape()));
    }
    const std::size_t n = probs.rows();
    auto out = make_node({1}, {probs.impl(), target.impl()});
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.numel(); ++i) {
        check_probability(probs.data()[i], "binary_cross_entropy");
        check_probability(target.data()[i], "binary_cross_entropy target");
        const double p = std::clamp(probs.data()[i], kProbClamp, 1.0 - kProbClamp);
        const double t = target.data()[i];
        acc -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
    }
    out->data[0] = acc / static_cast<double>(n);
    if (out->requires_grad) {
        auto pi = probs.impl(), ti = target.impl();
        out->backprop = [pi, ti, n](const Impl& self) {
            const double g = self.grad[0] / static_cast<double>(n);
            for (std::size_t i = 0; i < pi->data.size(); ++i) {
                const double p = std::clamp(pi->data[i], kProbClamp, 1.0 - kProbClamp);
                const double t = ti->data[i];
                if (pi->requires_grad) pi->grad[i] += g * (p - t) / (p * (1.0 - p));
                if (ti->requires_grad)
                    ti->grad[i] += g * (std::log(1.0 - p) - std::log(p));
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor smooth_l1_loss(const Tensor& prediction, const Tensor& target, double beta) {
    if (prediction.shape() != target.shape()) {
        throw std::invalid_argument("smooth_l1: shape mismatch " +
                                    shape_str(prediction.shape()) + " vs " +
                                    shape_str(target.shape()));
    }
    auto out = make_node({1}, {prediction.impl(), target.impl()});
    double acc = 0.0;
    for (std::size_t i = 0; i < prediction.numel(); ++i) {
        const double r = prediction.data()[i] - target.data()[i];
        acc += std::abs(r) < beta ? 0.5 * r * r / beta : std::abs(r) - 0.5 * beta;
    }
    out->data[0] = acc;
    if (out->requires_grad) {
        auto pi = prediction.impl(), ti = target.impl();
        out->backprop = [pi, ti, beta](const Impl& self) {
            for (std::size_t i = 0; i < pi->data.size(); ++i) {
                const double r = pi->data[i] - ti->data[i];
                const double d = std::abs(r) < beta ? r / beta : (r > 0 ? 1.0 : -1.0);
                if (pi->requires_grad) pi->grad[i] += self.grad[0] * d;
                if (ti->requires_grad) ti->grad[i] -= self.grad[0] * d;
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor mse_loss(const Tensor& prediction, const Tensor& target) {
    if (prediction.shape() != target.shape()) {
        throw std::invalid_argument("mse: shape mismatch " + shape_str(prediction.shape()) +
                                    " vs " + shape_str(target.shape()));
    }
    const double inv = 1.0 / static_cast<double>(prediction.numel());
    auto out = make_node({1}, {prediction.impl(), target.impl()});
    double acc = 0.0;
    for (std::size_t i = 0; i < prediction.numel(); ++i) {
        const double r = prediction.data()[i] - target.data()[i];
        acc += r * r;
    }
    out->data[0] = acc * inv;
    if (out->requires_grad) {
        auto pi = prediction.impl(), ti = target.impl();
        out->backprop = [pi, ti, inv](const Impl& self) {
            for (std::size_t i = 0; i < pi->data.size(); ++i) {
                const double r = pi->data[i] - ti->data[i];
                if (pi->requires_grad) pi->grad[i] += self.grad[0] * 2.0 * r * inv;
                if (ti->requires_grad) ti->grad[i] -= self.grad[0] * 2.0 * r * inv;
            }
        };
    }
    return Tensor(std::move(out));
}

Tensor loss(LossKind kind, const Tensor& prediction, const Tensor& target, double beta) {
    switch (kind) {
        case LossKind::cross_entropy: return cross_entropy_loss(prediction, target);
        case LossKind::binary_cross_entropy: return binary_cross_entropy_loss(prediction, target);
        case LossKind::smooth_l1: return smooth_l1_loss(prediction, target, beta);
    }
    throw std::logic_error("loss: unknown kind");
}

} // namespace vqamoe
