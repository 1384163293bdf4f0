#include "mung/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace mung {

namespace {

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(shape));
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

void check_finite(const std::vector<double>& v, const char* op_name) {
    for (double x : v) {
        if (!std::isfinite(x)) {
            throw NumericError(std::string("non-finite value produced by op '") + op_name + "'");
        }
    }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op_name) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op_name) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
    }
}

void require_2d(const Tensor& a, const char* op_name) {
    if (a.shape().size() != 2) {
        throw ShapeError(std::string(op_name) + ": expected 2-D tensor, got " +
                         shape_str(a.shape()));
    }
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    if (shape_numel(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
    check_finite(data, "tensor");
    node_ = std::make_shared<detail::TensorNode>();
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    std::size_t n = shape_numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor({1}, {value}, requires_grad);
}

int Tensor::rows() const {
    require_2d(*this, "rows");
    return node_->shape[0];
}

int Tensor::cols() const {
    require_2d(*this, "cols");
    return node_->shape[1];
}

double Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor has " + std::to_string(numel()) + " elements");
    return node_->data[0];
}

double Tensor::at(int r, int c) const {
    require_2d(*this, "at");
    if (r < 0 || r >= node_->shape[0] || c < 0 || c >= node_->shape[1]) {
        throw ShapeError("at: index out of range");
    }
    return node_->data[static_cast<std::size_t>(r) * node_->shape[1] + c];
}

const std::vector<double>& Tensor::grad() const {
    if (node_->grad.empty()) {
        throw ValueError("grad: not populated; run backward() first");
    }
    return node_->grad;
}

void Tensor::zero_grad() const { node_->grad.clear(); }

void Tensor::apply_update(std::span<const double> delta) const {
    if (delta.size() != node_->data.size()) throw ShapeError("apply_update: size mismatch");
    for (std::size_t i = 0; i < delta.size(); ++i) node_->data[i] += delta[i];
    check_finite(node_->data, "apply_update");
}

void Tensor::set_data(std::span<const double> values) const {
    if (values.size() != node_->data.size()) throw ShapeError("set_data: size mismatch");
    std::copy(values.begin(), values.end(), node_->data.begin());
    check_finite(node_->data, "set_data");
}

Tensor Tensor::detached() const {
    return Tensor(node_->shape, node_->data, false);
}

Tensor make_op_result(std::vector<int> shape, std::vector<double> data,
                      std::vector<Tensor> parents, std::function<void()> backprop,
                      const char* op_name) {
    check_finite(data, op_name);
    Tensor out;
    out.node_ = std::make_shared<detail::TensorNode>();
    out.node_->shape = std::move(shape);
    out.node_->data = std::move(data);
    bool rg = false;
    for (const Tensor& p : parents) rg = rg || p.requires_grad() || !p.node()->parents.empty();
    // requires_grad marks "gradient flows through here": either a trainable
    // leaf or an interior node with at least one grad-requiring ancestor.
    bool flows = false;
    for (const Tensor& p : parents) flows = flows || p.requires_grad();
    out.node_->requires_grad = flows;
    for (const Tensor& p : parents) out.node_->parents.push_back(p.node());
    if (flows) out.node_->backprop = std::move(backprop);
    (void)rg;
    return out;
}

// --- elementwise ----------------------------------------------------------

namespace {

Tensor unary_op(const Tensor& a, const char* name, const std::function<double(double)>& f,
                const std::function<double(double, double)>& dfdx /* (x, y) -> dy/dx */) {
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(a.data()[i]);
    auto an = a.node();
    std::vector<double> saved = a.data();
    std::vector<double> saved_out = out;
    Tensor result = make_op_result(
        a.shape(), std::move(out), {a},
        [an, saved, saved_out, dfdx]() {},  // placeholder, replaced below
        name);
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get(), saved, saved_out, dfdx]() {
            an->ensure_grad();
            for (std::size_t i = 0; i < saved.size(); ++i) {
                an->grad[i] += rn->grad[i] * dfdx(saved[i], saved_out[i]);
            }
        };
    }
    return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node(), bn = b.node();
    Tensor result = make_op_result(a.shape(), std::move(out), {a, b}, nullptr, "add");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, bn, rn = rn.get()]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < rn->grad.size(); ++i) bn->grad[i] += rn->grad[i];
            }
        };
    }
    return result;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node(), bn = b.node();
    Tensor result = make_op_result(a.shape(), std::move(out), {a, b}, nullptr, "sub");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, bn, rn = rn.get()]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < rn->grad.size(); ++i) bn->grad[i] -= rn->grad[i];
            }
        };
    }
    return result;
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "hadamard");
    std::vector<double> out(a.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node(), bn = b.node();
    std::vector<double> ad = a.data(), bd = b.data();
    Tensor result = make_op_result(a.shape(), std::move(out), {a, b}, nullptr, "hadamard");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, bn, rn = rn.get(), ad, bd]() {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[i] += rn->grad[i] * bd[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < rn->grad.size(); ++i) bn->grad[i] += rn->grad[i] * ad[i];
            }
        };
    }
    return result;
}

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, "scale", [c](double x) { return x * c; },
                    [c](double, double) { return c; });
}

Tensor exp(const Tensor& a) {
    return unary_op(a, "exp", [](double x) { return std::exp(x); },
                    [](double, double y) { return y; });
}

Tensor gelu(const Tensor& a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    return unary_op(
        a, "gelu", [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
        [](double x, double) {
            return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) +
                   x * inv_sqrt2pi * std::exp(-0.5 * x * x);
        });
}

Tensor relu(const Tensor& a) {
    return unary_op(a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
                    [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
    if (!(lo <= hi)) throw ValueError("clamp: lo > hi");
    return unary_op(a, "clamp",
                    [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
                    [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// --- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_2d(a, "matmul");
    require_2d(b, "matmul");
    const int n = a.shape()[0], k = a.shape()[1], k2 = b.shape()[0], m = b.shape()[1];
    if (k != k2) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    std::vector<double> out(static_cast<std::size_t>(n) * m, 0.0);
    const auto& ad = a.data();
    const auto& bd = b.data();
    for (int i = 0; i < n; ++i) {
        for (int p = 0; p < k; ++p) {
            const double aip = ad[static_cast<std::size_t>(i) * k + p];
            if (aip == 0.0) continue;
            const std::size_t brow = static_cast<std::size_t>(p) * m;
            const std::size_t orow = static_cast<std::size_t>(i) * m;
            for (int j = 0; j < m; ++j) out[orow + j] += aip * bd[brow + j];
        }
    }
    auto an = a.node(), bn = b.node();
    std::vector<double> sa = a.data(), sb = b.data();
    Tensor result = make_op_result({n, m}, std::move(out), {a, b}, nullptr, "matmul");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, bn, rn = rn.get(), sa, sb, n, k, m]() {
            const auto& g = rn->grad;
            if (an->requires_grad) {
                an->ensure_grad();  // dA = G * B^T
                for (int i = 0; i < n; ++i)
                    for (int p = 0; p < k; ++p) {
                        double acc = 0.0;
                        for (int j = 0; j < m; ++j)
                            acc += g[static_cast<std::size_t>(i) * m + j] *
                                   sb[static_cast<std::size_t>(p) * m + j];
                        an->grad[static_cast<std::size_t>(i) * k + p] += acc;
                    }
            }
            if (bn->requires_grad) {
                bn->ensure_grad();  // dB = A^T * G
                for (int p = 0; p < k; ++p)
                    for (int j = 0; j < m; ++j) {
                        double acc = 0.0;
                        for (int i = 0; i < n; ++i)
                            acc += sa[static_cast<std::size_t>(i) * k + p] *
                                   g[static_cast<std::size_t>(i) * m + j];
                        bn->grad[static_cast<std::size_t>(p) * m + j] += acc;
                    }
            }
        };
    }
    return result;
}

Tensor transpose(const Tensor& a) {
    require_2d(a, "transpose");
    const int r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(a.numel());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j) * r + i] = a.data()[static_cast<std::size_t>(i) * c + j];
    auto an = a.node();
    Tensor result = make_op_result({c, r}, std::move(out), {a}, nullptr, "transpose");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get(), r, c]() {
            an->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    an->grad[static_cast<std::size_t>(i) * c + j] +=
                        rn->grad[static_cast<std::size_t>(j) * r + i];
        };
    }
    return result;
}

Tensor softmax_rows(const Tensor& a) {
    require_2d(a, "softmax_rows");
    const int r = a.shape()[0], c = a.shape()[1];
    if (c < 1) throw ShapeError("softmax_rows: empty rows");
    std::vector<double> out(a.numel());
    for (int i = 0; i < r; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * c;
        double mx = a.data()[off];
        for (int j = 1; j < c; ++j) mx = std::max(mx, a.data()[off + j]);
        double z = 0.0;
        for (int j = 0; j < c; ++j) {
            out[off + j] = std::exp(a.data()[off + j] - mx);
            z += out[off + j];
        }
        for (int j = 0; j < c; ++j) out[off + j] /= z;
    }
    auto an = a.node();
    std::vector<double> y = out;
    Tensor result = make_op_result(a.shape(), std::move(out), {a}, nullptr, "softmax_rows");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get(), y, r, c]() {
            an->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += rn->grad[off + j] * y[off + j];
                for (int j = 0; j < c; ++j)
                    an->grad[off + j] += y[off + j] * (rn->grad[off + j] - dot);
            }
        };
    }
    return result;
}

Tensor l2_normalize_rows(const Tensor& a, double eps) {
    require_2d(a, "l2_normalize_rows");
    if (eps <= 0.0) throw ValueError("l2_normalize_rows: eps must be > 0");
    const int r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(a.numel());
    std::vector<double> inv(r);
    for (int i = 0; i < r; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * c;
        double ss = 0.0;
        for (int j = 0; j < c; ++j) ss += a.data()[off + j] * a.data()[off + j];
        inv[i] = 1.0 / std::sqrt(ss + eps);
        for (int j = 0; j < c; ++j) out[off + j] = a.data()[off + j] * inv[i];
    }
    auto an = a.node();
    std::vector<double> xv = a.data();
    Tensor result = make_op_result(a.shape(), std::move(out), {a}, nullptr, "l2_normalize_rows");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get(), xv, inv, r, c]() {
            an->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const std::size_t off = static_cast<std::size_t>(i) * c;
                double dot = 0.0;  // g . x
                for (int j = 0; j < c; ++j) dot += rn->grad[off + j] * xv[off + j];
                const double s = inv[i], s3 = s * s * s;
                for (int j = 0; j < c; ++j)
                    an->grad[off + j] += s * rn->grad[off + j] - s3 * xv[off + j] * dot;
            }
        };
    }
    return result;
}

Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    require_2d(x, "layernorm_rows");
    if (eps <= 0.0) throw ValueError("layernorm_rows: eps must be > 0");
    const int r = x.shape()[0], c = x.shape()[1];
    if (gain.numel() != static_cast<std::size_t>(c) || bias.numel() != static_cast<std::size_t>(c)) {
        throw ShapeError("layernorm_rows: gain/bias width must match last axis " +
                         std::to_string(c));
    }
    std::vector<double> out(x.numel());
    std::vector<double> xhat(x.numel());
    std::vector<double> istd(r);
    for (int i = 0; i < r; ++i) {
        const std::size_t off = static_cast<std::size_t>(i) * c;
        double mu = 0.0;
        for (int j = 0; j < c; ++j) mu += x.data()[off + j];
        mu /= c;
        double var = 0.0;
        for (int j = 0; j < c; ++j) {
            const double d = x.data()[off + j] - mu;
            var += d * d;
        }
        var /= c;
        istd[i] = 1.0 / std::sqrt(var + eps);
        for (int j = 0; j < c; ++j) {
            xhat[off + j] = (x.data()[off + j] - mu) * istd[i];
            out[off + j] = xhat[off + j] * gain.data()[j] + bias.data()[j];
        }
    }
    auto xn = x.node(), gn = gain.node(), bn = bias.node();
    std::vector<double> gdat = gain.data();
    Tensor result = make_op_result(x.shape(), std::move(out), {x, gain, bias}, nullptr,
                                   "layernorm_rows");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [xn, gn, bn, rn = rn.get(), xhat, istd, gdat, r, c]() {
            const auto& g = rn->grad;
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    const std::size_t off = static_cast<std::size_t>(i) * c;
                    double m1 = 0.0, m2 = 0.0;
                    for (int j = 0; j < c; ++j) {
                        const double dxh = g[off + j] * gdat[j];
                        m1 += dxh;
                        m2 += dxh * xhat[off + j];
                    }
                    m1 /= c;
                    m2 /= c;
                    for (int j = 0; j < c; ++j) {
                        const double dxh = g[off + j] * gdat[j];
                        xn->grad[off + j] += istd[i] * (dxh - m1 - xhat[off + j] * m2);
                    }
                }
            }
            if (gn->requires_grad) {
                gn->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        gn->grad[j] += g[static_cast<std::size_t>(i) * c + j] *
                                       xhat[static_cast<std::size_t>(i) * c + j];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j) bn->grad[j] += g[static_cast<std::size_t>(i) * c + j];
            }
        };
    }
    return result;
}

Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets) {
    require_2d(logits, "cross_entropy_logits");
    const int t_len = logits.shape()[0], v = logits.shape()[1];
    if (static_cast<int>(targets.size()) != t_len) {
        throw ShapeError("cross_entropy_logits: " + std::to_string(targets.size()) +
                         " targets for " + std::to_string(t_len) + " positions");
    }
    for (int id : targets) {
        if (id < 0 || id >= v) {
            throw ValueError("cross_entropy_logits: target id " + std::to_string(id) +
                             " out of range [0," + std::to_string(v) + ")");
        }
    }
    std::vector<double> out(t_len);
    std::vector<double> probs(logits.numel());
    for (int t = 0; t < t_len; ++t) {
        const std::size_t off = static_cast<std::size_t>(t) * v;
        double mx = logits.data()[off];
        for (int j = 1; j < v; ++j) mx = std::max(mx, logits.data()[off + j]);
        double z = 0.0;
        for (int j = 0; j < v; ++j) {
            probs[off + j] = std::exp(logits.data()[off + j] - mx);
            z += probs[off + j];
        }
        for (int j = 0; j < v; ++j) probs[off + j] /= z;
        out[t] = std::log(z) + mx - logits.data()[off + targets[t]];
    }
    auto ln = logits.node();
    std::vector<int> tgt(targets.begin(), targets.end());
    Tensor result = make_op_result({t_len}, std::move(out), {logits}, nullptr,
                                   "cross_entropy_logits");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [ln, rn = rn.get(), probs, tgt, t_len, v]() {
            ln->ensure_grad();
            for (int t = 0; t < t_len; ++t) {
                const std::size_t off = static_cast<std::size_t>(t) * v;
                const double gt = rn->grad[t];
                for (int j = 0; j < v; ++j) ln->grad[off + j] += gt * probs[off + j];
                ln->grad[off + tgt[t]] -= gt;
            }
        };
    }
    return result;
}

Tensor sum(const Tensor& a) {
    double s = std::accumulate(a.data().begin(), a.data().end(), 0.0);
    auto an = a.node();
    Tensor result = make_op_result({1}, {s}, {a}, nullptr, "sum");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get()]() {
            an->ensure_grad();
            for (double& g : an->grad) g += rn->grad[0];
        };
    }
    return result;
}

Tensor mean(const Tensor& a) {
    return scale(sum(a), 1.0 / static_cast<double>(a.numel()));
}

Tensor add_rowvec(const Tensor& x, const Tensor& b) {
    require_2d(x, "add_rowvec");
    const int r = x.shape()[0], c = x.shape()[1];
    if (b.numel() != static_cast<std::size_t>(c)) {
        throw ShapeError("add_rowvec: row vector length " + std::to_string(b.numel()) +
                         " vs width " + std::to_string(c));
    }
    std::vector<double> out(x.numel());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(i) * c + j] =
                x.data()[static_cast<std::size_t>(i) * c + j] + b.data()[j];
    auto xn = x.node(), bn = b.node();
    Tensor result = make_op_result(x.shape(), std::move(out), {x, b}, nullptr, "add_rowvec");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [xn, bn, rn = rn.get(), r, c]() {
            if (xn->requires_grad) {
                xn->ensure_grad();
                for (std::size_t i = 0; i < rn->grad.size(); ++i) xn->grad[i] += rn->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (int i = 0; i < r; ++i)
                    for (int j = 0; j < c; ++j)
                        bn->grad[j] += rn->grad[static_cast<std::size_t>(i) * c + j];
            }
        };
    }
    return result;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_rows: no parts");
    int c = -1, total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_rows");
        if (c < 0) c = p.shape()[1];
        if (p.shape()[1] != c) throw ShapeError("concat_rows: width mismatch");
        total += p.shape()[0];
    }
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(total) * c);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    std::vector<int> row_counts;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        row_counts.push_back(p.shape()[0]);
    }
    Tensor result = make_op_result({total, c}, std::move(out), parts, nullptr, "concat_rows");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [nodes, row_counts, rn = rn.get(), c]() {
            std::size_t off = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const std::size_t n = static_cast<std::size_t>(row_counts[k]) * c;
                if (nodes[k]->requires_grad) {
                    nodes[k]->ensure_grad();
                    for (std::size_t i = 0; i < n; ++i) nodes[k]->grad[i] += rn->grad[off + i];
                }
                off += n;
            }
        };
    }
    return result;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
    require_2d(a, "slice_rows");
    const int r = a.shape()[0], c = a.shape()[1];
    if (r0 < 0 || r1 > r || r0 >= r1) throw ShapeError("slice_rows: bad range");
    std::vector<double> out(a.data().begin() + static_cast<std::size_t>(r0) * c,
                            a.data().begin() + static_cast<std::size_t>(r1) * c);
    auto an = a.node();
    Tensor result = make_op_result({r1 - r0, c}, std::move(out), {a}, nullptr, "slice_rows");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get(), r0, c]() {
            an->ensure_grad();
            const std::size_t base = static_cast<std::size_t>(r0) * c;
            for (std::size_t i = 0; i < rn->grad.size(); ++i) an->grad[base + i] += rn->grad[i];
        };
    }
    return result;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no parts");
    int r = -1, total = 0;
    for (const Tensor& p : parts) {
        require_2d(p, "concat_cols");
        if (r < 0) r = p.shape()[0];
        if (p.shape()[0] != r) throw ShapeError("concat_cols: height mismatch");
        total += p.shape()[1];
    }
    std::vector<double> out(static_cast<std::size_t>(r) * total);
    int coff = 0;
    for (const Tensor& p : parts) {
        const int pc = p.shape()[1];
        for (int i = 0; i < r; ++i)
            for (int j = 0; j < pc; ++j)
                out[static_cast<std::size_t>(i) * total + coff + j] =
                    p.data()[static_cast<std::size_t>(i) * pc + j];
        coff += pc;
    }
    std::vector<std::shared_ptr<detail::TensorNode>> nodes;
    std::vector<int> widths;
    for (const Tensor& p : parts) {
        nodes.push_back(p.node());
        widths.push_back(p.shape()[1]);
    }
    Tensor result = make_op_result({r, total}, std::move(out), parts, nullptr, "concat_cols");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [nodes, widths, rn = rn.get(), r, total]() {
            int coff = 0;
            for (std::size_t k = 0; k < nodes.size(); ++k) {
                const int pc = widths[k];
                if (nodes[k]->requires_grad) {
                    nodes[k]->ensure_grad();
                    for (int i = 0; i < r; ++i)
                        for (int j = 0; j < pc; ++j)
                            nodes[k]->grad[static_cast<std::size_t>(i) * pc + j] +=
                                rn->grad[static_cast<std::size_t>(i) * total + coff + j];
                }
                coff += pc;
            }
        };
    }
    return result;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
    require_2d(a, "slice_cols");
    const int r = a.shape()[0], c = a.shape()[1];
    if (c0 < 0 || c1 > c || c0 >= c1) throw ShapeError("slice_cols: bad range");
    const int w = c1 - c0;
    std::vector<double> out(static_cast<std::size_t>(r) * w);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < w; ++j)
            out[static_cast<std::size_t>(i) * w + j] =
                a.data()[static_cast<std::size_t>(i) * c + c0 + j];
    auto an = a.node();
    Tensor result = make_op_result({r, w}, std::move(out), {a}, nullptr, "slice_cols");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get(), r, c, c0, w]() {
            an->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < w; ++j)
                    an->grad[static_cast<std::size_t>(i) * c + c0 + j] +=
                        rn->grad[static_cast<std::size_t>(i) * w + j];
        };
    }
    return result;
}

Tensor embedding_rows(const Tensor& table, std::span<const int> ids) {
    require_2d(table, "embedding_rows");
    const int v = table.shape()[0], d = table.shape()[1];
    const int t_len = static_cast<int>(ids.size());
    if (t_len == 0) throw ShapeError("embedding_rows: empty id list");
    for (int id : ids) {
        if (id < 0 || id >= v) {
            throw ValueError("embedding_rows: id " + std::to_string(id) + " out of range [0," +
                             std::to_string(v) + ")");
        }
    }
    std::vector<double> out(static_cast<std::size_t>(t_len) * d);
    for (int t = 0; t < t_len; ++t)
        for (int j = 0; j < d; ++j)
            out[static_cast<std::size_t>(t) * d + j] =
                table.data()[static_cast<std::size_t>(ids[t]) * d + j];
    auto tn = table.node();
    std::vector<int> idv(ids.begin(), ids.end());
    Tensor result = make_op_result({t_len, d}, std::move(out), {table}, nullptr, "embedding_rows");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [tn, rn = rn.get(), idv, d]() {
            tn->ensure_grad();
            for (std::size_t t = 0; t < idv.size(); ++t)
                for (int j = 0; j < d; ++j)
                    tn->grad[static_cast<std::size_t>(idv[t]) * d + j] +=
                        rn->grad[t * d + j];
        };
    }
    return result;
}

Tensor mean_rows(const Tensor& a) {
    require_2d(a, "mean_rows");
    const int r = a.shape()[0], c = a.shape()[1];
    std::vector<double> out(c, 0.0);
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j) out[j] += a.data()[static_cast<std::size_t>(i) * c + j];
    for (int j = 0; j < c; ++j) out[j] /= r;
    auto an = a.node();
    Tensor result = make_op_result({1, c}, std::move(out), {a}, nullptr, "mean_rows");
    auto rn = result.node();
    if (result.requires_grad()) {
        rn->backprop = [an, rn = rn.get(), r, c]() {
            an->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    an->grad[static_cast<std::size_t>(i) * c + j] += rn->grad[j] / r;
        };
    }
    return result;
}

void backward(const Tensor& loss) {
    if (!loss.defined()) throw ValueError("backward: undefined tensor");
    if (loss.numel() != 1) {
        throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    // Reverse topological order over the recorded graph; each node visited once.
    std::vector<detail::TensorNode*> order;
    std::unordered_set<detail::TensorNode*> seen;
    std::vector<std::pair<detail::TensorNode*, std::size_t>> stack;
    stack.push_back({loss.node().get(), 0});
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            detail::TensorNode* p = node->parents[idx++].get();
            if (seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad();
    loss.node()->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorNode* node = *it;
        if (node->backprop && !node->grad.empty()) node->backprop();
    }
}

}  // namespace mung
