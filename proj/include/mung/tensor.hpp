#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mung {

// Dimension / contract violations (bad shapes, bad indices, bad arguments).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// NaN/Inf produced by an operation. Raised immediately, never propagated.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid values that are not shape problems (out-of-range ids, empty masks, ...).
struct ValueError : std::runtime_error {
    explicit ValueError(const std::string& msg) : std::runtime_error(msg) {}
};

class Tensor;

namespace detail {

struct TensorNode {
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;  // empty until backward touches this node
    std::vector<std::shared_ptr<TensorNode>> parents;
    // Accumulates this node's grad into its parents' grads.
    std::function<void()> backprop;

    std::size_t numel() const { return data.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

// Dense row-major tensor of 64-bit floats with define-by-run reverse-mode
// autodiff. Values are immutable once created except for grad accumulation.
class Tensor {
public:
    Tensor() = default;
    Tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad = false);

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    std::size_t numel() const { return node_->data.size(); }
    int rows() const;
    int cols() const;

    const std::vector<double>& data() const { return node_->data; }
    double item() const;
    double at(int r, int c) const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<double>& grad() const;
    void zero_grad() const;

    // Leaf parameters only: in-place update, outside the graph (optimizer use).
    void apply_update(std::span<const double> delta) const;
    void set_requires_grad(bool rg) const { node_->requires_grad = rg; }
    void set_data(std::span<const double> values) const;

    // Value copy with no graph history.
    Tensor detached() const;

    std::shared_ptr<detail::TensorNode> node() const { return node_; }

private:
    friend Tensor make_op_result(std::vector<int> shape, std::vector<double> data,
                                 std::vector<Tensor> parents, std::function<void()> backprop,
                                 const char* op_name);
    std::shared_ptr<detail::TensorNode> node_;
};

// --- ops ------------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor hadamard(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor exp(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor l2_normalize_rows(const Tensor& a, double eps = 1e-12);
Tensor layernorm_rows(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);
// Per-position negative log-likelihood in nats: out[t] = -log softmax(logits[t])[targets[t]].
Tensor cross_entropy_logits(const Tensor& logits, std::span<const int> targets);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor add_rowvec(const Tensor& x, const Tensor& b);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, int r0, int r1);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_cols(const Tensor& a, int c0, int c1);
// Gather rows of `table` at `ids`; adjoint scatter-adds back into the table.
Tensor embedding_rows(const Tensor& table, std::span<const int> ids);
// Mean of the rows of a 2-D tensor, shape [1 x C].
Tensor mean_rows(const Tensor& a);

// Reverse-mode sweep from a scalar loss. Every requires_grad tensor reachable
// from `loss` receives grad = dLoss/dTensor; unrelated tensors are untouched.
void backward(const Tensor& loss);

std::string shape_str(const std::vector<int>& shape);

}  // namespace mung
