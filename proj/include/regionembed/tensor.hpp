#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "regionembed/common.hpp"
#include "regionembed/rng.hpp"

namespace regionembed {

// Node of the computation graph. Tensors produced by operations keep
// shared_ptr references to their inputs, so a loss tensor keeps the whole
// graph alive until it goes out of scope.
struct TensorNode {
    std::vector<int> shape;
    std::vector<double> values;
    std::vector<double> grad;  // allocated lazily, same length as values
    bool requires_grad = false;
    std::string op;  // producing operation, for diagnostics
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void()> backward_fn;  // empty for leaves

    int64_t size() const { return static_cast<int64_t>(values.size()); }
    void ensure_grad() {
        if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
    }
};

// Value-semantic handle to a graph node. Dense 64-bit real tensor in
// row-major order, rank 1 or 2 (scalars are shape {1}).
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(std::vector<int> shape, bool requires_grad = false);
    static Tensor full(std::vector<int> shape, double value, bool requires_grad = false);
    static Tensor from_values(std::vector<int> shape, std::vector<double> values,
                              bool requires_grad = false);
    static Tensor from_dense(const Dense& m, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const std::vector<int>& shape() const { return node_->shape; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int rows() const;
    int cols() const;
    int64_t size() const { return node_->size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& op() const { return node_->op; }

    std::vector<double>& values() { return node_->values; }
    const std::vector<double>& values() const { return node_->values; }

    // Gradient buffer; empty until a backward pass has touched this tensor.
    const std::vector<double>& grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad() { node_->ensure_grad(); std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    double item() const;
    double at(int i, int j) const;

    Dense to_dense() const;
    bool all_finite() const;

    std::shared_ptr<TensorNode>& node() { return node_; }
    const std::shared_ptr<TensorNode>& node() const { return node_; }

private:
    explicit Tensor(std::shared_ptr<TensorNode> node) : node_(std::move(node)) {}
    std::shared_ptr<TensorNode> node_;
};

// ---- operations -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
Tensor add_rowvec(const Tensor& m, const Tensor& v);  // v broadcast over rows
Tensor mul_colvec(const Tensor& m, const Tensor& s);  // row i of m scaled by s[i]

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice(const Tensor& a, int r0, int r1, int c0, int c1);
Tensor gather_rows(const Tensor& a, std::vector<int> index);

Tensor sigmoid(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor leaky_relu(const Tensor& a, double slope);
Tensor elu(const Tensor& a, double alpha = 1.0);

// Max-subtracted, numerically stable. axis selects the normalized dimension
// of a rank-2 tensor; rank-1 tensors use axis 0.
Tensor softmax(const Tensor& a, int axis = 1);
Tensor log_softmax_rows(const Tensor& a);

Tensor row_sum(const Tensor& a);  // n x m -> n x 1
Tensor sum_all(const Tensor& a);
Tensor mean_all(const Tensor& a);
Tensor squared_error(const Tensor& a, const Tensor& b);  // sum((a-b)^2), scalar

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// ---- backward -------------------------------------------------------------

// Topologically ordered record of the operations reachable from a loss
// tensor. Construction walks the graph; backward() seeds d(loss)/d(loss)=1
// and runs each recorded backward rule exactly once, in reverse order.
// Repeated backward() calls accumulate into leaf gradients.
class Tape {
public:
    explicit Tape(const Tensor& loss);
    void backward();
    size_t op_count() const { return op_count_; }
    size_t executed() const { return executed_; }

private:
    std::vector<std::shared_ptr<TensorNode>> order_;
    std::shared_ptr<TensorNode> loss_;
    size_t op_count_ = 0;
    size_t executed_ = 0;
};

void backward(const Tensor& loss);

// ---- optimizer ------------------------------------------------------------

class Adam {
public:
    explicit Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
                  double beta2 = 0.999, double eps = 1e-8);
    void step();
    void zero_grad();
    int64_t steps() const { return t_; }
    double lr() const { return lr_; }

private:
    std::vector<Tensor> params_;
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
    double lr_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

// ---- initializers ---------------------------------------------------------

Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng);  // fan_in x fan_out matrix
Tensor normal_init(std::vector<int> shape, double stddev, Rng& rng);

std::string shape_str(const std::vector<int>& shape);

}  // namespace regionembed
