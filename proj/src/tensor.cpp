#include "regionembed/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace regionembed {

namespace {

int64_t shape_size(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    return n;
}

void check_shape(const std::vector<int>& shape) {
    if (shape.empty() || shape.size() > 2) {
        throw ContractError("tensor rank must be 1 or 2, got " + shape_str(shape));
    }
    for (int d : shape) {
        if (d <= 0) throw ContractError("tensor dimensions must be positive, got " + shape_str(shape));
    }
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor Tensor::zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(std::vector<int> shape, double value, bool requires_grad) {
    const auto n = static_cast<size_t>(shape_size(shape));
    return from_values(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from_values(std::vector<int> shape, std::vector<double> values, bool requires_grad) {
    check_shape(shape);
    if (shape_size(shape) != static_cast<int64_t>(values.size())) {
        throw ContractError("value count " + std::to_string(values.size()) +
                            " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<TensorNode>();
    node->shape = std::move(shape);
    node->values = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::from_dense(const Dense& m, bool requires_grad) {
    return from_values({m.rows, m.cols}, m.v, requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from_values({1}, {value}, requires_grad);
}

int Tensor::rows() const {
    if (rank() != 2) throw ContractError("rows() requires rank-2 tensor, got " + shape_str(shape()));
    return node_->shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ContractError("cols() requires rank-2 tensor, got " + shape_str(shape()));
    return node_->shape[1];
}

double Tensor::item() const {
    if (size() != 1) throw ContractError("item() requires a scalar, got shape " + shape_str(shape()));
    return node_->values[0];
}

double Tensor::at(int i, int j) const {
    return node_->values[static_cast<size_t>(i) * cols() + j];
}

Dense Tensor::to_dense() const {
    Dense m(rank() == 2 ? node_->shape[0] : 1, rank() == 2 ? node_->shape[1] : node_->shape[0]);
    m.v = node_->values;
    return m;
}

bool Tensor::all_finite() const {
    for (double v : node_->values) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

// ---- op plumbing ----------------------------------------------------------

namespace {

// Creates the output node of an operation; records parents and the backward
// rule only when some input actually needs gradients.
Tensor make_result(std::vector<int> shape, std::vector<double> values, const char* op,
                   std::vector<Tensor> parents,
                   const std::function<std::function<void()>(TensorNode*)>& make_backward) {
    Tensor out = Tensor::from_values(std::move(shape), std::move(values), false);
    bool needs_grad = false;
    for (const Tensor& p : parents) needs_grad = needs_grad || p.requires_grad();
    if (needs_grad) {
        auto& node = *out.node();
        node.requires_grad = true;
        node.op = op;
        node.parents.reserve(parents.size());
        for (Tensor& p : parents) node.parents.push_back(p.node());
        node.backward_fn = make_backward(out.node().get());
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw ContractError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                            shape_str(b.shape()));
    }
}

// Raw matmul kernels. C must be sized m*n (or m*k / k*n for the grads).
void mm_accum(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        double* ci = c + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            const double* bp = b + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

// dA += G * B^T where G is m x n and B is k x n.
void mm_nt_accum(const double* g, const double* b, double* da, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const double* gi = g + static_cast<size_t>(i) * n;
        double* di = da + static_cast<size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double* bp = b + static_cast<size_t>(p) * n;
            double s = 0.0;
            for (int j = 0; j < n; ++j) s += gi[j] * bp[j];
            di[p] += s;
        }
    }
}

// dB += A^T * G where A is m x k and G is m x n.
void mm_tn_accum(const double* a, const double* g, double* db, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ai = a + static_cast<size_t>(i) * k;
        const double* gi = g + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = ai[p];
            if (av == 0.0) continue;
            double* dp = db + static_cast<size_t>(p) * n;
            for (int j = 0; j < n; ++j) dp[j] += av * gi[j];
        }
    }
}

}  // namespace

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return make_result(a.shape(), std::move(out), "add", {a, b}, [&](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i];
            }
        };
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
    return make_result(a.shape(), std::move(out), "sub", {a, b}, [&](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] -= o->grad[i];
            }
        };
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    std::vector<double> out(a.values());
    const auto& bv = b.values();
    for (size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
    return make_result(a.shape(), std::move(out), "mul", {a, b}, [&](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o] {
            if (an->requires_grad) {
                an->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += o->grad[i] * bn->values[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); ++i) bn->grad[i] += o->grad[i] * an->values[i];
            }
        };
    });
}

Tensor scale(const Tensor& a, double c) {
    std::vector<double> out(a.values());
    for (double& v : out) v *= c;
    return make_result(a.shape(), std::move(out), "scale", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, c] {
            an->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); ++i) an->grad[i] += c * o->grad[i];
        };
    });
}

Tensor add_rowvec(const Tensor& m, const Tensor& v) {
    const int rows = m.rows(), cols = m.cols();
    if (v.size() != cols) {
        throw ContractError("add_rowvec: vector length " + shape_str(v.shape()) +
                            " does not match columns of " + shape_str(m.shape()));
    }
    std::vector<double> out(m.values());
    const auto& vv = v.values();
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out[static_cast<size_t>(i) * cols + j] += vv[j];
    }
    return make_result(m.shape(), std::move(out), "add_rowvec", {m, v}, [&](TensorNode* o) {
        auto mn = m.node(), vn = v.node();
        return [mn, vn, o, rows, cols] {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (size_t i = 0; i < o->grad.size(); ++i) mn->grad[i] += o->grad[i];
            }
            if (vn->requires_grad) {
                vn->ensure_grad();
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < cols; ++j) {
                        vn->grad[j] += o->grad[static_cast<size_t>(i) * cols + j];
                    }
                }
            }
        };
    });
}

Tensor mul_colvec(const Tensor& m, const Tensor& s) {
    const int rows = m.rows(), cols = m.cols();
    if (s.size() != rows) {
        throw ContractError("mul_colvec: vector length " + shape_str(s.shape()) +
                            " does not match rows of " + shape_str(m.shape()));
    }
    std::vector<double> out(m.values());
    const auto& sv = s.values();
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) out[static_cast<size_t>(i) * cols + j] *= sv[i];
    }
    return make_result(m.shape(), std::move(out), "mul_colvec", {m, s}, [&](TensorNode* o) {
        auto mn = m.node(), sn = s.node();
        return [mn, sn, o, rows, cols] {
            if (mn->requires_grad) {
                mn->ensure_grad();
                for (int i = 0; i < rows; ++i) {
                    for (int j = 0; j < cols; ++j) {
                        const size_t k = static_cast<size_t>(i) * cols + j;
                        mn->grad[k] += o->grad[k] * sn->values[i];
                    }
                }
            }
            if (sn->requires_grad) {
                sn->ensure_grad();
                for (int i = 0; i < rows; ++i) {
                    double acc = 0.0;
                    for (int j = 0; j < cols; ++j) {
                        const size_t k = static_cast<size_t>(i) * cols + j;
                        acc += o->grad[k] * mn->values[k];
                    }
                    sn->grad[i] += acc;
                }
            }
        };
    });
}

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
        throw ContractError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                            shape_str(b.shape()));
    }
    const int m = a.rows(), k = a.cols(), n = b.cols();
    std::vector<double> out(static_cast<size_t>(m) * n, 0.0);
    mm_accum(a.values().data(), b.values().data(), out.data(), m, k, n);
    return make_result({m, n}, std::move(out), "matmul", {a, b}, [&](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o, m, k, n] {
            if (an->requires_grad) {
                an->ensure_grad();
                mm_nt_accum(o->grad.data(), bn->values.data(), an->grad.data(), m, n, k);
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                mm_tn_accum(an->values.data(), o->grad.data(), bn->grad.data(), m, k, n);
            }
        };
    });
}

Tensor transpose(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(static_cast<size_t>(m) * n);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) out[static_cast<size_t>(j) * m + i] = a.values()[static_cast<size_t>(i) * n + j];
    }
    return make_result({n, m}, std::move(out), "transpose", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, m, n] {
            an->ensure_grad();
            for (int i = 0; i < m; ++i) {
                for (int j = 0; j < n; ++j) {
                    an->grad[static_cast<size_t>(i) * n + j] += o->grad[static_cast<size_t>(j) * m + i];
                }
            }
        };
    });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ContractError("concat_cols: no inputs");
    const int rows = parts[0].rows();
    int total = 0;
    for (const Tensor& p : parts) {
        if (p.rows() != rows) {
            throw ContractError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                                shape_str(p.shape()));
        }
        total += p.cols();
    }
    std::vector<double> out(static_cast<size_t>(rows) * total);
    int offset = 0;
    for (const Tensor& p : parts) {
        const int pc = p.cols();
        for (int i = 0; i < rows; ++i) {
            std::copy_n(p.values().data() + static_cast<size_t>(i) * pc, pc,
                        out.data() + static_cast<size_t>(i) * total + offset);
        }
        offset += pc;
    }
    return make_result({rows, total}, std::move(out), "concat_cols", parts, [&](TensorNode* o) {
        std::vector<std::shared_ptr<TensorNode>> ps;
        for (const Tensor& p : parts) ps.push_back(p.node());
        return [ps, o, rows, total] {
            int off = 0;
            for (auto& pn : ps) {
                const int pc = pn->shape[1];
                if (pn->requires_grad) {
                    pn->ensure_grad();
                    for (int i = 0; i < rows; ++i) {
                        for (int j = 0; j < pc; ++j) {
                            pn->grad[static_cast<size_t>(i) * pc + j] +=
                                o->grad[static_cast<size_t>(i) * total + off + j];
                        }
                    }
                }
                off += pc;
            }
        };
    });
}

Tensor slice(const Tensor& a, int r0, int r1, int c0, int c1) {
    const int m = a.rows(), n = a.cols();
    if (r0 < 0 || r1 > m || c0 < 0 || c1 > n || r0 >= r1 || c0 >= c1) {
        throw ContractError("slice: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                            ")x[" + std::to_string(c0) + "," + std::to_string(c1) + ") of " +
                            shape_str(a.shape()));
    }
    const int rows = r1 - r0, cols = c1 - c0;
    std::vector<double> out(static_cast<size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i) {
        std::copy_n(a.values().data() + static_cast<size_t>(i + r0) * n + c0, cols,
                    out.data() + static_cast<size_t>(i) * cols);
    }
    return make_result({rows, cols}, std::move(out), "slice", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, r0, c0, rows, cols, n] {
            an->ensure_grad();
            for (int i = 0; i < rows; ++i) {
                for (int j = 0; j < cols; ++j) {
                    an->grad[static_cast<size_t>(i + r0) * n + c0 + j] +=
                        o->grad[static_cast<size_t>(i) * cols + j];
                }
            }
        };
    });
}

Tensor gather_rows(const Tensor& a, std::vector<int> index) {
    const int m = a.rows(), n = a.cols();
    for (int r : index) {
        if (r < 0 || r >= m) {
            throw ContractError("gather_rows: index " + std::to_string(r) + " out of range for " +
                                shape_str(a.shape()));
        }
    }
    const int rows = static_cast<int>(index.size());
    std::vector<double> out(static_cast<size_t>(rows) * n);
    for (int i = 0; i < rows; ++i) {
        std::copy_n(a.values().data() + static_cast<size_t>(index[i]) * n, n,
                    out.data() + static_cast<size_t>(i) * n);
    }
    return make_result({rows, n}, std::move(out), "gather_rows", {a}, [&](TensorNode* o) {
        auto an = a.node();
        auto idx = std::move(index);
        return [an, o, idx, n] {
            an->ensure_grad();
            for (size_t i = 0; i < idx.size(); ++i) {
                double* dst = an->grad.data() + static_cast<size_t>(idx[i]) * n;
                const double* src = o->grad.data() + i * n;
                for (int j = 0; j < n; ++j) dst[j] += src[j];
            }
        };
    });
}

// ---- nonlinearities -------------------------------------------------------

namespace {

template <typename Fwd, typename Bwd>
Tensor pointwise(const Tensor& a, const char* name, Fwd fwd, Bwd bwd) {
    std::vector<double> out(a.values().size());
    for (size_t i = 0; i < out.size(); ++i) out[i] = fwd(a.values()[i]);
    return make_result(a.shape(), std::move(out), name, {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, bwd] {
            an->ensure_grad();
            for (size_t i = 0; i < o->grad.size(); ++i) {
                an->grad[i] += o->grad[i] * bwd(an->values[i], o->values[i]);
            }
        };
    });
}

}  // namespace

Tensor sigmoid(const Tensor& a) {
    return pointwise(
        a, "sigmoid", [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
        [](double, double y) { return y * (1.0 - y); });
}

Tensor tanh_op(const Tensor& a) {
    return pointwise(
        a, "tanh", [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}

Tensor exp_op(const Tensor& a) {
    return pointwise(
        a, "exp", [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_op(const Tensor& a) {
    return pointwise(
        a, "log", [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor relu(const Tensor& a) {
    return pointwise(
        a, "relu", [](double x) { return x > 0.0 ? x : 0.0; },
        [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Tensor leaky_relu(const Tensor& a, double slope) {
    return pointwise(
        a, "leaky_relu", [slope](double x) { return x > 0.0 ? x : slope * x; },
        [slope](double x, double) { return x > 0.0 ? 1.0 : slope; });
}

Tensor elu(const Tensor& a, double alpha) {
    return pointwise(
        a, "elu", [alpha](double x) { return x > 0.0 ? x : alpha * (std::exp(x) - 1.0); },
        [alpha](double x, double y) { return x > 0.0 ? 1.0 : y + alpha; });
}

// ---- softmax / reductions -------------------------------------------------

namespace {

// Shared max-subtracted softmax over strided slices.
void softmax_slices(const std::vector<double>& in, std::vector<double>& out, int num_slices,
                    int slice_len, int64_t first_stride, int64_t elem_stride) {
    for (int s = 0; s < num_slices; ++s) {
        const int64_t base = s * first_stride;
        double mx = in[base];
        for (int i = 1; i < slice_len; ++i) mx = std::max(mx, in[base + i * elem_stride]);
        double total = 0.0;
        for (int i = 0; i < slice_len; ++i) {
            const double e = std::exp(in[base + i * elem_stride] - mx);
            out[base + i * elem_stride] = e;
            total += e;
        }
        for (int i = 0; i < slice_len; ++i) out[base + i * elem_stride] /= total;
    }
}

void softmax_backward_slices(const std::vector<double>& y, const std::vector<double>& g,
                             std::vector<double>& dx, int num_slices, int slice_len,
                             int64_t first_stride, int64_t elem_stride) {
    for (int s = 0; s < num_slices; ++s) {
        const int64_t base = s * first_stride;
        double dot = 0.0;
        for (int i = 0; i < slice_len; ++i) {
            dot += g[base + i * elem_stride] * y[base + i * elem_stride];
        }
        for (int i = 0; i < slice_len; ++i) {
            const int64_t k = base + i * elem_stride;
            dx[k] += y[k] * (g[k] - dot);
        }
    }
}

}  // namespace

Tensor softmax(const Tensor& a, int axis) {
    int num_slices, slice_len;
    int64_t first_stride, elem_stride;
    if (a.rank() == 1) {
        if (axis != 0) throw ContractError("softmax: axis must be 0 for rank-1 tensors");
        num_slices = 1;
        slice_len = a.shape()[0];
        first_stride = 0;
        elem_stride = 1;
    } else if (axis == 1) {
        num_slices = a.rows();
        slice_len = a.cols();
        first_stride = a.cols();
        elem_stride = 1;
    } else if (axis == 0) {
        num_slices = a.cols();
        slice_len = a.rows();
        first_stride = 1;
        elem_stride = a.cols();
    } else {
        throw ContractError("softmax: axis must be 0 or 1");
    }
    std::vector<double> out(a.values().size());
    softmax_slices(a.values(), out, num_slices, slice_len, first_stride, elem_stride);
    return make_result(a.shape(), std::move(out), "softmax", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, num_slices, slice_len, first_stride, elem_stride] {
            an->ensure_grad();
            softmax_backward_slices(o->values, o->grad, an->grad, num_slices, slice_len,
                                    first_stride, elem_stride);
        };
    });
}

Tensor log_softmax_rows(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(a.values().size());
    for (int i = 0; i < m; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * n;
        double* y = out.data() + static_cast<size_t>(i) * n;
        double mx = x[0];
        for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
        double total = 0.0;
        for (int j = 0; j < n; ++j) total += std::exp(x[j] - mx);
        const double lse = mx + std::log(total);
        for (int j = 0; j < n; ++j) y[j] = x[j] - lse;
    }
    return make_result(a.shape(), std::move(out), "log_softmax", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, m, n] {
            an->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double* y = o->values.data() + static_cast<size_t>(i) * n;
                const double* g = o->grad.data() + static_cast<size_t>(i) * n;
                double* dx = an->grad.data() + static_cast<size_t>(i) * n;
                double gsum = 0.0;
                for (int j = 0; j < n; ++j) gsum += g[j];
                for (int j = 0; j < n; ++j) dx[j] += g[j] - std::exp(y[j]) * gsum;
            }
        };
    });
}

Tensor row_sum(const Tensor& a) {
    const int m = a.rows(), n = a.cols();
    std::vector<double> out(static_cast<size_t>(m), 0.0);
    for (int i = 0; i < m; ++i) {
        const double* x = a.values().data() + static_cast<size_t>(i) * n;
        double s = 0.0;
        for (int j = 0; j < n; ++j) s += x[j];
        out[static_cast<size_t>(i)] = s;
    }
    return make_result({m, 1}, std::move(out), "row_sum", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, m, n] {
            an->ensure_grad();
            for (int i = 0; i < m; ++i) {
                const double g = o->grad[static_cast<size_t>(i)];
                double* dx = an->grad.data() + static_cast<size_t>(i) * n;
                for (int j = 0; j < n; ++j) dx[j] += g;
            }
        };
    });
}

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    return make_result({1}, {s}, "sum", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o] {
            an->ensure_grad();
            const double g = o->grad[0];
            for (double& d : an->grad) d += g;
        };
    });
}

Tensor mean_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.values()) s += v;
    const double inv = 1.0 / static_cast<double>(a.size());
    return make_result({1}, {s * inv}, "mean", {a}, [&](TensorNode* o) {
        auto an = a.node();
        return [an, o, inv] {
            an->ensure_grad();
            const double g = o->grad[0] * inv;
            for (double& d : an->grad) d += g;
        };
    });
}

Tensor squared_error(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "squared_error");
    double s = 0.0;
    for (size_t i = 0; i < a.values().size(); ++i) {
        const double d = a.values()[i] - b.values()[i];
        s += d * d;
    }
    return make_result({1}, {s}, "squared_error", {a, b}, [&](TensorNode* o) {
        auto an = a.node(), bn = b.node();
        return [an, bn, o] {
            const double g = o->grad[0];
            if (an->requires_grad) an->ensure_grad();
            if (bn->requires_grad) bn->ensure_grad();
            for (size_t i = 0; i < an->values.size(); ++i) {
                const double d = 2.0 * (an->values[i] - bn->values[i]) * g;
                if (an->requires_grad) an->grad[i] += d;
                if (bn->requires_grad) bn->grad[i] -= d;
            }
        };
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
    const int m = x.rows(), n = x.cols();
    if (gain.size() != n || bias.size() != n) {
        throw ContractError("layer_norm: gain/bias length must equal feature dim " +
                            std::to_string(n));
    }
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    std::vector<double> out(x.values().size());
    // Cached per-row statistics for the backward pass.
    auto mean = std::make_shared<std::vector<double>>(m);
    auto inv_std = std::make_shared<std::vector<double>>(m);
    for (int i = 0; i < m; ++i) {
        const double* xi = x.values().data() + static_cast<size_t>(i) * n;
        double mu = 0.0;
        for (int j = 0; j < n; ++j) mu += xi[j];
        mu /= n;
        double var = 0.0;
        for (int j = 0; j < n; ++j) {
            const double d = xi[j] - mu;
            var += d * d;
        }
        var /= n;  // population variance
        const double is = 1.0 / std::sqrt(var + eps);
        (*mean)[i] = mu;
        (*inv_std)[i] = is;
        double* yi = out.data() + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            yi[j] = gain.values()[j] * (xi[j] - mu) * is + bias.values()[j];
        }
    }
    return make_result(x.shape(), std::move(out), "layer_norm", {x, gain, bias}, [&](TensorNode* o) {
        auto xn = x.node(), gn = gain.node(), bn = bias.node();
        return [xn, gn, bn, o, mean, inv_std, m, n] {
            for (int i = 0; i < m; ++i) {
                const double* xi = xn->values.data() + static_cast<size_t>(i) * n;
                const double* gi = o->grad.data() + static_cast<size_t>(i) * n;
                const double mu = (*mean)[i];
                const double is = (*inv_std)[i];
                if (gn->requires_grad) gn->ensure_grad();
                if (bn->requires_grad) bn->ensure_grad();
                // dxhat_j = g_j * gain_j; reduce to the two row sums needed.
                double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
                for (int j = 0; j < n; ++j) {
                    const double xhat = (xi[j] - mu) * is;
                    const double dxhat = gi[j] * gn->values[j];
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    if (gn->requires_grad) gn->grad[j] += gi[j] * xhat;
                    if (bn->requires_grad) bn->grad[j] += gi[j];
                }
                if (xn->requires_grad) {
                    xn->ensure_grad();
                    double* dx = xn->grad.data() + static_cast<size_t>(i) * n;
                    for (int j = 0; j < n; ++j) {
                        const double xhat = (xi[j] - mu) * is;
                        const double dxhat = gi[j] * gn->values[j];
                        dx[j] += is * (dxhat - sum_dxhat / n - xhat * sum_dxhat_xhat / n);
                    }
                }
            }
        };
    });
}

// ---- backward -------------------------------------------------------------

Tape::Tape(const Tensor& loss) {
    if (!loss.defined()) throw ContractError("backward: undefined loss tensor");
    loss_ = loss.node();
    if (loss_->size() != 1) {
        throw ContractError("backward requires a scalar loss, got shape " + shape_str(loss_->shape));
    }
    std::unordered_set<TensorNode*> visited;
    std::vector<std::pair<std::shared_ptr<TensorNode>, size_t>> stack;
    visited.insert(loss_.get());
    stack.emplace_back(loss_, 0);
    while (!stack.empty()) {
        auto& top = stack.back();
        if (top.second < top.first->parents.size()) {
            auto parent = top.first->parents[top.second++];
            if (visited.insert(parent.get()).second) {
                stack.emplace_back(std::move(parent), 0);
            }
        } else {
            order_.push_back(top.first);
            stack.pop_back();
        }
    }
    for (const auto& node : order_) {
        if (node->backward_fn) ++op_count_;
    }
}

void Tape::backward() {
    // Interior gradients are scratch space for a single pass; zero them so
    // repeated calls accumulate exactly one contribution into each leaf.
    for (const auto& node : order_) {
        if (node->backward_fn) {
            node->ensure_grad();
            std::fill(node->grad.begin(), node->grad.end(), 0.0);
        }
    }
    loss_->ensure_grad();
    loss_->grad[0] += 1.0;
    executed_ = 0;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
        if ((*it)->backward_fn) {
            (*it)->backward_fn();
            ++executed_;
        }
    }
}

void backward(const Tensor& loss) {
    Tape tape(loss);
    tape.backward();
}

// ---- optimizer ------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
        m_[i].assign(params_[i].values().size(), 0.0);
        v_[i].assign(params_[i].values().size(), 0.0);
    }
}

void Adam::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Tensor& p = params_[i];
        if (!p.has_grad()) {
            throw ContractError("adam step: parameter " + std::to_string(i) +
                                " has no gradient (missing backward or zero_grad)");
        }
        const auto& g = p.grad();
        auto& vals = p.values();
        for (size_t j = 0; j < vals.size(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
            const double mhat = m_[i][j] / bc1;
            const double vhat = v_[i][j] / bc2;
            vals[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
}

// ---- initializers ---------------------------------------------------------

Tensor xavier_uniform(int fan_in, int fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> vals(static_cast<size_t>(fan_in) * fan_out);
    for (double& v : vals) v = rng.uniform(-limit, limit);
    return Tensor::from_values({fan_in, fan_out}, std::move(vals), true);
}

Tensor normal_init(std::vector<int> shape, double stddev, Rng& rng) {
    int64_t n = 1;
    for (int d : shape) n *= d;
    std::vector<double> vals(static_cast<size_t>(n));
    for (double& v : vals) v = rng.normal(0.0, stddev);
    return Tensor::from_values(std::move(shape), std::move(vals), true);
}

}  // namespace regionembed
