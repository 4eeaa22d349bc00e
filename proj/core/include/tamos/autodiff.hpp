#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every tensor in the tracker is two dimensional: spatial maps are
// stored as (cells x channels) with cells in row-major (y, x) order.

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace tamos {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowVector = Eigen::Matrix<double, 1, Eigen::Dynamic>;

namespace ad {

struct Node {
    Matrix value;
    Matrix grad;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;
    bool requires_grad = false;

    void accumulate(const Matrix& g);
    Matrix& ensure_grad();
};

/// Handle to a node in the computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Matrix value, bool requires_grad = false);

    static Var constant(Matrix value) { return Var(std::move(value), false); }
    static Var parameter(Matrix value) { return Var(std::move(value), true); }

    [[nodiscard]] const Matrix& value() const { return node_->value; }
    [[nodiscard]] Matrix& mutable_value() { return node_->value; }
    [[nodiscard]] const Matrix& grad() const { return node_->grad; }
    [[nodiscard]] Matrix& mutable_grad() { return node_->ensure_grad(); }
    [[nodiscard]] bool requires_grad() const { return node_ && node_->requires_grad; }
    [[nodiscard]] Eigen::Index rows() const { return node_->value.rows(); }
    [[nodiscard]] Eigen::Index cols() const { return node_->value.cols(); }
    [[nodiscard]] double scalar() const { return node_->value(0, 0); }
    [[nodiscard]] bool valid() const { return static_cast<bool>(node_); }

    void zero_grad();

    [[nodiscard]] const std::shared_ptr<Node>& node() const { return node_; }

private:
    friend Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);
    std::shared_ptr<Node> node_;
};

/// Creates a result node. When gradients are disabled or no input requires
/// them, the result is a plain constant and `backward` is dropped.
Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Runs reverse accumulation from a scalar. Gradients add into existing
/// leaf gradients; callers zero parameter gradients between steps.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Arithmetic operation counter (multiply-adds plus elementwise ops), per
// thread. Used to measure the per-frame cost of the tracker.
std::uint64_t op_count();
void add_ops(std::uint64_t n);

class OpCountScope {
public:
    OpCountScope() : start_(op_count()) {}
    [[nodiscard]] std::uint64_t elapsed() const { return op_count() - start_; }

private:
    std::uint64_t start_;
};

// ---- linear algebra ---------------------------------------------------------
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var transpose(const Var& a);

// ---- elementwise ------------------------------------------------------------
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a[r, :] + row for every r; row is 1 x cols.
Var add_row(const Var& a, const Var& row);
/// a[r, :] * row for every r; row is 1 x cols.
Var mul_row(const Var& a, const Var& row);
/// a[:, c] * col for every c; col is rows x 1.
Var mul_col(const Var& a, const Var& col);

Var silu(const Var& a);
Var sigmoid(const Var& a);
Var softplus(const Var& a);

Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);

// ---- shape ------------------------------------------------------------------
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var take_rows(const Var& a, std::span<const int> rows);

// ---- spatial (cells x channels, row-major cells) ----------------------------
/// Patch extraction for a k x k convolution with zero padding. Output has
/// one row per output cell and k*k*channels columns ordered (ky, kx, c).
Var im2col(const Var& a, int height, int width, int kernel, int stride, int pad);
Var upsample_nearest2x(const Var& a, int height, int width);

// ---- reductions -------------------------------------------------------------
Var sum(const Var& a);
Var mean(const Var& a);
Var add_scalars(std::span<const Var> terms);

}  // namespace ad
}  // namespace tamos
