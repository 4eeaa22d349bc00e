#include "tamos/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace tamos::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::uint64_t g_op_count = 0;

std::uint64_t u64(Eigen::Index v) { return static_cast<std::uint64_t>(v); }

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

Node& in(Node& self, std::size_t i) { return *self.inputs[i]; }

bool wants(Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

double stable_softplus(double x) {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logistic(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}  // namespace

void Node::accumulate(const Matrix& g) {
    if (grad.size() == 0) {
        grad = g;
    } else {
        grad += g;
    }
}

Matrix& Node::ensure_grad() {
    if (grad.rows() != value.rows() || grad.cols() != value.cols()) {
        grad = Matrix::Zero(value.rows(), value.cols());
    }
    return grad;
}

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad.setZero(node_->value.rows(), node_->value.cols());
}

Var make_op(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> backward) {
    Var out(std::move(value), false);
    if (!g_grad_enabled) return out;
    bool any = false;
    for (const Var& v : inputs) any = any || v.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->inputs.reserve(inputs.size());
    for (Var& v : inputs) out.node_->inputs.push_back(v.node_);
    out.node_->backward_fn = std::move(backward);
    return out;
}

void backward(const Var& root) {
    require(root.valid() && root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
    if (!root.requires_grad()) return;
    if (root.node()->inputs.empty()) {
        root.node()->accumulate(Matrix::Constant(1, 1, 1.0));
        return;
    }

    // Iterative post-order DFS for a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !child->inputs.empty() && visited.insert(child).second) {
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Interior gradients start fresh; leaves keep accumulating.
    for (Node* n : order) n->grad.resize(0, 0);
    root.node()->grad = Matrix::Constant(1, 1, 1.0);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->grad.size() == 0 || !n->backward_fn) continue;
        n->backward_fn(*n);
    }
    // Free interior gradients; they are not meaningful after the pass.
    for (Node* n : order) {
        if (n != root.node().get()) n->grad.resize(0, 0);
    }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::uint64_t op_count() { return g_op_count; }
void add_ops(std::uint64_t n) { g_op_count += n; }

// ---- linear algebra ---------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    add_ops(u64(a.rows()) * u64(a.cols()) * u64(b.cols()));
    Matrix out = a.value() * b.value();
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) in(self, 0).accumulate(self.grad * in(self, 1).value.transpose());
        if (wants(self, 1)) in(self, 1).accumulate(in(self, 0).value.transpose() * self.grad);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require(a.cols() == b.cols(), "matmul_nt: inner dimensions differ");
    add_ops(u64(a.rows()) * u64(a.cols()) * u64(b.rows()));
    Matrix out = a.value() * b.value().transpose();
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) in(self, 0).accumulate(self.grad * in(self, 1).value);
        if (wants(self, 1)) in(self, 1).accumulate(self.grad.transpose() * in(self, 0).value);
    });
}

Var transpose(const Var& a) {
    Matrix out = a.value().transpose();
    return make_op(std::move(out), {a}, [](Node& self) {
        in(self, 0).accumulate(self.grad.transpose());
    });
}

// ---- elementwise ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    add_ops(u64(a.value().size()));
    Matrix out = a.value() + b.value();
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) in(self, 0).accumulate(self.grad);
        if (wants(self, 1)) in(self, 1).accumulate(self.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    add_ops(u64(a.value().size()));
    Matrix out = a.value() - b.value();
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) in(self, 0).accumulate(self.grad);
        if (wants(self, 1)) in(self, 1).accumulate(-self.grad);
    });
}

Var mul(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    add_ops(u64(a.value().size()));
    Matrix out = a.value().cwiseProduct(b.value());
    return make_op(std::move(out), {a, b}, [](Node& self) {
        if (wants(self, 0)) in(self, 0).accumulate(self.grad.cwiseProduct(in(self, 1).value));
        if (wants(self, 1)) in(self, 1).accumulate(self.grad.cwiseProduct(in(self, 0).value));
    });
}

Var scale(const Var& a, double s) {
    add_ops(u64(a.value().size()));
    Matrix out = a.value() * s;
    return make_op(std::move(out), {a}, [s](Node& self) { in(self, 0).accumulate(self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: row must be 1 x cols");
    add_ops(u64(a.value().size()));
    Matrix out = a.value().rowwise() + row.value().row(0);
    return make_op(std::move(out), {a, row}, [](Node& self) {
        if (wants(self, 0)) in(self, 0).accumulate(self.grad);
        if (wants(self, 1)) in(self, 1).accumulate(self.grad.colwise().sum());
    });
}

Var mul_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "mul_row: row must be 1 x cols");
    add_ops(u64(a.value().size()));
    Matrix out = a.value().array().rowwise() * row.value().row(0).array();
    return make_op(std::move(out), {a, row}, [](Node& self) {
        const auto& r = in(self, 1).value;
        if (wants(self, 0)) {
            Matrix g = self.grad.array().rowwise() * r.row(0).array();
            in(self, 0).accumulate(g);
        }
        if (wants(self, 1)) {
            Matrix g = self.grad.cwiseProduct(in(self, 0).value).colwise().sum();
            in(self, 1).accumulate(g);
        }
    });
}

Var mul_col(const Var& a, const Var& col) {
    require(col.cols() == 1 && col.rows() == a.rows(), "mul_col: col must be rows x 1");
    add_ops(u64(a.value().size()));
    Matrix out = a.value().array().colwise() * col.value().col(0).array();
    return make_op(std::move(out), {a, col}, [](Node& self) {
        const auto& c = in(self, 1).value;
        if (wants(self, 0)) {
            Matrix g = self.grad.array().colwise() * c.col(0).array();
            in(self, 0).accumulate(g);
        }
        if (wants(self, 1)) {
            Matrix g = self.grad.cwiseProduct(in(self, 0).value).rowwise().sum();
            in(self, 1).accumulate(g);
        }
    });
}

Var silu(const Var& a) {
    add_ops(4 * u64(a.value().size()));
    const Matrix sig = a.value().unaryExpr([](double x) { return logistic(x); });
    Matrix out = a.value().cwiseProduct(sig);
    return make_op(std::move(out), {a}, [sig](Node& self) {
        const auto& x = in(self, 0).value;
        Matrix d = sig.array() * (1.0 + x.array() * (1.0 - sig.array()));
        in(self, 0).accumulate(self.grad.cwiseProduct(d));
    });
}

Var sigmoid(const Var& a) {
    add_ops(3 * u64(a.value().size()));
    Matrix out = a.value().unaryExpr([](double x) { return logistic(x); });
    return make_op(std::move(out), {a}, [](Node& self) {
        Matrix d = self.value.array() * (1.0 - self.value.array());
        in(self, 0).accumulate(self.grad.cwiseProduct(d));
    });
}

Var softplus(const Var& a) {
    add_ops(3 * u64(a.value().size()));
    Matrix out = a.value().unaryExpr([](double x) { return stable_softplus(x); });
    return make_op(std::move(out), {a}, [](Node& self) {
        Matrix d = in(self, 0).value.unaryExpr([](double x) { return logistic(x); });
        in(self, 0).accumulate(self.grad.cwiseProduct(d));
    });
}

Var softmax_rows(const Var& a) {
    add_ops(3 * u64(a.value().size()));
    Matrix out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double mx = a.value().row(r).maxCoeff();
        out.row(r) = (a.value().row(r).array() - mx).exp();
        out.row(r) /= out.row(r).sum();
    }
    return make_op(std::move(out), {a}, [](Node& self) {
        const Matrix& y = self.value;
        Eigen::VectorXd dot = self.grad.cwiseProduct(y).rowwise().sum();
        Matrix g = y.array() * (self.grad.colwise() - dot).array();
        in(self, 0).accumulate(g);
    });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
    require(gamma.rows() == 1 && gamma.cols() == a.cols(), "layer_norm: gamma shape");
    require(beta.rows() == 1 && beta.cols() == a.cols(), "layer_norm: beta shape");
    add_ops(8 * u64(a.value().size()));
    const Eigen::Index n = a.rows();
    const double c = static_cast<double>(a.cols());
    Matrix xhat(n, a.cols());
    Eigen::VectorXd inv_std(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mu = a.value().row(r).mean();
        const double var = (a.value().row(r).array() - mu).square().sum() / c;
        inv_std(r) = 1.0 / std::sqrt(var + eps);
        xhat.row(r) = (a.value().row(r).array() - mu) * inv_std(r);
    }
    Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
                 beta.value().row(0).array();
    return make_op(std::move(out), {a, gamma, beta}, [xhat, inv_std, c](Node& self) {
        const Matrix& g = self.grad;
        if (wants(self, 1)) in(self, 1).accumulate(g.cwiseProduct(xhat).colwise().sum());
        if (wants(self, 2)) in(self, 2).accumulate(g.colwise().sum());
        if (wants(self, 0)) {
            Matrix gx = g.array().rowwise() * in(self, 1).value.row(0).array();
            Eigen::VectorXd mean_g = gx.rowwise().sum() / c;
            Eigen::VectorXd mean_gx = gx.cwiseProduct(xhat).rowwise().sum() / c;
            Matrix dx = gx;
            dx.colwise() -= mean_g;
            dx -= (xhat.array().colwise() * mean_gx.array()).matrix();
            dx = (dx.array().colwise() * inv_std.array()).matrix();
            in(self, 0).accumulate(dx);
        }
    });
}

// ---- shape ------------------------------------------------------------------

Var concat_rows(std::span<const Var> parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    for (const Var& p : parts) {
        require(p.cols() == cols, "concat_rows: column mismatch");
        rows += p.rows();
    }
    Matrix out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        offsets.push_back(at);
        out.middleRows(at, p.rows()) = p.value();
        at += p.rows();
    }
    return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [offsets](Node& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            if (!wants(self, i)) continue;
            in(self, i).accumulate(self.grad.middleRows(offsets[i], in(self, i).value.rows()));
        }
    });
}

Var concat_cols(std::span<const Var> parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        require(p.rows() == rows, "concat_cols: row mismatch");
        cols += p.cols();
    }
    Matrix out(rows, cols);
    std::vector<Eigen::Index> offsets;
    Eigen::Index at = 0;
    for (const Var& p : parts) {
        offsets.push_back(at);
        out.middleCols(at, p.cols()) = p.value();
        at += p.cols();
    }
    return make_op(std::move(out), std::vector<Var>(parts.begin(), parts.end()), [offsets](Node& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            if (!wants(self, i)) continue;
            in(self, i).accumulate(self.grad.middleCols(offsets[i], in(self, i).value.cols()));
        }
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.rows(), "slice_rows: out of range");
    Matrix out = a.value().middleRows(start, count);
    return make_op(std::move(out), {a}, [start](Node& self) {
        Node& src = in(self, 0);
        Matrix g = Matrix::Zero(src.value.rows(), src.value.cols());
        g.middleRows(start, self.grad.rows()) = self.grad;
        src.accumulate(g);
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
    require(start >= 0 && count >= 0 && start + count <= a.cols(), "slice_cols: out of range");
    Matrix out = a.value().middleCols(start, count);
    return make_op(std::move(out), {a}, [start](Node& self) {
        Node& src = in(self, 0);
        Matrix g = Matrix::Zero(src.value.rows(), src.value.cols());
        g.middleCols(start, self.grad.cols()) = self.grad;
        src.accumulate(g);
    });
}

Var take_rows(const Var& a, std::span<const int> rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), a.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i] >= 0 && rows[i] < a.rows(), "take_rows: index out of range");
        out.row(static_cast<Eigen::Index>(i)) = a.value().row(rows[i]);
    }
    std::vector<int> idx(rows.begin(), rows.end());
    return make_op(std::move(out), {a}, [idx](Node& self) {
        Node& src = in(self, 0);
        Matrix g = Matrix::Zero(src.value.rows(), src.value.cols());
        for (std::size_t i = 0; i < idx.size(); ++i) g.row(idx[i]) += self.grad.row(static_cast<Eigen::Index>(i));
        src.accumulate(g);
    });
}

// ---- spatial ------------------------------------------------------------------

Var im2col(const Var& a, int height, int width, int kernel, int stride, int pad) {
    require(a.rows() == static_cast<Eigen::Index>(height) * width, "im2col: rows != height*width");
    require(kernel > 0 && stride > 0 && pad >= 0, "im2col: bad geometry");
    const int channels = static_cast<int>(a.cols());
    const int out_h = (height + 2 * pad - kernel) / stride + 1;
    const int out_w = (width + 2 * pad - kernel) / stride + 1;
    const int patch = kernel * kernel * channels;
    Matrix out = Matrix::Zero(static_cast<Eigen::Index>(out_h) * out_w, patch);
    const Matrix& src = a.value();
    for (int oy = 0; oy < out_h; ++oy) {
        for (int ox = 0; ox < out_w; ++ox) {
            const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
            for (int ky = 0; ky < kernel; ++ky) {
                const int iy = oy * stride - pad + ky;
                if (iy < 0 || iy >= height) continue;
                for (int kx = 0; kx < kernel; ++kx) {
                    const int ix = ox * stride - pad + kx;
                    if (ix < 0 || ix >= width) continue;
                    out.block(row, (ky * kernel + kx) * channels, 1, channels) =
                        src.row(static_cast<Eigen::Index>(iy) * width + ix);
                }
            }
        }
    }
    return make_op(std::move(out), {a}, [=](Node& self) {
        Node& s = in(self, 0);
        Matrix g = Matrix::Zero(s.value.rows(), s.value.cols());
        for (int oy = 0; oy < out_h; ++oy) {
            for (int ox = 0; ox < out_w; ++ox) {
                const Eigen::Index row = static_cast<Eigen::Index>(oy) * out_w + ox;
                for (int ky = 0; ky < kernel; ++ky) {
                    const int iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= height) continue;
                    for (int kx = 0; kx < kernel; ++kx) {
                        const int ix = ox * stride - pad + kx;
                        if (ix < 0 || ix >= width) continue;
                        g.row(static_cast<Eigen::Index>(iy) * width + ix) +=
                            self.grad.block(row, (ky * kernel + kx) * channels, 1, channels);
                    }
                }
            }
        }
        s.accumulate(g);
    });
}

Var upsample_nearest2x(const Var& a, int height, int width) {
    require(a.rows() == static_cast<Eigen::Index>(height) * width, "upsample: rows != height*width");
    const int out_w = 2 * width;
    Matrix out(static_cast<Eigen::Index>(4) * height * width, a.cols());
    for (int y = 0; y < 2 * height; ++y) {
        for (int x = 0; x < out_w; ++x) {
            out.row(static_cast<Eigen::Index>(y) * out_w + x) =
                a.value().row(static_cast<Eigen::Index>(y / 2) * width + x / 2);
        }
    }
    return make_op(std::move(out), {a}, [height, width, out_w](Node& self) {
        Node& s = in(self, 0);
        Matrix g = Matrix::Zero(s.value.rows(), s.value.cols());
        for (int y = 0; y < 2 * height; ++y) {
            for (int x = 0; x < out_w; ++x) {
                g.row(static_cast<Eigen::Index>(y / 2) * width + x / 2) +=
                    self.grad.row(static_cast<Eigen::Index>(y) * out_w + x);
            }
        }
        s.accumulate(g);
    });
}

// ---- reductions -------------------------------------------------------------

Var sum(const Var& a) {
    add_ops(u64(a.value().size()));
    Matrix out = Matrix::Constant(1, 1, a.value().sum());
    return make_op(std::move(out), {a}, [](Node& self) {
        Node& s = in(self, 0);
        s.accumulate(Matrix::Constant(s.value.rows(), s.value.cols(), self.grad(0, 0)));
    });
}

Var mean(const Var& a) {
    require(a.value().size() > 0, "mean: empty input");
    return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var add_scalars(std::span<const Var> terms) {
    double total = 0.0;
    for (const Var& t : terms) {
        require(t.rows() == 1 && t.cols() == 1, "add_scalars: non-scalar term");
        total += t.scalar();
    }
    return make_op(Matrix::Constant(1, 1, total), std::vector<Var>(terms.begin(), terms.end()), [](Node& self) {
        for (std::size_t i = 0; i < self.inputs.size(); ++i) {
            if (wants(self, i)) in(self, i).accumulate(self.grad);
        }
    });
}

}  // namespace tamos::ad
