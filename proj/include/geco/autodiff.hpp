#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "geco/common.hpp"
#include "geco/mat.hpp"

namespace geco::ad {

/// One tape node: a value, its (lazily allocated) gradient, and the closure
/// that pushes the gradient to the parents. The graph is held alive by
/// shared ownership from results to operands.
struct Node {
    Mat value;
    Mat grad;  // empty until touched by backward
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward_fn;

    Mat& ensure_grad() {
        if (grad.empty()) grad = Mat(value.rows(), value.cols());
        return grad;
    }
};

/// Lightweight handle to a tape node. Copying shares the node.
class Var {
public:
    Var() = default;
    explicit Var(Mat value, bool requires_grad = false)
        : node_(std::make_shared<Node>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    bool defined() const { return node_ != nullptr; }
    const Mat& value() const { return node_->value; }
    Mat& value() { return node_->value; }
    const Mat& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && !node_->grad.empty(); }
    void zero_grad() { if (node_) node_->grad = Mat(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    std::shared_ptr<Node> node() const { return node_; }

    size_t rows() const { return node_->value.rows(); }
    size_t cols() const { return node_->value.cols(); }

private:
    std::shared_ptr<Node> node_;
};

/// While a guard is alive, ops do not record the tape (pure inference).
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool saved_;
};

bool grad_enabled();

/// Runs reverse-mode accumulation from a scalar (1x1) loss node.
void backward(const Var& loss);

// --- op set ------------------------------------------------------------

Var constant(Mat value);

// c = op(a) op(b) with optional transposes: (ta ? a^T : a) * (tb ? b^T : b)
Var matmul(const Var& a, const Var& b, bool ta = false, bool tb = false);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
// x (n x d) plus a broadcast row (1 x d)
Var add_rowvec(const Var& x, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);

// Elementwise min/max; ties take the gradient through `a`.
Var minimum(const Var& a, const Var& b);
Var maximum(const Var& a, const Var& b);
Var maximum_const(const Var& a, double c);
Var minimum_const(const Var& a, double c);

Var leaky_relu(const Var& a, double slope);
Var sigmoid(const Var& a);
Var softmax_rows(const Var& a);
Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

/// 3x3 convolution with zero padding 1 over an (h*w) x cin raster-major
/// feature matrix. w is (9*cin) x cout (kernel-major rows: dy, dx, cin),
/// b is 1 x cout. Output is (oh*ow) x cout with oh = (h-1)/stride + 1.
Var conv3x3(const Var& x, const Var& w, const Var& b, int h, int width, int stride);

/// Bilinear 2x upsampling of an (h*w) x c raster-major feature matrix.
Var upsample2x(const Var& x, int h, int w);

Var slice_cols(const Var& a, int c0, int c1);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const Var& a, const Var& b);
Var gather_rows(const Var& a, std::vector<int> indices);

Var sum_all(const Var& a);
Var mean_all(const Var& a);

}  // namespace geco::ad
