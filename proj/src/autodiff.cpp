#include "geco/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "geco/simd/kernels.hpp"

namespace geco::ad {

namespace {

thread_local bool g_grad_enabled = true;

bool any_requires_grad(std::initializer_list<const Var*> vars) {
    if (!g_grad_enabled) return false;
    for (const Var* v : vars)
        if (v->defined() && v->requires_grad()) return true;
    return false;
}

// Transposed copy helper.
Mat transposed(const Mat& a) {
    Mat t(a.cols(), a.rows());
    simd::transpose(a.data(), t.data(), static_cast<int>(a.rows()),
                    static_cast<int>(a.cols()));
    return t;
}

}  // namespace

NoGradGuard::NoGradGuard() : saved_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = saved_; }

bool grad_enabled() { return g_grad_enabled; }

void backward(const Var& loss) {
    GECO_CHECK(loss.defined() && loss.rows() == 1 && loss.cols() == 1,
               "backward expects a scalar loss");
    // Iterative post-order DFS for a reverse topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()(0, 0) = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn && !node->grad.empty()) node->backward_fn();
    }
}

Var constant(Mat value) { return Var(std::move(value), false); }

Var matmul(const Var& a, const Var& b, bool ta, bool tb) {
    const Mat& av = a.value();
    const Mat& bv = b.value();
    const int m = static_cast<int>(ta ? av.cols() : av.rows());
    const int k = static_cast<int>(ta ? av.rows() : av.cols());
    const int kb = static_cast<int>(tb ? bv.cols() : bv.rows());
    const int n = static_cast<int>(tb ? bv.rows() : bv.cols());
    GECO_CHECK(k == kb, "matmul inner dimensions disagree");

    Mat out(m, n);
    if (!ta && !tb) {
        simd::gemm_nn(av.data(), bv.data(), out.data(), m, k, n, false);
    } else if (ta && !tb) {
        simd::gemm_tn(av.data(), bv.data(), out.data(), m, k, n, false);
    } else if (!ta && tb) {
        const Mat bt = transposed(bv);
        simd::gemm_nn(av.data(), bt.data(), out.data(), m, k, n, false);
    } else {
        const Mat at = transposed(av);
        const Mat bt = transposed(bv);
        simd::gemm_nn(at.data(), bt.data(), out.data(), m, k, n, false);
    }

    Var result(std::move(out));
    if (!any_requires_grad({&a, &b})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node(), b.node()};
    result.node()->backward_fn = [self, a, b, ta, tb, m, k, n]() {
        const Mat& g = self->grad;
        if (a.requires_grad()) {
            Mat& da = a.node()->ensure_grad();
            if (!ta && !tb) {  // dA += G * B^T
                const Mat bt = transposed(b.value());
                simd::gemm_nn(g.data(), bt.data(), da.data(), m, n, k, true);
            } else if (ta && !tb) {  // A is k x m: dA += B * G^T
                const Mat gt = transposed(g);
                simd::gemm_nn(b.value().data(), gt.data(), da.data(), k, n, m, true);
            } else if (!ta && tb) {  // dA += G * B
                simd::gemm_nn(g.data(), b.value().data(), da.data(), m, n, k, true);
            } else {  // A is k x m: dA += B^T * G^T = (G * B)^T
                Mat tmp(m, k);
                simd::gemm_nn(g.data(), b.value().data(), tmp.data(), m, n, k, false);
                const Mat tt = transposed(tmp);
                simd::add(da.data(), tt.data(), da.data(), static_cast<int>(da.numel()));
            }
        }
        if (b.requires_grad()) {
            Mat& db = b.node()->ensure_grad();
            if (!ta && !tb) {  // dB += A^T * G
                simd::gemm_tn(a.value().data(), g.data(), db.data(), k, m, n, true);
            } else if (ta && !tb) {  // dB += A * G
                simd::gemm_nn(a.value().data(), g.data(), db.data(), k, m, n, true);
            } else if (!ta && tb) {  // B is n x k: dB += G^T * A
                simd::gemm_tn(g.data(), a.value().data(), db.data(), n, m, k, true);
            } else {  // B is n x k: dB += G^T * A^T = (A * G)^T
                Mat tmp(k, n);
                simd::gemm_nn(a.value().data(), g.data(), tmp.data(), k, m, n, false);
                const Mat tt = transposed(tmp);
                simd::add(db.data(), tt.data(), db.data(), static_cast<int>(db.numel()));
            }
        }
    };
    return result;
}

namespace {

// Shared scaffolding for elementwise binary ops with same-shape operands.
template <typename Fwd, typename Bwd>
Var binary_op(const Var& a, const Var& b, Fwd fwd, Bwd bwd) {
    GECO_CHECK(a.value().same_shape(b.value()), "elementwise op requires matching shapes");
    Mat out(a.rows(), a.cols());
    fwd(a.value(), b.value(), out);
    Var result(std::move(out));
    if (!any_requires_grad({&a, &b})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node(), b.node()};
    result.node()->backward_fn = [self, a, b, bwd]() { bwd(self, a, b); };
    return result;
}

template <typename Fwd, typename Bwd>
Var unary_op(const Var& a, Fwd fwd, Bwd bwd) {
    Mat out(a.rows(), a.cols());
    fwd(a.value(), out);
    Var result(std::move(out));
    if (!any_requires_grad({&a})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node()};
    result.node()->backward_fn = [self, a, bwd]() { bwd(self, a); };
    return result;
}

}  // namespace

Var add(const Var& a, const Var& b) {
    return binary_op(
        a, b,
        [](const Mat& x, const Mat& y, Mat& out) {
            simd::add(x.data(), y.data(), out.data(), static_cast<int>(out.numel()));
        },
        [](Node* self, const Var& a, const Var& b) {
            const int n = static_cast<int>(self->grad.numel());
            if (a.requires_grad()) {
                Mat& da = a.node()->ensure_grad();
                simd::add(da.data(), self->grad.data(), da.data(), n);
            }
            if (b.requires_grad()) {
                Mat& db = b.node()->ensure_grad();
                simd::add(db.data(), self->grad.data(), db.data(), n);
            }
        });
}

Var sub(const Var& a, const Var& b) {
    return binary_op(
        a, b,
        [](const Mat& x, const Mat& y, Mat& out) {
            simd::sub(x.data(), y.data(), out.data(), static_cast<int>(out.numel()));
        },
        [](Node* self, const Var& a, const Var& b) {
            const int n = static_cast<int>(self->grad.numel());
            if (a.requires_grad()) {
                Mat& da = a.node()->ensure_grad();
                simd::add(da.data(), self->grad.data(), da.data(), n);
            }
            if (b.requires_grad())
                simd::axpy(-1.0, self->grad.data(), b.node()->ensure_grad().data(), n);
        });
}

Var mul(const Var& a, const Var& b) {
    return binary_op(
        a, b,
        [](const Mat& x, const Mat& y, Mat& out) {
            simd::mul(x.data(), y.data(), out.data(), static_cast<int>(out.numel()));
        },
        [](Node* self, const Var& a, const Var& b) {
            const int n = static_cast<int>(self->grad.numel());
            Mat tmp(self->grad.rows(), self->grad.cols());
            if (a.requires_grad()) {
                Mat& da = a.node()->ensure_grad();
                simd::mul(self->grad.data(), b.value().data(), tmp.data(), n);
                simd::add(da.data(), tmp.data(), da.data(), n);
            }
            if (b.requires_grad()) {
                Mat& db = b.node()->ensure_grad();
                simd::mul(self->grad.data(), a.value().data(), tmp.data(), n);
                simd::add(db.data(), tmp.data(), db.data(), n);
            }
        });
}

Var div(const Var& a, const Var& b) {
    return binary_op(
        a, b,
        [](const Mat& x, const Mat& y, Mat& out) {
            for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] / y[i];
        },
        [](Node* self, const Var& a, const Var& b) {
            const size_t n = self->grad.numel();
            if (a.requires_grad()) {
                Mat& da = a.node()->ensure_grad();
                for (size_t i = 0; i < n; ++i) da[i] += self->grad[i] / b.value()[i];
            }
            if (b.requires_grad()) {
                Mat& db = b.node()->ensure_grad();
                for (size_t i = 0; i < n; ++i) {
                    const double bv = b.value()[i];
                    db[i] -= self->grad[i] * a.value()[i] / (bv * bv);
                }
            }
        });
}

Var add_rowvec(const Var& x, const Var& b) {
    GECO_CHECK(b.rows() == 1 && b.cols() == x.cols(),
               "row-vector broadcast requires a 1 x cols operand");
    Mat out(x.rows(), x.cols());
    const int d = static_cast<int>(x.cols());
    for (size_t r = 0; r < x.rows(); ++r)
        simd::add(x.value().row(r), b.value().data(), out.row(r), d);
    Var result(std::move(out));
    if (!any_requires_grad({&x, &b})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {x.node(), b.node()};
    result.node()->backward_fn = [self, x, b]() {
        const int d = static_cast<int>(x.cols());
        if (x.requires_grad()) {
            Mat& dx = x.node()->ensure_grad();
            simd::add(dx.data(), self->grad.data(), dx.data(),
                      static_cast<int>(x.value().numel()));
        }
        if (b.requires_grad()) {
            Mat& db = b.node()->ensure_grad();
            for (size_t r = 0; r < self->grad.rows(); ++r)
                simd::add(db.data(), self->grad.row(r), db.data(), d);
        }
    };
    return result;
}

Var scale(const Var& a, double s) {
    return unary_op(
        a,
        [s](const Mat& x, Mat& out) {
            simd::scale(x.data(), s, out.data(), static_cast<int>(out.numel()));
        },
        [s](Node* self, const Var& a) {
            simd::axpy(s, self->grad.data(), a.node()->ensure_grad().data(),
                       static_cast<int>(self->grad.numel()));
        });
}

Var add_const(const Var& a, double c) {
    return unary_op(
        a,
        [c](const Mat& x, Mat& out) {
            for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] + c;
        },
        [](Node* self, const Var& a) {
            Mat& da = a.node()->ensure_grad();
            simd::add(da.data(), self->grad.data(), da.data(),
                      static_cast<int>(self->grad.numel()));
        });
}

namespace {

Var extremum(const Var& a, const Var& b, bool take_min) {
    return binary_op(
        a, b,
        [take_min](const Mat& x, const Mat& y, Mat& out) {
            for (size_t i = 0; i < out.numel(); ++i)
                out[i] = take_min ? (x[i] <= y[i] ? x[i] : y[i])
                                  : (x[i] >= y[i] ? x[i] : y[i]);
        },
        [take_min](Node* self, const Var& a, const Var& b) {
            const size_t n = self->grad.numel();
            for (size_t i = 0; i < n; ++i) {
                const bool pick_a = take_min ? a.value()[i] <= b.value()[i]
                                             : a.value()[i] >= b.value()[i];
                if (pick_a) {
                    if (a.requires_grad()) a.node()->ensure_grad()[i] += self->grad[i];
                } else {
                    if (b.requires_grad()) b.node()->ensure_grad()[i] += self->grad[i];
                }
            }
        });
}

}  // namespace

Var minimum(const Var& a, const Var& b) { return extremum(a, b, true); }
Var maximum(const Var& a, const Var& b) { return extremum(a, b, false); }

Var maximum_const(const Var& a, double c) {
    return unary_op(
        a,
        [c](const Mat& x, Mat& out) {
            for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] >= c ? x[i] : c;
        },
        [c](Node* self, const Var& a) {
            Mat& da = a.node()->ensure_grad();
            for (size_t i = 0; i < self->grad.numel(); ++i)
                if (a.value()[i] >= c) da[i] += self->grad[i];
        });
}

Var minimum_const(const Var& a, double c) {
    return unary_op(
        a,
        [c](const Mat& x, Mat& out) {
            for (size_t i = 0; i < out.numel(); ++i) out[i] = x[i] <= c ? x[i] : c;
        },
        [c](Node* self, const Var& a) {
            Mat& da = a.node()->ensure_grad();
            for (size_t i = 0; i < self->grad.numel(); ++i)
                if (a.value()[i] <= c) da[i] += self->grad[i];
        });
}

Var leaky_relu(const Var& a, double slope) {
    return unary_op(
        a,
        [slope](const Mat& x, Mat& out) {
            simd::leaky_relu(x.data(), out.data(), static_cast<int>(out.numel()), slope);
        },
        [slope](Node* self, const Var& a) {
            simd::leaky_relu_grad(a.value().data(), self->grad.data(),
                                  a.node()->ensure_grad().data(),
                                  static_cast<int>(self->grad.numel()), slope);
        });
}

Var sigmoid(const Var& a) {
    Mat out(a.rows(), a.cols());
    simd::sigmoid(a.value().data(), out.data(), static_cast<int>(out.numel()));
    Var result(std::move(out));
    if (!any_requires_grad({&a})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node()};
    result.node()->backward_fn = [self, a]() {
        Mat& da = a.node()->ensure_grad();
        const Mat& y = self->value;
        for (size_t i = 0; i < y.numel(); ++i) da[i] += self->grad[i] * y[i] * (1.0 - y[i]);
    };
    return result;
}

Var softmax_rows(const Var& a) {
    Mat out = a.value();
    const int d = static_cast<int>(out.cols());
    for (size_t r = 0; r < out.rows(); ++r) simd::softmax_row(out.row(r), d);
    Var result(std::move(out));
    if (!any_requires_grad({&a})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node()};
    result.node()->backward_fn = [self, a]() {
        const Mat& y = self->value;
        const int d = static_cast<int>(y.cols());
        Mat& da = a.node()->ensure_grad();
        for (size_t r = 0; r < y.rows(); ++r) {
            const double* yr = y.row(r);
            const double* gr = self->grad.row(r);
            const double s = simd::dot(yr, gr, d);
            double* dr = da.row(r);
            for (int j = 0; j < d; ++j) dr[j] += yr[j] * (gr[j] - s);
        }
    };
    return result;
}

Var layernorm_rows(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const size_t n = x.rows();
    const int d = static_cast<int>(x.cols());
    GECO_CHECK(gamma.rows() == 1 && gamma.cols() == x.cols() && beta.rows() == 1 &&
                   beta.cols() == x.cols(),
               "layernorm scale/shift must be 1 x cols");
    Mat out(n, d);
    auto rstd = std::make_shared<std::vector<double>>(n);
    auto mean = std::make_shared<std::vector<double>>(n);
    for (size_t r = 0; r < n; ++r) {
        const double* xr = x.value().row(r);
        double mu = simd::reduce_sum(xr, d) / d;
        double var = 0;
        for (int j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
        var /= d;
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mean)[r] = mu;
        (*rstd)[r] = rs;
        double* o = out.row(r);
        const double* g = gamma.value().data();
        const double* be = beta.value().data();
        for (int j = 0; j < d; ++j) o[j] = (xr[j] - mu) * rs * g[j] + be[j];
    }
    Var result(std::move(out));
    if (!any_requires_grad({&x, &gamma, &beta})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {x.node(), gamma.node(), beta.node()};
    result.node()->backward_fn = [self, x, gamma, beta, mean, rstd]() {
        const size_t n = x.rows();
        const int d = static_cast<int>(x.cols());
        const Mat& g = self->grad;
        for (size_t r = 0; r < n; ++r) {
            const double* xr = x.value().row(r);
            const double* gr = g.row(r);
            const double mu = (*mean)[r];
            const double rs = (*rstd)[r];
            // dy through gamma; then the standard layernorm row gradient.
            double sum_dg = 0, sum_dgx = 0;
            for (int j = 0; j < d; ++j) {
                const double xhat = (xr[j] - mu) * rs;
                const double dyg = gr[j] * gamma.value()[j];
                sum_dg += dyg;
                sum_dgx += dyg * xhat;
            }
            if (x.requires_grad()) {
                double* dx = x.node()->ensure_grad().row(r);
                for (int j = 0; j < d; ++j) {
                    const double xhat = (xr[j] - mu) * rs;
                    const double dyg = gr[j] * gamma.value()[j];
                    dx[j] += rs * (dyg - sum_dg / d - xhat * sum_dgx / d);
                }
            }
            if (gamma.requires_grad()) {
                double* dgm = gamma.node()->ensure_grad().data();
                for (int j = 0; j < d; ++j) dgm[j] += gr[j] * (xr[j] - mu) * rs;
            }
            if (beta.requires_grad()) {
                double* dbt = beta.node()->ensure_grad().data();
                for (int j = 0; j < d; ++j) dbt[j] += gr[j];
            }
        }
    };
    return result;
}

namespace {

struct ConvDims {
    int h, w, cin, cout, stride, oh, ow;
};

// Fills one im2col block for rows [r0, r1) of the output raster.
void im2col_block(const Mat& x, const ConvDims& d, int r0, int r1, Mat& block) {
    const int cin = d.cin;
    for (int r = r0; r < r1; ++r) {
        const int oy = r / d.ow;
        const int ox = r % d.ow;
        double* dst = block.row(r - r0);
        for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy * d.stride - 1 + ky;
            for (int kx = 0; kx < 3; ++kx) {
                const int ix = ox * d.stride - 1 + kx;
                double* cell = dst + (ky * 3 + kx) * cin;
                if (iy < 0 || iy >= d.h || ix < 0 || ix >= d.w) {
                    std::fill(cell, cell + cin, 0.0);
                } else {
                    const double* src = x.row(static_cast<size_t>(iy) * d.w + ix);
                    std::copy(src, src + cin, cell);
                }
            }
        }
    }
}

constexpr int kConvBlockRows = 4096;

}  // namespace

Var conv3x3(const Var& x, const Var& w, const Var& b, int h, int width, int stride) {
    ConvDims dims;
    dims.h = h;
    dims.w = width;
    dims.cin = static_cast<int>(x.cols());
    dims.cout = static_cast<int>(w.cols());
    dims.stride = stride;
    dims.oh = (h - 1) / stride + 1;
    dims.ow = (width - 1) / stride + 1;
    GECO_CHECK(x.rows() == static_cast<size_t>(h) * width, "conv input rows must equal h*w");
    GECO_CHECK(w.rows() == static_cast<size_t>(9) * dims.cin,
               "conv weight must be (9*cin) x cout");
    GECO_CHECK(b.rows() == 1 && b.cols() == static_cast<size_t>(dims.cout),
               "conv bias must be 1 x cout");

    const int out_rows = dims.oh * dims.ow;
    Mat out(out_rows, dims.cout);
    {
        Mat block(std::min(kConvBlockRows, out_rows), 9 * dims.cin);
        for (int r0 = 0; r0 < out_rows; r0 += kConvBlockRows) {
            const int r1 = std::min(r0 + kConvBlockRows, out_rows);
            im2col_block(x.value(), dims, r0, r1, block);
            simd::gemm_nn(block.data(), w.value().data(), out.row(r0), r1 - r0, 9 * dims.cin,
                          dims.cout, false);
        }
    }
    for (int r = 0; r < out_rows; ++r)
        simd::add(out.row(r), b.value().data(), out.row(r), dims.cout);

    Var result(std::move(out));
    if (!any_requires_grad({&x, &w, &b})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {x.node(), w.node(), b.node()};
    result.node()->backward_fn = [self, x, w, b, dims]() {
        const Mat& g = self->grad;
        const int out_rows = dims.oh * dims.ow;
        const int kc = 9 * dims.cin;
        if (b.requires_grad()) {
            Mat& db = b.node()->ensure_grad();
            for (int r = 0; r < out_rows; ++r)
                simd::add(db.data(), g.row(r), db.data(), dims.cout);
        }
        const bool need_dw = w.requires_grad();
        const bool need_dx = x.requires_grad();
        if (!need_dw && !need_dx) return;
        Mat wt;
        if (need_dx) wt = transposed(w.value());
        Mat block(std::min(kConvBlockRows, out_rows), kc);
        Mat dblock(std::min(kConvBlockRows, out_rows), kc);
        for (int r0 = 0; r0 < out_rows; r0 += kConvBlockRows) {
            const int r1 = std::min(r0 + kConvBlockRows, out_rows);
            if (need_dw) {
                // dW += B^T * G over this block (recompute B).
                im2col_block(x.value(), dims, r0, r1, block);
                simd::gemm_tn(block.data(), g.row(r0), w.node()->ensure_grad().data(), kc,
                              r1 - r0, dims.cout, true);
            }
            if (need_dx) {
                // dB = G * W^T, then scatter (col2im) into dX.
                simd::gemm_nn(g.row(r0), wt.data(), dblock.data(), r1 - r0, dims.cout, kc,
                              false);
                Mat& dx = x.node()->ensure_grad();
                for (int r = r0; r < r1; ++r) {
                    const int oy = r / dims.ow;
                    const int ox = r % dims.ow;
                    const double* src = dblock.row(r - r0);
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = oy * dims.stride - 1 + ky;
                        if (iy < 0 || iy >= dims.h) continue;
                        for (int kx = 0; kx < 3; ++kx) {
                            const int ix = ox * dims.stride - 1 + kx;
                            if (ix < 0 || ix >= dims.w) continue;
                            simd::add(dx.row(static_cast<size_t>(iy) * dims.w + ix),
                                      src + (ky * 3 + kx) * dims.cin,
                                      dx.row(static_cast<size_t>(iy) * dims.w + ix), dims.cin);
                        }
                    }
                }
            }
        }
    };
    return result;
}

Var upsample2x(const Var& x, int h, int w) {
    GECO_CHECK(x.rows() == static_cast<size_t>(h) * w, "upsample input rows must equal h*w");
    const int c = static_cast<int>(x.cols());
    const int oh = 2 * h, ow = 2 * w;
    Mat out(static_cast<size_t>(oh) * ow, c);
    // align_corners=false sampling: src = (dst + 0.5)/2 - 0.5.
    auto src_setup = [](int o, int extent, int& i0, int& i1, double& f) {
        const double s = (o + 0.5) * 0.5 - 0.5;
        i0 = static_cast<int>(std::floor(s));
        f = s - i0;
        i1 = std::min(i0 + 1, extent - 1);
        i0 = std::max(i0, 0);
    };
    for (int oy = 0; oy < oh; ++oy) {
        int y0, y1;
        double fy;
        src_setup(oy, h, y0, y1, fy);
        for (int ox = 0; ox < ow; ++ox) {
            int x0, x1;
            double fx;
            src_setup(ox, w, x0, x1, fx);
            double* dst = out.row(static_cast<size_t>(oy) * ow + ox);
            const double* s00 = x.value().row(static_cast<size_t>(y0) * w + x0);
            const double* s01 = x.value().row(static_cast<size_t>(y0) * w + x1);
            const double* s10 = x.value().row(static_cast<size_t>(y1) * w + x0);
            const double* s11 = x.value().row(static_cast<size_t>(y1) * w + x1);
            const double w00 = (1 - fy) * (1 - fx), w01 = (1 - fy) * fx;
            const double w10 = fy * (1 - fx), w11 = fy * fx;
            for (int j = 0; j < c; ++j)
                dst[j] = w00 * s00[j] + w01 * s01[j] + w10 * s10[j] + w11 * s11[j];
        }
    }
    Var result(std::move(out));
    if (!any_requires_grad({&x})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {x.node()};
    result.node()->backward_fn = [self, x, h, w]() {
        const int c = static_cast<int>(x.cols());
        const int oh = 2 * h, ow = 2 * w;
        Mat& dx = x.node()->ensure_grad();
        auto src_setup = [](int o, int extent, int& i0, int& i1, double& f) {
            const double s = (o + 0.5) * 0.5 - 0.5;
            i0 = static_cast<int>(std::floor(s));
            f = s - i0;
            i1 = std::min(i0 + 1, extent - 1);
            i0 = std::max(i0, 0);
        };
        for (int oy = 0; oy < oh; ++oy) {
            int y0, y1;
            double fy;
            src_setup(oy, h, y0, y1, fy);
            for (int ox = 0; ox < ow; ++ox) {
                int x0, x1;
                double fx;
                src_setup(ox, w, x0, x1, fx);
                const double* g = self->grad.row(static_cast<size_t>(oy) * ow + ox);
                simd::axpy((1 - fy) * (1 - fx), g, dx.row(static_cast<size_t>(y0) * w + x0), c);
                simd::axpy((1 - fy) * fx, g, dx.row(static_cast<size_t>(y0) * w + x1), c);
                simd::axpy(fy * (1 - fx), g, dx.row(static_cast<size_t>(y1) * w + x0), c);
                simd::axpy(fy * fx, g, dx.row(static_cast<size_t>(y1) * w + x1), c);
            }
        }
    };
    return result;
}

Var slice_cols(const Var& a, int c0, int c1) {
    GECO_CHECK(0 <= c0 && c0 < c1 && c1 <= static_cast<int>(a.cols()),
               "column slice out of range");
    const int d = c1 - c0;
    Mat out(a.rows(), d);
    for (size_t r = 0; r < a.rows(); ++r)
        std::copy(a.value().row(r) + c0, a.value().row(r) + c1, out.row(r));
    Var result(std::move(out));
    if (!any_requires_grad({&a})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node()};
    result.node()->backward_fn = [self, a, c0, d]() {
        Mat& da = a.node()->ensure_grad();
        for (size_t r = 0; r < da.rows(); ++r)
            simd::add(da.row(r) + c0, self->grad.row(r), da.row(r) + c0, d);
    };
    return result;
}

Var concat_cols(const Var& a, const Var& b) {
    GECO_CHECK(a.rows() == b.rows(), "column concat requires equal row counts");
    const int da = static_cast<int>(a.cols());
    const int db = static_cast<int>(b.cols());
    Mat out(a.rows(), da + db);
    for (size_t r = 0; r < a.rows(); ++r) {
        std::copy(a.value().row(r), a.value().row(r) + da, out.row(r));
        std::copy(b.value().row(r), b.value().row(r) + db, out.row(r) + da);
    }
    Var result(std::move(out));
    if (!any_requires_grad({&a, &b})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node(), b.node()};
    result.node()->backward_fn = [self, a, b, da, db]() {
        if (a.requires_grad()) {
            Mat& dx = a.node()->ensure_grad();
            for (size_t r = 0; r < dx.rows(); ++r)
                simd::add(dx.row(r), self->grad.row(r), dx.row(r), da);
        }
        if (b.requires_grad()) {
            Mat& dx = b.node()->ensure_grad();
            for (size_t r = 0; r < dx.rows(); ++r)
                simd::add(dx.row(r), self->grad.row(r) + da, dx.row(r), db);
        }
    };
    return result;
}

Var concat_rows(const Var& a, const Var& b) {
    GECO_CHECK(a.cols() == b.cols(), "row concat requires equal column counts");
    const int d = static_cast<int>(a.cols());
    const int ra = static_cast<int>(a.rows());
    const int rb = static_cast<int>(b.rows());
    Mat out(ra + rb, d);
    std::copy(a.value().data(), a.value().data() + a.value().numel(), out.data());
    std::copy(b.value().data(), b.value().data() + b.value().numel(), out.row(ra));
    Var result(std::move(out));
    if (!any_requires_grad({&a, &b})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node(), b.node()};
    result.node()->backward_fn = [self, a, b, ra, rb, d]() {
        if (a.requires_grad()) {
            Mat& da = a.node()->ensure_grad();
            simd::add(da.data(), self->grad.data(), da.data(), ra * d);
        }
        if (b.requires_grad()) {
            Mat& db = b.node()->ensure_grad();
            simd::add(db.data(), self->grad.row(ra), db.data(), rb * d);
        }
    };
    return result;
}

Var gather_rows(const Var& a, std::vector<int> indices) {
    const int d = static_cast<int>(a.cols());
    Mat out(indices.size(), d);
    for (size_t t = 0; t < indices.size(); ++t) {
        GECO_CHECK(indices[t] >= 0 && indices[t] < static_cast<int>(a.rows()),
                   "gather index out of range");
        std::copy(a.value().row(indices[t]), a.value().row(indices[t]) + d, out.row(t));
    }
    Var result(std::move(out));
    if (!any_requires_grad({&a})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node()};
    auto idx = std::make_shared<std::vector<int>>(std::move(indices));
    result.node()->backward_fn = [self, a, idx]() {
        Mat& da = a.node()->ensure_grad();
        const int d = static_cast<int>(da.cols());
        for (size_t t = 0; t < idx->size(); ++t)
            simd::add(da.row((*idx)[t]), self->grad.row(t), da.row((*idx)[t]), d);
    };
    return result;
}

Var sum_all(const Var& a) {
    Mat out(1, 1);
    out(0, 0) = simd::reduce_sum(a.value().data(), static_cast<int>(a.value().numel()));
    Var result(std::move(out));
    if (!any_requires_grad({&a})) return result;
    Node* self = result.node().get();
    result.node()->requires_grad = true;
    result.node()->parents = {a.node()};
    result.node()->backward_fn = [self, a]() {
        Mat& da = a.node()->ensure_grad();
        const double g = self->grad(0, 0);
        for (size_t i = 0; i < da.numel(); ++i) da[i] += g;
    };
    return result;
}

Var mean_all(const Var& a) {
    return scale(sum_all(a), 1.0 / static_cast<double>(a.value().numel()));
}

}  // namespace geco::ad
