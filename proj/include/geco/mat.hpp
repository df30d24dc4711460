#pragma once

#include <cstddef>
#include <vector>

#include "geco/common.hpp"

namespace geco {

/// Dense row-major matrix of doubles. The only tensor type in the project:
/// feature maps are stored as (H*W) x C with the spatial extent carried
/// separately, vectors as 1 x N, scalars as 1 x 1.
class Mat {
public:
    Mat() = default;
    Mat(int rows, int cols) : rows_(rows), cols_(cols), d_(size_t(rows) * cols, 0.0) {
        GECO_CHECK(rows >= 0 && cols >= 0, "Mat: negative dims");
    }
    Mat(int rows, int cols, double fill)
        : rows_(rows), cols_(cols), d_(size_t(rows) * cols, fill) {}

    static Mat zeros(int rows, int cols) { return Mat(rows, cols); }
    static Mat full(int rows, int cols, double v) { return Mat(rows, cols, v); }
    static Mat from(int rows, int cols, std::vector<double> data) {
        GECO_CHECK(data.size() == size_t(rows) * cols, "Mat::from: size mismatch");
        Mat m;
        m.rows_ = rows;
        m.cols_ = cols;
        m.d_ = std::move(data);
        return m;
    }

    int rows() const { return rows_; }
    int cols() const { return cols_; }
    size_t numel() const { return d_.size(); }
    bool empty() const { return d_.empty(); }

    double& operator()(int r, int c) { return d_[size_t(r) * cols_ + c]; }
    double operator()(int r, int c) const { return d_[size_t(r) * cols_ + c]; }
    double& operator[](size_t i) { return d_[i]; }
    double operator[](size_t i) const { return d_[i]; }

    double* data() { return d_.data(); }
    const double* data() const { return d_.data(); }
    double* row(int r) { return d_.data() + size_t(r) * cols_; }
    const double* row(int r) const { return d_.data() + size_t(r) * cols_; }

    bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

    void fill(double v) { std::fill(d_.begin(), d_.end(), v); }

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> d_;
};

}  // namespace geco
