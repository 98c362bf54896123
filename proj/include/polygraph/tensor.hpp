#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "polygraph/errors.hpp"

namespace polygraph {

using Shape = std::vector<int>;

/// Dense row-major tensor of 64-bit floats. Value semantics, immutable by
/// convention once handed to the graph. Rank 1 and 2 cover almost everything;
/// rank 3 appears only as batch storage.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape) : shape_(std::move(shape)) {
        data_.assign(count(shape_), 0.0);
    }

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (count(shape_) != static_cast<std::int64_t>(data_.size())) {
            throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str());
        }
    }

    static Tensor scalar(double v) { return Tensor({1, 1}, {v}); }

    static Tensor row(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Tensor({1, n}, std::move(v));
    }

    static Tensor col(std::vector<double> v) {
        int n = static_cast<int>(v.size());
        return Tensor({n, 1}, std::move(v));
    }

    static Tensor matrix(int rows, int cols, std::vector<double> v) {
        return Tensor({rows, cols}, std::move(v));
    }

    static Tensor full(Shape shape, double v) {
        Tensor t(std::move(shape));
        std::fill(t.data_.begin(), t.data_.end(), v);
        return t;
    }

    const Shape& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
    bool empty() const { return data_.empty(); }

    int rows() const {
        require_rank2("rows()");
        return shape_[0];
    }
    int cols() const {
        require_rank2("cols()");
        return shape_[1];
    }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::int64_t i) { return data_[static_cast<size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<size_t>(i)]; }

    double& at(int r, int c) {
        require_rank2("at()");
        return data_[static_cast<size_t>(r) * shape_[1] + c];
    }
    double at(int r, int c) const {
        require_rank2("at()");
        return data_[static_cast<size_t>(r) * shape_[1] + c];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_) {
            if (!std::isfinite(v)) return false;
        }
        return true;
    }

    bool operator==(const Tensor& o) const {
        return shape_ == o.shape_ && data_ == o.data_;
    }

    /// Copy of row r of a rank-2 tensor as a 1xC tensor.
    Tensor row_copy(int r) const {
        require_rank2("row_copy()");
        const double* src = data_.data() + static_cast<size_t>(r) * shape_[1];
        return Tensor({1, shape_[1]}, std::vector<double>(src, src + shape_[1]));
    }

    /// Slice b of a rank-3 (B x T x D) tensor as a T x D matrix.
    Tensor slice0(int b) const {
        if (rank() != 3) throw ShapeError("slice0() needs a rank-3 tensor, got " + shape_str());
        std::int64_t block = static_cast<std::int64_t>(shape_[1]) * shape_[2];
        const double* src = data_.data() + block * b;
        return Tensor({shape_[1], shape_[2]}, std::vector<double>(src, src + block));
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
        os << "]";
        return os.str();
    }

    static std::int64_t count(const Shape& s) {
        std::int64_t n = 1;
        for (int d : s) {
            if (d <= 0) throw ShapeError("non-positive dimension in shape");
            n *= d;
        }
        return s.empty() ? 0 : n;
    }

private:
    void require_rank2(const char* op) const {
        if (shape_.size() != 2) {
            throw ShapeError(std::string(op) + " requires a rank-2 tensor, got " + shape_str());
        }
    }

    Shape shape_;
    std::vector<double> data_;
};

}  // namespace polygraph
