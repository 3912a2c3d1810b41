#pragma once

// Dense row-major tensor of doubles. Rank 0 is a scalar, rank 1 a vector,
// rank 2 a matrix. Shape product always equals data length.

#include <cmath>
#include <cstddef>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace aligncat {

struct shape_error : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Raised when a computation stops being a number.
struct numeric_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ')';
    return os.str();
}

class Tensor {
public:
    Tensor() : shape_{}, data_(1, 0.0) {}

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)), data_(count(shape_), 0.0) {}

    Tensor(std::vector<std::size_t> shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != count(shape_))
            throw shape_error("tensor: data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_str(shape_));
    }

    static Tensor scalar(double v) {
        Tensor t;
        t.data_[0] = v;
        return t;
    }

    static Tensor vec(std::vector<double> v) {
        std::size_t n = v.size();
        return Tensor({n}, std::move(v));
    }

    static Tensor mat(std::size_t rows, std::size_t cols, std::vector<double> data) {
        return Tensor({rows, cols}, std::move(data));
    }

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const { need_rank(2); return shape_[0]; }
    std::size_t cols() const { need_rank(2); return shape_[1]; }

    double item() const {
        if (data_.size() != 1)
            throw shape_error("tensor: item() on non-scalar " + shape_str(shape_));
        return data_[0];
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(std::size_t r, std::size_t c) { need_rank(2); return data_[r * shape_[1] + c]; }
    double at(std::size_t r, std::size_t c) const { need_rank(2); return data_[r * shape_[1] + c]; }

    std::vector<double>& data() { return data_; }
    const std::vector<double>& data() const { return data_; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void fill(double v) {
        for (double& x : data_) x = v;
    }

    void add_inplace(const Tensor& o) {
        if (!same_shape(o))
            throw shape_error("tensor: add shapes disagree " + shape_str(shape_) + " vs " +
                              shape_str(o.shape_));
        for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    }

private:
    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) n *= e;
        return n;
    }

    void need_rank(std::size_t r) const {
        if (shape_.size() != r)
            throw shape_error("tensor: rank " + std::to_string(r) + " required, have " +
                              shape_str(shape_));
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

}  // namespace aligncat
