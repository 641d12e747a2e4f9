#include "fcgl/tensor.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace fcgl {

namespace {

int64_t shape_product(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive, got " + shape_string(shape));
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(shape_product(shape_)), 0.0);
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    for (double& x : t.data_) x = value;
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t;
    t.data_.assign(1, value);
    return t;
}

Tensor Tensor::row(std::vector<double> values) {
    Tensor t;
    t.shape_ = {static_cast<int>(values.size())};
    t.data_ = std::move(values);
    return t;
}

Tensor Tensor::matrix(int rows, int cols, std::vector<double> values) {
    if (static_cast<int64_t>(values.size()) != static_cast<int64_t>(rows) * cols)
        throw std::invalid_argument("matrix: value count does not match rows*cols");
    Tensor t;
    t.shape_ = {rows, cols};
    t.data_ = std::move(values);
    return t;
}

bool Tensor::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

void Tensor::require_finite(const std::string& what) const {
    if (!all_finite()) throw std::runtime_error(what + ": non-finite value encountered");
}

double Tensor::item() const {
    if (data_.size() != 1) throw std::invalid_argument("item: tensor is not a scalar, shape " + shape_string(shape_));
    return data_[0];
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_product(shape) != size())
        throw std::invalid_argument("reshape: element count mismatch " + shape_string(shape_) + " -> " + shape_string(shape));
    Tensor t;
    t.shape_ = std::move(shape);
    t.data_ = data_;
    return t;
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
    if (a.rank() != 2 || b.rank() != 2) throw std::invalid_argument("matmul: both operands must be rank 2");
    const int a_rows = transpose_a ? a.dim(1) : a.dim(0);
    const int a_cols = transpose_a ? a.dim(0) : a.dim(1);
    const int b_rows = transpose_b ? b.dim(1) : b.dim(0);
    const int b_cols = transpose_b ? b.dim(0) : b.dim(1);
    if (a_cols != b_rows)
        throw std::invalid_argument("matmul: inner dimensions disagree, " + shape_string(a.shape()) + " x " +
                                    shape_string(b.shape()));
    Tensor c({a_rows, b_cols});
    const double* ad = a.data();
    const double* bd = b.data();
    double* cd = c.data();
    if (!transpose_a && !transpose_b) {
        const int n = a_rows, k = a_cols, m = b_cols;
        for (int i = 0; i < n; ++i)
            for (int p = 0; p < k; ++p) {
                const double av = ad[static_cast<size_t>(i) * k + p];
                if (av == 0.0) continue;
                const double* brow = bd + static_cast<size_t>(p) * m;
                double* crow = cd + static_cast<size_t>(i) * m;
                for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
            }
    } else if (!transpose_a && transpose_b) {
        const int n = a_rows, k = a_cols, m = b_cols;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                const double* arow = ad + static_cast<size_t>(i) * k;
                const double* brow = bd + static_cast<size_t>(j) * k;
                double acc = 0.0;
                for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
                cd[static_cast<size_t>(i) * m + j] = acc;
            }
    } else if (transpose_a && !transpose_b) {
        const int n = a_rows, k = a_cols, m = b_cols;
        for (int p = 0; p < k; ++p) {
            const double* arow = ad + static_cast<size_t>(p) * n;
            const double* brow = bd + static_cast<size_t>(p) * m;
            for (int i = 0; i < n; ++i) {
                const double av = arow[i];
                if (av == 0.0) continue;
                double* crow = cd + static_cast<size_t>(i) * m;
                for (int j = 0; j < m; ++j) crow[j] += av * brow[j];
            }
        }
    } else {
        const int n = a_rows, k = a_cols, m = b_cols;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < m; ++j) {
                double acc = 0.0;
                for (int p = 0; p < k; ++p)
                    acc += ad[static_cast<size_t>(p) * n + i] * bd[static_cast<size_t>(j) * k + p];
                cd[static_cast<size_t>(i) * m + j] = acc;
            }
    }
    return c;
}

Tensor transpose(const Tensor& m) {
    if (m.rank() != 2) throw std::invalid_argument("transpose: rank-2 tensor required");
    Tensor t({m.dim(1), m.dim(0)});
    for (int i = 0; i < m.dim(0); ++i)
        for (int j = 0; j < m.dim(1); ++j) t.at(j, i) = m.at(i, j);
    return t;
}

void add_in_place(Tensor& target, const Tensor& delta) {
    if (!target.same_shape(delta)) throw std::invalid_argument("add_in_place: shape mismatch");
    double* t = target.data();
    const double* d = delta.data();
    for (int64_t i = 0; i < target.size(); ++i) t[i] += d[i];
}

void scale_in_place(Tensor& target, double factor) {
    for (int64_t i = 0; i < target.size(); ++i) target[i] *= factor;
}

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ")";
    return os.str();
}

}  // namespace fcgl
