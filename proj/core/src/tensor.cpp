#include "blockhf/tensor.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace blockhf {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
    if (shape_product(shape) != data.size()) {
        throw ShapeError("tensor data length " + std::to_string(data.size()) +
                         " does not match shape " + shape_str(shape));
    }
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
    std::size_t n = shape_product(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols) {
    return zeros({rows, cols});
}

Tensor Tensor::row(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({1, n}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
    std::size_t n = values.size();
    return Tensor({n}, std::move(values));
}

Tensor Tensor::identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t.data[i * n + i] = 1.0;
    return t;
}

std::size_t Tensor::rows() const {
    if (shape.size() == 1) return 1;
    if (shape.size() == 2) return shape[0];
    throw ShapeError("rank-2 access on tensor of shape " + shape_str(shape));
}

std::size_t Tensor::cols() const {
    if (shape.size() == 1) return shape[0];
    if (shape.size() == 2) return shape[1];
    throw ShapeError("rank-2 access on tensor of shape " + shape_str(shape));
}

double& Tensor::at(std::size_t i, std::size_t j) { return data[i * cols() + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data[i * cols() + j]; }

bool Tensor::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

double dot(const Tensor& u, const Tensor& v) {
    if (u.size() != v.size()) {
        throw ShapeError("dot: length mismatch " + shape_str(u.shape) + " vs " +
                         shape_str(v.shape));
    }
    return dot(std::span<const double>(u.data), std::span<const double>(v.data));
}

double dot(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ShapeError("dot: length mismatch " + std::to_string(u.size()) +
                         " vs " + std::to_string(v.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

Tensor gemm(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("gemm: expects rank-2 tensors, got " + shape_str(a.shape) +
                         " and " + shape_str(b.shape));
    }
    if (a.cols() != b.rows()) {
        throw ShapeError("gemm: inner dimensions disagree, " + shape_str(a.shape) +
                         " * " + shape_str(b.shape));
    }
    Tensor c = Tensor::matrix(a.rows(), b.cols());
    kern::gemm_nn_acc(a.data.data(), b.data.data(), c.data.data(),
                      a.rows(), a.cols(), b.cols());
    return c;
}

Tensor axpy(double a, const Tensor& x, const Tensor& y) {
    if (!x.same_shape(y)) {
        throw ShapeError("axpy: shape mismatch " + shape_str(x.shape) + " vs " +
                         shape_str(y.shape));
    }
    Tensor out = y;
    axpy_inplace(a, x.data, out.data);
    return out;
}

void axpy_inplace(double a, std::span<const double> x, std::span<double> y) {
    if (x.size() != y.size()) {
        throw ShapeError("axpy: length mismatch " + std::to_string(x.size()) +
                         " vs " + std::to_string(y.size()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

double norm2(std::span<const double> v) {
    return std::sqrt(dot(v, v));
}

namespace kern {

void gemm_nn_acc(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = ai[p];
            const double* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_nt_acc(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* ai = a + i * k;
        double* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b + j * k;
            // Four fixed-pattern partial sums; order never depends on data.
            double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
            std::size_t p = 0;
            for (; p + 4 <= k; p += 4) {
                s0 += ai[p] * bj[p];
                s1 += ai[p + 1] * bj[p + 1];
                s2 += ai[p + 2] * bj[p + 2];
                s3 += ai[p + 3] * bj[p + 3];
            }
            double s = (s0 + s1) + (s2 + s3);
            for (; p < k; ++p) s += ai[p] * bj[p];
            ci[j] += s;
        }
    }
}

void gemm_tn_acc(const double* a, const double* b, double* c,
                 std::size_t k, std::size_t m, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* ap = a + p * m;
        const double* bp = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double api = ap[i];
            double* ci = c + i * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

}  // namespace kern

}  // namespace blockhf
