#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "blockhf/errors.hpp"

namespace blockhf {

// Dense row-major array of doubles with an explicit shape. Carrier for all
// values, gradients and tangents in the library. 64-bit floats throughout:
// CG residual recurrences are sensitive to rounding.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(std::vector<std::size_t> s, std::vector<double> d);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor matrix(std::size_t rows, std::size_t cols);
    static Tensor row(std::vector<double> values);          // shape [1, n]
    static Tensor vector(std::vector<double> values);       // shape [n]
    static Tensor identity(std::size_t n);

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    // Rank-2 accessors. Rank-1 tensors are treated as a single row.
    std::size_t rows() const;
    std::size_t cols() const;
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;
};

std::string shape_str(const std::vector<std::size_t>& shape);

// Sum_i u_i v_i with strict left-to-right accumulation so that serial and
// per-block-parallel runs agree bitwise. Requires equal lengths.
double dot(const Tensor& u, const Tensor& v);
double dot(std::span<const double> u, std::span<const double> v);

// C = A * B for rank-2 tensors, deterministic accumulation order.
Tensor gemm(const Tensor& a, const Tensor& b);

// a*x + y elementwise; shapes must match exactly.
Tensor axpy(double a, const Tensor& x, const Tensor& y);
void axpy_inplace(double a, std::span<const double> x, std::span<double> y);

double norm2(std::span<const double> v);

// Raw accumulating kernels shared with the autodiff engine. All of them
// add into c, which the caller zeroes when overwrite semantics are wanted.
// Loop orders are fixed, so results are reproducible across runs.
namespace kern {

// c (m x n) += a (m x k) * b (k x n)
void gemm_nn_acc(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n);

// c (m x n) += a (m x k) * b^T, b is (n x k)
void gemm_nt_acc(const double* a, const double* b, double* c,
                 std::size_t m, std::size_t k, std::size_t n);

// c (m x n) += a^T * b, a is (k x m), b is (k x n)
void gemm_tn_acc(const double* a, const double* b, double* c,
                 std::size_t k, std::size_t m, std::size_t n);

}  // namespace kern

}  // namespace blockhf
