#pragma once

#include <cstddef>

// Raw numeric kernels shared by the autograd ops and the incremental decode
// path. Keeping one implementation per primitive makes the two paths agree
// bit for bit: every sum below runs in a fixed order that does not depend on
// how many rows are processed per call.

namespace sla::kernels {

// C[m x n] += A[m x k] * B[k x n], row major. Accumulation over k is
// ascending for every output element, so row i of the result is identical
// whether rows are computed one at a time or batched. The k-outer loop
// reuses each row of B across all rows of A, which is what makes batched
// decoding cheaper per row than repeated single-row calls.
void matmul_accum(const double* a, const double* b, double* c,
                  size_t m, size_t k, size_t n);

// out[i] = dot(a, b) helpers for attention scores.
double dot(const double* a, const double* b, size_t n);

// y[0..n) += s * x[0..n)
void axpy(double s, const double* x, double* y, size_t n);

// Row-wise softmax in place with max subtraction; returns nothing. The row
// must be finite; the result sums to 1 within 1e-12 for sane lengths.
void softmax_row(double* x, size_t n);

// Row-wise log-softmax in place (max subtraction + log-sum-exp).
void log_softmax_row(double* x, size_t n);

// y = gain * (x - mean) / sqrt(var + eps) + bias, one row. Population
// variance; eps is fixed at 1e-5 by the callers.
void layer_norm_row(const double* x, const double* gain, const double* bias,
                    double* y, size_t n, double eps);

double sigmoid(double x);

// log(sigmoid(x)) computed without overflow for large |x|.
double log_sigmoid(double x);

// Exact GELU (erf form) and its derivative.
double gelu(double x);
double gelu_grad(double x);

}  // namespace sla::kernels
