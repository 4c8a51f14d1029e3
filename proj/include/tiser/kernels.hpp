#pragma once

// Numeric kernels behind the autodiff ops.
//
// The default implementations parallelise over disjoint output blocks with
// OpenMP and hand each block to Eigen's GEMM (single-threaded inside). Block boundaries do not
// depend on the thread count, so results are bitwise reproducible for any
// OMP_NUM_THREADS. The `reference` namespace holds plain serial loops with the
// same contracts; tests compare the two and the benchmark times them.

#include <cstddef>

namespace tiser::kernels {

// C[m,n] (+)= A[m,k] * B[k,n], all row-major with explicit leading dimensions.
struct GemmArgs {
  const double* a;
  std::size_t lda;
  const double* b;
  std::size_t ldb;
  double* c;
  std::size_t ldc;
  std::size_t m, k, n;
};

// Shared-weight 1D convolution over a batch of independent sequences
// (one per node). Input is [nodes, length, channels], kernel is
// [taps, channels, filters] viewed as a (taps*channels) x filters matrix,
// output is [nodes, out_length, filters]. Valid padding.
struct ConvGeometry {
  std::size_t nodes;
  std::size_t length;
  std::size_t channels;
  std::size_t taps;
  std::size_t filters;
  std::size_t stride;

  std::size_t out_length() const { return (length - taps) / stride + 1; }
  std::size_t patch() const { return taps * channels; }
};

void gemm(const GemmArgs& g, bool accumulate);

// c[m,n] = a[m,k] * b[k,n]
void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n);
// c[m,n] += a[k,m]^T * b[k,n]
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
// c[m,n] += a[m,k] * b[n,k]^T
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);

// y = conv(x, w) + bias (bias may be null)
void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y);
// dx += d(conv)/dx applied to dy
void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
// dw += d(conv)/dw applied to dy
void conv1d_backward_kernel(const ConvGeometry& g, const double* x, const double* dy, double* dw);

namespace reference {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n);
void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y);
void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
void conv1d_backward_kernel(const ConvGeometry& g, const double* x, const double* dy, double* dw);

}  // namespace reference

}  // namespace tiser::kernels
