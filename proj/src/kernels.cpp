#include "tiser/kernels.hpp"

#include <algorithm>
#include <vector>

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Core>

namespace tiser::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Stride = Eigen::OuterStride<>;
using ConstMap = Eigen::Map<const RowMat, 0, Stride>;
using MutMap = Eigen::Map<RowMat, 0, Stride>;

constexpr std::size_t kRowBlock = 64;

std::ptrdiff_t block_count(std::size_t rows) {
  return static_cast<std::ptrdiff_t>((rows + kRowBlock - 1) / kRowBlock);
}

}  // namespace

void gemm(const GemmArgs& g, bool accumulate) {
  if (g.m == 0 || g.n == 0) return;
  MutMap c(g.c, g.m, g.n, Stride(g.ldc));
  if (g.k == 0) {
    if (!accumulate) c.setZero();
    return;
  }
  ConstMap a(g.a, g.m, g.k, Stride(g.lda));
  ConstMap b(g.b, g.k, g.n, Stride(g.ldb));
  if (accumulate) {
    c.noalias() += a * b;
  } else {
    c.noalias() = a * b;
  }
}

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
  const std::ptrdiff_t blocks = block_count(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t r0 = static_cast<std::size_t>(bi) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - r0);
    gemm({a + r0 * k, k, b, n, c + r0 * n, n, rows, k, n}, false);
  }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  if (k == 0) return;
  const std::ptrdiff_t blocks = block_count(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t r0 = static_cast<std::size_t>(bi) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - r0);
    ConstMap at(a + r0, k, rows, Stride(m));
    ConstMap bm(b, k, n, Stride(n));
    MutMap cm(c + r0 * n, rows, n, Stride(n));
    cm.noalias() += at.transpose() * bm;
  }
}

void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  if (k == 0) return;
  const std::ptrdiff_t blocks = block_count(m);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t r0 = static_cast<std::size_t>(bi) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, m - r0);
    ConstMap am(a + r0 * k, rows, k, Stride(k));
    ConstMap bm(b, n, k, Stride(k));
    MutMap cm(c + r0 * n, rows, n, Stride(n));
    cm.noalias() += am * bm.transpose();
  }
}

// Patch j of node v is the contiguous run x[v][j*stride .. j*stride+taps)[:],
// so the im2col matrix is a strided view of the input with overlapping rows.
void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y) {
  const std::size_t out_len = g.out_length();
  const std::size_t patch = g.patch();
  const auto nodes = static_cast<std::ptrdiff_t>(g.nodes);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t v = 0; v < nodes; ++v) {
    const double* xv = x + static_cast<std::size_t>(v) * g.length * g.channels;
    double* yv = y + static_cast<std::size_t>(v) * out_len * g.filters;
    gemm({xv, g.stride * g.channels, w, g.filters, yv, g.filters, out_len, patch, g.filters},
         false);
    if (bias) {
      MutMap ym(yv, out_len, g.filters, Stride(g.filters));
      Eigen::Map<const Eigen::RowVectorXd> bm(bias, g.filters);
      ym.rowwise() += bm;
    }
  }
}

void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  const std::size_t out_len = g.out_length();
  const std::size_t patch = g.patch();
  const std::size_t row_step = g.stride * g.channels;
  const auto nodes = static_cast<std::ptrdiff_t>(g.nodes);
#pragma omp parallel
  {
    RowMat cols(out_len, patch);
#pragma omp for schedule(static)
    for (std::ptrdiff_t v = 0; v < nodes; ++v) {
      const double* dyv = dy + static_cast<std::size_t>(v) * out_len * g.filters;
      double* dxv = dx + static_cast<std::size_t>(v) * g.length * g.channels;
      ConstMap dym(dyv, out_len, g.filters, Stride(g.filters));
      ConstMap wm(w, patch, g.filters, Stride(g.filters));
      cols.noalias() = dym * wm.transpose();
      for (std::size_t j = 0; j < out_len; ++j) {
        double* dst = dxv + j * row_step;
        const double* src = cols.data() + j * patch;
        for (std::size_t q = 0; q < patch; ++q) dst[q] += src[q];
      }
    }
  }
}

void conv1d_backward_kernel(const ConvGeometry& g, const double* x, const double* dy, double* dw) {
  const std::size_t out_len = g.out_length();
  const std::size_t patch = g.patch();
  const std::size_t row_step = g.stride * g.channels;
  const std::ptrdiff_t blocks = block_count(patch);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t bi = 0; bi < blocks; ++bi) {
    const std::size_t r0 = static_cast<std::size_t>(bi) * kRowBlock;
    const std::size_t rows = std::min(kRowBlock, patch - r0);
    MutMap dwm(dw + r0 * g.filters, rows, g.filters, Stride(g.filters));
    for (std::size_t v = 0; v < g.nodes; ++v) {
      ConstMap pm(x + v * g.length * g.channels + r0, out_len, rows, Stride(row_step));
      ConstMap dym(dy + v * out_len * g.filters, out_len, g.filters, Stride(g.filters));
      dwm.noalias() += pm.transpose() * dym;
    }
  }
}

namespace reference {

void matmul(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
            std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[p * n + j];
      c[i * n + j] = s;
    }
  }
}

void matmul_tn_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[p * n + j];
      c[i * n + j] += s;
    }
  }
}

void matmul_nt_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += a[i * k + p] * b[j * k + p];
      c[i * n + j] += s;
    }
  }
}

void conv1d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y) {
  const std::size_t out_len = g.out_length();
  for (std::size_t v = 0; v < g.nodes; ++v) {
    for (std::size_t j = 0; j < out_len; ++j) {
      for (std::size_t f = 0; f < g.filters; ++f) {
        double s = bias ? bias[f] : 0.0;
        for (std::size_t u = 0; u < g.taps; ++u) {
          for (std::size_t c = 0; c < g.channels; ++c) {
            s += w[(u * g.channels + c) * g.filters + f] *
                 x[(v * g.length + j * g.stride + u) * g.channels + c];
          }
        }
        y[(v * out_len + j) * g.filters + f] = s;
      }
    }
  }
}

void conv1d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  const std::size_t out_len = g.out_length();
  for (std::size_t v = 0; v < g.nodes; ++v) {
    for (std::size_t j = 0; j < out_len; ++j) {
      for (std::size_t u = 0; u < g.taps; ++u) {
        for (std::size_t c = 0; c < g.channels; ++c) {
          double s = 0.0;
          for (std::size_t f = 0; f < g.filters; ++f) {
            s += dy[(v * out_len + j) * g.filters + f] * w[(u * g.channels + c) * g.filters + f];
          }
          dx[(v * g.length + j * g.stride + u) * g.channels + c] += s;
        }
      }
    }
  }
}

void conv1d_backward_kernel(const ConvGeometry& g, const double* x, const double* dy, double* dw) {
  const std::size_t out_len = g.out_length();
  for (std::size_t u = 0; u < g.taps; ++u) {
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t f = 0; f < g.filters; ++f) {
        double s = 0.0;
        for (std::size_t v = 0; v < g.nodes; ++v) {
          for (std::size_t j = 0; j < out_len; ++j) {
            s += x[(v * g.length + j * g.stride + u) * g.channels + c] *
                 dy[(v * out_len + j) * g.filters + f];
          }
        }
        dw[(u * g.channels + c) * g.filters + f] += s;
      }
    }
  }
}

}  // namespace reference

}  // namespace tiser::kernels
