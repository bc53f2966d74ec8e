#pragma once

// Internal raw matrix kernels shared between tensor.cpp and layers.cpp.
// Not installed.

namespace dermnet::detail {

// C (m x n) = A (m x k) . B (k x n)
void gemm_nn_raw(const float* a, const float* b, float* c, int m, int k, int n);
// C (m x n) = A (m x k) . B^T, B is (n x k)
void gemm_nt_raw(const float* a, const float* b, float* c, int m, int k, int n);
// C (k x n) += A^T . B, A is (m x k), B is (m x n)
void gemm_tn_accum_raw(const float* a, const float* b, float* c, int m, int k, int n);

}  // namespace dermnet::detail
