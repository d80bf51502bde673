#ifndef VISAGE_KERNELS_HPP
#define VISAGE_KERNELS_HPP

// Internal dense kernels. All loops use a fixed element-wise accumulation
// order, so results are reproducible bit-for-bit run to run.

namespace visage::kernels {

/// Fixed-order 16-lane dot product.
float dot(const float* a, const float* b, int n);

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n);
// C[m x p] += A[m x n] * B[p x n]^T
void gemm_nt(const float* a, const float* b, float* c, int m, int n, int p);
// C[k x n] += A[m x k]^T * B[m x n]
void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n);

struct ConvDims {
  int in_c, in_h, in_w;
  int out_c, k, stride, pad;
  int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
};

// Cross-correlation (no kernel flip). `bias` may be null. One sample.
void conv2d_forward(const ConvDims& d, const float* in, const float* w,
                    const float* bias, float* out);

// dIn one sample; caller allocates and zeroes din.
void conv2d_backward_data(const ConvDims& d, const float* dout, const float* w,
                          float* din);

// Accumulates into dw[out_c x in_c x k x k] and dbias[out_c] (either may be null).
void conv2d_backward_filter(const ConvDims& d, const float* in, const float* dout,
                            float* dw, float* dbias);

// Per-window maximum over each channel plane; argmax gets the flat input
// index of the winning element (first in row-major order on ties).
void maxpool_forward(const float* in, float* out, int* argmax, int c, int h,
                     int w, int k, int stride);
void maxpool_backward(const float* dout, const int* argmax, float* din,
                      long out_size);

}  // namespace visage::kernels

#endif
