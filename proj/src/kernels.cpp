#include "kernels.hpp"

#include <algorithm>
#include <vector>

namespace visage::kernels {

float dot(const float* a, const float* b, int n) {
  float acc[16] = {};
  int i = 0;
  for (; i + 16 <= n; i += 16)
    for (int l = 0; l < 16; ++l) acc[l] += a[i + l] * b[i + l];
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  float s01 = (acc[0] + acc[1]) + (acc[2] + acc[3]);
  float s23 = (acc[4] + acc[5]) + (acc[6] + acc[7]);
  float s45 = (acc[8] + acc[9]) + (acc[10] + acc[11]);
  float s67 = (acc[12] + acc[13]) + (acc[14] + acc[15]);
  return ((s01 + s23) + (s45 + s67)) + tail;
}

void gemm_nn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    float* crow = c + static_cast<long>(i) * n;
    for (int kk = 0; kk < k; ++kk) {
      const float a_ik = a[static_cast<long>(i) * k + kk];
      const float* brow = b + static_cast<long>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += a_ik * brow[j];
    }
  }
}

void gemm_nt(const float* a, const float* b, float* c, int m, int n, int p) {
  for (int i = 0; i < m; ++i)
    for (int r = 0; r < p; ++r)
      c[static_cast<long>(i) * p + r] +=
          dot(a + static_cast<long>(i) * n, b + static_cast<long>(r) * n, n);
}

void gemm_tn(const float* a, const float* b, float* c, int m, int k, int n) {
  for (int kk = 0; kk < k; ++kk) {
    float* crow = c + static_cast<long>(kk) * n;
    for (int i = 0; i < m; ++i) {
      const float a_ik = a[static_cast<long>(i) * k + kk];
      const float* brow = b + static_cast<long>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += a_ik * brow[j];
    }
  }
}

namespace {

// stride 1, k == 3: one pass per input row with the three taps fused.
void conv_s1_k3(const ConvDims& d, const float* in, const float* w,
                const float* bias, float* out) {
  const int H = d.in_h, W = d.in_w, P = d.pad;
  const int OH = d.out_h(), OW = d.out_w();
  for (int oc = 0; oc < d.out_c; ++oc) {
    const float bv = bias ? bias[oc] : 0.0f;
    for (int oy = 0; oy < OH; ++oy) {
      float* orow = out + (static_cast<long>(oc) * OH + oy) * OW;
      for (int x = 0; x < OW; ++x) orow[x] = bv;
      for (int ic = 0; ic < d.in_c; ++ic) {
        const float* wk = w + (static_cast<long>(oc) * d.in_c + ic) * 9;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy + ky - P;
          if (iy < 0 || iy >= H) continue;
          const float* irow = in + (static_cast<long>(ic) * H + iy) * W;
          const float w0 = wk[ky * 3 + 0], w1 = wk[ky * 3 + 1], w2 = wk[ky * 3 + 2];
          const int lo = std::min(P, OW);
          const int hi = std::max(lo, std::min(OW, W + P - 2));
          for (int x = 0; x < lo; ++x)  // left edge, partial taps
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - P;
              if (ix >= 0 && ix < W) orow[x] += wk[ky * 3 + kx] * irow[ix];
            }
          const float* ir = irow - P;
          for (int x = lo; x < hi; ++x)
            orow[x] += w0 * ir[x] + w1 * ir[x + 1] + w2 * ir[x + 2];
          for (int x = hi; x < OW; ++x)  // right edge
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = x + kx - P;
              if (ix >= 0 && ix < W) orow[x] += wk[ky * 3 + kx] * irow[ix];
            }
        }
      }
    }
  }
}

// stride 1, any k: per-tap row axpy.
void conv_s1(const ConvDims& d, const float* in, const float* w,
             const float* bias, float* out) {
  const int H = d.in_h, W = d.in_w, P = d.pad, K = d.k;
  const int OH = d.out_h(), OW = d.out_w();
  for (int oc = 0; oc < d.out_c; ++oc) {
    const float bv = bias ? bias[oc] : 0.0f;
    for (int oy = 0; oy < OH; ++oy) {
      float* orow = out + (static_cast<long>(oc) * OH + oy) * OW;
      for (int x = 0; x < OW; ++x) orow[x] = bv;
      for (int ic = 0; ic < d.in_c; ++ic) {
        const float* wk = w + (static_cast<long>(oc) * d.in_c + ic) * K * K;
        for (int ky = 0; ky < K; ++ky) {
          const int iy = oy + ky - P;
          if (iy < 0 || iy >= H) continue;
          const float* irow = in + (static_cast<long>(ic) * H + iy) * W;
          for (int kx = 0; kx < K; ++kx) {
            const float wv = wk[ky * K + kx];
            const int x0 = std::max(0, P - kx);
            const int x1 = std::min(OW, W + P - kx);
            const float* ir = irow + kx - P;
            for (int x = x0; x < x1; ++x) orow[x] += wv * ir[x];
          }
        }
      }
    }
  }
}

// any stride: direct gather.
void conv_naive(const ConvDims& d, const float* in, const float* w,
                const float* bias, float* out) {
  const int H = d.in_h, W = d.in_w, P = d.pad, K = d.k, S = d.stride;
  const int OH = d.out_h(), OW = d.out_w();
  for (int oc = 0; oc < d.out_c; ++oc)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        double acc = bias ? bias[oc] : 0.0;
        for (int ic = 0; ic < d.in_c; ++ic) {
          const float* wk = w + (static_cast<long>(oc) * d.in_c + ic) * K * K;
          for (int ky = 0; ky < K; ++ky) {
            const int iy = oy * S + ky - P;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < K; ++kx) {
              const int ix = ox * S + kx - P;
              if (ix < 0 || ix >= W) continue;
              acc += static_cast<double>(wk[ky * K + kx]) *
                     in[(static_cast<long>(ic) * H + iy) * W + ix];
            }
          }
        }
        out[(static_cast<long>(oc) * OH + oy) * OW + ox] = static_cast<float>(acc);
      }
}

}  // namespace

void conv2d_forward(const ConvDims& d, const float* in, const float* w,
                    const float* bias, float* out) {
  if (d.stride == 1 && d.k == 3)
    conv_s1_k3(d, in, w, bias, out);
  else if (d.stride == 1)
    conv_s1(d, in, w, bias, out);
  else
    conv_naive(d, in, w, bias, out);
}

void conv2d_backward_data(const ConvDims& d, const float* dout, const float* w,
                          float* din) {
  if (d.stride == 1) {
    // dIn is a stride-1 cross-correlation of dOut with the kernel flipped
    // and the channel axes swapped, at padding k-1-pad.
    std::vector<float> wflip(static_cast<std::size_t>(d.in_c) * d.out_c * d.k * d.k);
    for (int oc = 0; oc < d.out_c; ++oc)
      for (int ic = 0; ic < d.in_c; ++ic)
        for (int ky = 0; ky < d.k; ++ky)
          for (int kx = 0; kx < d.k; ++kx)
            wflip[((static_cast<long>(ic) * d.out_c + oc) * d.k + (d.k - 1 - ky)) * d.k +
                  (d.k - 1 - kx)] =
                w[((static_cast<long>(oc) * d.in_c + ic) * d.k + ky) * d.k + kx];
    ConvDims back{d.out_c, d.out_h(), d.out_w(), d.in_c, d.k, 1, d.k - 1 - d.pad};
    conv2d_forward(back, dout, wflip.data(), nullptr, din);
    return;
  }
  const int H = d.in_h, W = d.in_w, P = d.pad, K = d.k, S = d.stride;
  const int OH = d.out_h(), OW = d.out_w();
  for (int oc = 0; oc < d.out_c; ++oc)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        const float g = dout[(static_cast<long>(oc) * OH + oy) * OW + ox];
        for (int ic = 0; ic < d.in_c; ++ic) {
          const float* wk = w + (static_cast<long>(oc) * d.in_c + ic) * K * K;
          for (int ky = 0; ky < K; ++ky) {
            const int iy = oy * S + ky - P;
            if (iy < 0 || iy >= H) continue;
            for (int kx = 0; kx < K; ++kx) {
              const int ix = ox * S + kx - P;
              if (ix < 0 || ix >= W) continue;
              din[(static_cast<long>(ic) * H + iy) * W + ix] += g * wk[ky * K + kx];
            }
          }
        }
      }
}

void conv2d_backward_filter(const ConvDims& d, const float* in, const float* dout,
                            float* dw, float* dbias) {
  const int H = d.in_h, W = d.in_w, P = d.pad, K = d.k, S = d.stride;
  const int OH = d.out_h(), OW = d.out_w();
  if (dbias) {
    for (int oc = 0; oc < d.out_c; ++oc) {
      double acc = 0.0;
      const float* plane = dout + static_cast<long>(oc) * OH * OW;
      for (long i = 0; i < static_cast<long>(OH) * OW; ++i) acc += plane[i];
      dbias[oc] += static_cast<float>(acc);
    }
  }
  if (!dw) return;
  if (S == 1) {
    for (int oc = 0; oc < d.out_c; ++oc)
      for (int ic = 0; ic < d.in_c; ++ic)
        for (int ky = 0; ky < K; ++ky)
          for (int kx = 0; kx < K; ++kx) {
            double acc = 0.0;
            const int x0 = std::max(0, P - kx);
            const int x1 = std::min(OW, W + P - kx);
            if (x1 > x0) {
              for (int oy = 0; oy < OH; ++oy) {
                const int iy = oy + ky - P;
                if (iy < 0 || iy >= H) continue;
                const float* grow = dout + (static_cast<long>(oc) * OH + oy) * OW;
                const float* irow = in + (static_cast<long>(ic) * H + iy) * W + kx - P;
                acc += dot(grow + x0, irow + x0, x1 - x0);
              }
            }
            dw[((static_cast<long>(oc) * d.in_c + ic) * K + ky) * K + kx] +=
                static_cast<float>(acc);
          }
    return;
  }
  for (int oc = 0; oc < d.out_c; ++oc)
    for (int ic = 0; ic < d.in_c; ++ic)
      for (int ky = 0; ky < K; ++ky)
        for (int kx = 0; kx < K; ++kx) {
          double acc = 0.0;
          for (int oy = 0; oy < OH; ++oy) {
            const int iy = oy * S + ky - P;
            if (iy < 0 || iy >= H) continue;
            for (int ox = 0; ox < OW; ++ox) {
              const int ix = ox * S + kx - P;
              if (ix < 0 || ix >= W) continue;
              acc += static_cast<double>(dout[(static_cast<long>(oc) * OH + oy) * OW + ox]) *
                     in[(static_cast<long>(ic) * H + iy) * W + ix];
            }
          }
          dw[((static_cast<long>(oc) * d.in_c + ic) * K + ky) * K + kx] +=
              static_cast<float>(acc);
        }
}

void maxpool_forward(const float* in, float* out, int* argmax, int c, int h,
                     int w, int k, int stride) {
  const int oh = (h - k) / stride + 1;
  const int ow = (w - k) / stride + 1;
  for (int ch = 0; ch < c; ++ch) {
    const float* plane = in + static_cast<long>(ch) * h * w;
    for (int oy = 0; oy < oh; ++oy)
      for (int ox = 0; ox < ow; ++ox) {
        int best = (oy * stride) * w + ox * stride;
        float bv = plane[best];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int idx = (oy * stride + ky) * w + (ox * stride + kx);
            if (plane[idx] > bv) {  // strict: first maximum wins ties
              bv = plane[idx];
              best = idx;
            }
          }
        const long o = (static_cast<long>(ch) * oh + oy) * ow + ox;
        out[o] = bv;
        argmax[o] = static_cast<int>(static_cast<long>(ch) * h * w + best);
      }
  }
}

void maxpool_backward(const float* dout, const int* argmax, float* din,
                      long out_size) {
  for (long i = 0; i < out_size; ++i) din[argmax[i]] += dout[i];
}

}  // namespace visage::kernels
