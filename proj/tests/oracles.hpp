// Reference implementations used only by tests. Each is written from the
// mathematical definition with plain loops so it shares no code with the
// library under test.
#ifndef VISAGE_TESTS_ORACLES_HPP
#define VISAGE_TESTS_ORACLES_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace oracles {

inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  int m, int k, int n) {
  std::vector<double> c(static_cast<std::size_t>(m) * n, 0.0);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0;
      for (int t = 0; t < k; ++t) acc += a[i * k + t] * b[t * n + j];
      c[i * n + j] = acc;
    }
  return c;
}

// Cross-correlation with zero padding, one window at a time.
inline std::vector<double> conv2d(const std::vector<double>& input, int in_c, int in_h,
                                  int in_w, const std::vector<double>& kernels,
                                  const std::vector<double>& bias, int out_c, int k,
                                  int stride, int pad) {
  const int out_h = (in_h + 2 * pad - k) / stride + 1;
  const int out_w = (in_w + 2 * pad - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(out_c) * out_h * out_w);
  for (int oc = 0; oc < out_c; ++oc)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        double acc = bias[oc];
        for (int ic = 0; ic < in_c; ++ic)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              const int y = oy * stride + ky - pad;
              const int x = ox * stride + kx - pad;
              if (y < 0 || y >= in_h || x < 0 || x >= in_w) continue;
              acc += input[(static_cast<std::size_t>(ic) * in_h + y) * in_w + x] *
                     kernels[((static_cast<std::size_t>(oc) * in_c + ic) * k + ky) * k + kx];
            }
        out[(static_cast<std::size_t>(oc) * out_h + oy) * out_w + ox] = acc;
      }
  return out;
}

inline std::vector<double> maxpool2d(const std::vector<double>& input, int c, int h, int w,
                                     int k, int stride) {
  const int out_h = (h - k) / stride + 1;
  const int out_w = (w - k) / stride + 1;
  std::vector<double> out(static_cast<std::size_t>(c) * out_h * out_w);
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        double best = -1e300;
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx)
            best = std::max(best, input[(static_cast<std::size_t>(ch) * h + oy * stride + ky) *
                                            w +
                                        ox * stride + kx]);
        out[(static_cast<std::size_t>(ch) * out_h + oy) * out_w + ox] = best;
      }
  return out;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  const double peak = *std::max_element(x.begin(), x.end());
  double denom = 0;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = std::exp(x[i] - peak);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

// Half-pixel-center bilinear with edge clamp, applied per channel.
inline std::vector<double> bilinear(const std::vector<double>& src, int c, int h, int w,
                                    int out_h, int out_w) {
  std::vector<double> out(static_cast<std::size_t>(c) * out_h * out_w);
  const double sy = static_cast<double>(h) / out_h;
  const double sx = static_cast<double>(w) / out_w;
  auto at = [&](int ch, int y, int x) {
    y = std::clamp(y, 0, h - 1);
    x = std::clamp(x, 0, w - 1);
    return src[(static_cast<std::size_t>(ch) * h + y) * w + x];
  };
  for (int ch = 0; ch < c; ++ch)
    for (int oy = 0; oy < out_h; ++oy)
      for (int ox = 0; ox < out_w; ++ox) {
        const double fy = (oy + 0.5) * sy - 0.5;
        const double fx = (ox + 0.5) * sx - 0.5;
        const int y0 = static_cast<int>(std::floor(fy));
        const int x0 = static_cast<int>(std::floor(fx));
        const double wy = fy - y0;
        const double wx = fx - x0;
        const double top = at(ch, y0, x0) * (1 - wx) + at(ch, y0, x0 + 1) * wx;
        const double bot = at(ch, y0 + 1, x0) * (1 - wx) + at(ch, y0 + 1, x0 + 1) * wx;
        out[(static_cast<std::size_t>(ch) * out_h + oy) * out_w + ox] =
            top * (1 - wy) + bot * wy;
      }
  return out;
}

// AUC as the Mann-Whitney pair statistic: P(score_pos > score_neg), ties 0.5.
inline double auc_pairwise(const std::vector<int>& labels, const std::vector<double>& scores) {
  double wins = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < labels.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j])
        wins += 1;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace oracles

#endif
