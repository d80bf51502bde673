#include "visage/graph.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "kernels.hpp"
#include "visage/errors.hpp"

namespace visage {
namespace {

constexpr double kProbFloor = 1e-12;

}  // namespace

NodeId Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

Tensor& Graph::grad_buf(NodeId id) {
  Node& n = nodes_[id.index];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = nodes_[id.index];
  if (n.grad.empty())
    throw Error("no gradient recorded for this node; run backward() over a graph that reaches it");
  return n.grad;
}

double Graph::scalar(NodeId id) const {
  const Node& n = nodes_[id.index];
  if (n.has_exact) return n.exact;
  if (n.value.size() != 1)
    throw DomainError("scalar() called on node of shape " + shape_str(n.value.shape()));
  return static_cast<double>(n.value[0]);
}

NodeId Graph::input(Tensor value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

NodeId Graph::parameter(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.needs_grad = true;
  n.is_param = true;
  return push(std::move(n));
}

void Graph::backward(NodeId loss) {
  Node& ln = nodes_[loss.index];
  if (ln.value.size() != 1)
    throw DomainError("backward: loss must be a scalar, got shape " + shape_str(ln.value.shape()));
  for (Node& n : nodes_) {
    if (n.is_param && n.grad.empty()) n.grad = Tensor(n.value.shape());
    if (!n.grad.empty()) std::fill(n.grad.data(), n.grad.data() + n.grad.size(), 0.0f);
  }
  grad_buf(loss)[0] = 1.0f;
  for (std::uint32_t i = loss.index + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backprop && !n.grad.empty()) n.backprop(*this);
  }
}

NodeId Graph::matmul(NodeId a, NodeId b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  const int m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Node out;
  out.value = Tensor({m, n});
  kernels::gemm_nn(av.data(), bv.data(), out.value.data(), m, k, n);
  out.needs_grad = needs_grad(a) || needs_grad(b);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [a, b, self, m, k, n](Graph& g) {
      const Tensor& go = g.grad(self);
      if (g.needs_grad(a))
        kernels::gemm_nt(go.data(), g.value(b).data(), g.grad_buf(a).data(), m, n, k);
      if (g.needs_grad(b))
        kernels::gemm_tn(g.value(a).data(), go.data(), g.grad_buf(b).data(), m, k, n);
    };
  }
  return push(std::move(out));
}

NodeId Graph::add_row_bias(NodeId x, NodeId bias) {
  const Tensor& xv = value(x);
  const Tensor& bv = value(bias);
  if (xv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != xv.dim(1))
    throw ShapeError("add_row_bias: incompatible shapes " + shape_str(xv.shape()) + " and " +
                     shape_str(bv.shape()));
  const int m = xv.dim(0), n = xv.dim(1);
  Node out;
  out.value = Tensor(xv.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.value[i * n + j] = xv[i * n + j] + bv[j];
  out.needs_grad = needs_grad(x) || needs_grad(bias);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, bias, self, m, n](Graph& g) {
      const Tensor& go = g.grad(self);
      if (g.needs_grad(x)) {
        Tensor& gx = g.grad_buf(x);
        for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
      }
      if (g.needs_grad(bias)) {
        Tensor& gb = g.grad_buf(bias);
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) gb[j] += go[i * n + j];
      }
    };
  }
  return push(std::move(out));
}

NodeId Graph::conv2d(NodeId x, NodeId kernels, NodeId bias, int stride, int padding) {
  const Tensor& xv = value(x);
  const Tensor& wv = value(kernels);
  const Tensor& bv = value(bias);
  if (stride < 1) throw DomainError("conv2d: stride must be >= 1, got " + std::to_string(stride));
  if (padding < 0)
    throw DomainError("conv2d: padding must be >= 0, got " + std::to_string(padding));
  if (wv.rank() != 4 || wv.dim(2) != wv.dim(3))
    throw ShapeError("conv2d: kernels must be [out_c x in_c x k x k], got " +
                     shape_str(wv.shape()));
  if (xv.rank() != 3 && xv.rank() != 4)
    throw ShapeError("conv2d: input must be [c x h x w] or [n x c x h x w], got " +
                     shape_str(xv.shape()));
  const bool batched = xv.rank() == 4;
  const int count = batched ? xv.dim(0) : 1;
  const int c = xv.dim(batched ? 1 : 0);
  const int h = xv.dim(batched ? 2 : 1);
  const int w = xv.dim(batched ? 3 : 2);
  if (c != wv.dim(1))
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " has " + std::to_string(c) +
                     " channels but kernels " + shape_str(wv.shape()) + " expect " +
                     std::to_string(wv.dim(1)));
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
    throw ShapeError("conv2d: bias " + shape_str(bv.shape()) + " does not match kernels " +
                     shape_str(wv.shape()));
  const kernels::ConvDims d{c, h, w, wv.dim(0), wv.dim(2), stride, padding};
  if (d.out_h() < 1 || d.out_w() < 1)
    throw ShapeError("conv2d: kernel size " + std::to_string(d.k) + " exceeds padded input " +
                     shape_str(xv.shape()) + " with padding " + std::to_string(padding));
  const std::size_t in_sz = static_cast<std::size_t>(c) * h * w;
  const std::size_t out_sz = static_cast<std::size_t>(d.out_c) * d.out_h() * d.out_w();
  Node out;
  out.value = Tensor(batched ? Shape{count, d.out_c, d.out_h(), d.out_w()}
                             : Shape{d.out_c, d.out_h(), d.out_w()});
  for (int i = 0; i < count; ++i)
    kernels::conv2d_forward(d, xv.data() + i * in_sz, wv.data(), bv.data(),
                            out.value.data() + i * out_sz);
  out.needs_grad = needs_grad(x) || needs_grad(kernels) || needs_grad(bias);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, kernels, bias, self, d, count, in_sz, out_sz](Graph& g) {
      const Tensor& go = g.grad(self);
      if (g.needs_grad(x)) {
        Tensor& gx = g.grad_buf(x);
        std::vector<float> scratch(in_sz);
        for (int i = 0; i < count; ++i) {
          std::fill(scratch.begin(), scratch.end(), 0.0f);
          kernels::conv2d_backward_data(d, go.data() + i * out_sz, g.value(kernels).data(),
                                        scratch.data());
          float* dst = gx.data() + i * in_sz;
          for (std::size_t j = 0; j < in_sz; ++j) dst[j] += scratch[j];
        }
      }
      float* dw = g.needs_grad(kernels) ? g.grad_buf(kernels).data() : nullptr;
      float* db = g.needs_grad(bias) ? g.grad_buf(bias).data() : nullptr;
      if (dw != nullptr || db != nullptr) {
        const Tensor& xin = g.value(x);
        for (int i = 0; i < count; ++i)
          kernels::conv2d_backward_filter(d, xin.data() + i * in_sz, go.data() + i * out_sz, dw,
                                          db);
      }
    };
  }
  return push(std::move(out));
}

NodeId Graph::maxpool2d(NodeId x, int k, int stride) {
  const Tensor& xv = value(x);
  if (k < 1 || stride < 1)
    throw DomainError("maxpool2d: window and stride must be >= 1, got " + std::to_string(k) +
                      " and " + std::to_string(stride));
  if (xv.rank() != 3 && xv.rank() != 4)
    throw ShapeError("maxpool2d: input must be [c x h x w] or [n x c x h x w], got " +
                     shape_str(xv.shape()));
  const bool batched = xv.rank() == 4;
  const int count = batched ? xv.dim(0) : 1;
  const int c = xv.dim(batched ? 1 : 0);
  const int h = xv.dim(batched ? 2 : 1);
  const int w = xv.dim(batched ? 3 : 2);
  if (k > h || k > w)
    throw ShapeError("maxpool2d: window " + std::to_string(k) + " exceeds input " +
                     shape_str(xv.shape()));
  const int oh = (h - k) / stride + 1;
  const int ow = (w - k) / stride + 1;
  const std::size_t in_sz = static_cast<std::size_t>(c) * h * w;
  const std::size_t out_sz = static_cast<std::size_t>(c) * oh * ow;
  auto argmax = std::make_shared<std::vector<int>>(static_cast<std::size_t>(count) * out_sz);
  Node out;
  out.value = Tensor(batched ? Shape{count, c, oh, ow} : Shape{c, oh, ow});
  for (int i = 0; i < count; ++i)
    kernels::maxpool_forward(xv.data() + i * in_sz, out.value.data() + i * out_sz,
                             argmax->data() + i * out_sz, c, h, w, k, stride);
  out.needs_grad = needs_grad(x);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, self, argmax, count, in_sz, out_sz](Graph& g) {
      const Tensor& go = g.grad(self);
      Tensor& gx = g.grad_buf(x);
      for (int i = 0; i < count; ++i)
        kernels::maxpool_backward(go.data() + i * out_sz, argmax->data() + i * out_sz,
                                  gx.data() + i * in_sz, static_cast<long>(out_sz));
    };
  }
  return push(std::move(out));
}

NodeId Graph::relu(NodeId x) {
  const Tensor& xv = value(x);
  Node out;
  out.value = Tensor(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out.value[i] = xv[i] > 0.0f ? xv[i] : 0.0f;
  out.needs_grad = needs_grad(x);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, self](Graph& g) {
      const Tensor& go = g.grad(self);
      const Tensor& xin = g.value(x);
      Tensor& gx = g.grad_buf(x);
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xin[i] > 0.0f) gx[i] += go[i];
    };
  }
  return push(std::move(out));
}

NodeId Graph::softmax(NodeId x) {
  const Tensor& xv = value(x);
  if (xv.rank() != 1 && xv.rank() != 2)
    throw ShapeError("softmax: input must be [n] or [rows x n], got " + shape_str(xv.shape()));
  const int rows = xv.rank() == 2 ? xv.dim(0) : 1;
  const int n = xv.dim(xv.rank() - 1);
  Node out;
  out.value = Tensor(xv.shape());
  std::vector<double> e(static_cast<std::size_t>(n));
  for (int r = 0; r < rows; ++r) {
    const float* row = xv.data() + static_cast<std::size_t>(r) * n;
    float hi = row[0];
    for (int j = 1; j < n; ++j) hi = std::max(hi, row[j]);
    double denom = 0.0;
    for (int j = 0; j < n; ++j) {
      e[j] = std::exp(static_cast<double>(row[j]) - static_cast<double>(hi));
      denom += e[j];
    }
    for (int j = 0; j < n; ++j)
      out.value[static_cast<std::size_t>(r) * n + j] = static_cast<float>(e[j] / denom);
  }
  out.needs_grad = needs_grad(x);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, self, rows, n](Graph& g) {
      const Tensor& go = g.grad(self);
      const Tensor& y = g.value(self);
      Tensor& gx = g.grad_buf(x);
      for (int r = 0; r < rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * n;
        double dot = 0.0;
        for (int j = 0; j < n; ++j)
          dot += static_cast<double>(go[base + j]) * static_cast<double>(y[base + j]);
        for (int j = 0; j < n; ++j)
          gx[base + j] += static_cast<float>(static_cast<double>(y[base + j]) *
                                             (static_cast<double>(go[base + j]) - dot));
      }
    };
  }
  return push(std::move(out));
}

NodeId Graph::reshape(NodeId x, Shape shape) {
  const Tensor& xv = value(x);
  Node out;
  out.value = xv.reshaped(std::move(shape));
  out.needs_grad = needs_grad(x);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, self](Graph& g) {
      const Tensor& go = g.grad(self);
      Tensor& gx = g.grad_buf(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
    };
  }
  return push(std::move(out));
}

NodeId Graph::square(NodeId x) {
  const Tensor& xv = value(x);
  Node out;
  out.value = Tensor(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out.value[i] = xv[i] * xv[i];
  out.needs_grad = needs_grad(x);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, self](Graph& g) {
      const Tensor& go = g.grad(self);
      const Tensor& xin = g.value(x);
      Tensor& gx = g.grad_buf(x);
      for (std::size_t i = 0; i < go.size(); ++i) gx[i] += 2.0f * xin[i] * go[i];
    };
  }
  return push(std::move(out));
}

NodeId Graph::sum(NodeId x) {
  const Tensor& xv = value(x);
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) acc += static_cast<double>(xv[i]);
  Node out;
  out.value = Tensor({1}, {static_cast<float>(acc)});
  out.exact = acc;
  out.has_exact = true;
  out.needs_grad = needs_grad(x);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [x, self](Graph& g) {
      const float g0 = g.grad(self)[0];
      Tensor& gx = g.grad_buf(x);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g0;
    };
  }
  return push(std::move(out));
}

NodeId Graph::mse_loss(NodeId pred, const Tensor& target) {
  const Tensor& pv = value(pred);
  if (!pv.same_shape(target))
    throw ShapeError("mse_loss: prediction " + shape_str(pv.shape()) + " vs target " +
                     shape_str(target.shape()));
  if (pv.empty()) throw DomainError("mse_loss: empty prediction");
  const std::size_t n = pv.size();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double diff = static_cast<double>(pv[i]) - static_cast<double>(target[i]);
    acc += diff * diff;
  }
  acc /= static_cast<double>(n);
  Node out;
  out.value = Tensor({1}, {static_cast<float>(acc)});
  out.exact = acc;
  out.has_exact = true;
  out.needs_grad = needs_grad(pred);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    out.backprop = [pred, self, target](Graph& g) {
      const double scale =
          2.0 / static_cast<double>(target.size()) * static_cast<double>(g.grad(self)[0]);
      const Tensor& pv = g.value(pred);
      Tensor& gp = g.grad_buf(pred);
      for (std::size_t i = 0; i < target.size(); ++i)
        gp[i] += static_cast<float>(
            scale * (static_cast<double>(pv[i]) - static_cast<double>(target[i])));
    };
  }
  return push(std::move(out));
}

NodeId Graph::cross_entropy_loss(NodeId probs, const std::vector<int>& targets) {
  const Tensor& pv = value(probs);
  if (pv.rank() != 2)
    throw ShapeError("cross_entropy_loss: probs must be [rows x classes], got " +
                     shape_str(pv.shape()));
  const int rows = pv.dim(0);
  const int classes = pv.dim(1);
  if (static_cast<int>(targets.size()) != rows)
    throw ShapeError("cross_entropy_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(rows) + " probability rows");
  double acc = 0.0;
  for (int i = 0; i < rows; ++i) {
    const int t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= classes)
      throw DomainError("cross_entropy_loss: class index " + std::to_string(t) +
                        " out of range [0, " + std::to_string(classes) + ")");
    const double p = static_cast<double>(pv[static_cast<std::size_t>(i) * classes + t]);
    acc -= std::log(std::max(p, kProbFloor));
  }
  acc /= static_cast<double>(rows);
  Node out;
  out.value = Tensor({1}, {static_cast<float>(acc)});
  out.exact = acc;
  out.has_exact = true;
  out.needs_grad = needs_grad(probs);
  if (out.needs_grad) {
    const NodeId self{static_cast<std::uint32_t>(nodes_.size())};
    std::vector<int> t = targets;
    out.backprop = [probs, self, t, rows, classes](Graph& g) {
      const double g0 = static_cast<double>(g.grad(self)[0]);
      const Tensor& pv = g.value(probs);
      Tensor& gp = g.grad_buf(probs);
      for (int i = 0; i < rows; ++i) {
        const std::size_t at = static_cast<std::size_t>(i) * classes + t[static_cast<std::size_t>(i)];
        const double p = static_cast<double>(pv[at]);
        if (p >= kProbFloor) gp[at] += static_cast<float>(-g0 / (p * rows));
      }
    };
  }
  return push(std::move(out));
}

}  // namespace visage
