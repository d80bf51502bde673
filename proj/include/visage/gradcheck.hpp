#ifndef VISAGE_GRADCHECK_HPP
#define VISAGE_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <vector>

#include "visage/graph.hpp"
#include "visage/tensor.hpp"

namespace visage {

enum class CheckedOp {
  Matmul,
  AddRowBias,
  Conv2d,
  Maxpool2d,
  Relu,
  Softmax,
  Reshape,
  Square,
  MseLoss,
  CrossEntropyLoss,
};

/// An op plus the input shapes and geometry to probe it with.
struct GradCheck {
  CheckedOp op;
  std::vector<Shape> shapes;
  int stride = 1;
  int padding = 0;
  int pool_k = 2;
  int pool_stride = 2;
};

/// Builds seeded random inputs for the op (resampled away from relu and
/// maxpool kinks), reduces non-scalar outputs through a fixed random
/// quadratic so permuted elements cannot cancel, and compares analytic
/// gradients against central finite differences. Returns the worst
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-6) over every
/// element of every differentiable input.
double grad_check(const GradCheck& check, std::uint64_t seed, double eps = 1e-3);

using LossBuilder = std::function<NodeId(Graph&, const std::vector<NodeId>&)>;

/// Finite-difference comparison for an arbitrary scalar function of the
/// given tensors. probes_per_tensor < 0 checks every element; otherwise
/// only the elements with the largest analytic gradient magnitude are
/// probed in each tensor.
double fd_max_rel_err(const LossBuilder& build, const std::vector<Tensor>& inputs, double eps,
                      int probes_per_tensor = -1);

}  // namespace visage

#endif
