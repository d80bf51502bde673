#ifndef VISAGE_MODEL_HPP
#define VISAGE_MODEL_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "visage/graph.hpp"
#include "visage/tensor.hpp"

namespace visage {

enum class Task { Age, Gender };

std::string task_name(Task t);
Task task_from_name(const std::string& name);

struct LayerSpec {
  enum class Kind { Conv, MaxPool, Flatten, Dense, ReLU, Softmax };
  Kind kind = Kind::ReLU;
  int out_channels = 0;  // Conv
  int kernel = 0;        // Conv and MaxPool window
  int stride = 1;        // Conv and MaxPool
  int padding = 0;       // Conv
  int units = 0;         // Dense

  static LayerSpec conv(int out_channels, int kernel, int stride, int padding);
  static LayerSpec maxpool(int kernel, int stride);
  static LayerSpec flatten();
  static LayerSpec dense(int units);
  static LayerSpec relu();
  static LayerSpec softmax();
};

/// Validated layer stack. Construction propagates shapes through every
/// layer and checks the task's head (Age ends Dense(1)+ReLU, Gender ends
/// Dense(2)+Softmax), so an instance is always runnable.
class ModelSpec {
 public:
  static ModelSpec create(Shape input_shape, Task task, std::vector<LayerSpec> layers);

  const Shape& input_shape() const { return input_shape_; }
  Task task() const { return task_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  /// Per-layer output shapes, one entry per layer.
  const std::vector<Shape>& layer_shapes() const { return layer_shapes_; }

 private:
  ModelSpec() = default;
  Shape input_shape_;
  Task task_ = Task::Age;
  std::vector<LayerSpec> layers_;
  std::vector<Shape> layer_shapes_;
};

ModelSpec build_default_age_model();
ModelSpec build_default_gender_model();

/// Named weight tensors in layer order: "layer<i>.kernels" / "layer<i>.weights"
/// plus "layer<i>.bias" for every Conv and Dense layer.
struct Params {
  std::vector<std::pair<std::string, Tensor>> entries;

  Tensor* find(const std::string& name);
  const Tensor* find(const std::string& name) const;
};

/// He-normal weights (std = sqrt(2 / fan_in)), zero biases; each layer
/// draws from its own seed stream so the result is reproducible per seed.
Params init_params(const ModelSpec& spec, std::uint64_t seed);

/// All-zero parameters with the spec's shapes.
Params zero_params(const ModelSpec& spec);

std::int64_t param_count(const ModelSpec& spec);

/// Forward graph over trainable parameter leaves, for the training loop.
struct ModelGraph {
  NodeId output{0};
  std::vector<std::pair<std::string, NodeId>> param_nodes;
};
ModelGraph build_forward(Graph& g, const ModelSpec& spec, const Params& params, NodeId batch);

/// Same wiring as build_forward, but over caller-created leaf nodes
/// (one per named parameter tensor). Lets callers differentiate the
/// whole model with respect to nodes they own.
ModelGraph build_forward_on(Graph& g, const ModelSpec& spec,
                            const std::vector<std::pair<std::string, NodeId>>& leaves,
                            NodeId batch);

/// Pure inference on a [b x c x h x w] batch; returns [b x 1] (Age) or
/// [b x 2] (Gender).
Tensor forward(const ModelSpec& spec, const Params& params, const Tensor& batch);

void write_model_spec(const std::string& path, const ModelSpec& spec);
ModelSpec read_model_spec(const std::string& path);
nlohmann::json model_spec_to_json(const ModelSpec& spec);
ModelSpec model_spec_from_json(const nlohmann::json& j);
std::string model_spec_to_json_text(const ModelSpec& spec);
ModelSpec model_spec_from_json_text(const std::string& text);

}  // namespace visage

#endif
