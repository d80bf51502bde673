#include "visage/model.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "visage/errors.hpp"
#include "visage/rng.hpp"

using nlohmann::json;

namespace visage {
namespace {

// Layer i draws its weights from stream 100 + i; low stream numbers belong
// to the data pipeline.
constexpr std::uint64_t kInitStreamBase = 100;

const char* kind_name(LayerSpec::Kind k) {
  switch (k) {
    case LayerSpec::Kind::Conv: return "conv";
    case LayerSpec::Kind::MaxPool: return "maxpool";
    case LayerSpec::Kind::Flatten: return "flatten";
    case LayerSpec::Kind::Dense: return "dense";
    case LayerSpec::Kind::ReLU: return "relu";
    case LayerSpec::Kind::Softmax: return "softmax";
  }
  return "?";
}

std::string layer_tag(std::size_t i, const LayerSpec& l) {
  return "layer " + std::to_string(i) + " (" + kind_name(l.kind) + ")";
}

}  // namespace

std::string task_name(Task t) { return t == Task::Age ? "age" : "gender"; }

Task task_from_name(const std::string& name) {
  if (name == "age") return Task::Age;
  if (name == "gender") return Task::Gender;
  throw DomainError("unknown task '" + name + "' (expected age or gender)");
}

LayerSpec LayerSpec::conv(int out_channels, int kernel, int stride, int padding) {
  if (out_channels < 1 || kernel < 1 || stride < 1 || padding < 0)
    throw DomainError("conv layer: channels/kernel/stride must be positive, padding >= 0");
  LayerSpec l;
  l.kind = Kind::Conv;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.stride = stride;
  l.padding = padding;
  return l;
}

LayerSpec LayerSpec::maxpool(int kernel, int stride) {
  if (kernel < 1 || stride < 1)
    throw DomainError("maxpool layer: kernel and stride must be positive");
  LayerSpec l;
  l.kind = Kind::MaxPool;
  l.kernel = kernel;
  l.stride = stride;
  return l;
}

LayerSpec LayerSpec::flatten() {
  LayerSpec l;
  l.kind = Kind::Flatten;
  return l;
}

LayerSpec LayerSpec::dense(int units) {
  if (units < 1) throw DomainError("dense layer: units must be positive");
  LayerSpec l;
  l.kind = Kind::Dense;
  l.units = units;
  return l;
}

LayerSpec LayerSpec::relu() {
  LayerSpec l;
  l.kind = Kind::ReLU;
  return l;
}

LayerSpec LayerSpec::softmax() {
  LayerSpec l;
  l.kind = Kind::Softmax;
  return l;
}

ModelSpec ModelSpec::create(Shape input_shape, Task task, std::vector<LayerSpec> layers) {
  if (input_shape.size() != 3)
    throw ShapeError("model input must be [c x h x w], got " + shape_str(input_shape));
  for (int d : input_shape)
    if (d < 1) throw ShapeError("non-positive model input dimension in " + shape_str(input_shape));

  std::vector<Shape> shapes;
  Shape cur = input_shape;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    switch (l.kind) {
      case LayerSpec::Kind::Conv: {
        if (cur.size() != 3)
          throw ShapeError(layer_tag(i, l) + ": expects [c x h x w], got " + shape_str(cur));
        const int h = cur[1], w = cur[2];
        if (l.kernel > h + 2 * l.padding || l.kernel > w + 2 * l.padding)
          throw ShapeError(layer_tag(i, l) + ": kernel " + std::to_string(l.kernel) +
                           " exceeds padded input " + shape_str(cur));
        cur = {l.out_channels, (h + 2 * l.padding - l.kernel) / l.stride + 1,
               (w + 2 * l.padding - l.kernel) / l.stride + 1};
        break;
      }
      case LayerSpec::Kind::MaxPool: {
        if (cur.size() != 3)
          throw ShapeError(layer_tag(i, l) + ": expects [c x h x w], got " + shape_str(cur));
        const int h = cur[1], w = cur[2];
        if (l.kernel > h || l.kernel > w)
          throw ShapeError(layer_tag(i, l) + ": window " + std::to_string(l.kernel) +
                           " exceeds input " + shape_str(cur));
        cur = {cur[0], (h - l.kernel) / l.stride + 1, (w - l.kernel) / l.stride + 1};
        break;
      }
      case LayerSpec::Kind::Flatten:
        cur = {static_cast<int>(numel(cur))};
        break;
      case LayerSpec::Kind::Dense:
        if (cur.size() != 1)
          throw ShapeError(layer_tag(i, l) + ": expects a flat input, got " + shape_str(cur) +
                           " (add a flatten layer)");
        cur = {l.units};
        break;
      case LayerSpec::Kind::ReLU:
        break;
      case LayerSpec::Kind::Softmax:
        if (cur.size() != 1)
          throw ShapeError(layer_tag(i, l) + ": expects a flat input, got " + shape_str(cur));
        break;
    }
    shapes.push_back(cur);
  }

  const auto head_error = [&](const std::string& want) {
    return DomainError("a " + task_name(task) + " model must end with " + want);
  };
  if (layers.size() < 2) throw head_error(task == Task::Age ? "Dense(1), ReLU" : "Dense(2), Softmax");
  const LayerSpec& last = layers.back();
  const LayerSpec& prev = layers[layers.size() - 2];
  if (task == Task::Age) {
    if (prev.kind != LayerSpec::Kind::Dense || prev.units != 1 ||
        last.kind != LayerSpec::Kind::ReLU)
      throw head_error("Dense(1), ReLU");
  } else {
    if (prev.kind != LayerSpec::Kind::Dense || prev.units != 2 ||
        last.kind != LayerSpec::Kind::Softmax)
      throw head_error("Dense(2), Softmax");
  }

  ModelSpec spec;
  spec.input_shape_ = std::move(input_shape);
  spec.task_ = task;
  spec.layers_ = std::move(layers);
  spec.layer_shapes_ = std::move(shapes);
  return spec;
}

ModelSpec build_default_age_model() {
  std::vector<LayerSpec> layers;
  for (int oc : {16, 32, 64, 64}) {
    layers.push_back(LayerSpec::conv(oc, 3, 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
  }
  layers.push_back(LayerSpec::flatten());
  layers.push_back(LayerSpec::dense(128));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::dense(1));
  layers.push_back(LayerSpec::relu());
  return ModelSpec::create({3, 200, 200}, Task::Age, std::move(layers));
}

ModelSpec build_default_gender_model() {
  std::vector<LayerSpec> layers;
  for (int oc : {16, 32, 64, 64}) {
    layers.push_back(LayerSpec::conv(oc, 3, 1, 1));
    layers.push_back(LayerSpec::relu());
    layers.push_back(LayerSpec::maxpool(2, 2));
  }
  layers.push_back(LayerSpec::flatten());
  layers.push_back(LayerSpec::dense(128));
  layers.push_back(LayerSpec::relu());
  layers.push_back(LayerSpec::dense(2));
  layers.push_back(LayerSpec::softmax());
  return ModelSpec::create({3, 200, 200}, Task::Gender, std::move(layers));
}

Tensor* Params::find(const std::string& name) {
  for (auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

const Tensor* Params::find(const std::string& name) const {
  for (const auto& [n, t] : entries)
    if (n == name) return &t;
  return nullptr;
}

namespace {

// Input shape seen by layer i.
Shape shape_into(const ModelSpec& spec, std::size_t i) {
  return i == 0 ? spec.input_shape() : spec.layer_shapes()[i - 1];
}

template <typename WeightFn>
Params make_params(const ModelSpec& spec, const WeightFn& weights) {
  Params p;
  const auto& layers = spec.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    if (l.kind == LayerSpec::Kind::Conv) {
      const int in_c = shape_into(spec, i)[0];
      const Shape wshape{l.out_channels, in_c, l.kernel, l.kernel};
      p.entries.emplace_back(prefix + "kernels", weights(i, wshape, in_c * l.kernel * l.kernel));
      p.entries.emplace_back(prefix + "bias", Tensor(Shape{l.out_channels}));
    } else if (l.kind == LayerSpec::Kind::Dense) {
      const int n_in = shape_into(spec, i)[0];
      p.entries.emplace_back(prefix + "weights", weights(i, Shape{n_in, l.units}, n_in));
      p.entries.emplace_back(prefix + "bias", Tensor(Shape{l.units}));
    }
  }
  return p;
}

}  // namespace

Params init_params(const ModelSpec& spec, std::uint64_t seed) {
  return make_params(spec, [seed](std::size_t layer, const Shape& shape, int fan_in) {
    Rng rng(mix_seed(seed, kInitStreamBase + layer));
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    Tensor t(shape);
    for (std::size_t j = 0; j < t.size(); ++j)
      t[j] = static_cast<float>(rng.next_normal() * std_dev);
    return t;
  });
}

Params zero_params(const ModelSpec& spec) {
  return make_params(spec, [](std::size_t, const Shape& shape, int) { return Tensor(shape); });
}

std::int64_t param_count(const ModelSpec& spec) {
  std::int64_t total = 0;
  const auto& layers = spec.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (l.kind == LayerSpec::Kind::Conv) {
      const int in_c = shape_into(spec, i)[0];
      total += static_cast<std::int64_t>(l.out_channels) * in_c * l.kernel * l.kernel +
               l.out_channels;
    } else if (l.kind == LayerSpec::Kind::Dense) {
      total += static_cast<std::int64_t>(shape_into(spec, i)[0]) * l.units + l.units;
    }
  }
  return total;
}

namespace {

const Tensor& fetch_param(const Params& params, const std::string& name, const Shape& want) {
  const Tensor* t = params.find(name);
  if (t == nullptr) throw Error("params missing tensor '" + name + "'");
  if (t->shape() != want)
    throw ShapeError("param '" + name + "' is " + shape_str(t->shape()) + ", spec needs " +
                     shape_str(want));
  return *t;
}

// leaf(name, shape) supplies the graph node holding that parameter.
template <typename LeafFn>
ModelGraph apply_layers(Graph& g, const ModelSpec& spec, NodeId batch, LeafFn&& leaf) {
  const Tensor& bv = g.value(batch);
  const Shape& in = spec.input_shape();
  if (bv.rank() != 4 || bv.dim(1) != in[0] || bv.dim(2) != in[1] || bv.dim(3) != in[2])
    throw ShapeError("forward: batch " + shape_str(bv.shape()) + " does not match model input " +
                     shape_str(in));
  const int b = bv.dim(0);

  ModelGraph mg;
  NodeId cur = batch;
  const auto& layers = spec.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    const std::string prefix = "layer" + std::to_string(i) + ".";
    switch (l.kind) {
      case LayerSpec::Kind::Conv: {
        const int in_c = shape_into(spec, i)[0];
        const NodeId w =
            leaf(prefix + "kernels", Shape{l.out_channels, in_c, l.kernel, l.kernel});
        const NodeId bias = leaf(prefix + "bias", Shape{l.out_channels});
        mg.param_nodes.emplace_back(prefix + "kernels", w);
        mg.param_nodes.emplace_back(prefix + "bias", bias);
        cur = g.conv2d(cur, w, bias, l.stride, l.padding);
        break;
      }
      case LayerSpec::Kind::MaxPool:
        cur = g.maxpool2d(cur, l.kernel, l.stride);
        break;
      case LayerSpec::Kind::Flatten:
        cur = g.reshape(cur, Shape{b, static_cast<int>(numel(shape_into(spec, i)))});
        break;
      case LayerSpec::Kind::Dense: {
        const int n_in = shape_into(spec, i)[0];
        const NodeId w = leaf(prefix + "weights", Shape{n_in, l.units});
        const NodeId bias = leaf(prefix + "bias", Shape{l.units});
        mg.param_nodes.emplace_back(prefix + "weights", w);
        mg.param_nodes.emplace_back(prefix + "bias", bias);
        cur = g.add_row_bias(g.matmul(cur, w), bias);
        break;
      }
      case LayerSpec::Kind::ReLU:
        cur = g.relu(cur);
        break;
      case LayerSpec::Kind::Softmax:
        cur = g.softmax(cur);
        break;
    }
  }
  mg.output = cur;
  return mg;
}

}  // namespace

ModelGraph build_forward(Graph& g, const ModelSpec& spec, const Params& params, NodeId batch) {
  return apply_layers(g, spec, batch, [&g, &params](const std::string& name, const Shape& want) {
    return g.parameter(fetch_param(params, name, want));
  });
}

ModelGraph build_forward_on(Graph& g, const ModelSpec& spec,
                            const std::vector<std::pair<std::string, NodeId>>& leaves,
                            NodeId batch) {
  return apply_layers(g, spec, batch, [&](const std::string& name, const Shape& want) {
    for (const auto& [leaf_name, id] : leaves) {
      if (leaf_name != name) continue;
      const Shape& got = g.value(id).shape();
      if (got != want)
        throw ShapeError("leaf '" + name + "' is " + shape_str(got) + ", spec needs " +
                         shape_str(want));
      return id;
    }
    throw Error("no leaf node for '" + name + "'");
  });
}

Tensor forward(const ModelSpec& spec, const Params& params, const Tensor& batch) {
  Graph g;
  const NodeId in = g.input(batch);
  const ModelGraph mg =
      apply_layers(g, spec, in, [&g, &params](const std::string& name, const Shape& want) {
        return g.input(fetch_param(params, name, want));
      });
  return g.value(mg.output);
}

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  json j;
  j["input_shape"] = spec.input_shape();
  j["task"] = task_name(spec.task());
  j["layers"] = json::array();
  for (const LayerSpec& l : spec.layers()) {
    json jl{{"kind", kind_name(l.kind)}};
    switch (l.kind) {
      case LayerSpec::Kind::Conv:
        jl["out_channels"] = l.out_channels;
        jl["kernel"] = l.kernel;
        jl["stride"] = l.stride;
        jl["padding"] = l.padding;
        break;
      case LayerSpec::Kind::MaxPool:
        jl["kernel"] = l.kernel;
        jl["stride"] = l.stride;
        break;
      case LayerSpec::Kind::Dense:
        jl["units"] = l.units;
        break;
      default:
        break;
    }
    j["layers"].push_back(std::move(jl));
  }
  return j;
}

ModelSpec model_spec_from_json(const nlohmann::json& j) {
  try {
    const Shape input_shape = j.at("input_shape").get<Shape>();
    const Task task = task_from_name(j.at("task").get<std::string>());
    std::vector<LayerSpec> layers;
    for (const json& jl : j.at("layers")) {
      const std::string kind = jl.at("kind").get<std::string>();
      if (kind == "conv")
        layers.push_back(LayerSpec::conv(jl.at("out_channels").get<int>(),
                                         jl.at("kernel").get<int>(), jl.at("stride").get<int>(),
                                         jl.at("padding").get<int>()));
      else if (kind == "maxpool")
        layers.push_back(LayerSpec::maxpool(jl.at("kernel").get<int>(),
                                            jl.at("stride").get<int>()));
      else if (kind == "flatten")
        layers.push_back(LayerSpec::flatten());
      else if (kind == "dense")
        layers.push_back(LayerSpec::dense(jl.at("units").get<int>()));
      else if (kind == "relu")
        layers.push_back(LayerSpec::relu());
      else if (kind == "softmax")
        layers.push_back(LayerSpec::softmax());
      else
        throw ParseError("unknown layer kind '" + kind + "'");
    }
    return ModelSpec::create(input_shape, task, std::move(layers));
  } catch (const json::exception& e) {
    throw ParseError(std::string("model spec: ") + e.what());
  }
}

std::string model_spec_to_json_text(const ModelSpec& spec) {
  return model_spec_to_json(spec).dump(2) + "\n";
}

ModelSpec model_spec_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("model spec: ") + e.what());
  }
  return model_spec_from_json(j);
}

void write_model_spec(const std::string& path, const ModelSpec& spec) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << model_spec_to_json_text(spec);
  if (!os) throw IoError("write failed for '" + path + "'");
}

ModelSpec read_model_spec(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return model_spec_from_json_text(ss.str());
}

}  // namespace visage
