#include "visage/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>

#include <json.hpp>

#include "visage/errors.hpp"
#include "visage/graph.hpp"
#include "visage/metrics.hpp"
#include "visage/rng.hpp"

namespace visage {

namespace {

// Seed streams: 1000 + epoch for the per-epoch shuffle (epochs are
// 1-based), keeping epoch order independent of everything else.
constexpr std::uint64_t kEpochStreamBase = 1000;

// Decoded samples are ~480 KB each at 200x200; keep full sets in memory
// only when small enough, otherwise re-decode on demand.
constexpr std::size_t kCacheLimit = 512;

}  // namespace

void TrainConfig::validate() const {
  if (!(lr > 0) || !std::isfinite(lr)) throw DomainError("config: lr must be positive");
  if (!(beta1 >= 0 && beta1 < 1)) throw DomainError("config: beta1 must be in [0,1)");
  if (!(beta2 >= 0 && beta2 < 1)) throw DomainError("config: beta2 must be in [0,1)");
  if (!(epsilon > 0)) throw DomainError("config: epsilon must be positive");
  if (max_epochs < 1) throw DomainError("config: max_epochs must be >= 1");
  if (batch_size < 1) throw DomainError("config: batch_size must be >= 1");
  if (std::isinf(stop_at_val)) throw DomainError("config: stop_at_val must be finite");
}

double adam_update(double theta, double g, double& m, double& v, std::int64_t t,
                   const TrainConfig& cfg) {
  m = cfg.beta1 * m + (1 - cfg.beta1) * g;
  v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
  const double mhat = m / (1 - std::pow(cfg.beta1, static_cast<double>(t)));
  const double vhat = v / (1 - std::pow(cfg.beta2, static_cast<double>(t)));
  return theta - cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
}

void AdamState::init(const Params& params) {
  m.clear();
  v.clear();
  t = 0;
  for (const auto& [name, tensor] : params.entries) {
    (void)name;
    m.emplace_back(tensor.size(), 0.0);
    v.emplace_back(tensor.size(), 0.0);
  }
}

void adam_step(Params& params, const std::vector<Tensor>& grads, AdamState& state,
               const TrainConfig& cfg) {
  if (params.entries.size() != grads.size() || params.entries.size() != state.m.size())
    throw ShapeError("adam: parameter, gradient and state counts differ");
  state.t += 1;
  for (std::size_t i = 0; i < params.entries.size(); ++i) {
    Tensor& p = params.entries[i].second;
    const Tensor& g = grads[i];
    if (!p.same_shape(g))
      throw ShapeError("adam: gradient shape " + shape_str(g.shape()) +
                       " does not match parameter " + params.entries[i].first + " " +
                       shape_str(p.shape()));
    for (std::size_t j = 0; j < p.size(); ++j)
      p[j] = static_cast<float>(
          adam_update(p[j], g[j], state.m[i][j], state.v[i][j], state.t, cfg));
  }
}

namespace {

void appendf(std::string& out, const char* fmt, ...) {
  char buf[128];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  out += buf;
}

}  // namespace

std::string train_log_to_csv(const TrainLog& log) {
  std::string out = "epoch,train_loss,val_metric,seconds\n";
  for (const EpochStats& e : log.epochs)
    appendf(out, "%d,%.9g,%.9g,%.3f\n", e.epoch, e.train_loss, e.val_metric, e.seconds);
  return out;
}

void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  const std::string csv = train_log_to_csv(log);
  os.write(csv.data(), static_cast<std::streamsize>(csv.size()));
  if (!os) throw IoError("write failed for '" + path + "'");
}

namespace {

class SampleCache {
 public:
  SampleCache(const Manifest& m, int h, int w) : m_(m), h_(h), w_(w) {
    if (m.records.size() <= kCacheLimit) {
      cache_.reserve(m.records.size());
      for (const FaceRecord& r : m.records)
        cache_.push_back(normalize(load_image_tensor(r, h, w)));
    }
  }

  void copy_into(std::size_t i, float* dst) const {
    if (!cache_.empty()) {
      const Tensor& t = cache_[i];
      std::copy(t.data(), t.data() + t.size(), dst);
    } else {
      const Tensor t = normalize(load_image_tensor(m_.records[i], h_, w_));
      std::copy(t.data(), t.data() + t.size(), dst);
    }
  }

 private:
  const Manifest& m_;
  int h_, w_;
  std::vector<Tensor> cache_;
};

double validation_metric(Task task, const ModelSpec& spec, const Params& params,
                         const Manifest& val, const SampleCache& cache, int batch_size) {
  const Shape& in = spec.input_shape();
  const std::size_t sample_sz = numel(in);
  const std::size_t n = val.records.size();

  std::vector<double> ages, preds;
  std::int64_t correct = 0;
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t b = std::min(n - start, static_cast<std::size_t>(batch_size));
    Tensor batch({static_cast<int>(b), in[0], in[1], in[2]});
    for (std::size_t i = 0; i < b; ++i)
      cache.copy_into(start + i, batch.data() + i * sample_sz);
    const Tensor out = forward(spec, params, batch);
    for (std::size_t i = 0; i < b; ++i) {
      const FaceRecord& rec = val.records[start + i];
      if (task == Task::Age) {
        ages.push_back(rec.age);
        preds.push_back(out[i]);
      } else if ((out[i * 2 + 1] > out[i * 2] ? 1 : 0) == rec.gender) {
        ++correct;
      }
    }
  }
  if (task == Task::Age) return rmse(ages, preds);
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

TrainResult train(Task task, const ModelSpec& spec, const Manifest& train_set,
                  const Manifest& val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (spec.task() != task)
    throw DomainError("train: model is a " + task_name(spec.task()) + " model, asked for " +
                      task_name(task));
  if (train_set.records.empty()) throw DomainError("train: empty training set");
  if (val_set.records.empty()) throw DomainError("train: empty validation set");
  const Shape& in = spec.input_shape();
  if (in[0] != 3)
    throw DomainError("train: model expects " + std::to_string(in[0]) +
                      " input channels, images have 3");

  const std::size_t sample_sz = numel(in);
  const std::size_t n = train_set.records.size();
  SampleCache train_cache(train_set, in[1], in[2]);
  SampleCache val_cache(val_set, in[1], in[2]);

  Params params = init_params(spec, cfg.seed);
  AdamState adam;
  adam.init(params);

  TrainResult result;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffler(mix_seed(cfg.seed, kEpochStreamBase + static_cast<std::uint64_t>(epoch)));
    shuffler.shuffle(order);

    double loss_sum = 0;
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b = std::min(n - start, static_cast<std::size_t>(cfg.batch_size));
      Tensor batch({static_cast<int>(b), in[0], in[1], in[2]});
      Tensor target;
      std::vector<int> classes;
      if (task == Task::Age) target = Tensor({static_cast<int>(b), 1});
      for (std::size_t i = 0; i < b; ++i) {
        const std::size_t at = order[start + i];
        train_cache.copy_into(at, batch.data() + i * sample_sz);
        if (task == Task::Age)
          target[i] = static_cast<float>(train_set.records[at].age);
        else
          classes.push_back(train_set.records[at].gender);
      }

      Graph g;
      const NodeId x = g.input(std::move(batch));
      const ModelGraph mg = build_forward(g, spec, params, x);
      const NodeId loss = task == Task::Age ? g.mse_loss(mg.output, target)
                                            : g.cross_entropy_loss(mg.output, classes);
      const double loss_val = g.scalar(loss);
      if (!std::isfinite(loss_val)) throw DivergenceError(epoch);
      g.backward(loss);

      std::vector<Tensor> grads;
      grads.reserve(mg.param_nodes.size());
      for (std::size_t i = 0; i < mg.param_nodes.size(); ++i) {
        if (mg.param_nodes[i].first != params.entries[i].first)
          throw Error("internal: parameter order mismatch at " + mg.param_nodes[i].first);
        grads.push_back(g.grad(mg.param_nodes[i].second));
      }
      adam_step(params, grads, adam, cfg);
      loss_sum += loss_val * static_cast<double>(b);
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.val_metric =
        validation_metric(task, spec, params, val_set, val_cache, cfg.batch_size);
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.log.epochs.push_back(stats);
    if (std::isfinite(cfg.stop_at_val)) {
      const bool reached = task == Task::Age ? stats.val_metric <= cfg.stop_at_val
                                             : stats.val_metric >= cfg.stop_at_val;
      if (reached) break;
    }
  }

  result.params = std::move(params);
  return result;
}

GridResult grid_search(Task task, const ModelSpec& spec, const Manifest& train_set,
                       const Manifest& val_set, const TrainConfig& base,
                       const std::vector<double>& lrs, const std::vector<int>& batch_sizes) {
  if (lrs.empty() || batch_sizes.empty())
    throw DomainError("grid search: both axes need at least one value");

  GridResult result;
  bool have_best = false;
  for (double lr : lrs)
    for (int bs : batch_sizes) {
      GridCell cell;
      cell.lr = lr;
      cell.batch_size = bs;
      TrainConfig cfg = base;
      cfg.lr = lr;
      cfg.batch_size = bs;
      const auto t0 = std::chrono::steady_clock::now();
      try {
        const TrainResult r = train(task, spec, train_set, val_set, cfg);
        cell.val_metric = r.log.epochs.back().val_metric;
        cell.epochs_run = static_cast<int>(r.log.epochs.size());
      } catch (const Error& e) {
        cell.failed = true;
        cell.error = e.what();
      }
      cell.seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      result.cells.push_back(cell);
      if (cell.failed) continue;
      const bool better =
          !have_best ||
          (task == Task::Age ? cell.val_metric < result.cells[result.best].val_metric
                             : cell.val_metric > result.cells[result.best].val_metric);
      if (better) {
        result.best = result.cells.size() - 1;
        have_best = true;
      }
    }
  if (!have_best) throw SearchExhaustedError("grid search: every cell failed");
  return result;
}

namespace {

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j = {{"lr", cfg.lr},           {"beta1", cfg.beta1},
                      {"beta2", cfg.beta2},     {"epsilon", cfg.epsilon},
                      {"max_epochs", cfg.max_epochs}, {"batch_size", cfg.batch_size},
                      {"seed", cfg.seed}};
  // NaN means "no early stop" and has no JSON encoding; leave the key out.
  if (std::isfinite(cfg.stop_at_val)) j["stop_at_val"] = cfg.stop_at_val;
  return j;
}

TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.lr = j.at("lr").get<double>();
  cfg.beta1 = j.at("beta1").get<double>();
  cfg.beta2 = j.at("beta2").get<double>();
  cfg.epsilon = j.at("epsilon").get<double>();
  cfg.max_epochs = j.at("max_epochs").get<int>();
  cfg.batch_size = j.at("batch_size").get<int>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.stop_at_val = j.value("stop_at_val", std::numeric_limits<double>::quiet_NaN());
  return cfg;
}

constexpr char kCkptMagic[4] = {'F', 'C', 'K', 'P'};
constexpr std::uint16_t kCkptVersion = 1;
constexpr std::size_t kCkptHeaderBytes = 10;  // magic + version + header length

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  nlohmann::json header;
  header["spec"] = model_spec_to_json(ckpt.spec);
  header["config"] = config_to_json(ckpt.config);
  header["epoch"] = ckpt.epoch;
  header["seed"] = ckpt.seed;
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.params.entries) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"byte_offset", offset}});
    offset += static_cast<std::uint64_t>(t.size()) * 4;
  }
  header["tensors"] = tensors;
  const std::string htext = header.dump();

  std::string bytes;
  bytes.reserve(kCkptHeaderBytes + htext.size() + offset);
  bytes.append(kCkptMagic, 4);
  put_u16(bytes, kCkptVersion);
  put_u32(bytes, static_cast<std::uint32_t>(htext.size()));
  bytes += htext;
  for (const auto& [name, t] : ckpt.params.entries) {
    (void)name;
    for (std::size_t i = 0; i < t.size(); ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, &t.data()[i], 4);
      put_u32(bytes, bits);
    }
  }

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  if (bytes.size() < kCkptHeaderBytes)
    throw TruncatedError("checkpoint '" + path + "' is truncated");
  if (std::memcmp(bytes.data(), kCkptMagic, 4) != 0)
    throw BadMagicError("'" + path + "' is not a checkpoint file");
  const unsigned char* u = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::uint16_t version =
      static_cast<std::uint16_t>(u[4] | (static_cast<std::uint16_t>(u[5]) << 8));
  if (version != kCkptVersion)
    throw VersionError("unsupported checkpoint version " + std::to_string(version) + " in '" +
                       path + "'");
  const std::uint32_t hlen = get_u32(u + 6);
  if (bytes.size() < kCkptHeaderBytes + hlen)
    throw TruncatedError("checkpoint '" + path + "' is truncated");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.substr(kCkptHeaderBytes, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad checkpoint header in '" + path + "': " + e.what());
  }

  const unsigned char* payload = u + kCkptHeaderBytes + hlen;
  const std::size_t payload_sz = bytes.size() - kCkptHeaderBytes - hlen;

  try {
    ModelSpec spec = model_spec_from_json(header.at("spec"));
    TrainConfig config = config_from_json(header.at("config"));
    const int epoch = header.at("epoch").get<int>();
    const std::uint64_t seed = header.at("seed").get<std::uint64_t>();
    Params params;
    for (const auto& tj : header.at("tensors")) {
      std::string name = tj.at("name").get<std::string>();
      Shape shape = tj.at("shape").get<Shape>();
      const std::uint64_t off = tj.at("byte_offset").get<std::uint64_t>();
      const std::size_t count = numel(shape);
      if (off + count * 4 > payload_sz)
        throw TruncatedError("checkpoint '" + path + "' payload is truncated");
      std::vector<float> data(count);
      for (std::size_t i = 0; i < count; ++i) {
        const std::uint32_t bits = get_u32(payload + off + i * 4);
        std::memcpy(&data[i], &bits, 4);
      }
      params.entries.emplace_back(std::move(name), Tensor(std::move(shape), std::move(data)));
    }
    return Checkpoint{std::move(spec), std::move(params), config, epoch, seed};
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("bad checkpoint header in '" + path + "': " + e.what());
  }
}

}  // namespace visage
