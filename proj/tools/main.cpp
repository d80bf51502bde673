#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "visage/dataset.hpp"
#include "visage/errors.hpp"
#include "visage/graph.hpp"
#include "visage/metrics.hpp"
#include "visage/model.hpp"
#include "visage/trainer.hpp"

// Exit codes: 0 success, 2 I/O or parse failure, 3 empty result, 4 invalid
// arguments, 5 training divergence, 6 grid search exhausted.
namespace {

using namespace visage;
using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitIo = 2;
constexpr int kExitEmpty = 3;
constexpr int kExitArgs = 4;
constexpr int kExitDiverged = 5;
constexpr int kExitExhausted = 6;

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!os) throw IoError("write failed for '" + path + "'");
}

std::string read_text_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return text;
}

// Every command leaves its effective settings beside its primary output so
// a run is reproducible from the artifacts alone.
void write_config_sidecar(const std::string& anchor_path, const json& cfg) {
  write_text_file(anchor_path + ".config.json", cfg.dump(2) + "\n");
  std::cerr << "config " << cfg.dump() << "\n";
}

// Values resolve as defaults < config file < explicit flags; the file only
// touches options the command line left alone.
void apply_config_file(const CLI::App& cmd, const std::string& path, TrainConfig& cfg) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError("bad config file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw ParseError("bad config file '" + path + "': expected an object");
  auto untouched = [&](const char* flag) {
    const CLI::Option* opt = cmd.get_option_no_throw(flag);
    return opt == nullptr || opt->count() == 0;
  };
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "lr") {
        if (untouched("--lr")) cfg.lr = value.get<double>();
      } else if (key == "beta1") {
        if (untouched("--beta1")) cfg.beta1 = value.get<double>();
      } else if (key == "beta2") {
        if (untouched("--beta2")) cfg.beta2 = value.get<double>();
      } else if (key == "epsilon") {
        if (untouched("--epsilon")) cfg.epsilon = value.get<double>();
      } else if (key == "max_epochs") {
        if (untouched("--epochs")) cfg.max_epochs = value.get<int>();
      } else if (key == "batch_size") {
        if (untouched("--batch-size")) cfg.batch_size = value.get<int>();
      } else if (key == "seed") {
        if (untouched("--seed")) cfg.seed = value.get<std::uint64_t>();
      } else if (key == "stop_at_val") {
        if (untouched("--stop-at-val")) cfg.stop_at_val = value.get<double>();
      } else {
        throw DomainError("unknown key '" + key + "' in config file '" + path + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ParseError("bad config file '" + path + "': " + e.what());
  }
}

json config_json(const TrainConfig& cfg) {
  json j = {{"lr", cfg.lr},
            {"beta1", cfg.beta1},
            {"beta2", cfg.beta2},
            {"epsilon", cfg.epsilon},
            {"max_epochs", cfg.max_epochs},
            {"batch_size", cfg.batch_size},
            {"seed", cfg.seed}};
  if (std::isfinite(cfg.stop_at_val)) j["stop_at_val"] = cfg.stop_at_val;
  return j;
}

ModelSpec resolve_spec(const std::string& spec_arg, Task task) {
  if (spec_arg == "default")
    return task == Task::Age ? build_default_age_model() : build_default_gender_model();
  return read_model_spec(spec_arg);
}

void print_histogram(const Manifest& m) {
  std::array<std::int64_t, 12> decades{};
  std::array<std::int64_t, 2> genders{};
  for (const FaceRecord& r : m.records) {
    decades[static_cast<std::size_t>(std::min(r.age / 10, 11))] += 1;
    if (r.raw_gender == 0 || r.raw_gender == 1) genders[r.raw_gender] += 1;
  }
  std::int64_t peak = 1;
  for (std::int64_t c : decades) peak = std::max(peak, c);
  std::printf("age histogram (%lld male, %lld female)\n",
              static_cast<long long>(genders[0]), static_cast<long long>(genders[1]));
  for (int d = 0; d < 12; ++d) {
    if (decades[d] == 0) continue;
    const int bar = static_cast<int>((decades[d] * 40 + peak - 1) / peak);
    std::printf("  %3d-%3d %6lld %s\n", d * 10, d * 10 + 9,
                static_cast<long long>(decades[d]), std::string(bar, '#').c_str());
  }
}

struct SynthArgs {
  std::string out_dir;
  int count = 32;
  std::uint64_t seed = 0;
  std::string manifest_out;
};

int cmd_synth(const SynthArgs& a) {
  if (a.count < 1) {
    std::cerr << "synth: refusing to generate an empty image set\n";
    return kExitEmpty;
  }
  const Manifest m = generate_synthetic(a.seed, a.count, a.out_dir);
  if (!a.manifest_out.empty()) write_manifest(a.manifest_out, m);
  std::printf("wrote %zu synthetic images to %s\n", m.records.size(), a.out_dir.c_str());
  write_config_sidecar(a.out_dir, json{{"command", "synth"},
                                       {"out_dir", a.out_dir},
                                       {"count", a.count},
                                       {"seed", a.seed},
                                       {"manifest", a.manifest_out}});
  return kExitOk;
}

struct PrepareArgs {
  std::string input_dir;
  std::string out;
  double keep_frac = 0.2;
  int age_low = 1;
  int age_high = 4;
  std::uint64_t seed = 0;
};

int cmd_prepare(const PrepareArgs& a) {
  Manifest m = ingest_directory(a.input_dir);
  m.seed = a.seed;
  m = filter_invalid_gender(m);
  m = rebalance_age(m, a.age_low, a.age_high, a.keep_frac, a.seed);
  for (const ProvenanceStep& s : m.steps)
    std::printf("%s: %lld -> %lld\n", s.name.c_str(), static_cast<long long>(s.in_count),
                static_cast<long long>(s.out_count));
  if (m.records.empty()) {
    std::cerr << "prepare: no usable records in '" << a.input_dir << "'\n";
    return kExitEmpty;
  }
  print_histogram(m);
  write_manifest(a.out, m);
  write_config_sidecar(a.out, json{{"command", "prepare"},
                                   {"input_dir", a.input_dir},
                                   {"out", a.out},
                                   {"keep_frac", a.keep_frac},
                                   {"age_low", a.age_low},
                                   {"age_high", a.age_high},
                                   {"seed", a.seed}});
  return kExitOk;
}

struct SplitArgs {
  std::string manifest;
  double train_frac = 0.7;
  std::uint64_t seed = 0;
  std::string out_train;
  std::string out_test;
};

int cmd_split(const SplitArgs& a) {
  const Manifest m = read_manifest(a.manifest);
  const auto [train_m, test_m] = holdout_split(m, a.train_frac, a.seed);
  write_manifest(a.out_train, train_m);
  write_manifest(a.out_test, test_m);
  std::printf("split %zu records into %zu train / %zu test\n", m.records.size(),
              train_m.records.size(), test_m.records.size());
  write_config_sidecar(a.out_train, json{{"command", "split"},
                                         {"manifest", a.manifest},
                                         {"train_frac", a.train_frac},
                                         {"seed", a.seed},
                                         {"out_train", a.out_train},
                                         {"out_test", a.out_test}});
  return kExitOk;
}

struct TrainArgs {
  std::string task;
  std::string train_manifest;
  std::string val_manifest;
  std::string spec = "default";
  std::string out;
  std::string log;
  TrainConfig cfg;
};

int cmd_train(const CLI::App& cmd, const TrainArgs& a, const std::string& config_file) {
  TrainConfig cfg = a.cfg;
  if (!config_file.empty()) apply_config_file(cmd, config_file, cfg);
  const Task task = task_from_name(a.task);
  const ModelSpec spec = resolve_spec(a.spec, task);
  if (spec.task() != task) {
    std::cerr << "train: spec is a " << task_name(spec.task()) << " model but --task is "
              << task_name(task) << "\n";
    return kExitIo;
  }
  const Manifest train_m = read_manifest(a.train_manifest);
  const Manifest val_m = read_manifest(a.val_manifest);

  const TrainResult result = train(task, spec, train_m, val_m, cfg);

  save_checkpoint(a.out, Checkpoint{spec, result.params, cfg,
                                    static_cast<int>(result.log.epochs.size()), cfg.seed});
  if (!a.log.empty()) write_train_log(a.log, result.log);
  const EpochStats& last = result.log.epochs.back();
  std::printf("trained %d epochs, final val %s %.6g\n", last.epoch,
              task == Task::Age ? "rmse" : "accuracy", last.val_metric);
  json sidecar = config_json(cfg);
  sidecar["command"] = "train";
  sidecar["task"] = a.task;
  sidecar["spec"] = a.spec;
  sidecar["train"] = a.train_manifest;
  sidecar["val"] = a.val_manifest;
  write_config_sidecar(a.out, sidecar);
  return kExitOk;
}

struct EvaluateArgs {
  std::string task;
  std::string checkpoint;
  std::string manifest;
  std::string report;
  int batch_size = 32;
};

int cmd_evaluate(const EvaluateArgs& a) {
  const Task task = task_from_name(a.task);
  const Checkpoint ckpt = load_checkpoint(a.checkpoint);
  if (ckpt.spec.task() != task) {
    std::cerr << "evaluate: checkpoint holds a " << task_name(ckpt.spec.task())
              << " model but --task is " << task_name(task) << "\n";
    return kExitIo;
  }
  const Manifest m = read_manifest(a.manifest);
  const EvalReport report = evaluate(task, ckpt.spec, ckpt.params, m, a.batch_size);

  write_text_file(a.report, eval_report_to_json(report).dump(2) + "\n");
  const std::string text = render_text_report(report);
  write_text_file(a.report + ".txt", text);
  if (task == Task::Gender) write_text_file(a.report + ".roc.csv", roc_to_csv(report.roc));
  std::fputs(text.c_str(), stdout);
  write_config_sidecar(a.report, json{{"command", "evaluate"},
                                      {"task", a.task},
                                      {"checkpoint", a.checkpoint},
                                      {"manifest", a.manifest},
                                      {"report", a.report},
                                      {"batch_size", a.batch_size}});
  return kExitOk;
}

struct PredictArgs {
  std::string image;
  std::string age_checkpoint;
  std::string gender_checkpoint;
};

int cmd_predict(const PredictArgs& a) {
  const Checkpoint age_ckpt = load_checkpoint(a.age_checkpoint);
  const Checkpoint gender_ckpt = load_checkpoint(a.gender_checkpoint);
  if (age_ckpt.spec.task() != Task::Age) {
    std::cerr << "predict: --age-checkpoint holds a "
              << task_name(age_ckpt.spec.task()) << " model\n";
    return kExitIo;
  }
  if (gender_ckpt.spec.task() != Task::Gender) {
    std::cerr << "predict: --gender-checkpoint holds a "
              << task_name(gender_ckpt.spec.task()) << " model\n";
    return kExitIo;
  }

  FaceRecord rec;
  rec.path = a.image;
  auto one = [&](const ModelSpec& spec, const Params& params) {
    const Shape& in = spec.input_shape();
    Tensor batch({1, in[0], in[1], in[2]});
    const Tensor img = normalize(load_image_tensor(rec, in[1], in[2]));
    std::copy(img.data(), img.data() + img.size(), batch.data());
    return forward(spec, params, batch);
  };
  const Tensor age_out = one(age_ckpt.spec, age_ckpt.params);
  const Tensor gender_out = one(gender_ckpt.spec, gender_ckpt.params);
  const int gender = gender_out[1] > gender_out[0] ? 1 : 0;
  std::printf("age %.1f, gender %d, p %.3f\n", age_out[0], gender, gender_out[gender]);
  return kExitOk;
}

struct GridArgs {
  std::string task;
  std::string grid_file;
  std::string train_manifest;
  std::string val_manifest;
  std::string spec = "default";
  std::string out;
  TrainConfig base;
};

int cmd_gridsearch(const CLI::App& cmd, const GridArgs& a, const std::string& config_file) {
  TrainConfig base = a.base;
  if (!config_file.empty()) apply_config_file(cmd, config_file, base);
  const Task task = task_from_name(a.task);
  const ModelSpec spec = resolve_spec(a.spec, task);
  if (spec.task() != task) {
    std::cerr << "gridsearch: spec is a " << task_name(spec.task()) << " model but --task is "
              << task_name(task) << "\n";
    return kExitIo;
  }

  std::vector<double> lrs = {1e-2, 1e-3, 1e-4};
  std::vector<int> batch_sizes = {32, 64};
  if (!a.grid_file.empty()) {
    json j;
    try {
      j = json::parse(read_text_file(a.grid_file));
      if (j.contains("lr")) lrs = j.at("lr").get<std::vector<double>>();
      if (j.contains("batch_size")) batch_sizes = j.at("batch_size").get<std::vector<int>>();
    } catch (const json::exception& e) {
      throw ParseError("bad grid file '" + a.grid_file + "': " + e.what());
    }
  }

  const Manifest train_m = read_manifest(a.train_manifest);
  const Manifest val_m = read_manifest(a.val_manifest);
  const GridResult result =
      grid_search(task, spec, train_m, val_m, base, lrs, batch_sizes);

  std::string csv = "lr,batch_size,val_metric,epochs,seconds,status\n";
  for (const GridCell& c : result.cells) {
    char row[160];
    std::snprintf(row, sizeof row, "%.9g,%d,%.9g,%d,%.3f,%s\n", c.lr, c.batch_size,
                  c.failed ? 0.0 : c.val_metric, c.epochs_run, c.seconds,
                  c.failed ? "failed" : "ok");
    csv += row;
  }
  write_text_file(a.out, csv);

  const GridCell& best = result.cells[result.best];
  std::printf("best lr %g batch_size %d with val %s %.6g\n", best.lr, best.batch_size,
              task == Task::Age ? "rmse" : "accuracy", best.val_metric);
  json sidecar = config_json(base);
  sidecar["command"] = "gridsearch";
  sidecar["task"] = a.task;
  sidecar["spec"] = a.spec;
  sidecar["lr_grid"] = lrs;
  sidecar["batch_size_grid"] = batch_sizes;
  write_config_sidecar(a.out, sidecar);
  return kExitOk;
}

void add_train_config_flags(CLI::App* cmd, TrainConfig& cfg) {
  cmd->add_option("--lr", cfg.lr, "Adam learning rate");
  cmd->add_option("--beta1", cfg.beta1, "Adam first-moment decay");
  cmd->add_option("--beta2", cfg.beta2, "Adam second-moment decay");
  cmd->add_option("--epsilon", cfg.epsilon, "Adam denominator floor");
  cmd->add_option("--epochs", cfg.max_epochs, "number of training epochs");
  cmd->add_option("--batch-size", cfg.batch_size, "mini-batch size");
  cmd->add_option("--seed", cfg.seed, "PRNG seed");
  cmd->add_option("--stop-at-val", cfg.stop_at_val,
                  "stop early once the validation metric reaches this value "
                  "(rmse at or below for age, accuracy at or above for gender)");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"visage: age and gender estimation from face images"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads,
                 "worker thread count (all current kernels run single-threaded; kept for "
                 "forward compatibility, 1 is the strict deterministic mode)")
      ->check(CLI::PositiveNumber);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic labeled image set");
  synth_cmd->add_option("--out-dir", synth.out_dir, "directory for generated images")
      ->required();
  synth_cmd->add_option("--count", synth.count, "number of images");
  synth_cmd->add_option("--seed", synth.seed, "PRNG seed");
  synth_cmd->add_option("--manifest", synth.manifest_out, "also write a manifest here");

  PrepareArgs prepare;
  CLI::App* prepare_cmd =
      app.add_subcommand("prepare", "ingest a face image directory into a manifest");
  prepare_cmd->add_option("--input-dir", prepare.input_dir, "directory of face images")
      ->required();
  prepare_cmd->add_option("--out", prepare.out, "output manifest path")->required();
  prepare_cmd->add_option("--keep-frac", prepare.keep_frac,
                          "fraction of the young age band to keep");
  prepare_cmd->add_option("--age-low", prepare.age_low, "rebalanced band lower age");
  prepare_cmd->add_option("--age-high", prepare.age_high, "rebalanced band upper age");
  prepare_cmd->add_option("--seed", prepare.seed, "PRNG seed");

  SplitArgs split;
  CLI::App* split_cmd = app.add_subcommand("split", "split a manifest into train and test");
  split_cmd->add_option("--manifest", split.manifest, "input manifest")->required();
  split_cmd->add_option("--train-frac", split.train_frac, "fraction assigned to train");
  split_cmd->add_option("--seed", split.seed, "PRNG seed");
  split_cmd->add_option("--out-train", split.out_train, "train manifest path")->required();
  split_cmd->add_option("--out-test", split.out_test, "test manifest path")->required();

  TrainArgs train_args;
  std::string train_config_file;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model from manifests");
  train_cmd->add_option("--task", train_args.task, "age or gender")->required();
  train_cmd->add_option("--train", train_args.train_manifest, "training manifest")
      ->required();
  train_cmd->add_option("--val", train_args.val_manifest, "validation manifest")->required();
  train_cmd->add_option("--spec", train_args.spec, "'default' or a model spec JSON path");
  train_cmd->add_option("--config", train_config_file, "JSON config file");
  train_cmd->add_option("--out", train_args.out, "checkpoint output path")->required();
  train_cmd->add_option("--log", train_args.log, "per-epoch CSV log path");
  add_train_config_flags(train_cmd, train_args.cfg);

  EvaluateArgs eval_args;
  CLI::App* eval_cmd = app.add_subcommand("evaluate", "run a checkpoint over a manifest");
  eval_cmd->add_option("--task", eval_args.task, "age or gender")->required();
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "model checkpoint")->required();
  eval_cmd->add_option("--manifest", eval_args.manifest, "evaluation manifest")->required();
  eval_cmd->add_option("--report", eval_args.report, "report JSON output path")->required();
  eval_cmd->add_option("--batch-size", eval_args.batch_size, "forward batch size");

  PredictArgs predict;
  CLI::App* predict_cmd =
      app.add_subcommand("predict", "predict age and gender for one image");
  predict_cmd->add_option("--image", predict.image, "input image")->required();
  predict_cmd->add_option("--age-checkpoint", predict.age_checkpoint, "age model checkpoint")
      ->required();
  predict_cmd
      ->add_option("--gender-checkpoint", predict.gender_checkpoint,
                   "gender model checkpoint")
      ->required();

  GridArgs grid;
  std::string grid_config_file;
  CLI::App* grid_cmd =
      app.add_subcommand("gridsearch", "train over a grid of lr and batch size");
  grid_cmd->add_option("--task", grid.task, "age or gender")->required();
  grid_cmd->add_option("--grid", grid.grid_file,
                       "JSON grid file with lr and batch_size arrays");
  grid_cmd->add_option("--train", grid.train_manifest, "training manifest")->required();
  grid_cmd->add_option("--val", grid.val_manifest, "validation manifest")->required();
  grid_cmd->add_option("--spec", grid.spec, "'default' or a model spec JSON path");
  grid_cmd->add_option("--config", grid_config_file, "JSON config file for the base config");
  grid_cmd->add_option("--out", grid.out, "results CSV path")->required();
  add_train_config_flags(grid_cmd, grid.base);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitArgs;
  }

  try {
    if (*synth_cmd) return cmd_synth(synth);
    if (*prepare_cmd) return cmd_prepare(prepare);
    if (*split_cmd) return cmd_split(split);
    if (*train_cmd) return cmd_train(*train_cmd, train_args, train_config_file);
    if (*eval_cmd) return cmd_evaluate(eval_args);
    if (*predict_cmd) return cmd_predict(predict);
    if (*grid_cmd) return cmd_gridsearch(*grid_cmd, grid, grid_config_file);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const SearchExhaustedError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitExhausted;
  } catch (const DomainError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgs;
  } catch (const ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitArgs;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
  return kExitOk;
}
