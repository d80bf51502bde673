#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "visage/dataset.hpp"
#include "visage/model.hpp"
#include "visage/trainer.hpp"

using namespace visage;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

// Spawns the real binary; tests here exercise the process boundary, so
// everything observable is exit codes, streams, and files.
RunResult run_cli(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path();
  const std::string out_file = (dir / ("visage_cli_out_" + std::to_string(counter))).string();
  const std::string err_file = (dir / ("visage_cli_err_" + std::to_string(counter))).string();
  ++counter;

  const std::string cmd =
      std::string(VISAGE_CLI_PATH) + " " + args + " >" + out_file + " 2>" + err_file;
  const int raw = std::system(cmd.c_str());

  RunResult r;
  r.code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  auto slurp = [](const std::string& p) {
    std::ifstream is(p, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
  };
  r.out = slurp(out_file);
  r.err = slurp(err_file);
  std::remove(out_file.c_str());
  std::remove(err_file.c_str());
  return r;
}

std::string slurp_file(const std::string& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is.good());
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string tiny_spec_json(Task task) {
  if (task == Task::Age)
    return R"({"input_shape":[3,16,16],"task":"age","layers":[
      {"kind":"conv","out_channels":4,"kernel":3,"stride":1,"padding":1},
      {"kind":"relu"},{"kind":"maxpool","kernel":2,"stride":2},
      {"kind":"flatten"},{"kind":"dense","units":1},{"kind":"relu"}]})";
  return R"({"input_shape":[3,16,16],"task":"gender","layers":[
      {"kind":"conv","out_channels":4,"kernel":3,"stride":1,"padding":1},
      {"kind":"relu"},{"kind":"maxpool","kernel":2,"stride":2},
      {"kind":"flatten"},{"kind":"dense","units":2},{"kind":"softmax"}]})";
}

// Shared on-disk fixture: a synthetic image set with its manifest, a
// train/test split, and tiny model specs for both tasks.
struct Fixture {
  fs::path root;
  std::string images;
  std::string manifest;
  std::string train_manifest;
  std::string test_manifest;
  std::string age_spec;
  std::string gender_spec;

  Fixture() {
    root = fs::temp_directory_path() / "visage_test_cli";
    fs::remove_all(root);
    fs::create_directories(root);
    images = (root / "imgs").string();
    manifest = (root / "all.json").string();
    train_manifest = (root / "train.json").string();
    test_manifest = (root / "test.json").string();

    RunResult r = run_cli("synth --out-dir " + images + " --count 12 --seed 7 --manifest " +
                          manifest);
    REQUIRE(r.code == 0);
    r = run_cli("split --manifest " + manifest + " --train-frac 0.7 --seed 1 --out-train " +
                train_manifest + " --out-test " + test_manifest);
    REQUIRE(r.code == 0);

    age_spec = (root / "age_spec.json").string();
    gender_spec = (root / "gender_spec.json").string();
    std::ofstream(age_spec) << tiny_spec_json(Task::Age);
    std::ofstream(gender_spec) << tiny_spec_json(Task::Gender);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("help exits clean, bad usage exits 4") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("train --help").code == 0);
  CHECK(run_cli("definitely-not-a-command").code == 4);
  CHECK(run_cli("").code == 4);                          // a subcommand is required
  CHECK(run_cli("train --task age").code == 4);          // missing required flags
  CHECK(run_cli("prepare --input-dir /x --out /y --keep-frac abc").code == 4);
  CHECK(run_cli("synth --out-dir /tmp/x --count 1 --seed notanumber").code == 4);
}

TEST_CASE("synth writes decodable labeled images plus a sidecar") {
  Fixture& f = fixture();
  int pngs = 0;
  for (const auto& e : fs::directory_iterator(f.images))
    if (e.path().extension() == ".png") ++pngs;
  CHECK(pngs == 12);
  // The sidecar lives beside the image directory, not inside it, so the
  // directory stays cleanly ingestable.
  CHECK(fs::exists(f.images + ".config.json"));
  const json sidecar = json::parse(slurp_file(f.images + ".config.json"));
  CHECK(sidecar.at("command") == "synth");
  CHECK(sidecar.at("count") == 12);

  const json m = json::parse(slurp_file(f.manifest));
  CHECK(m.at("records").size() == 12);

  CHECK(run_cli("synth --out-dir " + (fixture().root / "none").string() +
                " --count 0 --seed 1")
            .code == 3);
}

TEST_CASE("prepare ingests a directory deterministically") {
  Fixture& f = fixture();
  const std::string out1 = (f.root / "prep1.json").string();
  const std::string out2 = (f.root / "prep2.json").string();

  const RunResult r1 = run_cli("prepare --input-dir " + f.images + " --out " + out1 +
                               " --keep-frac 0.5 --seed 3");
  CHECK(r1.code == 0);
  CHECK(r1.out.find("ingest:") != std::string::npos);
  CHECK(r1.out.find("filter_gender:") != std::string::npos);
  CHECK(r1.out.find("rebalance_age:") != std::string::npos);
  CHECK(r1.out.find("age histogram") != std::string::npos);
  CHECK(r1.err.find("config ") != std::string::npos);
  CHECK(fs::exists(out1 + ".config.json"));

  const RunResult r2 = run_cli("prepare --input-dir " + f.images + " --out " + out2 +
                               " --keep-frac 0.5 --seed 3");
  CHECK(r2.code == 0);
  CHECK(slurp_file(out1) == slurp_file(out2));

  const json m = json::parse(slurp_file(out1));
  CHECK(m.at("steps").size() == 3);
  CHECK(m.at("steps")[0].at("name") == "ingest");
}

TEST_CASE("prepare with nothing left after filtering exits 3") {
  const fs::path dir = fixture().root / "all_invalid";
  fs::create_directories(dir);
  std::ofstream(dir / "10_3_0_1.jpg") << "x";
  std::ofstream(dir / "12_3_0_2.jpg") << "x";
  const RunResult r = run_cli("prepare --input-dir " + dir.string() + " --out " +
                              (fixture().root / "empty.json").string());
  CHECK(r.code == 3);
}

TEST_CASE("prepare on a missing directory exits 2") {
  CHECK(run_cli("prepare --input-dir /no/such/dir --out /tmp/x.json").code == 2);
}

TEST_CASE("split is deterministic and validates its fraction") {
  Fixture& f = fixture();
  const json train = json::parse(slurp_file(f.train_manifest));
  const json test = json::parse(slurp_file(f.test_manifest));
  CHECK(train.at("records").size() == 8);  // round(0.7 * 12)
  CHECK(test.at("records").size() == 4);

  const std::string t2 = (f.root / "train2.json").string();
  const std::string v2 = (f.root / "test2.json").string();
  const RunResult r = run_cli("split --manifest " + f.manifest +
                              " --train-frac 0.7 --seed 1 --out-train " + t2 + " --out-test " +
                              v2);
  CHECK(r.code == 0);
  CHECK(slurp_file(f.train_manifest) == slurp_file(t2));
  CHECK(slurp_file(f.test_manifest) == slurp_file(v2));

  CHECK(run_cli("split --manifest " + f.manifest +
                " --train-frac 0.99 --seed 1 --out-train " + t2 + " --out-test " + v2)
            .code == 4);
  CHECK(run_cli("split --manifest /no/such.json --train-frac 0.7 --out-train " + t2 +
                " --out-test " + v2)
            .code == 2);

  const std::string corrupt = (f.root / "corrupt.json").string();
  std::ofstream(corrupt) << "{ nope";
  CHECK(run_cli("split --manifest " + corrupt + " --train-frac 0.7 --out-train " + t2 +
                " --out-test " + v2)
            .code == 2);
}

TEST_CASE("train writes a checkpoint, a log, and its effective config") {
  Fixture& f = fixture();
  const std::string ckpt = (f.root / "gender.ckpt").string();
  const std::string log = (f.root / "gender_log.csv").string();
  const RunResult r = run_cli("train --task gender --train " + f.train_manifest + " --val " +
                              f.test_manifest + " --spec " + f.gender_spec +
                              " --lr 0.001 --epochs 2 --batch-size 4 --seed 5 --out " + ckpt +
                              " --log " + log);
  CHECK(r.code == 0);
  CHECK(r.out.find("trained 2 epochs") != std::string::npos);

  const Checkpoint back = load_checkpoint(ckpt);
  CHECK(back.spec.task() == Task::Gender);
  CHECK(back.epoch == 2);
  CHECK(back.seed == 5);

  std::istringstream ls(slurp_file(log));
  std::string line;
  std::getline(ls, line);
  CHECK(line == "epoch,train_loss,val_metric,seconds");
  int rows = 0;
  while (std::getline(ls, line))
    if (!line.empty()) ++rows;
  CHECK(rows == 2);

  const json sidecar = json::parse(slurp_file(ckpt + ".config.json"));
  CHECK(sidecar.at("command") == "train");
  CHECK(sidecar.at("lr") == 0.001);
  CHECK(sidecar.at("max_epochs") == 2);
}

TEST_CASE("train refuses a spec whose task disagrees") {
  Fixture& f = fixture();
  const RunResult r = run_cli("train --task age --train " + f.train_manifest + " --val " +
                              f.test_manifest + " --spec " + f.gender_spec + " --out " +
                              (f.root / "bad.ckpt").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("gender") != std::string::npos);
  CHECK(r.err.find("age") != std::string::npos);
}

TEST_CASE("config file fills gaps but explicit flags win") {
  Fixture& f = fixture();
  const std::string cfg = (f.root / "cfg.json").string();
  std::ofstream(cfg) << R"({"lr": 0.5, "max_epochs": 3})";
  const std::string ckpt = (f.root / "overlay.ckpt").string();

  // --lr on the command line beats the file; max_epochs comes from the file.
  const RunResult r = run_cli("train --task gender --train " + f.train_manifest + " --val " +
                              f.test_manifest + " --spec " + f.gender_spec + " --config " + cfg +
                              " --lr 0.001 --batch-size 4 --out " + ckpt);
  CHECK(r.code == 0);
  CHECK(r.out.find("trained 3 epochs") != std::string::npos);
  const json sidecar = json::parse(slurp_file(ckpt + ".config.json"));
  CHECK(sidecar.at("lr") == 0.001);
  CHECK(sidecar.at("max_epochs") == 3);

  const std::string bad_key = (f.root / "bad_key.json").string();
  std::ofstream(bad_key) << R"({"learning_rate": 0.5})";
  CHECK(run_cli("train --task gender --train " + f.train_manifest + " --val " +
                f.test_manifest + " --spec " + f.gender_spec + " --config " + bad_key +
                " --out " + ckpt)
            .code == 4);

  const std::string bad_json = (f.root / "bad_json.json").string();
  std::ofstream(bad_json) << "{";
  CHECK(run_cli("train --task gender --train " + f.train_manifest + " --val " +
                f.test_manifest + " --spec " + f.gender_spec + " --config " + bad_json +
                " --out " + ckpt)
            .code == 2);
}

TEST_CASE("evaluate writes the report family and prints the tables") {
  Fixture& f = fixture();
  const std::string ckpt = (f.root / "eval_gender.ckpt").string();
  REQUIRE(run_cli("train --task gender --train " + f.train_manifest + " --val " +
                  f.test_manifest + " --spec " + f.gender_spec +
                  " --lr 0.001 --epochs 2 --batch-size 4 --out " + ckpt)
              .code == 0);

  const std::string report = (f.root / "report.json").string();
  const RunResult r = run_cli("evaluate --task gender --checkpoint " + ckpt + " --manifest " +
                              f.manifest + " --report " + report);
  CHECK(r.code == 0);
  CHECK(r.out.find("accuracy") != std::string::npos);

  const json j = json::parse(slurp_file(report));
  CHECK(j.at("task") == "gender");
  CHECK(j.at("n") == 12);
  CHECK(j.contains("confusion_matrix"));
  CHECK(j.at("confusion_matrix").size() == 2);
  CHECK_FALSE(j.contains("thresholds"));  // +inf has no JSON encoding
  CHECK(fs::exists(report + ".txt"));
  CHECK(fs::exists(report + ".roc.csv"));
  const std::string roc = slurp_file(report + ".roc.csv");
  CHECK(roc.substr(0, 18) == "threshold,fpr,tpr\n");
  CHECK(roc.find("inf,") != std::string::npos);
  CHECK(fs::exists(report + ".config.json"));

  // Task mismatch against the checkpoint is an input error.
  CHECK(run_cli("evaluate --task age --checkpoint " + ckpt + " --manifest " + f.manifest +
                " --report " + report)
            .code == 2);
  CHECK(run_cli("evaluate --task gender --checkpoint /no/such.ckpt --manifest " + f.manifest +
                " --report " + report)
            .code == 2);
}

TEST_CASE("evaluating gender against a single-class manifest exits 4") {
  Fixture& f = fixture();
  // Rewrite the manifest with every record labeled male; the ranking
  // curve is undefined then.
  Manifest m = read_manifest(f.manifest);
  Manifest single;
  single.seed = m.seed;
  for (FaceRecord r : m.records) {
    r.gender = 0;
    r.raw_gender = 0;
    single.records.push_back(r);
  }
  const std::string path = (f.root / "single_class.json").string();
  write_manifest(path, single);

  const std::string ckpt = (f.root / "single.ckpt").string();
  REQUIRE(run_cli("train --task gender --train " + f.train_manifest + " --val " +
                  f.test_manifest + " --spec " + f.gender_spec +
                  " --lr 0.001 --epochs 1 --batch-size 4 --out " + ckpt)
              .code == 0);
  CHECK(run_cli("evaluate --task gender --checkpoint " + ckpt + " --manifest " + path +
                " --report " + (f.root / "single_report.json").string())
            .code == 4);
}

TEST_CASE("predict with zero weights prints the neutral line exactly") {
  Fixture& f = fixture();
  const std::string age_ckpt = (f.root / "zero_age.ckpt").string();
  const std::string gender_ckpt = (f.root / "zero_gender.ckpt").string();
  const ModelSpec age = model_spec_from_json_text(tiny_spec_json(Task::Age));
  const ModelSpec gender = model_spec_from_json_text(tiny_spec_json(Task::Gender));
  TrainConfig cfg;
  save_checkpoint(age_ckpt, Checkpoint{age, zero_params(age), cfg, 0, 0});
  save_checkpoint(gender_ckpt, Checkpoint{gender, zero_params(gender), cfg, 0, 0});

  const std::string image = (fs::path(f.images) / fs::directory_iterator(f.images)
                                                      ->path()
                                                      .filename())
                                .string();
  const RunResult r = run_cli("predict --image " + image + " --age-checkpoint " + age_ckpt +
                              " --gender-checkpoint " + gender_ckpt);
  CHECK(r.code == 0);
  CHECK(r.out == "age 0.0, gender 0, p 0.500\n");

  // Swapped checkpoints are caught by task, missing image by decode.
  CHECK(run_cli("predict --image " + image + " --age-checkpoint " + gender_ckpt +
                " --gender-checkpoint " + gender_ckpt)
            .code == 2);
  CHECK(run_cli("predict --image /no/such.png --age-checkpoint " + age_ckpt +
                " --gender-checkpoint " + gender_ckpt)
            .code == 2);
}

TEST_CASE("gridsearch writes one csv row per cell and names the winner") {
  Fixture& f = fixture();
  const std::string grid = (f.root / "grid.json").string();
  std::ofstream(grid) << R"({"lr": [0.001], "batch_size": [4]})";
  const std::string out = (f.root / "grid.csv").string();

  const RunResult r = run_cli("gridsearch --task gender --grid " + grid + " --train " +
                              f.train_manifest + " --val " + f.test_manifest + " --spec " +
                              f.gender_spec + " --epochs 2 --out " + out);
  CHECK(r.code == 0);
  CHECK(r.out.find("best lr 0.001 batch_size 4") != std::string::npos);

  std::istringstream is(slurp_file(out));
  std::string line;
  std::getline(is, line);
  CHECK(line == "lr,batch_size,val_metric,epochs,seconds,status");
  std::getline(is, line);
  CHECK(line.substr(0, 8) == "0.001,4,");
  CHECK(line.find(",ok") != std::string::npos);
  CHECK_FALSE(std::getline(is, line));

  const std::string bad = (f.root / "bad_grid.json").string();
  std::ofstream(bad) << R"({"lr": "fast"})";
  CHECK(run_cli("gridsearch --task gender --grid " + bad + " --train " + f.train_manifest +
                " --val " + f.test_manifest + " --spec " + f.gender_spec + " --out " + out)
            .code == 2);
}

TEST_CASE("a diverging train run exits 5") {
  Fixture& f = fixture();
  const RunResult r = run_cli("train --task gender --train " + f.train_manifest + " --val " +
                              f.test_manifest + " --spec " + f.gender_spec +
                              " --lr 1e30 --epochs 3 --batch-size 4 --out " +
                              (f.root / "diverge.ckpt").string());
  CHECK(r.code == 5);
}

TEST_CASE("a gridsearch with no finishing cell exits 6") {
  Fixture& f = fixture();
  const std::string grid = (f.root / "grid_all_fail.json").string();
  std::ofstream(grid) << R"({"lr": [1e30], "batch_size": [4]})";
  const RunResult r = run_cli("gridsearch --task gender --grid " + grid + " --train " +
                              f.train_manifest + " --val " + f.test_manifest + " --spec " +
                              f.gender_spec + " --epochs 2 --out " +
                              (f.root / "grid_fail.csv").string());
  CHECK(r.code == 6);
}

TEST_CASE("thread count flag is accepted") {
  Fixture& f = fixture();
  const std::string out = (f.root / "threads.json").string();
  CHECK(run_cli("--threads 1 prepare --input-dir " + f.images + " --out " + out).code == 0);
  CHECK(run_cli("--threads 0 prepare --input-dir " + f.images + " --out " + out).code == 4);
}
