#include "visage/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <limits>
#include <map>

#include "visage/errors.hpp"

namespace visage {

namespace {

void check_pair_sizes(std::size_t a, std::size_t b, const char* what) {
  if (a == 0) throw DomainError(std::string(what) + ": empty input");
  if (a != b) throw DomainError(std::string(what) + ": length mismatch");
}

}  // namespace

double rmse(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_pair_sizes(y.size(), yhat.size(), "rmse");
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(y.size()));
}

double mae(const std::vector<double>& y, const std::vector<double>& yhat) {
  check_pair_sizes(y.size(), yhat.size(), "mae");
  double acc = 0;
  for (std::size_t i = 0; i < y.size(); ++i) acc += std::fabs(y[i] - yhat[i]);
  return acc / static_cast<double>(y.size());
}

ConfusionMatrix ConfusionMatrix::from_pairs(const std::vector<int>& labels,
                                            const std::vector<int>& preds) {
  check_pair_sizes(labels.size(), preds.size(), "confusion matrix");
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = preds[i];
    if (t < 0 || t > 1 || p < 0 || p > 1)
      throw DomainError("confusion matrix: class out of range, got " + std::to_string(t) +
                        "/" + std::to_string(p));
    ++cm.counts[t][p];
  }
  return cm;
}

std::array<std::array<double, 2>, 2> ConfusionMatrix::normalized() const {
  std::array<std::array<double, 2>, 2> out{};
  for (int t = 0; t < 2; ++t) {
    const std::int64_t row = counts[t][0] + counts[t][1];
    if (row == 0) continue;
    for (int p = 0; p < 2; ++p)
      out[t][p] = static_cast<double>(counts[t][p]) / static_cast<double>(row);
  }
  return out;
}

std::int64_t ConfusionMatrix::total() const {
  return counts[0][0] + counts[0][1] + counts[1][0] + counts[1][1];
}

std::int64_t ConfusionMatrix::support(int cls) const {
  if (cls < 0 || cls > 1) throw DomainError("confusion matrix: class out of range");
  return counts[cls][0] + counts[cls][1];
}

ClassificationReport classification_report(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (total == 0) throw DomainError("classification report: empty confusion matrix");

  auto ratio = [](std::int64_t num, std::int64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
  };

  ClassificationReport r;
  for (int c = 0; c < 2; ++c) {
    const std::int64_t tp = cm.counts[c][c];
    const std::int64_t pred_c = cm.counts[0][c] + cm.counts[1][c];
    ClassStats& s = r.per_class[c];
    s.support = cm.support(c);
    s.precision = ratio(tp, pred_c);
    s.recall = ratio(tp, s.support);
    s.f1 = (s.precision + s.recall) == 0
               ? 0.0
               : 2 * s.precision * s.recall / (s.precision + s.recall);
  }
  r.accuracy = ratio(cm.counts[0][0] + cm.counts[1][1], total);

  r.macro_precision = (r.per_class[0].precision + r.per_class[1].precision) / 2;
  r.macro_recall = (r.per_class[0].recall + r.per_class[1].recall) / 2;
  r.macro_f1 = (r.per_class[0].f1 + r.per_class[1].f1) / 2;

  for (int c = 0; c < 2; ++c) {
    const double w = static_cast<double>(r.per_class[c].support) / static_cast<double>(total);
    r.weighted_precision += w * r.per_class[c].precision;
    r.weighted_recall += w * r.per_class[c].recall;
    r.weighted_f1 += w * r.per_class[c].f1;
  }
  return r;
}

RocCurve roc_auc(const std::vector<int>& labels, const std::vector<double>& scores) {
  check_pair_sizes(labels.size(), scores.size(), "roc");
  std::int64_t pos = 0, neg = 0;
  for (int t : labels) {
    if (t < 0 || t > 1) throw DomainError("roc: class out of range");
    (t == 1 ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0)
    throw DomainError("roc: needs at least one sample of each class");

  std::vector<std::size_t> order(labels.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  RocCurve roc;
  roc.thresholds.push_back(std::numeric_limits<double>::infinity());
  roc.fpr.push_back(0);
  roc.tpr.push_back(0);

  // Sweep the threshold down through the distinct score values; each
  // point counts every sample scoring >= that threshold as positive.
  std::int64_t tp = 0, fp = 0;
  double auc = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double cut = scores[order[i]];
    while (i < order.size() && scores[order[i]] == cut) {
      (labels[order[i]] == 1 ? tp : fp) += 1;
      ++i;
    }
    const double x = static_cast<double>(fp) / static_cast<double>(neg);
    const double y = static_cast<double>(tp) / static_cast<double>(pos);
    auc += (x - roc.fpr.back()) * (y + roc.tpr.back()) / 2;
    roc.thresholds.push_back(cut);
    roc.fpr.push_back(x);
    roc.tpr.push_back(y);
  }
  roc.auc = auc;
  return roc;
}

namespace {

RegressionReport regression_report(const std::vector<double>& y,
                                   const std::vector<double>& yhat) {
  RegressionReport r;
  r.n = static_cast<std::int64_t>(y.size());
  r.rmse = rmse(y, yhat);
  r.mse = 0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const double d = y[i] - yhat[i];
    r.mse += d * d;
  }
  r.mse /= static_cast<double>(y.size());
  r.mae = mae(y, yhat);

  std::map<int, std::pair<double, std::int64_t>> bins;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const int decade = static_cast<int>(y[i] / 10) * 10;
    auto& b = bins[decade];
    b.first += std::fabs(y[i] - yhat[i]);
    b.second += 1;
  }
  for (const auto& [decade, b] : bins)
    r.mae_by_decade.push_back({decade, b.first / static_cast<double>(b.second), b.second});
  return r;
}

}  // namespace

EvalReport evaluate(Task task, const ModelSpec& spec, const Params& params, const Manifest& m,
                    int batch_size) {
  if (spec.task() != task)
    throw DomainError("evaluate: model is a " + task_name(spec.task()) + " model, asked for " +
                      task_name(task));
  if (m.records.empty()) throw DomainError("evaluate: empty manifest");
  if (batch_size < 1) throw DomainError("evaluate: batch_size must be >= 1");

  const Shape& in = spec.input_shape();
  if (in[0] != 3)
    throw DomainError("evaluate: model expects " + std::to_string(in[0]) +
                      " input channels, images have 3");
  const std::size_t sample_sz = static_cast<std::size_t>(in[0]) * in[1] * in[2];

  std::vector<double> ages, age_preds;
  std::vector<int> labels, preds;
  std::vector<double> scores;

  const std::size_t n = m.records.size();
  for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
    const std::size_t b = std::min(n - start, static_cast<std::size_t>(batch_size));
    Tensor batch({static_cast<int>(b), in[0], in[1], in[2]});
    for (std::size_t i = 0; i < b; ++i) {
      const Tensor img = normalize(load_image_tensor(m.records[start + i], in[1], in[2]));
      std::copy(img.data(), img.data() + sample_sz, batch.data() + i * sample_sz);
    }
    const Tensor out = forward(spec, params, batch);
    for (std::size_t i = 0; i < b; ++i) {
      const FaceRecord& rec = m.records[start + i];
      if (task == Task::Age) {
        ages.push_back(rec.age);
        age_preds.push_back(out[i]);
      } else {
        const double p1 = out[i * 2 + 1];
        labels.push_back(rec.gender);
        preds.push_back(p1 > out[i * 2] ? 1 : 0);
        scores.push_back(p1);
      }
    }
  }

  EvalReport r;
  r.task = task;
  if (task == Task::Age) {
    r.regression = regression_report(ages, age_preds);
  } else {
    r.cm = ConfusionMatrix::from_pairs(labels, preds);
    r.classification = classification_report(r.cm);
    r.roc = roc_auc(labels, scores);
  }
  return r;
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["task"] = task_name(r.task);
  j["n"] = r.task == Task::Age ? r.regression.n : r.cm.total();
  if (r.task == Task::Age) {
    nlohmann::json reg;
    reg["mse"] = r.regression.mse;
    reg["rmse"] = r.regression.rmse;
    reg["mae"] = r.regression.mae;
    nlohmann::json decades = nlohmann::json::array();
    for (const DecadeMae& d : r.regression.mae_by_decade)
      decades.push_back({{"decade", d.decade}, {"mae", d.mae}, {"n", d.n}});
    reg["mae_by_decade"] = decades;
    j["regression"] = reg;
  } else {
    j["confusion_matrix"] = {{r.cm.counts[0][0], r.cm.counts[0][1]},
                             {r.cm.counts[1][0], r.cm.counts[1][1]}};
    const auto norm = r.cm.normalized();
    j["confusion_matrix_normalized"] = {{norm[0][0], norm[0][1]}, {norm[1][0], norm[1][1]}};
    nlohmann::json per = nlohmann::json::array();
    for (int c = 0; c < 2; ++c) {
      const ClassStats& s = r.classification.per_class[c];
      per.push_back({{"class", c},
                     {"precision", s.precision},
                     {"recall", s.recall},
                     {"f1", s.f1},
                     {"support", s.support}});
    }
    j["classification"] = {
        {"per_class", per},
        {"accuracy", r.classification.accuracy},
        {"macro", {{"precision", r.classification.macro_precision},
                   {"recall", r.classification.macro_recall},
                   {"f1", r.classification.macro_f1}}},
        {"weighted", {{"precision", r.classification.weighted_precision},
                      {"recall", r.classification.weighted_recall},
                      {"f1", r.classification.weighted_f1}}}};
    // Thresholds start at +infinity, which JSON cannot carry; the ROC CSV
    // keeps them instead.
    j["roc"] = {{"fpr", r.roc.fpr}, {"tpr", r.roc.tpr}, {"auc", r.roc.auc}};
  }
  return j;
}

namespace {

void appendf(std::string& out, const char* fmt, ...) {
  char buf[256];
  va_list ap;
  va_start(ap, fmt);
  std::vsnprintf(buf, sizeof buf, fmt, ap);
  va_end(ap);
  out += buf;
}

}  // namespace

std::string render_text_report(const EvalReport& r) {
  std::string out;
  if (r.task == Task::Age) {
    appendf(out, "age regression on %lld samples\n", static_cast<long long>(r.regression.n));
    appendf(out, "  mse   %.4f\n", r.regression.mse);
    appendf(out, "  rmse  %.4f\n", r.regression.rmse);
    appendf(out, "  mae   %.4f\n", r.regression.mae);
    out += "  mae by decade\n";
    for (const DecadeMae& d : r.regression.mae_by_decade)
      appendf(out, "    %3d-%3d  %.4f  (n=%lld)\n", d.decade, d.decade + 9, d.mae,
              static_cast<long long>(d.n));
    return out;
  }

  appendf(out, "gender classification on %lld samples\n",
          static_cast<long long>(r.cm.total()));
  out += "  confusion matrix (rows = true, cols = predicted)\n";
  appendf(out, "            male  female\n");
  appendf(out, "    male   %5lld  %5lld\n", static_cast<long long>(r.cm.counts[0][0]),
          static_cast<long long>(r.cm.counts[0][1]));
  appendf(out, "    female %5lld  %5lld\n", static_cast<long long>(r.cm.counts[1][0]),
          static_cast<long long>(r.cm.counts[1][1]));
  out += "\n  class     precision  recall  f1    support\n";
  static const char* kNames[2] = {"male", "female"};
  for (int c = 0; c < 2; ++c) {
    const ClassStats& s = r.classification.per_class[c];
    appendf(out, "  %-8s  %.2f       %.2f    %.2f  %lld\n", kNames[c], s.precision, s.recall,
            s.f1, static_cast<long long>(s.support));
  }
  appendf(out, "\n  accuracy  %.2f\n", r.classification.accuracy);
  appendf(out, "  macro     %.2f       %.2f    %.2f\n", r.classification.macro_precision,
          r.classification.macro_recall, r.classification.macro_f1);
  appendf(out, "  weighted  %.2f       %.2f    %.2f\n", r.classification.weighted_precision,
          r.classification.weighted_recall, r.classification.weighted_f1);
  appendf(out, "  auc       %.4f\n", r.roc.auc);
  return out;
}

std::string roc_to_csv(const RocCurve& roc) {
  std::string out = "threshold,fpr,tpr\n";
  for (std::size_t i = 0; i < roc.fpr.size(); ++i) {
    if (std::isinf(roc.thresholds[i]))
      out += "inf";
    else
      appendf(out, "%.9g", roc.thresholds[i]);
    appendf(out, ",%.9g,%.9g\n", roc.fpr[i], roc.tpr[i]);
  }
  return out;
}

}  // namespace visage
