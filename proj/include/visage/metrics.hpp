#ifndef VISAGE_METRICS_HPP
#define VISAGE_METRICS_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "visage/dataset.hpp"
#include "visage/model.hpp"

namespace visage {

double rmse(const std::vector<double>& y, const std::vector<double>& yhat);
double mae(const std::vector<double>& y, const std::vector<double>& yhat);

/// counts[true class][predicted class] for the binary classes {0,1}.
struct ConfusionMatrix {
  std::array<std::array<std::int64_t, 2>, 2> counts{};

  static ConfusionMatrix from_pairs(const std::vector<int>& labels,
                                    const std::vector<int>& preds);
  /// Rows divided by their sums; an all-zero row stays all-zero.
  std::array<std::array<double, 2>, 2> normalized() const;
  std::int64_t total() const;
  std::int64_t support(int cls) const;
};

struct ClassStats {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  std::int64_t support = 0;
};

struct ClassificationReport {
  std::array<ClassStats, 2> per_class{};
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
};

/// Precision/recall/F1 use the 0-when-undefined convention (a zero
/// denominator yields 0, never an error).
ClassificationReport classification_report(const ConfusionMatrix& cm);

/// Threshold sweep over the distinct scores in descending order. Points
/// run from (0,0) to (1,1); thresholds[0] is +infinity.
struct RocCurve {
  std::vector<double> thresholds;
  std::vector<double> fpr, tpr;
  double auc = 0;
};

/// scores are the predicted probability of class 1. Throws DomainError
/// unless both classes appear in labels.
RocCurve roc_auc(const std::vector<int>& labels, const std::vector<double>& scores);

struct DecadeMae {
  int decade = 0;  // lower bound of the 10-year bin
  double mae = 0;
  std::int64_t n = 0;
};

struct RegressionReport {
  double mse = 0;
  double rmse = 0;
  double mae = 0;
  std::int64_t n = 0;
  std::vector<DecadeMae> mae_by_decade;
};

struct EvalReport {
  Task task = Task::Age;
  RegressionReport regression;
  ConfusionMatrix cm;
  ClassificationReport classification;
  RocCurve roc;
};

/// Forward pass over every record in the manifest, then the task's full
/// metric set. Gender predictions take the argmax class, class 0 on ties.
EvalReport evaluate(Task task, const ModelSpec& spec, const Params& params, const Manifest& m,
                    int batch_size = 32);

nlohmann::json eval_report_to_json(const EvalReport& r);
/// Plain-text tables: classification at 2 decimals, regression at 4.
std::string render_text_report(const EvalReport& r);
/// "threshold,fpr,tpr" rows; the first threshold renders as "inf".
std::string roc_to_csv(const RocCurve& roc);

}  // namespace visage

#endif
