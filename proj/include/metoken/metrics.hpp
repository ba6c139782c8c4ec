#pragma once

#include <string>
#include <vector>

namespace metoken::metrics {

struct PerClass {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  double auroc = 0.0;
  double auprc = 0.0;
  bool auc_defined = false;  // class has at least one positive and one negative
};

struct EvalReport {
  int num_classes = 0;
  long n_samples = 0;
  std::vector<std::vector<long>> confusion;  // [true][pred]
  double accuracy = 0.0;
  double macro_precision = 0.0;
  double macro_recall = 0.0;
  double macro_f1 = 0.0;
  double macro_mcc = 0.0;
  double macro_auroc = 0.0;
  double macro_auprc = 0.0;
  std::vector<PerClass> per_class;
  std::vector<int> skipped_auc_classes;  // no positives or no negatives in y_true

  std::string to_json() const;
  std::string to_table() const;
};

std::vector<std::vector<long>> confusion_matrix(const std::vector<int>& y_true,
                                                const std::vector<int>& y_pred, int num_classes);

struct MacroScores {
  double precision, recall, f1, mcc;
  std::vector<PerClass> per_class;
};
// One-vs-rest counts per class; degenerate 0/0 scores are defined as 0 and
// kept in the macro mean.
MacroScores macro_scores(const std::vector<std::vector<long>>& confusion);

// One-vs-rest ROC area, trapezoid over tie-grouped thresholds; equals the
// pairwise Mann-Whitney statistic. Classes lacking positives or negatives
// are skipped and reported.
double auroc_macro(const std::vector<int>& y_true, const std::vector<std::vector<double>>& scores,
                   std::vector<double>* per_class = nullptr,
                   std::vector<int>* skipped = nullptr);

// One-vs-rest precision-recall area by the step-wise sum of
// (recall increment) * precision over descending tie-grouped thresholds.
double auprc_macro(const std::vector<int>& y_true, const std::vector<std::vector<double>>& scores,
                   std::vector<double>* per_class = nullptr,
                   std::vector<int>* skipped = nullptr);

EvalReport evaluate(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                    const std::vector<std::vector<double>>& scores, int num_classes);

}  // namespace metoken::metrics
