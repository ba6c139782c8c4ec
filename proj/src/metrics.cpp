#include "metoken/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "metoken/common.hpp"

namespace metoken::metrics {

std::vector<std::vector<long>> confusion_matrix(const std::vector<int>& y_true,
                                                const std::vector<int>& y_pred, int num_classes) {
  if (y_true.size() != y_pred.size())
    throw DatasetError("confusion_matrix: label vectors differ in length");
  std::vector<std::vector<long>> m(size_t(num_classes), std::vector<long>(size_t(num_classes), 0));
  for (size_t i = 0; i < y_true.size(); ++i) {
    int t = y_true[i], p = y_pred[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw DatasetError("confusion_matrix: class id out of range at sample " + std::to_string(i));
    m[size_t(t)][size_t(p)] += 1;
  }
  return m;
}

MacroScores macro_scores(const std::vector<std::vector<long>>& confusion) {
  size_t K = confusion.size();
  long total = 0;
  std::vector<long> row_sum(K, 0), col_sum(K, 0);
  for (size_t t = 0; t < K; ++t)
    for (size_t p = 0; p < K; ++p) {
      row_sum[t] += confusion[t][p];
      col_sum[p] += confusion[t][p];
      total += confusion[t][p];
    }

  MacroScores out{0, 0, 0, 0, {}};
  out.per_class.resize(K);
  for (size_t k = 0; k < K; ++k) {
    double tp = double(confusion[k][k]);
    double fp = double(col_sum[k]) - tp;
    double fn = double(row_sum[k]) - tp;
    double tn = double(total) - tp - fp - fn;
    PerClass& pc = out.per_class[k];
    pc.precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
    pc.recall = (tp + fn) > 0 ? tp / (tp + fn) : 0.0;
    pc.f1 = (pc.precision + pc.recall) > 0
                ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall)
                : 0.0;
    double denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    pc.mcc = denom > 0 ? (tp * tn - fp * fn) / std::sqrt(denom) : 0.0;
    out.precision += pc.precision;
    out.recall += pc.recall;
    out.f1 += pc.f1;
    out.mcc += pc.mcc;
  }
  if (K > 0) {
    out.precision /= double(K);
    out.recall /= double(K);
    out.f1 /= double(K);
    out.mcc /= double(K);
  }
  return out;
}

namespace {

// Returns positions sorted by score descending, grouped later by equal score.
std::vector<size_t> sort_by_score_desc(const std::vector<double>& s) {
  std::vector<size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return s[a] > s[b]; });
  return order;
}

double auroc_one(const std::vector<char>& is_pos, const std::vector<double>& score) {
  long n_pos = std::count(is_pos.begin(), is_pos.end(), char(1));
  long n_neg = long(is_pos.size()) - n_pos;
  std::vector<size_t> order = sort_by_score_desc(score);
  double area = 0.0;
  double tp = 0, fp = 0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    long d_tp = 0, d_fp = 0;
    while (j < order.size() && score[order[j]] == score[order[i]]) {
      if (is_pos[order[j]]) ++d_tp;
      else ++d_fp;
      ++j;
    }
    double tpr0 = tp / double(n_pos), fpr0 = fp / double(n_neg);
    tp += double(d_tp);
    fp += double(d_fp);
    double tpr1 = tp / double(n_pos), fpr1 = fp / double(n_neg);
    area += (fpr1 - fpr0) * 0.5 * (tpr0 + tpr1);
    i = j;
  }
  return area;
}

double auprc_one(const std::vector<char>& is_pos, const std::vector<double>& score) {
  long n_pos = std::count(is_pos.begin(), is_pos.end(), char(1));
  std::vector<size_t> order = sort_by_score_desc(score);
  double area = 0.0;
  double tp = 0, fp = 0, prev_recall = 0.0;
  size_t i = 0;
  while (i < order.size()) {
    size_t j = i;
    long d_tp = 0, d_fp = 0;
    while (j < order.size() && score[order[j]] == score[order[i]]) {
      if (is_pos[order[j]]) ++d_tp;
      else ++d_fp;
      ++j;
    }
    tp += double(d_tp);
    fp += double(d_fp);
    double recall = tp / double(n_pos);
    double precision = (tp + fp) > 0 ? tp / (tp + fp) : 0.0;
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
    i = j;
  }
  return area;
}

template <typename F>
double macro_over_classes(const std::vector<int>& y_true,
                          const std::vector<std::vector<double>>& scores,
                          std::vector<double>* per_class, std::vector<int>* skipped, F f) {
  if (y_true.empty()) throw DatasetError("auc: empty input");
  size_t K = scores[0].size();
  if (per_class) per_class->assign(K, 0.0);
  if (skipped) skipped->clear();
  double acc = 0.0;
  int used = 0;
  for (size_t k = 0; k < K; ++k) {
    std::vector<char> is_pos(y_true.size());
    std::vector<double> score(y_true.size());
    long n_pos = 0;
    for (size_t i = 0; i < y_true.size(); ++i) {
      is_pos[i] = y_true[i] == int(k) ? 1 : 0;
      n_pos += is_pos[i];
      score[i] = scores[i][k];
      if (!std::isfinite(score[i])) throw DatasetError("auc: non-finite score");
    }
    if (n_pos == 0 || n_pos == long(y_true.size())) {
      if (skipped) skipped->push_back(int(k));
      continue;
    }
    double v = f(is_pos, score);
    if (per_class) (*per_class)[k] = v;
    acc += v;
    ++used;
  }
  return used > 0 ? acc / double(used) : 0.0;
}

}  // namespace

double auroc_macro(const std::vector<int>& y_true, const std::vector<std::vector<double>>& scores,
                   std::vector<double>* per_class, std::vector<int>* skipped) {
  return macro_over_classes(y_true, scores, per_class, skipped, auroc_one);
}

double auprc_macro(const std::vector<int>& y_true, const std::vector<std::vector<double>>& scores,
                   std::vector<double>* per_class, std::vector<int>* skipped) {
  return macro_over_classes(y_true, scores, per_class, skipped, auprc_one);
}

EvalReport evaluate(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                    const std::vector<std::vector<double>>& scores, int num_classes) {
  if (y_true.empty()) throw DatasetError("evaluate: empty input");
  if (y_true.size() != y_pred.size() || y_true.size() != scores.size())
    throw DatasetError("evaluate: inconsistent input lengths");
  for (const auto& row : scores)
    if (row.size() != size_t(num_classes))
      throw DatasetError("evaluate: score row width != num_classes");

  EvalReport rep;
  rep.num_classes = num_classes;
  rep.n_samples = long(y_true.size());
  rep.confusion = confusion_matrix(y_true, y_pred, num_classes);
  long correct = 0;
  for (int k = 0; k < num_classes; ++k) correct += rep.confusion[size_t(k)][size_t(k)];
  rep.accuracy = double(correct) / double(rep.n_samples);

  MacroScores ms = macro_scores(rep.confusion);
  rep.macro_precision = ms.precision;
  rep.macro_recall = ms.recall;
  rep.macro_f1 = ms.f1;
  rep.macro_mcc = ms.mcc;
  rep.per_class = std::move(ms.per_class);

  std::vector<double> pc_auroc, pc_auprc;
  rep.macro_auroc = auroc_macro(y_true, scores, &pc_auroc, &rep.skipped_auc_classes);
  rep.macro_auprc = auprc_macro(y_true, scores, &pc_auprc, nullptr);
  for (int k = 0; k < num_classes; ++k) {
    bool skipped = std::find(rep.skipped_auc_classes.begin(), rep.skipped_auc_classes.end(), k) !=
                   rep.skipped_auc_classes.end();
    rep.per_class[size_t(k)].auc_defined = !skipped;
    rep.per_class[size_t(k)].auroc = pc_auroc[size_t(k)];
    rep.per_class[size_t(k)].auprc = pc_auprc[size_t(k)];
  }
  return rep;
}

std::string EvalReport::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes;
  j["n_samples"] = n_samples;
  j["accuracy"] = accuracy;
  j["macro_precision"] = macro_precision;
  j["macro_recall"] = macro_recall;
  j["macro_f1"] = macro_f1;
  j["macro_mcc"] = macro_mcc;
  j["macro_auroc"] = macro_auroc;
  j["macro_auprc"] = macro_auprc;
  j["skipped_auc_classes"] = skipped_auc_classes;
  j["confusion"] = confusion;
  nlohmann::json pc = nlohmann::json::array();
  for (const PerClass& c : per_class)
    pc.push_back({{"precision", c.precision},
                  {"recall", c.recall},
                  {"f1", c.f1},
                  {"mcc", c.mcc},
                  {"auroc", c.auroc},
                  {"auprc", c.auprc},
                  {"auc_defined", c.auc_defined}});
  j["per_class"] = std::move(pc);
  return j.dump(2);
}

std::string EvalReport::to_table() const {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4);
  os << std::setw(8) << "class" << std::setw(10) << "prec" << std::setw(10) << "recall"
     << std::setw(10) << "f1" << std::setw(10) << "mcc" << std::setw(10) << "auroc"
     << std::setw(10) << "auprc" << "\n";
  for (size_t k = 0; k < per_class.size(); ++k) {
    const PerClass& c = per_class[k];
    os << std::setw(8) << k << std::setw(10) << c.precision << std::setw(10) << c.recall
       << std::setw(10) << c.f1 << std::setw(10) << c.mcc;
    if (c.auc_defined)
      os << std::setw(10) << c.auroc << std::setw(10) << c.auprc;
    else
      os << std::setw(10) << "-" << std::setw(10) << "-";
    os << "\n";
  }
  os << std::setw(8) << "macro" << std::setw(10) << macro_precision << std::setw(10)
     << macro_recall << std::setw(10) << macro_f1 << std::setw(10) << macro_mcc << std::setw(10)
     << macro_auroc << std::setw(10) << macro_auprc << "\n";
  os << "accuracy " << accuracy << "  samples " << n_samples << "\n";
  return os.str();
}

}  // namespace metoken::metrics
