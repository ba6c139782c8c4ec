#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "metoken/common.hpp"
#include "metoken/metrics.hpp"
#include "metoken/rng.hpp"

using namespace metoken;

namespace {

// O(n^2) pairwise Mann-Whitney statistic with half credit for ties.
double auroc_pairwise(const std::vector<int>& y, const std::vector<double>& s, int cls) {
  long wins2 = 0, pairs = 0;
  for (size_t i = 0; i < y.size(); ++i) {
    if (y[i] != cls) continue;
    for (size_t j = 0; j < y.size(); ++j) {
      if (y[j] == cls) continue;
      ++pairs;
      if (s[i] > s[j]) wins2 += 2;
      else if (s[i] == s[j]) wins2 += 1;
    }
  }
  return double(wins2) / (2.0 * double(pairs));
}

// Exhaustive sweep over every distinct threshold, step-wise area.
double auprc_sweep(const std::vector<int>& y, const std::vector<double>& s, int cls) {
  std::vector<double> thresholds = s;
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  long n_pos = 0;
  for (int v : y) n_pos += v == cls;
  double area = 0.0, prev_recall = 0.0;
  for (double th : thresholds) {
    long tp = 0, fp = 0;
    for (size_t i = 0; i < y.size(); ++i) {
      if (s[i] >= th) {
        if (y[i] == cls) ++tp;
        else ++fp;
      }
    }
    double recall = double(tp) / double(n_pos);
    double precision = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 0.0;
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

// Textbook binary MCC straight from the four counts.
double binary_mcc(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  double tp = 0, tn = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < y_true.size(); ++i) {
    if (y_true[i] == 1 && y_pred[i] == 1) ++tp;
    else if (y_true[i] == 0 && y_pred[i] == 0) ++tn;
    else if (y_true[i] == 0 && y_pred[i] == 1) ++fp;
    else ++fn;
  }
  double denom = std::sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn));
  return denom > 0 ? (tp * tn - fp * fn) / denom : 0.0;
}

struct RandomDataset {
  std::vector<int> y_true, y_pred;
  std::vector<std::vector<double>> scores;
};

RandomDataset random_dataset(Rng& rng, int n, int k, double signal = 1.0) {
  RandomDataset d;
  for (int i = 0; i < n; ++i) {
    int t = int(rng.uniform_int(0, k - 1));
    d.y_true.push_back(t);
    std::vector<double> row(static_cast<size_t>(k));
    double total = 0.0;
    for (int c = 0; c < k; ++c) {
      row[size_t(c)] = std::exp(rng.normal() + (c == t ? signal : 0.0));
      total += row[size_t(c)];
    }
    for (double& v : row) v /= total;
    d.y_pred.push_back(int(std::max_element(row.begin(), row.end()) - row.begin()));
    d.scores.push_back(std::move(row));
  }
  return d;
}

}  // namespace

TEST_SUITE_BEGIN("metrics");

TEST_CASE("confusion_matrix fixtures") {
  auto m = metrics::confusion_matrix({0, 1, 2}, {0, 1, 2}, 3);
  for (int t = 0; t < 3; ++t)
    for (int p = 0; p < 3; ++p) CHECK(m[size_t(t)][size_t(p)] == (t == p ? 1 : 0));

  auto single = metrics::confusion_matrix({1}, {0}, 2);
  CHECK(single[1][0] == 1);
  CHECK(single[0][0] + single[0][1] + single[1][1] == 0);

  CHECK_THROWS_AS(metrics::confusion_matrix({0, 5}, {0, 0}, 3), DatasetError);
  CHECK_THROWS_AS(metrics::confusion_matrix({0}, {0, 1}, 2), DatasetError);
}

TEST_CASE("confusion row sums count true classes") {
  Rng rng(31);
  auto d = random_dataset(rng, 500, 7);
  auto m = metrics::confusion_matrix(d.y_true, d.y_pred, 7);
  for (int k = 0; k < 7; ++k) {
    long expect = std::count(d.y_true.begin(), d.y_true.end(), k);
    long got = 0;
    for (int p = 0; p < 7; ++p) got += m[size_t(k)][size_t(p)];
    CHECK(got == expect);
  }
}

TEST_CASE("perfect balanced predictions score 1.0 everywhere") {
  std::vector<int> y{0, 0, 1, 1};
  auto ms = metrics::macro_scores(metrics::confusion_matrix(y, y, 2));
  CHECK(ms.precision == 1.0);
  CHECK(ms.recall == 1.0);
  CHECK(ms.f1 == 1.0);
  CHECK(ms.mcc == 1.0);
}

TEST_CASE("binary macro MCC averages the one-vs-rest textbook values") {
  Rng rng(37);
  for (int t = 0; t < 50; ++t) {
    std::vector<int> y_true, y_pred;
    for (int i = 0; i < 200; ++i) {
      y_true.push_back(int(rng.uniform_int(0, 1)));
      y_pred.push_back(rng.uniform() < 0.3 ? 1 - y_true.back() : y_true.back());
    }
    auto ms = metrics::macro_scores(metrics::confusion_matrix(y_true, y_pred, 2));
    // both one-vs-rest MCCs equal the binary MCC, so the macro mean does too
    CHECK(ms.mcc == doctest::Approx(binary_mcc(y_true, y_pred)).epsilon(1e-12));
  }
}

TEST_CASE("all-one-class predictions on 26 fully present classes") {
  std::vector<int> y_true, y_pred;
  for (int k = 0; k < 26; ++k)
    for (int r = 0; r < 4; ++r) {
      y_true.push_back(k);
      y_pred.push_back(0);
    }
  auto ms = metrics::macro_scores(metrics::confusion_matrix(y_true, y_pred, 26));
  CHECK(ms.recall == doctest::Approx(1.0 / 26.0).epsilon(1e-12));
}

TEST_CASE("degenerate per-class scores count as zero in the macro mean") {
  // class 2 never appears and is never predicted: all four scores 0/0 -> 0
  std::vector<int> y_true{0, 1, 0, 1};
  std::vector<int> y_pred{0, 1, 1, 0};
  auto ms = metrics::macro_scores(metrics::confusion_matrix(y_true, y_pred, 3));
  CHECK(ms.per_class[2].precision == 0.0);
  CHECK(ms.per_class[2].recall == 0.0);
  CHECK(ms.per_class[2].f1 == 0.0);
  CHECK(ms.per_class[2].mcc == 0.0);
}

TEST_CASE("auroc fixtures") {
  std::vector<int> y{1, 1, 0, 0};
  std::vector<std::vector<double>> separating{{0.1, 0.9}, {0.2, 0.8}, {0.9, 0.1}, {0.7, 0.3}};
  CHECK(metrics::auroc_macro(y, separating) == doctest::Approx(1.0));
  std::vector<std::vector<double>> constant{{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
  CHECK(metrics::auroc_macro(y, constant) == doctest::Approx(0.5));
}

TEST_CASE("auroc equals the pairwise statistic within 1e-10 on 50 datasets") {
  Rng rng(41);
  for (int t = 0; t < 50; ++t) {
    int k = 2 + int(rng.uniform_int(0, 4));
    auto d = random_dataset(rng, 60 + int(rng.uniform_int(0, 100)), k, 0.5);
    // force score ties so the tie path is exercised
    for (auto& row : d.scores)
      for (double& v : row) v = std::round(v * 20.0) / 20.0;
    std::vector<double> per_class;
    std::vector<int> skipped;
    metrics::auroc_macro(d.y_true, d.scores, &per_class, &skipped);
    for (int c = 0; c < k; ++c) {
      if (std::find(skipped.begin(), skipped.end(), c) != skipped.end()) continue;
      std::vector<double> col;
      for (const auto& row : d.scores) col.push_back(row[size_t(c)]);
      CHECK(std::abs(per_class[size_t(c)] - auroc_pairwise(d.y_true, col, c)) < 1e-10);
    }
  }
}

TEST_CASE("auprc fixtures and oracle agreement") {
  std::vector<int> y{1, 1, 0, 0};
  std::vector<std::vector<double>> separating{{0.1, 0.9}, {0.2, 0.8}, {0.9, 0.1}, {0.7, 0.3}};
  CHECK(metrics::auprc_macro(y, separating) == doctest::Approx(1.0));

  Rng rng(43);
  for (int t = 0; t < 50; ++t) {
    int k = 2 + int(rng.uniform_int(0, 3));
    auto d = random_dataset(rng, 60 + int(rng.uniform_int(0, 80)), k, 0.4);
    for (auto& row : d.scores)
      for (double& v : row) v = std::round(v * 25.0) / 25.0;
    std::vector<double> per_class;
    std::vector<int> skipped;
    metrics::auprc_macro(d.y_true, d.scores, &per_class, &skipped);
    for (int c = 0; c < k; ++c) {
      if (std::find(skipped.begin(), skipped.end(), c) != skipped.end()) continue;
      std::vector<double> col;
      for (const auto& row : d.scores) col.push_back(row[size_t(c)]);
      CHECK(std::abs(per_class[size_t(c)] - auprc_sweep(d.y_true, col, c)) < 1e-10);
    }
  }
}

TEST_CASE("auprc of random scores approaches the positive rate") {
  Rng rng(47);
  int n = 10000;
  double rho = 0.15;
  std::vector<int> y;
  std::vector<std::vector<double>> scores;
  for (int i = 0; i < n; ++i) {
    y.push_back(rng.uniform() < rho ? 1 : 0);
    scores.push_back({rng.uniform(), rng.uniform()});
  }
  std::vector<double> per_class;
  metrics::auprc_macro(y, scores, &per_class, nullptr);
  CHECK(std::abs(per_class[1] - rho) < 0.03);
}

TEST_CASE("classes absent from y_true are skipped and reported") {
  std::vector<int> y{0, 0, 1, 1};
  std::vector<std::vector<double>> s{{0.9, 0.1, 0.0}, {0.8, 0.2, 0.0}, {0.1, 0.9, 0.0},
                                     {0.3, 0.7, 0.0}};
  std::vector<int> skipped;
  metrics::auroc_macro(y, s, nullptr, &skipped);
  CHECK(skipped == std::vector<int>{2});
}

TEST_CASE("evaluate composes everything and validates input") {
  Rng rng(53);
  auto d = random_dataset(rng, 300, 5, 3.0);
  metrics::EvalReport rep = metrics::evaluate(d.y_true, d.y_pred, d.scores, 5);
  CHECK(rep.accuracy >= 0.0);
  CHECK(rep.accuracy <= 1.0);
  CHECK(rep.macro_f1 >= 0.0);
  CHECK(rep.macro_f1 <= 1.0);
  CHECK(rep.macro_mcc >= -1.0);
  CHECK(rep.macro_mcc <= 1.0);
  CHECK(rep.macro_auroc <= 1.0);
  CHECK(rep.macro_auprc <= 1.0);
  long total = 0;
  for (auto& row : rep.confusion)
    for (long v : row) total += v;
  CHECK(total == rep.n_samples);

  metrics::EvalReport perfect = metrics::evaluate(d.y_true, d.y_true, d.scores, 5);
  CHECK(perfect.accuracy == 1.0);
  CHECK(perfect.macro_f1 == 1.0);

  CHECK_THROWS_AS(metrics::evaluate({}, {}, {}, 5), DatasetError);
  CHECK(rep.to_json().find("macro_f1") != std::string::npos);
  CHECK(rep.to_table().find("macro") != std::string::npos);
}

TEST_CASE("evaluate cross-checked against an independent scalar pass") {
  Rng rng(59);
  for (int t = 0; t < 50; ++t) {
    int k = 2 + int(rng.uniform_int(0, 5));
    auto d = random_dataset(rng, 40 + int(rng.uniform_int(0, 120)), k, 1.0);
    metrics::EvalReport rep = metrics::evaluate(d.y_true, d.y_pred, d.scores, k);

    long correct = 0;
    for (size_t i = 0; i < d.y_true.size(); ++i) correct += d.y_true[i] == d.y_pred[i];
    CHECK(rep.accuracy == doctest::Approx(double(correct) / double(d.y_true.size())));

    double macro_p = 0, macro_r = 0, macro_f = 0;
    for (int c = 0; c < k; ++c) {
      double tp = 0, fp = 0, fn = 0;
      for (size_t i = 0; i < d.y_true.size(); ++i) {
        if (d.y_pred[i] == c && d.y_true[i] == c) ++tp;
        if (d.y_pred[i] == c && d.y_true[i] != c) ++fp;
        if (d.y_pred[i] != c && d.y_true[i] == c) ++fn;
      }
      double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      macro_p += p;
      macro_r += r;
      macro_f += p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    }
    CHECK(rep.macro_precision == doctest::Approx(macro_p / k).epsilon(1e-12));
    CHECK(rep.macro_recall == doctest::Approx(macro_r / k).epsilon(1e-12));
    CHECK(rep.macro_f1 == doctest::Approx(macro_f / k).epsilon(1e-12));
  }
}

TEST_CASE("metrics are invariant to sample order and equivariant to relabeling") {
  Rng rng(61);
  auto d = random_dataset(rng, 200, 4, 1.0);
  metrics::EvalReport base = metrics::evaluate(d.y_true, d.y_pred, d.scores, 4);

  // permute samples
  std::vector<size_t> order(d.y_true.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  RandomDataset shuffled;
  for (size_t i : order) {
    shuffled.y_true.push_back(d.y_true[i]);
    shuffled.y_pred.push_back(d.y_pred[i]);
    shuffled.scores.push_back(d.scores[i]);
  }
  metrics::EvalReport rep2 =
      metrics::evaluate(shuffled.y_true, shuffled.y_pred, shuffled.scores, 4);
  CHECK(rep2.accuracy == base.accuracy);
  CHECK(rep2.macro_f1 == doctest::Approx(base.macro_f1).epsilon(1e-14));
  CHECK(rep2.macro_auroc == doctest::Approx(base.macro_auroc).epsilon(1e-12));

  // relabel classes by a permutation: per-class scores permute, macros hold
  std::vector<int> perm{2, 3, 1, 0};
  RandomDataset relabeled;
  for (size_t i = 0; i < d.y_true.size(); ++i) {
    relabeled.y_true.push_back(perm[size_t(d.y_true[i])]);
    relabeled.y_pred.push_back(perm[size_t(d.y_pred[i])]);
    std::vector<double> row(4);
    for (int c = 0; c < 4; ++c) row[size_t(perm[size_t(c)])] = d.scores[i][size_t(c)];
    relabeled.scores.push_back(std::move(row));
  }
  metrics::EvalReport rep3 =
      metrics::evaluate(relabeled.y_true, relabeled.y_pred, relabeled.scores, 4);
  CHECK(rep3.macro_f1 == doctest::Approx(base.macro_f1).epsilon(1e-12));
  CHECK(rep3.macro_mcc == doctest::Approx(base.macro_mcc).epsilon(1e-12));
  CHECK(rep3.macro_auroc == doctest::Approx(base.macro_auroc).epsilon(1e-12));
  for (int c = 0; c < 4; ++c) {
    CHECK(rep3.per_class[size_t(perm[size_t(c)])].f1 ==
          doctest::Approx(base.per_class[size_t(c)].f1).epsilon(1e-12));
  }
}

TEST_SUITE_END();
