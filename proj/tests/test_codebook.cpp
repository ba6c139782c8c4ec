#include <cmath>

#include "doctest.h"
#include "metoken/codebook.hpp"
#include "metoken/common.hpp"
#include "test_util.hpp"

using namespace metoken;
using diff::Tape;
using diff::Tensor;
using diff::Var;

namespace {

codebook::Codebook make_codebook(int num_classes, int sub_size, std::vector<double> emb, int d) {
  codebook::Codebook cb = codebook::init_codebook(num_classes, sub_size, d, 0);
  cb.embeddings->value = Tensor::from({size_t(num_classes * sub_size), size_t(d)}, std::move(emb));
  return cb;
}

}  // namespace

TEST_SUITE_BEGIN("codebook");

TEST_CASE("init_codebook block layout") {
  codebook::Codebook cb = codebook::init_codebook(26, 128, 8, 7);
  CHECK(cb.size() == 3328);
  CHECK(cb.dim() == 8);
  for (int t = 896; t <= 1023; ++t) CHECK(cb.token_class[size_t(t)] == 7);
  CHECK(cb.token_class[895] == 6);
  CHECK(cb.token_class[1024] == 8);
  std::vector<int> counts(26, 0);
  for (int c : cb.token_class) ++counts[size_t(c)];
  for (int c : counts) CHECK(c == 128);

  codebook::Codebook one = codebook::init_codebook(1, 1, 4, 0);
  CHECK(one.size() == 1);
  CHECK(one.token_class == std::vector<int>{0});

  codebook::Codebook again = codebook::init_codebook(26, 128, 8, 7);
  CHECK(again.embeddings->value.data == cb.embeddings->value.data);
  codebook::Codebook other = codebook::init_codebook(26, 128, 8, 8);
  CHECK(other.embeddings->value.data != cb.embeddings->value.data);
}

TEST_CASE("init_codebook embedding scale follows 1/d variance") {
  codebook::Codebook cb = codebook::init_codebook(4, 64, 16, 42);
  double sum2 = 0.0;
  for (double v : cb.embeddings->value.data) sum2 += v * v;
  double var = sum2 / double(cb.embeddings->value.numel());
  CHECK(var == doctest::Approx(1.0 / 16.0).epsilon(0.15));
}

TEST_CASE("soft_assign fixtures") {
  // all tokens identical: uniform weights, h_hat equals that token
  std::vector<double> emb;
  for (int t = 0; t < 6; ++t) {
    emb.push_back(0.3);
    emb.push_back(-0.7);
  }
  codebook::Codebook cb = make_codebook(3, 2, emb, 2);
  Tape tape;
  Var h = diff::make_leaf(Tensor::from({1, 2}, {1.0, 0.5}));
  auto [w, h_hat] = codebook::soft_assign(tape, h, cb, 0.7);
  for (double v : w->value.data) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
  CHECK(h_hat->value.data[0] == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(h_hat->value.data[1] == doctest::Approx(-0.7).epsilon(1e-12));
}

TEST_CASE("soft_assign weights sum to 1 and sharpen to one-hot") {
  Rng rng(9);
  for (int t = 0; t < 50; ++t) {
    codebook::Codebook cb = codebook::init_codebook(4, 3, 6, 100 + uint64_t(t));
    Tensor h({2, 6});
    for (double& v : h.data) v = rng.normal();
    Tape tape;
    Var hv = diff::make_leaf(h);
    auto [w, h_hat] = codebook::soft_assign(tape, hv, cb, 0.37);
    for (size_t r = 0; r < 2; ++r) {
      double acc = 0.0;
      for (int c = 0; c < cb.size(); ++c) acc += w->value.data[r * size_t(cb.size()) + size_t(c)];
      CHECK(std::abs(acc - 1.0) < 1e-12);
    }
    // near-zero temperature: one-hot at the inner-product argmax
    Tape t2;
    auto [w2, h_hat2] = codebook::soft_assign(t2, hv, cb, 1e-6);
    std::vector<int> hard = codebook::hard_assign(h, cb);
    for (size_t r = 0; r < 2; ++r) {
      double top = w2->value.data[r * size_t(cb.size()) + size_t(hard[r])];
      CHECK(top == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("hard_assign picks the stored token for unit-norm codebooks") {
  // distinct unit tokens: h == e_k wins at k (self dot strictly largest)
  std::vector<double> emb = {1, 0, 0, 1, -1, 0, 0, -1};
  codebook::Codebook cb = make_codebook(2, 2, emb, 2);
  for (int k = 0; k < 4; ++k) {
    Tensor h({1, 2});
    h.data[0] = emb[size_t(2 * k)];
    h.data[1] = emb[size_t(2 * k + 1)];
    CHECK(codebook::hard_assign(h, cb) == std::vector<int>{k});
  }
}

TEST_CASE("hard_assign breaks ties toward the lower index") {
  std::vector<double> emb = {0.5, 0.5, 0.5, 0.5, 0.1, 0.1, 0.1, 0.1};  // tokens 0 == 1
  codebook::Codebook cb = make_codebook(2, 2, emb, 2);
  Tensor h = Tensor::from({1, 2}, {1.0, 1.0});
  CHECK(codebook::hard_assign(h, cb) == std::vector<int>{0});
}

TEST_CASE("hard_assign agrees with the soft argmax for any temperature") {
  Rng rng(10);
  codebook::Codebook cb = codebook::init_codebook(5, 4, 8, 11);
  int checked = 0;
  for (int t = 0; t < 1000; ++t) {
    Tensor h({1, 8});
    for (double& v : h.data) v = rng.normal();
    int hard = codebook::hard_assign(h, cb)[0];
    for (double tau : {1.0, 0.1, 0.01}) {
      Tape tape;
      auto [w, h_hat] = codebook::soft_assign(tape, diff::make_leaf(h), cb, tau);
      int arg = 0;
      for (int c = 1; c < cb.size(); ++c)
        if (w->value.data[size_t(c)] > w->value.data[size_t(arg)]) arg = c;
      CHECK(arg == hard);
      ++checked;
    }
  }
  CHECK(checked == 3000);
}

TEST_CASE("vanilla_assign fixtures and brute-force agreement") {
  std::vector<double> emb = {0, 0, 2, 0, 0, 2, -2, 0};
  codebook::Codebook cb = make_codebook(2, 2, emb, 2);
  CHECK(codebook::vanilla_assign(Tensor::from({1, 2}, {2.0, 0.0}), cb) == std::vector<int>{1});
  // equidistant from tokens 1 and 2: the lower index wins
  CHECK(codebook::vanilla_assign(Tensor::from({1, 2}, {1.5, 1.5}), cb) == std::vector<int>{1});

  Rng rng(12);
  codebook::Codebook rnd = codebook::init_codebook(3, 5, 4, 13);
  for (int t = 0; t < 200; ++t) {
    Tensor h({1, 4});
    for (double& v : h.data) v = rng.normal();
    int mine = codebook::vanilla_assign(h, rnd)[0];
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < rnd.size(); ++c) {
      double d = 0;
      for (int k = 0; k < 4; ++k) {
        double diff = h.data[size_t(k)] - rnd.embeddings->value.data[size_t(c * 4 + k)];
        d += diff * diff;
      }
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    CHECK(mine == best);
  }
}

TEST_CASE("uniform_loss is exactly zero for a single class") {
  codebook::Codebook cb = codebook::init_codebook(1, 6, 4, 21);
  Tape tape;
  Var loss = codebook::uniform_loss(tape, cb, 0.1);
  CHECK(loss->value.item() == 0.0);
}

TEST_CASE("uniform_loss antipodal two-token value matches the closed form") {
  std::vector<double> emb = {1, 0, 0, -1, 0, 0};
  codebook::Codebook cb = make_codebook(2, 1, emb, 3);
  double tau = 0.1;
  Tape tape;
  Var loss = codebook::uniform_loss(tape, cb, tau);
  double expect = std::log1p(std::exp(-2.0 / tau));
  CHECK(std::abs(loss->value.item() - expect) < 1e-12);
}

TEST_CASE("uniform_loss is non-negative on random codebooks") {
  for (uint64_t s = 0; s < 1000; ++s) {
    codebook::Codebook cb = codebook::init_codebook(3, 2, 4, s);
    Tape tape;
    CHECK(codebook::uniform_loss(tape, cb, 0.1)->value.item() >= 0.0);
  }
}

TEST_CASE("uniform_loss rejects zero-norm embeddings") {
  std::vector<double> emb = {1, 0, 0, 0, 0, 1, 1, 1};
  codebook::Codebook cb = make_codebook(2, 2, emb, 2);
  Tape tape;
  CHECK_THROWS_AS(codebook::uniform_loss(tape, cb, 0.1), NumericalError);
}

TEST_CASE("uniform_loss drops when an off-class token moves away in cosine") {
  // class 0 fixed on +x; the class-1 token rotates from nearby to antipodal
  auto loss_at = [](double angle) {
    std::vector<double> emb = {1.0, 0.0, std::cos(angle), std::sin(angle)};
    codebook::Codebook cb = make_codebook(2, 1, emb, 2);
    Tape tape;
    return codebook::uniform_loss(tape, cb, 0.1)->value.item();
  };
  double prev = loss_at(0.3);
  for (double angle : {0.8, 1.5, 2.2, 2.9}) {
    double cur = loss_at(angle);
    CHECK(cur < prev);
    prev = cur;
  }
}

TEST_CASE("uniform_loss gradient matches finite differences") {
  codebook::Codebook cb = codebook::init_codebook(3, 2, 4, 33);
  std::vector<Var> leaves{cb.embeddings};
  double err = testutil::fd_max_rel_err(
      leaves, [&](Tape& t) { return codebook::uniform_loss(t, cb, 0.15); });
  CHECK(err < 1e-4);
}

TEST_CASE("anneal_tau schedules") {
  codebook::VQConfig cfg;
  cfg = cfg.resolved(1000);
  CHECK(codebook::anneal_tau(0, cfg) == doctest::Approx(1.0));
  CHECK(codebook::anneal_tau(1000000, cfg) == doctest::Approx(cfg.tau_v_min));
  double prev = 1e300;
  for (long s = 0; s < 1200; s += 7) {
    double tau = codebook::anneal_tau(s, cfg);
    CHECK(tau <= prev + 1e-15);
    CHECK(tau >= cfg.tau_v_min);
    prev = tau;
  }
  // the derived exponential rate reaches the floor at 80% of the run
  CHECK(codebook::anneal_tau(800, cfg) == doctest::Approx(cfg.tau_v_min).epsilon(1e-6));

  codebook::VQConfig lin;
  lin.anneal = codebook::VQConfig::Anneal::Linear;
  lin = lin.resolved(100);
  CHECK(codebook::anneal_tau(0, lin) == doctest::Approx(1.0));
  CHECK(codebook::anneal_tau(50, lin) == doctest::Approx(0.5));
  CHECK(codebook::anneal_tau(100, lin) == doctest::Approx(lin.tau_v_min));
}

TEST_CASE("codebook_loss arithmetic") {
  codebook::Codebook cb = codebook::init_codebook(1, 4, 3, 3);
  codebook::VQConfig cfg;

  cfg.alpha = 0.0;
  Tape t0;
  Var recon = diff::make_leaf(Tensor::scalar(0.37));
  CHECK(codebook::codebook_loss(t0, recon, cb, cfg)->value.item() == 0.37);

  cfg.alpha = 0.1;
  Tape t1;
  Var zero = diff::make_leaf(Tensor::scalar(0.0));
  CHECK(codebook::codebook_loss(t1, zero, cb, cfg)->value.item() == 0.0);  // single class

  // alpha 0.1, recon 1.0, L_u 0.5 -> 1.05: check the composition arithmetic
  Tape t2;
  Var one = diff::make_leaf(Tensor::scalar(1.0));
  Var lu = diff::make_leaf(Tensor::scalar(0.5));
  Var total = t2.add(one, t2.scale(lu, cfg.alpha));
  CHECK(total->value.item() == doctest::Approx(1.05).epsilon(1e-15));
}

TEST_CASE("vanilla_vq_loss penalties vanish when h equals its token") {
  std::vector<double> emb = {1, 1, -1, -1};
  codebook::Codebook cb = make_codebook(2, 1, emb, 2);
  codebook::VQConfig cfg;
  cfg.mode = codebook::VQConfig::Mode::VanillaVQ;
  Tape tape;
  Var h = diff::make_leaf(Tensor::from({1, 2}, {1.0, 1.0}));
  Var recon = diff::make_leaf(Tensor::scalar(0.25));
  Var loss = codebook::vanilla_vq_loss(tape, h, cb, recon, cfg);
  CHECK(loss->value.item() == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("vanilla_vq_loss beta=0 sends no gradient to h from the penalties") {
  codebook::Codebook cb = codebook::init_codebook(2, 2, 3, 5);
  codebook::VQConfig cfg;
  cfg.mode = codebook::VQConfig::Mode::VanillaVQ;
  cfg.beta = 0.0;
  Tape tape;
  Var h = diff::make_leaf(Tensor::from({2, 3}, {0.4, -0.2, 0.9, -0.5, 0.3, 0.1}));
  Var recon = diff::make_const(Tensor::scalar(0.0));
  Var loss = codebook::vanilla_vq_loss(tape, h, cb, recon, cfg);
  tape.backward(loss);
  CHECK(!h->grad_ready);  // nothing flowed into h
  CHECK(cb.embeddings->grad_ready);
}

TEST_CASE("vanilla_vq_loss stop-gradient partition matches frozen finite differences") {
  codebook::VQConfig cfg;
  cfg.mode = codebook::VQConfig::Mode::VanillaVQ;
  cfg.beta = 0.25;
  // tokens far apart so finite-difference probes never flip the assignment
  const std::vector<double> emb = {3, 0, 0, 0, 3, 0, 0, 0, 3, -3, -3, 0};
  const Tensor h0 = Tensor::from({2, 3}, {2.8, 0.2, 0.1, -2.5, -2.9, 0.3});
  const size_t dim = 3;

  // Analytic gradients of the full loss (stop-gradients active).
  codebook::Codebook cb = make_codebook(2, 2, emb, 3);
  Var h = diff::make_leaf(h0);
  Tape tape;
  Var recon = diff::make_const(Tensor::scalar(0.0));
  Var loss = codebook::vanilla_vq_loss(tape, h, cb, recon, cfg);
  tape.backward(loss);
  Tensor grad_e = cb.embeddings->grad;
  Tensor grad_h = h->grad;

  // The embedding gradient must equal the isolated |h - e_z|^2 term with h
  // frozen as a constant (finite differences see no other path).
  {
    codebook::Codebook iso = make_codebook(2, 2, emb, 3);
    std::vector<Var> leaves{iso.embeddings};
    auto build = [&](Tape& t) {
      std::vector<int> z = codebook::vanilla_assign(h0, iso);
      Var e_z = t.gather_rows(iso.embeddings, z);
      return t.scale(t.mse(diff::make_const(h0), e_z), double(dim));
    };
    CHECK(testutil::fd_max_rel_err(leaves, build) < 1e-4);
    Tape t2;
    Var iso_loss = build(t2);
    t2.backward(iso_loss);
    for (size_t i = 0; i < grad_e.data.size(); ++i)
      CHECK(grad_e.data[i] == doctest::Approx(iso.embeddings->grad.data[i]).epsilon(1e-12));
  }
  // The h gradient must equal the isolated beta-commitment term with the
  // embeddings frozen.
  {
    Var h_iso = diff::make_leaf(h0);
    const Tensor e_frozen = cb.embeddings->value;
    std::vector<Var> leaves{h_iso};
    auto build = [&](Tape& t) {
      std::vector<int> z = codebook::vanilla_assign(h_iso->value, cb);
      Tensor gathered({z.size(), dim});
      for (size_t r = 0; r < z.size(); ++r)
        std::copy_n(e_frozen.data.data() + size_t(z[r]) * dim, dim,
                    gathered.data.data() + r * dim);
      return t.scale(t.mse(h_iso, diff::make_const(gathered)), double(dim) * cfg.beta);
    };
    CHECK(testutil::fd_max_rel_err(leaves, build) < 1e-4);
    Tape t2;
    Var iso_loss = build(t2);
    t2.backward(iso_loss);
    for (size_t i = 0; i < grad_h.data.size(); ++i)
      CHECK(grad_h.data[i] == doctest::Approx(h_iso->grad.data[i]).epsilon(1e-12));
  }
}

TEST_CASE("soft-assign collapse onto the hard token as tau anneals down") {
  Rng rng(14);
  codebook::Codebook cb = codebook::init_codebook(4, 4, 6, 15);
  codebook::VQConfig cfg;
  cfg = cfg.resolved(100);
  Tensor h({3, 6});
  for (double& v : h.data) v = rng.normal();
  std::vector<int> z = codebook::hard_assign(h, cb);
  double prev = 1e300;
  for (long step : {0L, 25L, 50L, 75L, 100L}) {
    double tau = codebook::anneal_tau(step, cfg);
    Tape tape;
    auto [w, h_hat] = codebook::soft_assign(tape, diff::make_leaf(h), cb, tau);
    double dist = 0.0;
    for (size_t r = 0; r < 3; ++r)
      for (size_t c = 0; c < 6; ++c) {
        double d = h_hat->value.data[r * 6 + c] -
                   cb.embeddings->value.data[size_t(z[r]) * 6 + c];
        dist += d * d;
      }
    CHECK(dist <= prev + 1e-12);
    prev = dist;
  }
  CHECK(prev < 1e-10);  // at the floor the mixture sits on the hard token
}

TEST_CASE("masked soft assignment stays inside the label's block") {
  codebook::Codebook cb = codebook::init_codebook(3, 4, 5, 16);
  Rng rng(17);
  Tensor h({4, 5});
  for (double& v : h.data) v = rng.normal();
  std::vector<int> labels{2, 0, 1, 2};
  Tape tape;
  auto [w, h_hat] = codebook::soft_assign(tape, diff::make_leaf(h), cb, 0.5, &labels);
  for (size_t r = 0; r < 4; ++r)
    for (int c = 0; c < cb.size(); ++c) {
      double v = w->value.data[r * size_t(cb.size()) + size_t(c)];
      if (cb.token_class[size_t(c)] != labels[r]) CHECK(v < 1e-200);
    }
}

TEST_SUITE_END();
