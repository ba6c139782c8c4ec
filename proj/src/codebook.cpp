#include "metoken/codebook.hpp"

#include <algorithm>
#include <cmath>

#include "metoken/common.hpp"
#include "metoken/rng.hpp"

namespace metoken::codebook {

using diff::Tensor;
using diff::Var;

void VQConfig::validate() const {
  if (!(tau_u > 0)) throw ConfigError("vq.tau_u must be > 0");
  if (!(tau_v_min > 0)) throw ConfigError("vq.tau_v_min must be > 0");
  if (!(tau_v0 >= tau_v_min)) throw ConfigError("vq.tau_v0 must be >= vq.tau_v_min");
  if (alpha < 0) throw ConfigError("vq.alpha must be >= 0");
  if (beta < 0) throw ConfigError("vq.beta must be >= 0");
}

VQConfig VQConfig::resolved(long steps) const {
  VQConfig out = *this;
  if (out.anneal_total <= 0) out.anneal_total = std::max(1L, steps);
  if (out.anneal == Anneal::Exponential && out.anneal_rate <= 0.0) {
    // reach the floor at 80% of the schedule, deterministic tail after
    double horizon = std::max(1.0, 0.8 * double(out.anneal_total));
    out.anneal_rate = std::pow(out.tau_v_min / out.tau_v0, 1.0 / horizon);
  }
  return out;
}

Codebook init_codebook(int num_classes, int sub_size, int d, uint64_t seed) {
  if (num_classes < 1 || sub_size < 1 || d < 1)
    throw ConfigError("init_codebook: num_classes, sub_size and d must all be >= 1");
  Codebook cb;
  cb.num_classes = num_classes;
  cb.sub_size = sub_size;
  size_t total = size_t(num_classes) * size_t(sub_size);
  Tensor emb({total, size_t(d)});
  Rng rng(seed);
  double stddev = 1.0 / std::sqrt(double(d));
  for (double& v : emb.data) v = rng.normal(0.0, stddev);
  cb.embeddings = diff::make_leaf(std::move(emb), true);
  cb.token_class.resize(total);
  for (size_t t = 0; t < total; ++t) cb.token_class[t] = int(t / size_t(sub_size));
  return cb;
}

std::pair<Var, Var> soft_assign(diff::Tape& tape, Var h, const Codebook& cb, double tau_v,
                                const std::vector<int>* mask_labels) {
  if (!(tau_v > 0)) throw NumericalError("soft_assign: tau_v must be > 0");
  Var logits = tape.scale(tape.matmul(h, tape.transpose(cb.embeddings)), 1.0 / tau_v);
  if (mask_labels) {
    size_t n = h->value.shape[0];
    if (mask_labels->size() != n)
      throw ShapeError("soft_assign: one mask label per row required");
    Tensor mask({n, size_t(cb.size())});
    for (size_t r = 0; r < n; ++r) {
      int cls = (*mask_labels)[r];
      if (cls < 0 || cls >= cb.num_classes)
        throw DatasetError("soft_assign: class id out of range");
      for (int t = 0; t < cb.size(); ++t)
        mask.data[r * size_t(cb.size()) + size_t(t)] = cb.token_class[size_t(t)] == cls ? 0.0 : -1e30;
    }
    logits = tape.add(logits, diff::make_const(std::move(mask)));
  }
  Var weights = tape.softmax(logits);
  Var h_hat = tape.matmul(weights, cb.embeddings);
  return {weights, h_hat};
}

int hard_assign_one(const double* h, const Codebook& cb) {
  const Tensor& e = cb.embeddings->value;
  size_t d = e.shape[1];
  int best = 0;
  double best_dot = -std::numeric_limits<double>::infinity();
  for (int t = 0; t < cb.size(); ++t) {
    const double* row = e.data.data() + size_t(t) * d;
    double dot = 0.0;
    for (size_t k = 0; k < d; ++k) dot += h[k] * row[k];
    if (dot > best_dot) {
      best_dot = dot;
      best = t;
    }
  }
  return best;
}

std::vector<int> hard_assign(const Tensor& h, const Codebook& cb) {
  size_t d = cb.embeddings->value.shape[1];
  if (h.cols() != d) throw ShapeError("hard_assign: dimension mismatch");
  std::vector<int> out(h.rows());
  for (size_t r = 0; r < h.rows(); ++r) out[r] = hard_assign_one(h.data.data() + r * d, cb);
  return out;
}

std::vector<int> vanilla_assign(const Tensor& h, const Codebook& cb) {
  const Tensor& e = cb.embeddings->value;
  size_t d = e.shape[1];
  if (h.cols() != d) throw ShapeError("vanilla_assign: dimension mismatch");
  std::vector<int> out(h.rows());
  for (size_t r = 0; r < h.rows(); ++r) {
    const double* hr = h.data.data() + r * d;
    int best = 0;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int t = 0; t < cb.size(); ++t) {
      const double* row = e.data.data() + size_t(t) * d;
      double d2 = 0.0;
      for (size_t k = 0; k < d; ++k) d2 += (hr[k] - row[k]) * (hr[k] - row[k]);
      if (d2 < best_d2) {
        best_d2 = d2;
        best = t;
      }
    }
    out[r] = best;
  }
  return out;
}

Var uniform_loss(diff::Tape& tape, const Codebook& cb, double tau_u) {
  if (!(tau_u > 0)) throw NumericalError("uniform_loss: tau_u must be > 0");
  size_t total = size_t(cb.size());
  Var en = tape.l2_normalize(cb.embeddings);
  Var sim = tape.scale(tape.matmul(en, tape.transpose(en)), 1.0 / tau_u);

  // Per-row max subtraction; exact for both value and gradient since the
  // shift cancels in the numerator/denominator ratio.
  Tensor row_max({total, 1});
  for (size_t r = 0; r < total; ++r) {
    const double* row = sim->value.data.data() + r * total;
    row_max.data[r] = *std::max_element(row, row + total);
  }
  Var p = tape.exp(tape.sub(sim, diff::make_const(std::move(row_max))));

  Tensor same({total, total});
  for (size_t i = 0; i < total; ++i)
    for (size_t j = 0; j < total; ++j)
      same.data[i * total + j] = cb.token_class[i] == cb.token_class[j] ? 1.0 : 0.0;
  Var num = tape.row_sum(tape.mul(p, diff::make_const(std::move(same))));
  Var den = tape.row_sum(p);
  Var per_token = tape.sub(tape.log(num), tape.log(den));
  return tape.scale(tape.sum(per_token), -1.0 / double(total));
}

double anneal_tau(long step, const VQConfig& cfg) {
  if (step < 0) throw ConfigError("anneal_tau: step must be >= 0");
  double tau;
  if (cfg.anneal == VQConfig::Anneal::Exponential) {
    double rate = cfg.anneal_rate > 0.0 ? cfg.anneal_rate : 1.0;
    tau = cfg.tau_v0 * std::pow(rate, double(step));
  } else {
    long total = std::max(1L, cfg.anneal_total);
    tau = cfg.tau_v0 * (1.0 - double(step) / double(total));
  }
  return std::max(cfg.tau_v_min, tau);
}

Var codebook_loss(diff::Tape& tape, Var recon, const Codebook& cb, const VQConfig& cfg) {
  if (cfg.mode != VQConfig::Mode::TemperatureScaled)
    throw ConfigError("codebook_loss: requires TemperatureScaled mode");
  if (cfg.alpha == 0.0) return recon;
  return tape.add(recon, tape.scale(uniform_loss(tape, cb, cfg.tau_u), cfg.alpha));
}

Var vanilla_vq_loss(diff::Tape& tape, Var h, const Codebook& cb, Var recon,
                    const VQConfig& cfg) {
  if (cfg.mode != VQConfig::Mode::VanillaVQ)
    throw ConfigError("vanilla_vq_loss: requires VanillaVQ mode");
  std::vector<int> z = vanilla_assign(h->value, cb);
  Var e_z = tape.gather_rows(cb.embeddings, z);
  size_t dim = h->value.shape[1];
  // mean over rows of the squared L2 norm == mse * dim
  double row_scale = double(dim);
  Var codebook_term = tape.scale(tape.mse(tape.sg(h), e_z), row_scale);
  Var total = tape.add(recon, codebook_term);
  if (cfg.beta > 0.0)
    total = tape.add(total, tape.scale(tape.mse(h, tape.sg(e_z)), row_scale * cfg.beta));
  return total;
}

}  // namespace metoken::codebook
