#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "metoken/diffengine.hpp"

namespace metoken::codebook {

// Token embeddings partitioned into equal-size per-class blocks. The
// token -> class map is fixed at construction and never mutates; training
// only moves the embedding values.
struct Codebook {
  diff::Var embeddings;          // [size, d] leaf, trainable
  std::vector<int> token_class;  // contiguous blocks of sub_size per class
  int sub_size = 0;
  int num_classes = 0;

  int size() const { return num_classes * sub_size; }
  int dim() const { return int(embeddings->value.shape[1]); }
};

struct VQConfig {
  enum class Mode { TemperatureScaled, VanillaVQ };
  enum class Anneal { Exponential, Linear };

  Mode mode = Mode::TemperatureScaled;
  double tau_u = 0.1;      // uniform-loss temperature
  double tau_v0 = 1.0;     // initial assignment temperature
  double tau_v_min = 0.01; // floor
  Anneal anneal = Anneal::Exponential;
  double anneal_rate = 0.0;  // <= 0: derived so the floor is hit at 80% of total steps
  long anneal_total = 0;     // <= 0: taken from stage-1 step count
  double alpha = 0.1;        // uniform-loss weight
  double beta = 0.25;        // commitment weight, vanilla mode
  // Restrict stage-1 soft assignment to the ground-truth class block.
  bool masked_assign = false;

  void validate() const;
  // Fills derived anneal parameters for a run of `steps` steps.
  VQConfig resolved(long steps) const;
};

// Embeddings ~ N(0, 1/d) i.i.d.; token_class = [0 x sub_size, 1 x sub_size, ...].
Codebook init_codebook(int num_classes, int sub_size, int d, uint64_t seed);

// Eq.-style soft assignment: a = softmax(h . e_j / tau_v) per row,
// h_hat = a E. When `mask_labels` is given, logits outside each row's
// ground-truth class block receive a large negative offset. Returns
// (weights, h_hat); differentiable w.r.t. both h and the embeddings.
std::pair<diff::Var, diff::Var> soft_assign(diff::Tape& tape, diff::Var h, const Codebook& cb,
                                            double tau_v,
                                            const std::vector<int>* mask_labels = nullptr);

// Inner-product argmax per row, ties to the lowest token index.
std::vector<int> hard_assign(const diff::Tensor& h, const Codebook& cb);
int hard_assign_one(const double* h, const Codebook& cb);

// Euclidean argmin per row (baseline mode), ties to the lowest index.
std::vector<int> vanilla_assign(const diff::Tensor& h, const Codebook& cb);

// Contrastive uniformity over the codebook in cosine space; the inner sums
// include j == i. Throws NumericalError on a zero-norm embedding.
diff::Var uniform_loss(diff::Tape& tape, const Codebook& cb, double tau_u);

// Assignment temperature at `step`; monotone non-increasing, floored.
double anneal_tau(long step, const VQConfig& cfg);

// L = recon + alpha * uniform_loss.
diff::Var codebook_loss(diff::Tape& tape, diff::Var recon, const Codebook& cb,
                        const VQConfig& cfg);

// L = recon + |sg(h) - e_z|^2 + beta |h - sg(e_z)|^2, squared norms averaged
// over rows. Gradient of the middle term reaches only e_z, of the last term
// only h.
diff::Var vanilla_vq_loss(diff::Tape& tape, diff::Var h, const Codebook& cb, diff::Var recon,
                          const VQConfig& cfg);

}  // namespace metoken::codebook
