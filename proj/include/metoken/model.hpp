#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "metoken/codebook.hpp"
#include "metoken/diffengine.hpp"
#include "metoken/pgraph.hpp"
#include "metoken/rng.hpp"

namespace metoken::model {

struct Linear {
  diff::Var w, b;
};

// Message-passing layer: per-edge MLP on (h_i | h_j | edge_feat) with two
// hidden ReLU layers, sum aggregation at the edge's frame owner, node-update
// MLP, residual + layer norm with learned affine.
struct MpLayer {
  Linear msg0, msg1, msg2;
  Linear node0, node1;
  diff::Var ln_gamma, ln_beta;
};

struct EncoderParams {
  Linear input;  // node_dim -> d_h
  std::array<MpLayer, 3> layers;
  int d_h = 128;
  int in_dim = 0;
  int edge_dim = 0;
};

struct DecoderParams {
  Linear l0, l1;  // d -> d_h -> node_dim
};

struct PredictorParams {
  Linear input;  // token dim -> d_h
  std::array<MpLayer, 3> layers;
  Linear head;  // d_h -> num_classes
  int d_h = 128;
  int num_classes = 0;
};

EncoderParams init_encoder(int in_dim, int edge_dim, int d_h, Rng& rng);
DecoderParams init_decoder(int d, int d_h, int out_dim, Rng& rng);
PredictorParams init_predictor(int token_dim, int edge_dim, int d_h, int num_classes, Rng& rng);

std::vector<diff::Var> encoder_vars(EncoderParams& p);
std::vector<diff::Var> decoder_vars(DecoderParams& p);
std::vector<diff::Var> predictor_vars(PredictorParams& p);

// Named views for checkpoints; order is stable.
std::vector<std::pair<std::string, diff::Var>> named_encoder_vars(EncoderParams& p);
std::vector<std::pair<std::string, diff::Var>> named_decoder_vars(DecoderParams& p);
std::vector<std::pair<std::string, diff::Var>> named_predictor_vars(PredictorParams& p);

// Several residue graphs concatenated with node offsets; no cross-protein
// edges exist by construction.
struct BatchGraph {
  int n = 0;
  std::vector<int> edge_src, edge_dst;  // src is the frame owner i
  diff::Tensor node_feat;               // [n, node_dim]
  diff::Tensor edge_feat;               // [E, edge_dim]
  std::vector<int> labels;
  std::vector<int> protein_of;
};

BatchGraph concat_graphs(const std::vector<const pgraph::ResidueGraph*>& graphs);

diff::Var encode(diff::Tape& tape, const BatchGraph& bg, EncoderParams& enc);

// Runs the same message-passing trunk on externally supplied node inputs
// (the gathered codebook tokens in stage 2).
diff::Var predictor_forward(diff::Tape& tape, const BatchGraph& bg, diff::Var node_input,
                            PredictorParams& pred);

// Mean squared error between decoder(h_hat) and the target node features.
diff::Var reconstruct(diff::Tape& tape, diff::Var h_hat, DecoderParams& dec,
                      diff::Var node_feat_target);

// Mean cross-entropy over residues (Eq.-style with softmax probabilities).
diff::Var ce_loss(diff::Tape& tape, diff::Var logits, const std::vector<int>& labels,
                  int num_classes);

struct TrainConfig {
  long stage1_steps = 2000;
  long stage2_steps = 2000;
  int batch_proteins = 2;
  double lr = 1e-3;
  bool lr_decay = false;  // linear decay to 10% of lr over each stage
  uint64_t seed = 1;
  codebook::VQConfig vq;
  bool joint_finetune = false;
  int d_h = 128;
  int sub_size = 128;
  int num_classes = 26;
  enum class ReconTarget { Features, Embedding };
  ReconTarget recon_target = ReconTarget::Features;
  bool augment_noise = false;  // Gaussian coordinate noise per training batch
  void validate() const;
};

struct TrainLogRow {
  long step;
  double tau_v;
  double l_recon;
  double l_u;
  double l_total;
};

std::string log_to_csv(const std::vector<TrainLogRow>& log);

struct Stage1Artifacts {
  EncoderParams encoder;
  DecoderParams decoder;
  codebook::Codebook cb;
  std::vector<TrainLogRow> log;
};

Stage1Artifacts train_codebook(const std::vector<ingest::AnnotatedProtein>& dataset,
                               const pgraph::GraphConfig& gcfg, const geom::FeatureConfig& fcfg,
                               const TrainConfig& cfg);

struct Stage2Artifacts {
  PredictorParams predictor;
  std::vector<TrainLogRow> log;
};

Stage2Artifacts train_predictor(const std::vector<ingest::AnnotatedProtein>& dataset,
                                Stage1Artifacts& stage1, const pgraph::GraphConfig& gcfg,
                                const geom::FeatureConfig& fcfg, const TrainConfig& cfg);

struct Prediction {
  std::vector<int> token_index;
  std::vector<int> token_class;
  std::vector<int> predicted_class;
  std::vector<std::vector<double>> probabilities;  // rows sum to 1
};

Prediction predict(const ingest::Protein& p, EncoderParams& enc, const codebook::Codebook& cb,
                   PredictorParams& pred, const pgraph::GraphConfig& gcfg,
                   const geom::FeatureConfig& fcfg);

// Model directory layout: encoder.mtk, decoder.mtk, codebook.mtk,
// codebook.json, predictor.mtk (after stage 2), model.json.
void save_stage1(const std::string& dir, Stage1Artifacts& art, const TrainConfig& cfg,
                 const pgraph::GraphConfig& gcfg, const geom::FeatureConfig& fcfg);
Stage1Artifacts load_stage1(const std::string& dir, pgraph::GraphConfig* gcfg = nullptr,
                            geom::FeatureConfig* fcfg = nullptr, TrainConfig* cfg = nullptr);
void save_stage2(const std::string& dir, Stage2Artifacts& art);
Stage2Artifacts load_stage2(const std::string& dir, int token_dim, int edge_dim);

}  // namespace metoken::model
