#include "metoken/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "metoken/checkpoint.hpp"
#include "metoken/common.hpp"
#include "metoken/geometry.hpp"

namespace metoken::model {

using diff::Tensor;
using diff::Var;

void TrainConfig::validate() const {
  if (stage1_steps < 1 || stage2_steps < 1) throw ConfigError("train steps must be >= 1");
  if (!(lr > 0)) throw ConfigError("train.lr must be > 0");
  if (batch_proteins < 1) throw ConfigError("train.batch_proteins must be >= 1");
  if (d_h < 1) throw ConfigError("model.d_h must be >= 1");
  if (sub_size < 1) throw ConfigError("model.sub_size must be >= 1");
  if (num_classes < 1) throw ConfigError("model.num_classes must be >= 1");
  vq.validate();
}

namespace {

Linear init_linear(int in_dim, int out_dim, Rng& rng) {
  Tensor w({size_t(in_dim), size_t(out_dim)});
  double stddev = std::sqrt(2.0 / double(in_dim));
  for (double& v : w.data) v = rng.normal(0.0, stddev);
  Linear l;
  l.w = diff::make_leaf(std::move(w), true);
  // small positive bias keeps dead-input rows off the exact relu kink
  l.b = diff::make_leaf(Tensor({size_t(out_dim)}, 0.01), true);
  return l;
}

MpLayer init_mp_layer(int d_h, int edge_dim, Rng& rng) {
  MpLayer l;
  l.msg0 = init_linear(2 * d_h + edge_dim, d_h, rng);
  l.msg1 = init_linear(d_h, d_h, rng);
  l.msg2 = init_linear(d_h, d_h, rng);
  l.node0 = init_linear(d_h, d_h, rng);
  l.node1 = init_linear(d_h, d_h, rng);
  l.ln_gamma = diff::make_leaf(Tensor({size_t(d_h)}, 1.0), true);
  l.ln_beta = diff::make_leaf(Tensor({size_t(d_h)}), true);
  return l;
}

Var apply_linear(diff::Tape& t, const Linear& l, Var x) {
  return t.add(t.matmul(x, l.w), l.b);
}

void push_layer_vars(std::vector<std::pair<std::string, Var>>& out, const std::string& prefix,
                     const MpLayer& l) {
  out.emplace_back(prefix + ".msg0.w", l.msg0.w);
  out.emplace_back(prefix + ".msg0.b", l.msg0.b);
  out.emplace_back(prefix + ".msg1.w", l.msg1.w);
  out.emplace_back(prefix + ".msg1.b", l.msg1.b);
  out.emplace_back(prefix + ".msg2.w", l.msg2.w);
  out.emplace_back(prefix + ".msg2.b", l.msg2.b);
  out.emplace_back(prefix + ".node0.w", l.node0.w);
  out.emplace_back(prefix + ".node0.b", l.node0.b);
  out.emplace_back(prefix + ".node1.w", l.node1.w);
  out.emplace_back(prefix + ".node1.b", l.node1.b);
  out.emplace_back(prefix + ".ln_gamma", l.ln_gamma);
  out.emplace_back(prefix + ".ln_beta", l.ln_beta);
}

Var mp_trunk(diff::Tape& tape, const BatchGraph& bg, Var h, const std::array<MpLayer, 3>& layers,
             Var edge_feat) {
  for (const MpLayer& l : layers) {
    Var msg_in;
    if (!bg.edge_src.empty()) {
      Var hs = tape.gather_rows(h, bg.edge_src);
      Var hd = tape.gather_rows(h, bg.edge_dst);
      msg_in = tape.concat_cols({hs, hd, edge_feat});
    } else {
      msg_in = tape.concat_cols({edge_feat});  // zero-row tensor path
    }
    Var m = tape.relu(apply_linear(tape, l.msg0, msg_in));
    m = tape.relu(apply_linear(tape, l.msg1, m));
    m = apply_linear(tape, l.msg2, m);
    Var agg = tape.segment_sum(m, bg.edge_src, size_t(bg.n));
    Var u = tape.relu(apply_linear(tape, l.node0, agg));
    u = apply_linear(tape, l.node1, u);
    Var normed = tape.layer_norm(tape.add(h, u));
    h = tape.add(tape.mul(normed, l.ln_gamma), l.ln_beta);
  }
  return h;
}

}  // namespace

EncoderParams init_encoder(int in_dim, int edge_dim, int d_h, Rng& rng) {
  EncoderParams p;
  p.d_h = d_h;
  p.in_dim = in_dim;
  p.edge_dim = edge_dim;
  p.input = init_linear(in_dim, d_h, rng);
  for (auto& l : p.layers) l = init_mp_layer(d_h, edge_dim, rng);
  return p;
}

DecoderParams init_decoder(int d, int d_h, int out_dim, Rng& rng) {
  DecoderParams p;
  p.l0 = init_linear(d, d_h, rng);
  p.l1 = init_linear(d_h, out_dim, rng);
  return p;
}

PredictorParams init_predictor(int token_dim, int edge_dim, int d_h, int num_classes, Rng& rng) {
  PredictorParams p;
  p.d_h = d_h;
  p.num_classes = num_classes;
  p.input = init_linear(token_dim, d_h, rng);
  for (auto& l : p.layers) l = init_mp_layer(d_h, edge_dim, rng);
  p.head = init_linear(d_h, num_classes, rng);
  return p;
}

std::vector<std::pair<std::string, Var>> named_encoder_vars(EncoderParams& p) {
  std::vector<std::pair<std::string, Var>> out;
  out.emplace_back("input.w", p.input.w);
  out.emplace_back("input.b", p.input.b);
  for (size_t i = 0; i < p.layers.size(); ++i)
    push_layer_vars(out, "layer" + std::to_string(i), p.layers[i]);
  return out;
}

std::vector<std::pair<std::string, Var>> named_decoder_vars(DecoderParams& p) {
  return {{"l0.w", p.l0.w}, {"l0.b", p.l0.b}, {"l1.w", p.l1.w}, {"l1.b", p.l1.b}};
}

std::vector<std::pair<std::string, Var>> named_predictor_vars(PredictorParams& p) {
  std::vector<std::pair<std::string, Var>> out;
  out.emplace_back("input.w", p.input.w);
  out.emplace_back("input.b", p.input.b);
  for (size_t i = 0; i < p.layers.size(); ++i)
    push_layer_vars(out, "layer" + std::to_string(i), p.layers[i]);
  out.emplace_back("head.w", p.head.w);
  out.emplace_back("head.b", p.head.b);
  return out;
}

std::vector<Var> encoder_vars(EncoderParams& p) {
  std::vector<Var> out;
  for (auto& [name, v] : named_encoder_vars(p)) out.push_back(v);
  return out;
}
std::vector<Var> decoder_vars(DecoderParams& p) {
  std::vector<Var> out;
  for (auto& [name, v] : named_decoder_vars(p)) out.push_back(v);
  return out;
}
std::vector<Var> predictor_vars(PredictorParams& p) {
  std::vector<Var> out;
  for (auto& [name, v] : named_predictor_vars(p)) out.push_back(v);
  return out;
}

BatchGraph concat_graphs(const std::vector<const pgraph::ResidueGraph*>& graphs) {
  BatchGraph bg;
  if (graphs.empty()) throw ShapeError("concat_graphs: empty batch");
  int node_dim = graphs[0]->node_dim;
  int edge_dim = graphs[0]->edge_dim;
  size_t total_nodes = 0, total_edges = 0;
  for (const auto* g : graphs) {
    if (g->node_dim != node_dim || g->edge_dim != edge_dim)
      throw ShapeError("concat_graphs: feature dimensions disagree across batch");
    total_nodes += size_t(g->n);
    total_edges += g->edges.size();
  }
  bg.node_feat = Tensor({total_nodes, size_t(node_dim)});
  bg.edge_feat = Tensor({total_edges, size_t(edge_dim)});
  bg.edge_src.reserve(total_edges);
  bg.edge_dst.reserve(total_edges);
  int offset = 0;
  size_t node_row = 0, edge_row = 0;
  for (size_t gi = 0; gi < graphs.size(); ++gi) {
    const pgraph::ResidueGraph& g = *graphs[gi];
    std::copy(g.node_feat.begin(), g.node_feat.end(),
              bg.node_feat.data.begin() + long(node_row * size_t(node_dim)));
    std::copy(g.edge_feat.begin(), g.edge_feat.end(),
              bg.edge_feat.data.begin() + long(edge_row * size_t(edge_dim)));
    for (const pgraph::Edge& e : g.edges) {
      bg.edge_src.push_back(e.i + offset);
      bg.edge_dst.push_back(e.j + offset);
    }
    for (int i = 0; i < g.n; ++i) bg.protein_of.push_back(int(gi));
    if (!g.labels.empty())
      bg.labels.insert(bg.labels.end(), g.labels.begin(), g.labels.end());
    node_row += size_t(g.n);
    edge_row += g.edges.size();
    offset += g.n;
  }
  bg.n = int(total_nodes);
  return bg;
}

Var encode(diff::Tape& tape, const BatchGraph& bg, EncoderParams& enc) {
  Var x = diff::make_const(bg.node_feat);
  Var h = apply_linear(tape, enc.input, x);
  Var e = diff::make_const(bg.edge_feat);
  return mp_trunk(tape, bg, h, enc.layers, e);
}

Var predictor_forward(diff::Tape& tape, const BatchGraph& bg, Var node_input,
                      PredictorParams& pred) {
  Var h = apply_linear(tape, pred.input, node_input);
  Var e = diff::make_const(bg.edge_feat);
  h = mp_trunk(tape, bg, h, pred.layers, e);
  return apply_linear(tape, pred.head, h);
}

Var reconstruct(diff::Tape& tape, Var h_hat, DecoderParams& dec, Var node_feat_target) {
  Var x = tape.relu(apply_linear(tape, dec.l0, h_hat));
  x = apply_linear(tape, dec.l1, x);
  return tape.mse(x, node_feat_target);
}

Var ce_loss(diff::Tape& tape, Var logits, const std::vector<int>& labels, int num_classes) {
  if (logits->value.shape[0] != labels.size())
    throw ShapeError("ce_loss: one label per logit row required");
  for (int lab : labels)
    if (lab < 0 || lab >= num_classes) throw DatasetError("ce_loss: class id out of range");
  Var ls = tape.log_softmax(logits);
  Var picked = tape.gather_cols(ls, labels);
  size_t n = std::max<size_t>(1, labels.size());
  return tape.scale(tape.sum(picked), -1.0 / double(n));
}

std::string log_to_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << "step,tau_v,l_recon,l_u,l_total\n";
  char buf[160];
  for (const TrainLogRow& r : log) {
    std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g,%.17g\n", r.step, r.tau_v, r.l_recon,
                  r.l_u, r.l_total);
    os << buf;
  }
  return os.str();
}

namespace {

// Deterministic epoch-shuffled batch iterator.
struct BatchPicker {
  explicit BatchPicker(size_t n_proteins, int batch, Rng rng)
      : order(n_proteins), batch_size(size_t(batch)), rng_(rng) {
    std::iota(order.begin(), order.end(), 0);
    rng_.shuffle(order);
  }
  std::vector<size_t> next() {
    std::vector<size_t> out;
    for (size_t b = 0; b < batch_size; ++b) {
      if (cursor == order.size()) {
        rng_.shuffle(order);
        cursor = 0;
      }
      out.push_back(order[cursor++]);
    }
    return out;
  }
  std::vector<size_t> order;
  size_t batch_size;
  size_t cursor = 0;
  Rng rng_;
};

double guarded_item(const Var& v, long step) {
  double x = v->value.item();
  if (!std::isfinite(x)) throw TrainError("loss diverged at step " + std::to_string(step));
  return x;
}

}  // namespace

Stage1Artifacts train_codebook(const std::vector<ingest::AnnotatedProtein>& dataset,
                               const pgraph::GraphConfig& gcfg, const geom::FeatureConfig& fcfg,
                               const TrainConfig& cfg) {
  if (dataset.empty()) throw DatasetError("train_codebook: empty dataset");
  cfg.validate();
  gcfg.validate();
  fcfg.validate();
  for (const auto& ap : dataset)
    for (int lab : ap.labels)
      if (lab < 0 || lab >= cfg.num_classes)
        throw DatasetError("train_codebook: label out of range for configured num_classes");

  Rng rng(cfg.seed);
  Rng init_rng = rng.fork(11);
  Stage1Artifacts art;
  art.encoder = init_encoder(fcfg.node_dim(), fcfg.edge_dim(), cfg.d_h, init_rng);
  art.decoder = init_decoder(cfg.d_h, cfg.d_h, fcfg.node_dim(), init_rng);
  art.cb = codebook::init_codebook(cfg.num_classes, cfg.sub_size, cfg.d_h,
                                   rng.fork(12).next_u64());

  codebook::VQConfig vq = cfg.vq.resolved(cfg.stage1_steps);

  std::vector<Var> params = encoder_vars(art.encoder);
  for (Var& v : decoder_vars(art.decoder)) params.push_back(v);
  params.push_back(art.cb.embeddings);

  diff::OptimState opt;
  opt.lr = cfg.lr;
  BatchPicker picker(dataset.size(), cfg.batch_proteins, rng.fork(13));
  Rng noise_rng = rng.fork(14);

  for (long step = 0; step < cfg.stage1_steps; ++step) {
    if (cfg.lr_decay)
      opt.lr = cfg.lr * (1.0 - 0.9 * double(step) / double(std::max(1L, cfg.stage1_steps)));
    std::vector<size_t> batch_idx = picker.next();
    std::vector<pgraph::ResidueGraph> graphs;
    graphs.reserve(batch_idx.size());
    for (size_t idx : batch_idx) {
      if (cfg.augment_noise && fcfg.noise_sigma > 0) {
        ingest::AnnotatedProtein noisy = dataset[idx];
        noisy.protein = geom::perturb_coords(noisy.protein, fcfg, noise_rng.next_u64());
        graphs.push_back(pgraph::build_graph(noisy, gcfg, fcfg));
      } else {
        graphs.push_back(pgraph::build_graph(dataset[idx], gcfg, fcfg));
      }
    }
    std::vector<const pgraph::ResidueGraph*> ptrs;
    for (const auto& g : graphs) ptrs.push_back(&g);
    BatchGraph bg = concat_graphs(ptrs);

    double tau_v = codebook::anneal_tau(step, vq);
    diff::Tape tape;
    Var h = encode(tape, bg, art.encoder);
    Var x_target = diff::make_const(bg.node_feat);

    Var loss, recon;
    double l_u_val = 0.0;
    if (vq.mode == codebook::VQConfig::Mode::TemperatureScaled) {
      auto [weights, h_hat] =
          codebook::soft_assign(tape, h, art.cb, tau_v, vq.masked_assign ? &bg.labels : nullptr);
      recon = cfg.recon_target == TrainConfig::ReconTarget::Features
                  ? reconstruct(tape, h_hat, art.decoder, x_target)
                  : tape.mse(h_hat, tape.sg(h));
      if (vq.alpha > 0) {
        Var l_u = codebook::uniform_loss(tape, art.cb, vq.tau_u);
        l_u_val = guarded_item(l_u, step);
        loss = tape.add(recon, tape.scale(l_u, vq.alpha));
      } else {
        loss = recon;
      }
    } else {
      std::vector<int> z = codebook::vanilla_assign(h->value, art.cb);
      Var e_z = tape.gather_rows(art.cb.embeddings, z);
      recon = cfg.recon_target == TrainConfig::ReconTarget::Features
                  ? reconstruct(tape, e_z, art.decoder, x_target)
                  : tape.mse(e_z, tape.sg(h));
      size_t dim = size_t(cfg.d_h);
      Var codebook_term = tape.scale(tape.mse(tape.sg(h), e_z), double(dim));
      Var commit_term = tape.scale(tape.mse(h, tape.sg(e_z)), double(dim) * vq.beta);
      loss = tape.add(recon, tape.add(codebook_term, commit_term));
    }

    double l_total = guarded_item(loss, step);
    double l_recon = guarded_item(recon, step);
    art.log.push_back({step, tau_v, l_recon, l_u_val, l_total});

    tape.backward(loss);
    diff::adam_step(params, opt);
    diff::zero_grads(params);
  }
  return art;
}

Stage2Artifacts train_predictor(const std::vector<ingest::AnnotatedProtein>& dataset,
                                Stage1Artifacts& stage1, const pgraph::GraphConfig& gcfg,
                                const geom::FeatureConfig& fcfg, const TrainConfig& cfg) {
  if (dataset.empty()) throw DatasetError("train_predictor: empty dataset");
  cfg.validate();

  Rng rng(cfg.seed);
  Rng init_rng = rng.fork(21);
  Stage2Artifacts art;
  art.predictor =
      init_predictor(cfg.d_h, fcfg.edge_dim(), cfg.d_h, cfg.num_classes, init_rng);

  // Frozen-encoder outputs and assignments are fixed per protein; cache them.
  std::vector<pgraph::ResidueGraph> graphs;
  std::vector<Tensor> enc_out;
  std::vector<std::vector<int>> tokens;
  graphs.reserve(dataset.size());
  for (const auto& ap : dataset) {
    graphs.push_back(pgraph::build_graph(ap, gcfg, fcfg));
    std::vector<const pgraph::ResidueGraph*> one{&graphs.back()};
    BatchGraph bg = concat_graphs(one);
    diff::Tape tape;
    Var h = encode(tape, bg, stage1.encoder);
    enc_out.push_back(h->value);
    tokens.push_back(codebook::hard_assign(h->value, stage1.cb));
  }

  std::vector<Var> params = predictor_vars(art.predictor);
  if (cfg.joint_finetune) params.push_back(stage1.cb.embeddings);

  diff::OptimState opt;
  opt.lr = cfg.lr;
  BatchPicker picker(dataset.size(), cfg.batch_proteins, rng.fork(22));

  for (long step = 0; step < cfg.stage2_steps; ++step) {
    if (cfg.lr_decay)
      opt.lr = cfg.lr * (1.0 - 0.9 * double(step) / double(std::max(1L, cfg.stage2_steps)));
    std::vector<size_t> batch_idx = picker.next();
    std::vector<const pgraph::ResidueGraph*> ptrs;
    for (size_t idx : batch_idx) ptrs.push_back(&graphs[idx]);
    BatchGraph bg = concat_graphs(ptrs);

    std::vector<int> z;
    for (size_t idx : batch_idx) {
      if (cfg.joint_finetune) {
        // embeddings move during fine-tuning; re-assign from the cached h
        std::vector<int> zi = codebook::hard_assign(enc_out[idx], stage1.cb);
        z.insert(z.end(), zi.begin(), zi.end());
      } else {
        z.insert(z.end(), tokens[idx].begin(), tokens[idx].end());
      }
    }

    diff::Tape tape;
    Var node_input;
    if (cfg.joint_finetune) {
      node_input = tape.gather_rows(stage1.cb.embeddings, z);
    } else {
      const Tensor& e = stage1.cb.embeddings->value;
      size_t d = e.shape[1];
      Tensor gathered({z.size(), d});
      for (size_t r = 0; r < z.size(); ++r)
        std::copy_n(e.data.data() + size_t(z[r]) * d, d, gathered.data.data() + r * d);
      node_input = diff::make_const(std::move(gathered));
    }
    Var logits = predictor_forward(tape, bg, node_input, art.predictor);
    Var loss = ce_loss(tape, logits, bg.labels, cfg.num_classes);

    double l_total = guarded_item(loss, step);
    art.log.push_back({step, 0.0, 0.0, 0.0, l_total});

    tape.backward(loss);
    diff::adam_step(params, opt);
    diff::zero_grads(params);
  }
  return art;
}

Prediction predict(const ingest::Protein& p, EncoderParams& enc, const codebook::Codebook& cb,
                   PredictorParams& pred, const pgraph::GraphConfig& gcfg,
                   const geom::FeatureConfig& fcfg) {
  if (enc.in_dim != fcfg.node_dim())
    throw CheckpointError("encoder input dimension does not match the feature config");
  if (cb.dim() != enc.d_h)
    throw CheckpointError("codebook dimension does not match the encoder width");
  if (pred.num_classes != cb.num_classes)
    throw CheckpointError("predictor head does not match the codebook class count");

  pgraph::ResidueGraph g = pgraph::build_graph(p, gcfg, fcfg);
  std::vector<const pgraph::ResidueGraph*> one{&g};
  BatchGraph bg = concat_graphs(one);

  diff::Tape tape;
  Var h = encode(tape, bg, enc);
  Prediction out;
  out.token_index = codebook::hard_assign(h->value, cb);
  for (int z : out.token_index) out.token_class.push_back(cb.token_class[size_t(z)]);

  const Tensor& e = cb.embeddings->value;
  size_t d = e.shape[1];
  Tensor gathered({out.token_index.size(), d});
  for (size_t r = 0; r < out.token_index.size(); ++r)
    std::copy_n(e.data.data() + size_t(out.token_index[r]) * d, d, gathered.data.data() + r * d);
  Var logits = predictor_forward(tape, bg, diff::make_const(std::move(gathered)), pred);
  diff::Tape tmp;
  Var probs = tmp.softmax(logits);

  size_t K = size_t(pred.num_classes);
  for (size_t r = 0; r < size_t(bg.n); ++r) {
    std::vector<double> row(K);
    for (size_t c = 0; c < K; ++c) row[c] = probs->value.data[r * K + c];
    int arg = int(std::max_element(row.begin(), row.end()) - row.begin());
    out.predicted_class.push_back(arg);
    out.probabilities.push_back(std::move(row));
  }
  return out;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

void save_named(const std::string& path, std::vector<std::pair<std::string, Var>> named) {
  std::vector<std::pair<std::string, const Tensor*>> arrays;
  for (auto& [name, v] : named) arrays.emplace_back(name, &v->value);
  diff::save_arrays(path, arrays);
}

void load_named(const std::string& path, std::vector<std::pair<std::string, Var>> named) {
  auto arrays = diff::load_arrays(path);
  for (auto& [name, v] : named) {
    auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("'" + path + "': missing array '" + name + "'");
    if (it->second.shape != v->value.shape)
      throw CheckpointError("'" + path + "': shape mismatch for '" + name + "'");
    v->value = it->second;
  }
}

}  // namespace

void save_stage1(const std::string& dir, Stage1Artifacts& art, const TrainConfig& cfg,
                 const pgraph::GraphConfig& gcfg, const geom::FeatureConfig& fcfg) {
  std::filesystem::create_directories(dir);
  save_named(dir + "/encoder.mtk", named_encoder_vars(art.encoder));
  save_named(dir + "/decoder.mtk", named_decoder_vars(art.decoder));

  Tensor token_class({art.cb.token_class.size()});
  for (size_t i = 0; i < art.cb.token_class.size(); ++i)
    token_class.data[i] = double(art.cb.token_class[i]);
  diff::save_arrays(dir + "/codebook.mtk", {{"embeddings", &art.cb.embeddings->value},
                                            {"token_class", &token_class}});
  nlohmann::json side;
  side["num_classes"] = art.cb.num_classes;
  side["sub_size"] = art.cb.sub_size;
  side["d"] = art.cb.dim();
  side["tau_u"] = cfg.vq.tau_u;
  side["format_version"] = 1;
  std::ofstream(dir + "/codebook.json") << side.dump(2) << "\n";

  nlohmann::json mj;
  mj["format_version"] = 1;
  mj["d_h"] = cfg.d_h;
  mj["sub_size"] = cfg.sub_size;
  mj["num_classes"] = cfg.num_classes;
  mj["node_dim"] = fcfg.node_dim();
  mj["edge_dim"] = fcfg.edge_dim();
  mj["feature"] = {{"rbf_count", fcfg.rbf_count},
                   {"rbf_min", fcfg.rbf_min},
                   {"rbf_max", fcfg.rbf_max},
                   {"noise_sigma", fcfg.noise_sigma}};
  mj["graph"] = {{"d_s", gcfg.d_s},
                 {"d_r", gcfg.d_r},
                 {"k", gcfg.k},
                 {"k_hop", gcfg.k_hop},
                 {"strict_intersection", gcfg.strict_intersection}};
  std::ofstream(dir + "/model.json") << mj.dump(2) << "\n";
}

Stage1Artifacts load_stage1(const std::string& dir, pgraph::GraphConfig* gcfg_out,
                            geom::FeatureConfig* fcfg_out, TrainConfig* cfg_out) {
  std::ifstream mf(dir + "/model.json");
  if (!mf) throw CheckpointError("cannot open '" + dir + "/model.json'");
  nlohmann::json mj;
  try {
    mf >> mj;
  } catch (const std::exception& e) {
    throw CheckpointError(std::string("model.json: ") + e.what());
  }
  geom::FeatureConfig fcfg;
  fcfg.rbf_count = mj["feature"]["rbf_count"].get<int>();
  fcfg.rbf_min = mj["feature"]["rbf_min"].get<double>();
  fcfg.rbf_max = mj["feature"]["rbf_max"].get<double>();
  fcfg.noise_sigma = mj["feature"]["noise_sigma"].get<double>();
  pgraph::GraphConfig gcfg;
  gcfg.d_s = mj["graph"]["d_s"].get<int>();
  gcfg.d_r = mj["graph"]["d_r"].get<double>();
  gcfg.k = mj["graph"]["k"].get<int>();
  gcfg.k_hop = mj["graph"]["k_hop"].get<int>();
  gcfg.strict_intersection = mj["graph"]["strict_intersection"].get<bool>();
  int d_h = mj["d_h"].get<int>();
  int sub_size = mj["sub_size"].get<int>();
  int num_classes = mj["num_classes"].get<int>();

  Rng dummy(0);
  Stage1Artifacts art;
  art.encoder = init_encoder(fcfg.node_dim(), fcfg.edge_dim(), d_h, dummy);
  art.decoder = init_decoder(d_h, d_h, fcfg.node_dim(), dummy);
  art.cb = codebook::init_codebook(num_classes, sub_size, d_h, 0);
  load_named(dir + "/encoder.mtk", named_encoder_vars(art.encoder));
  load_named(dir + "/decoder.mtk", named_decoder_vars(art.decoder));
  auto cbarrays = diff::load_arrays(dir + "/codebook.mtk");
  if (!cbarrays.count("embeddings") || !cbarrays.count("token_class"))
    throw CheckpointError("codebook.mtk: missing arrays");
  if (cbarrays["embeddings"].shape != art.cb.embeddings->value.shape)
    throw CheckpointError("codebook.mtk: embedding shape mismatch");
  art.cb.embeddings->value = cbarrays["embeddings"];
  const Tensor& tc = cbarrays["token_class"];
  if (tc.numel() != size_t(art.cb.size())) throw CheckpointError("codebook.mtk: bad token_class");
  for (size_t i = 0; i < tc.numel(); ++i) art.cb.token_class[i] = int(tc.data[i]);

  if (gcfg_out) *gcfg_out = gcfg;
  if (fcfg_out) *fcfg_out = fcfg;
  if (cfg_out) {
    cfg_out->d_h = d_h;
    cfg_out->sub_size = sub_size;
    cfg_out->num_classes = num_classes;
  }
  return art;
}

void save_stage2(const std::string& dir, Stage2Artifacts& art) {
  std::filesystem::create_directories(dir);
  save_named(dir + "/predictor.mtk", named_predictor_vars(art.predictor));
}

Stage2Artifacts load_stage2(const std::string& dir, int token_dim, int edge_dim) {
  auto arrays = diff::load_arrays(dir + "/predictor.mtk");
  auto head_it = arrays.find("head.w");
  if (head_it == arrays.end()) throw CheckpointError("predictor.mtk: missing head");
  int num_classes = int(head_it->second.shape[1]);
  int d_h = int(head_it->second.shape[0]);
  Rng dummy(0);
  Stage2Artifacts art;
  art.predictor = init_predictor(token_dim, edge_dim, d_h, num_classes, dummy);
  load_named(dir + "/predictor.mtk", named_predictor_vars(art.predictor));
  return art;
}

}  // namespace metoken::model
