#include "metoken/cli.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "metoken/common.hpp"
#include "metoken/config.hpp"
#include "metoken/datasetops.hpp"
#include "metoken/ingest.hpp"
#include "metoken/metrics.hpp"
#include "metoken/model.hpp"
#include "metoken/pgraph.hpp"

namespace metoken::cli {

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "flat key=value config file");
  cmd->add_option("--set", opts.overrides, "override a config key, e.g. --set train.lr=0.01");
}

RunConfig make_config(const CommonOpts& opts) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg.load_file(opts.config_path);
  for (const std::string& kv : opts.overrides) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void log_run(const RunConfig& cfg) {
  std::fprintf(stderr, "config_hash=%016llx seed=%llu\n", (unsigned long long)cfg.hash(),
               (unsigned long long)cfg.train.seed);
}

std::vector<double> parse_weights(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ConfigError("bad weight '" + item + "'");
    }
  }
  return out;
}

std::array<double, 3> parse_ratios(const std::string& csv) {
  std::vector<double> v = parse_weights(csv);
  if (v.size() != 3) throw ConfigError("--ratios expects three comma-separated values");
  return {v[0], v[1], v[2]};
}

// Long-tail preset used when --weights is not given: one dominant class,
// geometric decay over the rest.
std::vector<double> default_longtail_weights(int num_classes) {
  std::vector<double> w(static_cast<size_t>(num_classes));
  if (num_classes == 1) {
    w[0] = 1.0;
    return w;
  }
  w[0] = 0.40;
  double mass = 0.0, r = 0.85, cur = 1.0;
  for (int k = 1; k < num_classes; ++k) {
    mass += cur;
    w[size_t(k)] = cur;
    cur *= r;
  }
  for (int k = 1; k < num_classes; ++k) w[size_t(k)] *= (1.0 - w[0]) / mass;
  return w;
}

// --------------------------------------------------------------------------
// featurize

constexpr char kFeatMagic[8] = {'M', 'T', 'K', 'F', 'E', 'A', 'T', '\0'};

struct FeaturizeRecord {
  std::string id;
  uint32_t rows = 0, cols = 0;
  std::vector<double> payload;
  uint64_t checksum = 0;
  std::string graph_json;
};

int cmd_featurize(const std::string& in_path, const std::string& out_path, const RunConfig& cfg,
                  int threads, const std::string& graph_json_path) {
  auto dataset = ingest::read_dataset(in_path);
  std::vector<FeaturizeRecord> records(dataset.size());
  std::atomic<size_t> cursor{0};
  bool want_graphs = !graph_json_path.empty();

  auto worker = [&]() {
    for (;;) {
      size_t i = cursor.fetch_add(1);
      if (i >= dataset.size()) break;
      pgraph::ResidueGraph g = pgraph::build_graph(dataset[i], cfg.graph, cfg.feature);
      FeaturizeRecord& r = records[i];
      r.id = dataset[i].protein.id;
      r.rows = uint32_t(g.n);
      r.cols = uint32_t(g.node_dim);
      r.payload = g.node_feat;
      r.checksum = fnv1a(r.payload.data(), r.payload.size() * sizeof(double));
      if (want_graphs) r.graph_json = pgraph::graph_to_json(g);
    }
  };
  int n_threads = threads > 0 ? threads : int(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min<int>(n_threads, int(dataset.size() ? dataset.size() : 1)));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw DatasetError("cannot open '" + out_path + "' for writing");
  for (const FeaturizeRecord& r : records) {
    out.write(kFeatMagic, 8);
    uint32_t dims[2] = {r.rows, r.cols};
    out.write(reinterpret_cast<const char*>(dims), 8);
    out.write(reinterpret_cast<const char*>(r.payload.data()),
              std::streamsize(r.payload.size() * sizeof(double)));
    std::printf("%s %u %u %016llx\n", r.id.c_str(), r.rows, r.cols,
                (unsigned long long)r.checksum);
  }
  if (!out) throw DatasetError("write failure on '" + out_path + "'");
  if (want_graphs) {
    std::ofstream gj(graph_json_path);
    for (const FeaturizeRecord& r : records) gj << r.graph_json << "\n";
    if (!gj) throw DatasetError("write failure on '" + graph_json_path + "'");
  }
  return 0;
}

// --------------------------------------------------------------------------
// split

int cmd_split(const std::string& in_path, const std::string& manifest_path, double threshold,
              const std::array<double, 3>& ratios, uint64_t seed, const std::string& out_prefix) {
  auto dataset = ingest::read_dataset(in_path);
  std::vector<ingest::Protein> proteins;
  proteins.reserve(dataset.size());
  for (const auto& ap : dataset) proteins.push_back(ap.protein);
  dataops::SplitManifest manifest = dataops::cluster_split(proteins, threshold, ratios, seed);
  std::ofstream(manifest_path) << manifest.to_json() << "\n";

  if (!out_prefix.empty()) {
    std::vector<ingest::AnnotatedProtein> train, val, test;
    for (const auto& ap : dataset) {
      const std::string& s = manifest.split_of.at(ap.protein.id);
      (s == "train" ? train : s == "val" ? val : test).push_back(ap);
    }
    ingest::write_dataset(train, out_prefix + ".train.jsonl");
    ingest::write_dataset(val, out_prefix + ".val.jsonl");
    ingest::write_dataset(test, out_prefix + ".test.jsonl");
  }
  std::printf("proteins=%zu clusters=%zu\n", proteins.size(),
              [&] {
                std::set<int> c;
                for (auto& [id, cid] : manifest.cluster_of) c.insert(cid);
                return c.size();
              }());
  return 0;
}

// --------------------------------------------------------------------------
// training

int cmd_train_codebook(const std::string& in_path, const std::string& out_dir, RunConfig cfg) {
  auto dataset = ingest::read_dataset(in_path);
  model::Stage1Artifacts art = model::train_codebook(dataset, cfg.graph, cfg.feature, cfg.train);
  model::save_stage1(out_dir, art, cfg.train, cfg.graph, cfg.feature);
  std::ofstream(out_dir + "/stage1_log.csv") << model::log_to_csv(art.log);
  std::printf("stage1 done: steps=%ld final_loss=%.6g\n", cfg.train.stage1_steps,
              art.log.empty() ? 0.0 : art.log.back().l_total);
  return 0;
}

int cmd_train_predictor(const std::string& in_path, const std::string& stage1_dir,
                        const std::string& out_dir, RunConfig cfg) {
  auto dataset = ingest::read_dataset(in_path);
  model::Stage1Artifacts stage1 = model::load_stage1(stage1_dir, &cfg.graph, &cfg.feature,
                                                     &cfg.train);
  model::Stage2Artifacts art =
      model::train_predictor(dataset, stage1, cfg.graph, cfg.feature, cfg.train);
  std::filesystem::create_directories(out_dir);
  model::save_stage1(out_dir, stage1, cfg.train, cfg.graph, cfg.feature);
  model::save_stage2(out_dir, art);
  std::ofstream(out_dir + "/stage2_log.csv") << model::log_to_csv(art.log);
  std::printf("stage2 done: steps=%ld final_loss=%.6g\n", cfg.train.stage2_steps,
              art.log.empty() ? 0.0 : art.log.back().l_total);
  return 0;
}

// --------------------------------------------------------------------------
// predict / evaluate / export

struct LoadedModel {
  model::Stage1Artifacts stage1;
  model::Stage2Artifacts stage2;
  pgraph::GraphConfig gcfg;
  geom::FeatureConfig fcfg;
  model::TrainConfig tcfg;
};

LoadedModel load_model(const std::string& dir) {
  LoadedModel m;
  m.stage1 = model::load_stage1(dir, &m.gcfg, &m.fcfg, &m.tcfg);
  m.stage2 = model::load_stage2(dir, m.tcfg.d_h, m.fcfg.edge_dim());
  return m;
}

void write_prediction_lines(std::ostream& out, const std::string& id,
                            const model::Prediction& pred) {
  for (size_t i = 0; i < pred.predicted_class.size(); ++i) {
    nlohmann::json j;
    j["id"] = id;
    j["position"] = i;
    j["token_index"] = pred.token_index[i];
    j["token_class"] = pred.token_class[i];
    j["predicted_class"] = pred.predicted_class[i];
    j["probabilities"] = pred.probabilities[i];
    out << j.dump() << "\n";
  }
}

int cmd_predict(const std::string& in_path, const std::string& model_dir,
                const std::string& out_path) {
  LoadedModel m = load_model(model_dir);
  std::ofstream out(out_path);
  if (!out) throw DatasetError("cannot open '" + out_path + "' for writing");

  std::vector<ingest::Protein> proteins;
  if (in_path.size() > 4 && in_path.substr(in_path.size() - 4) == ".pdb") {
    std::ifstream f(in_path);
    if (!f) throw ParseError("cannot open '" + in_path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    ingest::ParseResult pr = ingest::parse_backbone(ss.str());
    if (pr.dropped_residues)
      std::fprintf(stderr, "dropped %d incomplete residues\n", pr.dropped_residues);
    pr.protein.id = std::filesystem::path(in_path).stem().string();
    proteins.push_back(std::move(pr.protein));
  } else {
    for (auto& ap : ingest::read_dataset(in_path)) proteins.push_back(std::move(ap.protein));
  }
  for (const ingest::Protein& p : proteins) {
    model::Prediction pred = model::predict(p, m.stage1.encoder, m.stage1.cb,
                                            m.stage2.predictor, m.gcfg, m.fcfg);
    write_prediction_lines(out, p.id, pred);
  }
  return 0;
}

int cmd_evaluate(const std::string& in_path, const std::string& model_dir,
                 const std::string& report_path, const std::string& predictions_path) {
  auto dataset = ingest::read_dataset(in_path);
  std::vector<int> y_true, y_pred;
  std::vector<std::vector<double>> scores;
  int num_classes = 0;

  if (!predictions_path.empty()) {
    // Precomputed predictions in the predict output schema, dataset order.
    std::map<std::pair<std::string, size_t>, std::pair<int, std::vector<double>>> by_pos;
    std::ifstream in(predictions_path);
    if (!in) throw DatasetError("cannot open '" + predictions_path + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      nlohmann::json j = nlohmann::json::parse(line);
      by_pos[{j.at("id").get<std::string>(), j.at("position").get<size_t>()}] = {
          j.at("predicted_class").get<int>(), j.at("probabilities").get<std::vector<double>>()};
    }
    for (const auto& ap : dataset) {
      for (size_t i = 0; i < ap.labels.size(); ++i) {
        auto it = by_pos.find({ap.protein.id, i});
        if (it == by_pos.end())
          throw DatasetError("missing prediction for " + ap.protein.id + ":" + std::to_string(i));
        y_true.push_back(ap.labels[i]);
        y_pred.push_back(it->second.first);
        scores.push_back(it->second.second);
        num_classes = std::max(num_classes, int(it->second.second.size()));
      }
    }
  } else {
    LoadedModel m = load_model(model_dir);
    num_classes = m.stage1.cb.num_classes;
    for (const auto& ap : dataset) {
      model::Prediction pred = model::predict(ap.protein, m.stage1.encoder, m.stage1.cb,
                                              m.stage2.predictor, m.gcfg, m.fcfg);
      for (size_t i = 0; i < ap.labels.size(); ++i) {
        y_true.push_back(ap.labels[i]);
        y_pred.push_back(pred.predicted_class[i]);
        scores.push_back(pred.probabilities[i]);
      }
    }
  }
  for (int t : y_true) num_classes = std::max(num_classes, t + 1);
  metrics::EvalReport rep = metrics::evaluate(y_true, y_pred, scores, num_classes);
  std::ofstream(report_path) << rep.to_json() << "\n";
  std::cout << rep.to_table();
  return 0;
}

int cmd_export_embeddings(const std::string& model_dir, const std::string& out_path) {
  model::Stage1Artifacts stage1 = model::load_stage1(model_dir);
  std::ofstream out(out_path);
  if (!out) throw DatasetError("cannot open '" + out_path + "' for writing");
  int d = stage1.cb.dim();
  out << "token_index,token_class";
  for (int c = 0; c < d; ++c) out << ",e" << c;
  out << "\n";
  char buf[40];
  for (int t = 0; t < stage1.cb.size(); ++t) {
    out << t << "," << stage1.cb.token_class[size_t(t)];
    for (int c = 0; c < d; ++c) {
      std::snprintf(buf, sizeof(buf), "%.17g",
                    stage1.cb.embeddings->value.data[size_t(t) * size_t(d) + size_t(c)]);
      out << "," << buf;
    }
    out << "\n";
  }
  return 0;
}

int cmd_synth(const std::string& out_path, uint64_t seed, int n, const std::string& weights_csv,
              int num_classes, int min_len, int max_len, const std::string& rule_path) {
  std::vector<double> weights = weights_csv.empty() ? default_longtail_weights(num_classes)
                                                    : parse_weights(weights_csv);
  dataops::SynthResult res = dataops::synth_longtail(seed, n, weights, min_len, max_len);
  ingest::write_dataset(res.proteins, out_path);
  if (!rule_path.empty()) std::ofstream(rule_path) << res.rule.to_json() << "\n";
  long residues = 0;
  for (const auto& ap : res.proteins) residues += ap.protein.size();
  std::printf("proteins=%d residues=%ld classes=%zu\n", n, residues, weights.size());
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"metoken: micro-environment tokenization for residue-level PTM type prediction"};
  app.require_subcommand(1);

  std::ostringstream keys;
  keys << "Config keys (use --config FILE or --set KEY=VALUE):\n";
  for (const auto& [key, help] : RunConfig::key_help())
    keys << "  " << key << "  -  " << help << "\n";
  app.footer(keys.str());

  CommonOpts common;

  // featurize
  auto* featurize = app.add_subcommand("featurize", "parse + graph + node-feature dump");
  std::string f_in, f_out, f_graph_json;
  int f_threads = 0;
  featurize->add_option("input", f_in, "dataset JSONL")->required();
  featurize->add_option("output", f_out, "binary feature file")->required();
  featurize->add_option("--threads", f_threads, "worker threads (default: hardware)");
  featurize->add_option("--graph-json", f_graph_json, "also dump typed edge lists as JSONL");
  add_common(featurize, common);

  // split
  auto* split = app.add_subcommand("split", "identity clustering and train/val/test split");
  std::string s_in, s_manifest, s_ratios = "0.8,0.1,0.1", s_prefix;
  double s_threshold = 0.40;
  uint64_t s_seed = 0;
  split->add_option("input", s_in, "dataset JSONL")->required();
  split->add_option("manifest", s_manifest, "output manifest JSON")->required();
  split->add_option("--threshold", s_threshold, "identity threshold (default 0.40)");
  split->add_option("--ratios", s_ratios, "train,val,test residue ratios");
  split->add_option("--seed", s_seed, "shuffle seed");
  split->add_option("--out-prefix", s_prefix, "also write <prefix>.{train,val,test}.jsonl");

  // train-codebook
  auto* tc = app.add_subcommand("train-codebook", "stage 1: encoder + codebook training");
  std::string tc_in, tc_out;
  tc->add_option("input", tc_in, "training JSONL")->required();
  tc->add_option("out_dir", tc_out, "output directory")->required();
  add_common(tc, common);

  // train-predictor
  auto* tp = app.add_subcommand("train-predictor", "stage 2: quantized-token predictor");
  std::string tp_in, tp_stage1, tp_out;
  tp->add_option("input", tp_in, "training JSONL")->required();
  tp->add_option("stage1_dir", tp_stage1, "stage-1 model directory")->required();
  tp->add_option("out_dir", tp_out, "output directory")->required();
  add_common(tp, common);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "full metric report on a labeled dataset");
  std::string ev_in, ev_model, ev_report, ev_pred;
  ev->add_option("input", ev_in, "test JSONL")->required();
  ev->add_option("model_dir", ev_model, "trained model directory, or '-' with --predictions")
      ->required();
  ev->add_option("report", ev_report, "output report JSON")->required();
  ev->add_option("--predictions", ev_pred, "evaluate precomputed predict output instead");

  // predict
  auto* pr = app.add_subcommand("predict", "per-residue tokens and class probabilities");
  std::string pr_in, pr_model, pr_out;
  pr->add_option("input", pr_in, "PDB file or dataset JSONL")->required();
  pr->add_option("model_dir", pr_model, "trained model directory")->required();
  pr->add_option("output", pr_out, "predictions JSONL")->required();

  // export-embeddings
  auto* ex = app.add_subcommand("export-embeddings", "token embeddings as CSV");
  std::string ex_model, ex_out;
  ex->add_option("model_dir", ex_model, "trained model directory")->required();
  ex->add_option("output", ex_out, "CSV path")->required();

  // synth
  auto* sy = app.add_subcommand("synth", "synthetic long-tail dataset generator");
  std::string sy_out, sy_weights, sy_rule;
  uint64_t sy_seed = 1;
  int sy_n = 100, sy_classes = 26, sy_min = 24, sy_max = 60;
  sy->add_option("output", sy_out, "dataset JSONL")->required();
  sy->add_option("--seed", sy_seed, "generator seed");
  sy->add_option("--n", sy_n, "protein count");
  sy->add_option("--weights", sy_weights, "comma-separated class weights (sum 1)");
  sy->add_option("--classes", sy_classes, "class count for the default weight preset");
  sy->add_option("--min-len", sy_min, "minimum residues per protein");
  sy->add_option("--max-len", sy_max, "maximum residues per protein");
  sy->add_option("--rule-json", sy_rule, "also record the generating rule");

  std::vector<const char*> argv;
  argv.push_back("metoken");
  for (const std::string& a : args) argv.push_back(a.c_str());

  try {
    app.parse(int(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (featurize->parsed()) {
      RunConfig cfg = make_config(common);
      log_run(cfg);
      return cmd_featurize(f_in, f_out, cfg, f_threads, f_graph_json);
    }
    if (split->parsed())
      return cmd_split(s_in, s_manifest, s_threshold, parse_ratios(s_ratios), s_seed, s_prefix);
    if (tc->parsed()) {
      RunConfig cfg = make_config(common);
      log_run(cfg);
      return cmd_train_codebook(tc_in, tc_out, cfg);
    }
    if (tp->parsed()) {
      RunConfig cfg = make_config(common);
      log_run(cfg);
      return cmd_train_predictor(tp_in, tp_stage1, tp_out, cfg);
    }
    if (ev->parsed()) {
      if ((ev_model.empty() || ev_model == "-") && ev_pred.empty())
        throw ConfigError("evaluate: need a model_dir or --predictions");
      return cmd_evaluate(ev_in, ev_model, ev_report, ev_pred);
    }
    if (pr->parsed()) return cmd_predict(pr_in, pr_model, pr_out);
    if (ex->parsed()) return cmd_export_embeddings(ex_model, ex_out);
    if (sy->parsed())
      return cmd_synth(sy_out, sy_seed, sy_n, sy_weights, sy_classes, sy_min, sy_max, sy_rule);
  } catch (const Error& e) {
    std::fprintf(stderr, "error code=%d class=%s msg=\"%s\"\n", e.exit_code(), e.name().c_str(),
                 e.what());
    return e.exit_code();
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error code=9 class=Internal msg=\"%s\"\n", e.what());
    return 9;
  }
  return 1;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace metoken::cli
