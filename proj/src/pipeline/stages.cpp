#include "cmasge/pipeline/stages.hpp"

#include "cmasge/pipeline/attention_export.hpp"
#include "cmasge/pipeline/trainer.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>

#ifndef CMASGE_VERSION
#define CMASGE_VERSION "unknown"
#endif

namespace cmasge {

namespace fs = std::filesystem;

std::string code_version() { return CMASGE_VERSION; }

void write_manifest(const fs::path& dir, const RunConfig& cfg, const std::string& command) {
  fs::create_directories(dir);
  std::ofstream out(dir / "manifest.txt");
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(cfg.hash()));
  out << "manifest.command = " << command << "\n"
      << "manifest.code_version = " << code_version() << "\n"
      << "manifest.seed = " << cfg.seed << "\n"
      << "manifest.config_hash = " << hash << "\n"
      << cfg.dump();
  if (!out) throw RuntimeFailure("cannot write manifest in " + dir.string());
}

namespace {

fs::path output_dir(const StageOptions& opt, const fs::path& fallback) {
  return opt.out ? *opt.out : fallback;
}

void require_file(const fs::path& p, const std::string& hint) {
  if (!fs::exists(p)) throw ValidationError("missing " + p.string() + " (" + hint + ")");
}

Dataset load_data(const RunConfig& cfg, const std::string& split) {
  const fs::path dir = cfg.data_dir();
  require_file(dir / (split + "_x.cmat"), "run gen-synth first or set paths.data");
  return load_split(dir, split, cfg.task);
}

Matrix classifier_embeddings(const RunConfig& cfg, Index num_labels) {
  if (cfg.model.kind != HeadKind::cma) return Matrix::Zero(num_labels, cfg.asge.dim);
  const fs::path file = cfg.embeddings_dir() / "embeddings.cmat";
  require_file(file, "run train-embeddings first or set paths.embeddings");
  const EmbeddingSet e = load_embeddings(file);
  if (e.size() != num_labels || e.dim() != cfg.asge.dim)
    throw ValidationError("embeddings in " + file.string() + " are " + shape_str(e.vectors) +
                          ", config expects " + shape_str(num_labels, cfg.asge.dim));
  return e.vectors;
}

Model trained_model(const RunConfig& cfg, const Dataset& data) {
  const fs::path ckpt = cfg.train_dir() / "checkpoint.cmck";
  require_file(ckpt, "run train first or set paths.train");
  return restore_model(ckpt, cfg, data.channels(), data.num_labels());
}

}  // namespace

fs::path run_gen_synth(const RunConfig& cfg, const StageOptions& opt) {
  cfg.validate();
  const fs::path dir = output_dir(opt, cfg.data_dir());
  write_synthetic(dir, generate_synthetic(cfg));
  write_manifest(dir, cfg, "gen-synth");
  return dir;
}

fs::path run_build_graph(const RunConfig& cfg, const StageOptions& opt) {
  cfg.validate();
  const fs::path ann = opt.annotations ? *opt.annotations : cfg.data_dir() / "train.tsv";
  const fs::path names = opt.names ? *opt.names : ann.parent_path() / "labels.txt";
  require_file(ann, "pass --annotations or run gen-synth");
  Index n = 0;
  if (fs::exists(names)) {
    std::ifstream in(names);
    std::string line;
    while (std::getline(in, line)) n += !line.empty();
  }
  const AnnotationSet set = read_annotations(ann, n);
  const fs::path dir = output_dir(opt, cfg.graph_dir());
  export_label_graph(dir, build_label_graph(set), read_label_names(names, set.num_labels));
  write_manifest(dir, cfg, "build-graph");
  return dir;
}

fs::path run_train_embeddings(const RunConfig& cfg, const StageOptions& opt) {
  cfg.validate();
  const fs::path graph_file = cfg.graph_dir() / "graph.cmck";
  require_file(graph_file, "run build-graph first or set paths.graph");
  const LabelGraph g = load_label_graph(graph_file);
  AsgeConfig acfg = cfg.asge;
  acfg.seed = cfg.seed;
  const AsgeResult res = train_asge(g.symmetric, acfg);
  const fs::path dir = output_dir(opt, cfg.embeddings_dir());
  export_embeddings(dir, res, embedding_similarity_report(res.embeddings.vectors, g.symmetric,
                                                          acfg.alpha, acfg.cos_eps));
  write_manifest(dir, cfg, "train-embeddings");
  return dir;
}

fs::path run_train(const RunConfig& cfg, const StageOptions& opt) {
  cfg.validate();
  const Dataset train = load_data(cfg, "train");
  const Dataset test = load_data(cfg, "test");
  const fs::path dir = output_dir(opt, cfg.train_dir());
  train_classifier(cfg, train, test, classifier_embeddings(cfg, train.num_labels()), dir,
                   {.resume = opt.resume, .progress = opt.progress});
  write_manifest(dir, cfg, "train");
  return dir;
}

fs::path run_eval(const RunConfig& cfg, const StageOptions& opt) {
  cfg.validate();
  const Dataset test = load_data(cfg, "test");
  Model model = trained_model(cfg, test);
  const MetricReport report =
      metric_report(cfg, {predict_dataset(model, test), test.label_matrix(), test.annotations.ids});
  const fs::path dir = output_dir(opt, cfg.train_dir() / "eval");
  fs::create_directories(dir);
  write_metric_report(dir / "metrics.txt", report);
  std::ofstream table(dir / "metrics_table.txt");
  table << report.table();
  write_manifest(dir, cfg, "eval");
  if (opt.progress != nullptr) *opt.progress << report.table();
  return dir;
}

fs::path run_export_attention(const RunConfig& cfg, const StageOptions& opt) {
  cfg.validate();
  const Dataset test = load_data(cfg, "test");
  Model model = trained_model(cfg, test);
  const fs::path dir = output_dir(opt, cfg.train_dir() / "attention");
  export_attention(model, test, dir, cfg.export_.examples);
  const Localization loc = measure_localization(model, test);
  MetricReport summary;
  summary.set("pairs", static_cast<double>(loc.pairs));
  summary.set("mean_mass", loc.mean_mass);
  summary.set("mean_uniform_mass", loc.mean_uniform);
  summary.set("mass_ratio", loc.mean_uniform > 0 ? loc.mean_mass / loc.mean_uniform : 0.0);
  write_metric_report(dir / "localization.txt", summary);
  write_manifest(dir, cfg, "export-attention");
  return dir;
}

}  // namespace cmasge
