#include "cli.hpp"

#include "cmasge/pipeline/stages.hpp"

#include <CLI11.hpp>

#include <optional>
#include <string>
#include <vector>

namespace cmasge {
namespace {

namespace fs = std::filesystem;

using Stage = fs::path (*)(const RunConfig&, const StageOptions&);

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::vector<std::string> sets;
  bool joint = false;
  std::string resume;
  std::string annotations;
  std::string names;
};

RunConfig resolve(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw ValidationError("config file not found: " + f.config);
    cfg = load_config(f.config);
  }
  for (const auto& s : f.sets) apply_override(cfg, s);
  if (f.seed) cfg.seed = *f.seed;
  if (f.joint) cfg.model.joint = true;
  cfg.validate();
  return cfg;
}

std::optional<fs::path> maybe_path(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return fs::path(s);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Label-graph embeddings and cross-modality attention for multi-label classification",
               "cmasge"};
  app.set_version_flag("--version", code_version());
  app.require_subcommand(1);
  Flags f;
  Stage stage = nullptr;
  std::string command;

  const auto common = [&](CLI::App* sub, Stage fn, const char* config_help) {
    sub->add_option("--config", f.config, config_help);
    sub->add_option("--seed", f.seed, "Override the run seed");
    sub->add_option("--out", f.out, "Output directory for this stage");
    sub->add_option("--set", f.sets, "Config override key=value (repeatable)")->take_all();
    sub->callback([&, sub, fn] {
      stage = fn;
      command = sub->get_name();
    });
    return sub;
  };

  auto* graph = common(app.add_subcommand("build-graph", "Count label co-occurrence and write A, A' and priors"),
                       run_build_graph, "Config file");
  graph->add_option("--annotations", f.annotations, "Annotation file (id<TAB>labels)");
  graph->add_option("--names", f.names, "Label names, one per line");
  common(app.add_subcommand("train-embeddings", "Fit label embeddings to the symmetric graph"),
         run_train_embeddings, "Config file");
  common(app.add_subcommand("gen-synth", "Generate the planted synthetic dataset"), run_gen_synth,
         "Config file");
  auto* train = common(app.add_subcommand("train", "Train backbone and attention head"), run_train,
                       "Config file");
  train->add_flag("--joint", f.joint, "Fine-tune the label embeddings with the classifier");
  train->add_option("--resume", f.resume, "Checkpoint to continue from");
  common(app.add_subcommand("eval", "Evaluate the trained checkpoint on the test split"), run_eval,
         "Config file or a run manifest");
  common(app.add_subcommand("export-attention", "Write attention maps as PGM and CSV"),
         run_export_attention, "Config file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::CallForVersion&) {
    out << code_version() << "\n";
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    const RunConfig cfg = resolve(f);
    StageOptions opt;
    opt.out = maybe_path(f.out);
    opt.annotations = maybe_path(f.annotations);
    opt.names = maybe_path(f.names);
    opt.resume = maybe_path(f.resume);
    opt.progress = &out;
    const fs::path dir = stage(cfg, opt);
    out << command << ": wrote " << dir.string() << "\n";
    return 0;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "failure: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace cmasge
