#pragma once

#include "cmasge/pipeline/config.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>

namespace cmasge {

std::string code_version();

/// manifest.txt: `manifest.*` keys (command, code version, seed, config hash)
/// followed by the full config dump. Loads back as a config.
void write_manifest(const std::filesystem::path& dir, const RunConfig& cfg,
                    const std::string& command);

struct StageOptions {
  std::optional<std::filesystem::path> out;          // replaces the stage's default directory
  std::optional<std::filesystem::path> annotations;  // build-graph input override
  std::optional<std::filesystem::path> names;        // build-graph label names override
  std::optional<std::filesystem::path> resume;       // train: checkpoint to continue
  std::ostream* progress = nullptr;
};

// Each stage validates `cfg`, writes its outputs plus a manifest, and returns
// the output directory.
std::filesystem::path run_gen_synth(const RunConfig& cfg, const StageOptions& opt = {});
std::filesystem::path run_build_graph(const RunConfig& cfg, const StageOptions& opt = {});
std::filesystem::path run_train_embeddings(const RunConfig& cfg, const StageOptions& opt = {});
std::filesystem::path run_train(const RunConfig& cfg, const StageOptions& opt = {});
std::filesystem::path run_eval(const RunConfig& cfg, const StageOptions& opt = {});
std::filesystem::path run_export_attention(const RunConfig& cfg, const StageOptions& opt = {});

}  // namespace cmasge
