#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cropmatch/attack.hpp"
#include "cropmatch/encoders.hpp"
#include "cropmatch/evaluation.hpp"
#include "cropmatch/llmclient.hpp"

#include "json.hpp"

namespace cropmatch {

inline constexpr const char* kToolVersion = "0.1.0";

struct EncoderSpec {
  std::string kind = "toy";
  std::uint64_t seed = 0;
  int input_side = 64;
  int embed_dim = 128;
  int patch_size = 16;
  bool linear = false;
};

struct RunConfig {
  std::string corpus_dir;
  std::string output_dir = "out";
  int image_side = 64;
  std::uint64_t seed = 0;
  int parallelism = 1;
  std::vector<std::pair<std::string, std::string>> pairs;  // empty: derangement
  AttackConfig attack;
  std::vector<EncoderSpec> ensemble;
  EvaluationConfig evaluation;
  std::string annotations_path;
  bool threshold_sweep = false;
  int audit_sample_every = 5;
  JudgeConfig judge;
  nlohmann::json echo;  // merged effective config
};

/// Parses and validates; every problem is reported in one exception message.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const nlohmann::json& j);

/// Applies dotted-path overrides ("attack.epsilon_255=8") onto raw JSON.
nlohmann::json apply_overrides(nlohmann::json base,
                               const std::vector<std::string>& overrides);

/// Seeded derangement via Sattolo's algorithm: a single cycle, so no index
/// maps to itself. n must be at least 2.
std::vector<int> derangement(int n, std::uint64_t seed);

EncoderEnsemble build_ensemble(const std::vector<EncoderSpec>& specs);

struct ImageOutcome {
  std::string id;
  int index = 0;
  std::uint64_t seed = 0;
  std::string target_id;
  std::string input_sha256;
  std::string adv_file;
  std::string adv_sha256;
  std::string trace_file;
  int crop_fallbacks = 0;
  std::int64_t millis = 0;
  double clean_similarity = 0.0;
  double final_similarity = 0.0;
  std::string error;  // empty on success
};

struct RunSummary {
  std::vector<ImageOutcome> images;
  int failures = 0;
  std::int64_t total_millis = 0;
  std::string manifest_path;
};

/// Attack every corpus image toward its assigned target; write adversarial
/// files, traces, and the manifest (last).
RunSummary cmd_attack(const RunConfig& cfg);

struct EvaluateSummary {
  std::vector<EvaluationRecord> records;
  double asr = 0.0;
  double kmr_a = 0.0, kmr_b = 0.0, kmr_c = 0.0;
  double vague = 0.0;
  int judge_failures = 0;
};

EvaluateSummary cmd_evaluate(const RunConfig& cfg, const std::string& adv_dir);

struct AnalyzeSummary {
  int images = 0;
  double mean_ks = 0.0;
  int central_dominant = 0;  // images whose center half-area mean exceeds
                             // the margin mean
};

AnalyzeSummary cmd_analyze(const RunConfig& cfg, const std::string& adv_dir,
                           const std::string& clean_dir,
                           const std::string& out_dir, int heatmap_cell = 8);

struct AblateSummary {
  int cells = 0;
  std::string table_path;
};

/// Expands the grid JSON over attack parameters, refuses when the cell count
/// exceeds max_cells, runs one attack per cell, writes a comparison table.
AblateSummary cmd_ablate(const RunConfig& base, const nlohmann::json& grid,
                         int max_cells, const std::string& out_dir);

}  // namespace cropmatch
