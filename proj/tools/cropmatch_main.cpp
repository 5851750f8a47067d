#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cropmatch/runner.hpp"

namespace {

cropmatch::RunConfig load_config(const std::string& path,
                                 const std::vector<std::string>& sets) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded())
    throw std::invalid_argument("config is not valid JSON: " + path);
  return cropmatch::parse_run_config(cropmatch::apply_overrides(j, sets));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"crop-matched embedding transfer attack toolkit"};
  app.set_version_flag("--version", cropmatch::kToolVersion);
  app.require_subcommand(1);

  std::string config_path, adv_dir, clean_dir, out_dir, grid_path, judge_mode;
  std::vector<std::string> sets;
  int parallel = 0, cell = 8, max_cells = 64;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "run config JSON")
        ->required()
        ->check(CLI::ExistingFile);
    cmd->add_option("--set", sets,
                    "dotted-path config override, e.g. attack.steps=100");
  };

  CLI::App* attack =
      app.add_subcommand("attack", "generate adversarial images");
  add_common(attack);
  attack->add_option("--out", out_dir, "output directory override");
  attack->add_option("--parallel", parallel, "worker thread override");

  CLI::App* evaluate =
      app.add_subcommand("evaluate", "judge-backed evaluation of a run");
  add_common(evaluate);
  evaluate->add_option("--adv", adv_dir, "attack output directory")
      ->required();
  evaluate->add_option("--out", out_dir, "report directory override");
  evaluate->add_option("--judge-mode", judge_mode, "live, record, or replay");

  CLI::App* analyze =
      app.add_subcommand("analyze", "perturbation distribution analysis");
  add_common(analyze);
  analyze->add_option("--adv", adv_dir, "adversarial image directory")
      ->required();
  analyze->add_option("--clean", clean_dir, "clean image directory")
      ->required();
  analyze->add_option("--out", out_dir, "analysis output directory")
      ->required();
  analyze->add_option("--cell", cell, "heatmap cell size");

  CLI::App* ablate = app.add_subcommand("ablate", "attack parameter sweep");
  add_common(ablate);
  ablate->add_option("--grid", grid_path, "grid JSON file")
      ->required()
      ->check(CLI::ExistingFile);
  ablate->add_option("--out", out_dir, "sweep output directory")->required();
  ablate->add_option("--max-cells", max_cells, "refuse larger grids");

  CLI11_PARSE(app, argc, argv);

  try {
    if (attack->parsed()) {
      if (!out_dir.empty()) sets.push_back("output_dir=" + out_dir);
      if (parallel > 0) sets.push_back("parallelism=" + std::to_string(parallel));
      const auto cfg = load_config(config_path, sets);
      const auto s = cropmatch::cmd_attack(cfg);
      for (const auto& img : s.images)
        if (!img.error.empty())
          std::cerr << "failed " << img.id << ": " << img.error << "\n";
      std::cout << "attacked " << s.images.size() << " images ("
                << s.failures << " failures) in " << s.total_millis
                << " ms\nmanifest: " << s.manifest_path << "\n";
      return s.failures == 0 ? 0 : 1;
    }
    if (evaluate->parsed()) {
      if (!out_dir.empty()) sets.push_back("output_dir=" + out_dir);
      if (!judge_mode.empty()) sets.push_back("judge.mode=" + judge_mode);
      const auto cfg = load_config(config_path, sets);
      const auto s = cropmatch::cmd_evaluate(cfg, adv_dir);
      for (const auto& rec : s.records)
        if (rec.judge_failed)
          std::cerr << "judge failed on " << rec.image_id << ": "
                    << rec.failure << "\n";
      std::cout << "records " << s.records.size() << "  ASR " << s.asr
                << "  KMR-A " << s.kmr_a << "  KMR-B " << s.kmr_b
                << "  KMR-C " << s.kmr_c << "  vague " << s.vague << "\n";
      return s.judge_failures == 0 ? 0 : 1;
    }
    if (analyze->parsed()) {
      const auto cfg = load_config(config_path, sets);
      const auto s = cropmatch::cmd_analyze(cfg, adv_dir, clean_dir, out_dir,
                                            cell);
      std::cout << "analyzed " << s.images << " images  mean KS " << s.mean_ks
                << "  center-dominant " << s.central_dominant << "/"
                << s.images << "\n";
      return 0;
    }
    const auto cfg = load_config(config_path, sets);
    std::ifstream gin(grid_path);
    auto grid = nlohmann::json::parse(gin, nullptr, false);
    if (grid.is_discarded() || !grid.is_object())
      throw std::invalid_argument("grid must be a JSON object of arrays");
    const auto s = cropmatch::cmd_ablate(cfg, grid, max_cells, out_dir);
    std::cout << "swept " << s.cells << " cells\ntable: " << s.table_path
              << "\n";
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
