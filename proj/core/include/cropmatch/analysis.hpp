#pragma once

#include <string>
#include <vector>

#include "cropmatch/encoders.hpp"
#include "cropmatch/image.hpp"

namespace cropmatch {

/// Empirical CDF of perturbation entries affinely mapped from [-eps, eps]
/// onto [0,1], with the KS distance to the uniform CDF.
struct ECDFCurve {
  std::vector<double> points;     // sorted mapped samples
  std::vector<double> fractions;  // i/n for the i-th sorted sample
  double ks_to_uniform = 0.0;
};

ECDFCurve ecdf(const Perturbation& delta);

struct HeatmapGrid {
  int rows = 0;
  int cols = 0;
  int cell = 0;
  std::vector<double> values;  // max-normalized, [0,1]

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
};

/// Per-cell mean of channel-mean |delta|, max-normalized. cell must divide
/// both dimensions.
HeatmapGrid heatmap(const Perturbation& delta, int cell);

/// CS(f(preprocess(adv)), f(preprocess(target))) on full images.
double global_similarity(const Encoder& enc, const ImageTensor& adv,
                         const ImageTensor& target);

/// Aggregate metric row exported by evaluation and analysis reports.
struct ReportRow {
  std::string image_id;
  double kmr_fraction = 0.0;
  bool kmr_a = false, kmr_b = false, kmr_c = false;
  double gpt_score = 0.0;
  bool success = false;
  double l1n = 0.0;
  double l2n = 0.0;
};

/// Writes results.csv (one row per record plus an aggregate row), and
/// per-image ecdf_<id>.txt / heatmap_<id>.txt numeric files.
void export_report(const std::vector<ReportRow>& rows,
                   const std::vector<std::pair<std::string, ECDFCurve>>& curves,
                   const std::vector<std::pair<std::string, HeatmapGrid>>& grids,
                   const std::string& out_dir);

}  // namespace cropmatch
