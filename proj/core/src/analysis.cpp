#include "cropmatch/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace cropmatch {

ECDFCurve ecdf(const Perturbation& delta) {
  if (!(delta.epsilon > 0.0))
    throw std::invalid_argument("ecdf: zero budget");
  const std::size_t n = delta.data.size();
  if (n < 100) throw std::invalid_argument("ecdf: need at least 100 entries");
  ECDFCurve curve;
  curve.points.resize(n);
  const double inv = 1.0 / (2.0 * delta.epsilon);
  for (std::size_t i = 0; i < n; ++i)
    curve.points[i] = (delta.data[i] + delta.epsilon) * inv;
  std::sort(curve.points.begin(), curve.points.end());
  curve.fractions.resize(n);
  double ks = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    curve.fractions[i] = static_cast<double>(i + 1) / static_cast<double>(n);
    ks = std::max(ks, std::fabs(curve.fractions[i] - curve.points[i]));
  }
  curve.ks_to_uniform = ks;
  return curve;
}

HeatmapGrid heatmap(const Perturbation& delta, int cell) {
  if (cell < 1 || delta.h % cell != 0 || delta.w % cell != 0)
    throw std::invalid_argument("heatmap: cell must divide both dimensions");
  HeatmapGrid grid;
  grid.cell = cell;
  grid.rows = delta.h / cell;
  grid.cols = delta.w / cell;
  grid.values.assign(static_cast<std::size_t>(grid.rows) * grid.cols, 0.0);
  const double inv = 1.0 / (3.0 * cell * cell);
  for (int y = 0; y < delta.h; ++y)
    for (int x = 0; x < delta.w; ++x) {
      double mag = 0.0;
      for (int c = 0; c < 3; ++c)
        mag += std::fabs(
            delta.data[(static_cast<std::size_t>(y) * delta.w + x) * 3 + c]);
      grid.values[static_cast<std::size_t>(y / cell) * grid.cols + x / cell] +=
          mag * inv;
    }
  double mx = *std::max_element(grid.values.begin(), grid.values.end());
  if (mx > 0.0)
    for (double& v : grid.values) v /= mx;
  return grid;
}

double global_similarity(const Encoder& enc, const ImageTensor& adv,
                         const ImageTensor& target) {
  return cosine_similarity(embed(enc, adv), embed(enc, target));
}

void export_report(const std::vector<ReportRow>& rows,
                   const std::vector<std::pair<std::string, ECDFCurve>>& curves,
                   const std::vector<std::pair<std::string, HeatmapGrid>>& grids,
                   const std::string& out_dir) {
  if (rows.empty() && curves.empty() && grids.empty())
    throw std::invalid_argument("export_report: nothing to export");
  std::filesystem::create_directories(out_dir);
  const auto dir = std::filesystem::path(out_dir);

  if (!rows.empty()) {
    std::ofstream out(dir / "results.csv", std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write results.csv");
    out << "image_id,kmr_fraction,kmr_a,kmr_b,kmr_c,gpt_score,success,l1n,l2n\n";
    double fa = 0, fb = 0, fc = 0, fs = 0, l1 = 0, l2 = 0;
    for (const ReportRow& r : rows) {
      out << r.image_id << "," << r.kmr_fraction << "," << r.kmr_a << ","
          << r.kmr_b << "," << r.kmr_c << "," << r.gpt_score << ","
          << r.success << "," << r.l1n << "," << r.l2n << "\n";
      fa += r.kmr_a;
      fb += r.kmr_b;
      fc += r.kmr_c;
      fs += r.success;
      l1 += r.l1n;
      l2 += r.l2n;
    }
    const double n = static_cast<double>(rows.size());
    out << "aggregate," << "" << "," << fa / n << "," << fb / n << ","
        << fc / n << "," << "" << "," << fs / n << "," << l1 / n << ","
        << l2 / n << "\n";
    if (!out) throw std::runtime_error("write failed: results.csv");
  }

  for (const auto& [id, curve] : curves) {
    std::ofstream out(dir / ("ecdf_" + id + ".txt"), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write ecdf file for " + id);
    for (std::size_t i = 0; i < curve.points.size(); ++i)
      out << curve.points[i] << " " << curve.fractions[i] << "\n";
  }

  for (const auto& [id, grid] : grids) {
    std::ofstream out(dir / ("heatmap_" + id + ".txt"), std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write heatmap file for " + id);
    for (int r = 0; r < grid.rows; ++r) {
      for (int c = 0; c < grid.cols; ++c)
        out << grid.at(r, c) << (c + 1 == grid.cols ? "" : " ");
      out << "\n";
    }
  }
}

}  // namespace cropmatch
