#pragma once

// CSV and SVG artifact emission. CSVs are the contract (doubles printed with
// %.17g so identical runs produce identical bytes); SVGs are derived views,
// hand-rolled scatter/line/heatmap with no plotting dependency.

#include <Eigen/Core>
#include <algorithm>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "dppflow/bench.hpp"
#include "dppflow/cfm.hpp"
#include "dppflow/errors.hpp"
#include "dppflow/guidance.hpp"

namespace dppflow {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot open for writing: " + path);
  return out;
}

}  // namespace detail

inline void write_samples_csv(const std::string& path, const ParticleBatch& batch) {
  auto out = detail::open_out(path);
  out << "particle";
  for (int c = 0; c < batch.dim(); ++c) out << ",dim" << c;
  out << "\n";
  for (int p = 0; p < batch.k(); ++p) {
    out << p;
    for (int c = 0; c < batch.dim(); ++c) out << "," << fmt_double(batch.points(p, c));
    out << "\n";
  }
}

inline void write_trajectory_csv(const std::string& path, int trial,
                                 const std::vector<ParticleBatch>& trajectory) {
  auto out = detail::open_out(path);
  if (trajectory.empty()) throw Error(ErrorKind::invalid_input, "empty trajectory");
  const int d = trajectory.front().dim();
  out << "trial,step,t,particle";
  for (int c = 0; c < d; ++c) out << ",dim" << c;
  out << "\n";
  for (std::size_t step = 0; step < trajectory.size(); ++step) {
    const ParticleBatch& b = trajectory[step];
    for (int p = 0; p < b.k(); ++p) {
      out << trial << "," << step << "," << fmt_double(b.t) << "," << p;
      for (int c = 0; c < d; ++c) out << "," << fmt_double(b.points(p, c));
      out << "\n";
    }
  }
}

inline void write_training_log_csv(const std::string& path, const std::vector<TrainLogRow>& log) {
  auto out = detail::open_out(path);
  out << "step,loss,wallclock_ms\n";
  for (const auto& row : log)
    out << row.step << "," << fmt_double(row.loss) << "," << fmt_double(row.wallclock_ms) << "\n";
}

struct BenchCsvRow {
  std::string method;
  std::string formulation;
  int budget_k = 0;
  int trials = 0;
  double modes_mean = 0.0;
  double modes_std = 0.0;
  int modes_max = 0;
};

inline void write_bench_csv(const std::string& path, const std::vector<BenchCsvRow>& rows) {
  auto out = detail::open_out(path);
  out << "method,formulation,K,trials,modes_mean,modes_std,modes_max\n";
  for (const auto& r : rows)
    out << r.method << "," << r.formulation << "," << r.budget_k << "," << r.trials << ","
        << fmt_double(r.modes_mean) << "," << fmt_double(r.modes_std) << "," << r.modes_max
        << "\n";
}

inline void write_sweep_csv(const std::string& path, const SweepGrid& grid) {
  auto out = detail::open_out(path);
  out << "noise_level,strength,modes_mean,modes_std\n";
  for (std::size_t i = 0; i < grid.noise_levels.size(); ++i)
    for (std::size_t j = 0; j < grid.strengths.size(); ++j)
      out << fmt_double(grid.noise_levels[i]) << "," << fmt_double(grid.strengths[j]) << ","
          << fmt_double(grid.cells[i][j].modes_mean) << ","
          << fmt_double(grid.cells[i][j].modes_std) << "\n";
}

// ---------------------------------------------------------------------------
// Minimal SVG

struct SvgPointGroup {
  std::string label;
  std::string color;
  Eigen::MatrixXd points;  // n x 2
};

struct SvgSeries {
  std::string label;
  std::string color;
  std::vector<double> xs, ys;
};

namespace detail {

struct SvgFrame {
  double x_min, x_max, y_min, y_max;
  static constexpr double width = 640, height = 480, margin = 48;

  double px(double x) const {
    return margin + (x - x_min) / std::max(1e-12, x_max - x_min) * (width - 2 * margin);
  }
  double py(double y) const {
    return height - margin - (y - y_min) / std::max(1e-12, y_max - y_min) * (height - 2 * margin);
  }
};

inline void svg_header(std::ofstream& out) {
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << SvgFrame::width
      << "\" height=\"" << SvgFrame::height << "\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

inline void svg_axes(std::ofstream& out, const SvgFrame& f) {
  out << "<line x1=\"" << f.px(f.x_min) << "\" y1=\"" << f.py(f.y_min) << "\" x2=\""
      << f.px(f.x_max) << "\" y2=\"" << f.py(f.y_min) << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << f.px(f.x_min) << "\" y1=\"" << f.py(f.y_min) << "\" x2=\""
      << f.px(f.x_min) << "\" y2=\"" << f.py(f.y_max) << "\" stroke=\"black\"/>\n"
      << "<text x=\"" << f.px(f.x_min) << "\" y=\"" << f.py(f.y_min) + 28
      << "\" font-size=\"11\">" << fmt_double(f.x_min) << "</text>\n"
      << "<text x=\"" << f.px(f.x_max) - 20 << "\" y=\"" << f.py(f.y_min) + 28
      << "\" font-size=\"11\">" << fmt_double(f.x_max) << "</text>\n"
      << "<text x=\"" << f.px(f.x_min) - 40 << "\" y=\"" << f.py(f.y_max)
      << "\" font-size=\"11\">" << fmt_double(f.y_max) << "</text>\n";
}

}  // namespace detail

inline void svg_scatter(const std::string& path, const std::vector<SvgPointGroup>& groups) {
  auto out = detail::open_out(path);
  detail::SvgFrame f{-1, 1, -1, 1};
  bool any = false;
  for (const auto& g : groups)
    for (int i = 0; i < g.points.rows(); ++i) {
      if (!any) {
        f.x_min = f.x_max = g.points(i, 0);
        f.y_min = f.y_max = g.points(i, 1);
        any = true;
      }
      f.x_min = std::min(f.x_min, g.points(i, 0));
      f.x_max = std::max(f.x_max, g.points(i, 0));
      f.y_min = std::min(f.y_min, g.points(i, 1));
      f.y_max = std::max(f.y_max, g.points(i, 1));
    }
  const double pad_x = 0.05 * (f.x_max - f.x_min + 1e-9);
  const double pad_y = 0.05 * (f.y_max - f.y_min + 1e-9);
  f.x_min -= pad_x;
  f.x_max += pad_x;
  f.y_min -= pad_y;
  f.y_max += pad_y;
  detail::svg_header(out);
  detail::svg_axes(out, f);
  double legend_y = 16;
  for (const auto& g : groups) {
    for (int i = 0; i < g.points.rows(); ++i)
      out << "<circle cx=\"" << f.px(g.points(i, 0)) << "\" cy=\"" << f.py(g.points(i, 1))
          << "\" r=\"3\" fill=\"" << g.color << "\" fill-opacity=\"0.7\"/>\n";
    out << "<text x=\"" << detail::SvgFrame::width - 170 << "\" y=\"" << legend_y
        << "\" font-size=\"12\" fill=\"" << g.color << "\">" << g.label << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

inline void svg_lines(const std::string& path, const std::vector<SvgSeries>& series) {
  auto out = detail::open_out(path);
  detail::SvgFrame f{0, 1, 0, 1};
  bool any = false;
  for (const auto& s : series)
    for (std::size_t i = 0; i < s.xs.size(); ++i) {
      if (!any) {
        f.x_min = f.x_max = s.xs[i];
        f.y_min = f.y_max = s.ys[i];
        any = true;
      }
      f.x_min = std::min(f.x_min, s.xs[i]);
      f.x_max = std::max(f.x_max, s.xs[i]);
      f.y_min = std::min(f.y_min, s.ys[i]);
      f.y_max = std::max(f.y_max, s.ys[i]);
    }
  f.y_min = std::min(f.y_min, 0.0);
  f.y_max += 0.05 * (f.y_max - f.y_min + 1e-9);
  detail::svg_header(out);
  detail::svg_axes(out, f);
  double legend_y = 16;
  for (const auto& s : series) {
    out << "<polyline fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.xs.size(); ++i)
      out << f.px(s.xs[i]) << "," << f.py(s.ys[i]) << " ";
    out << "\"/>\n";
    out << "<text x=\"" << detail::SvgFrame::width - 220 << "\" y=\"" << legend_y
        << "\" font-size=\"12\" fill=\"" << s.color << "\">" << s.label << "</text>\n";
    legend_y += 16;
  }
  out << "</svg>\n";
}

// Heatmap over (strength columns, noise-level rows); cell color scales with
// modes_mean.
inline void svg_heatmap(const std::string& path, const SweepGrid& grid,
                        const std::string& title = "") {
  auto out = detail::open_out(path);
  detail::svg_header(out);
  const std::size_t rows = grid.noise_levels.size();
  const std::size_t cols = grid.strengths.size();
  double v_min = 1e300, v_max = -1e300;
  for (const auto& row : grid.cells)
    for (const auto& cell : row) {
      v_min = std::min(v_min, cell.modes_mean);
      v_max = std::max(v_max, cell.modes_mean);
    }
  const double cell_w = (detail::SvgFrame::width - 120) / cols;
  const double cell_h = (detail::SvgFrame::height - 120) / rows;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      const double v = grid.cells[i][j].modes_mean;
      const double frac = (v - v_min) / std::max(1e-12, v_max - v_min);
      const int red = static_cast<int>(255 * frac);
      const int blue = static_cast<int>(255 * (1.0 - frac));
      const double x = 80 + j * cell_w;
      const double y = 60 + i * cell_h;
      out << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << cell_w << "\" height=\""
          << cell_h << "\" fill=\"rgb(" << red << ",60," << blue << ")\"/>\n"
          << "<text x=\"" << x + cell_w / 2 - 12 << "\" y=\"" << y + cell_h / 2
          << "\" font-size=\"11\" fill=\"white\">" << grid.cells[i][j].modes_mean << "</text>\n";
    }
    out << "<text x=\"8\" y=\"" << 60 + i * cell_h + cell_h / 2 << "\" font-size=\"11\">l="
        << fmt_double(grid.noise_levels[i]) << "</text>\n";
  }
  for (std::size_t j = 0; j < cols; ++j)
    out << "<text x=\"" << 80 + j * cell_w + cell_w / 2 - 10 << "\" y=\"52\" font-size=\"11\">W="
        << fmt_double(grid.strengths[j]) << "</text>\n";
  if (!title.empty())
    out << "<text x=\"80\" y=\"24\" font-size=\"14\">" << title << "</text>\n";
  out << "</svg>\n";
}

}  // namespace dppflow
