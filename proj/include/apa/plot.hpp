#pragma once

#include <string>
#include <vector>

namespace apa {

struct PlotSeries {
  std::string label;
  std::vector<double> xs;
  std::vector<double> ys;
};

// Minimal line-chart renderer (axes, ticks, labels, legend) written as an
// 8-bit RGB PNG. Enough for reward-vs-iteration and sweep summaries.
void render_line_plot(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<PlotSeries>& series);

}  // namespace apa
