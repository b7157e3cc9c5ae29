#include "apa/plot.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "apa/image_io.hpp"
#include "apa/tensor.hpp"

namespace apa {

namespace {

// 5x7 column-encoded glyphs (bit 0 = top row).
const std::map<char, std::array<unsigned char, 5>>& font() {
  static const std::map<char, std::array<unsigned char, 5>> f = {
      {' ', {0x00, 0x00, 0x00, 0x00, 0x00}},
      {'%', {0x23, 0x13, 0x08, 0x64, 0x62}},
      {'(', {0x00, 0x1C, 0x22, 0x41, 0x00}},
      {')', {0x00, 0x41, 0x22, 0x1C, 0x00}},
      {'+', {0x08, 0x08, 0x3E, 0x08, 0x08}},
      {'-', {0x08, 0x08, 0x08, 0x08, 0x08}},
      {'.', {0x00, 0x60, 0x60, 0x00, 0x00}},
      {'/', {0x20, 0x10, 0x08, 0x04, 0x02}},
      {'0', {0x3E, 0x51, 0x49, 0x45, 0x3E}},
      {'1', {0x00, 0x42, 0x7F, 0x40, 0x00}},
      {'2', {0x42, 0x61, 0x51, 0x49, 0x46}},
      {'3', {0x21, 0x41, 0x45, 0x4B, 0x31}},
      {'4', {0x18, 0x14, 0x12, 0x7F, 0x10}},
      {'5', {0x27, 0x45, 0x45, 0x45, 0x39}},
      {'6', {0x3C, 0x4A, 0x49, 0x49, 0x30}},
      {'7', {0x01, 0x71, 0x09, 0x05, 0x03}},
      {'8', {0x36, 0x49, 0x49, 0x49, 0x36}},
      {'9', {0x06, 0x49, 0x49, 0x29, 0x1E}},
      {'=', {0x14, 0x14, 0x14, 0x14, 0x14}},
      {'A', {0x7E, 0x11, 0x11, 0x11, 0x7E}},
      {'B', {0x7F, 0x49, 0x49, 0x49, 0x36}},
      {'C', {0x3E, 0x41, 0x41, 0x41, 0x22}},
      {'D', {0x7F, 0x41, 0x41, 0x22, 0x1C}},
      {'E', {0x7F, 0x49, 0x49, 0x49, 0x41}},
      {'F', {0x7F, 0x09, 0x09, 0x09, 0x01}},
      {'G', {0x3E, 0x41, 0x49, 0x49, 0x7A}},
      {'H', {0x7F, 0x08, 0x08, 0x08, 0x7F}},
      {'I', {0x00, 0x41, 0x7F, 0x41, 0x00}},
      {'J', {0x20, 0x40, 0x41, 0x3F, 0x01}},
      {'K', {0x7F, 0x08, 0x14, 0x22, 0x41}},
      {'L', {0x7F, 0x40, 0x40, 0x40, 0x40}},
      {'M', {0x7F, 0x02, 0x0C, 0x02, 0x7F}},
      {'N', {0x7F, 0x04, 0x08, 0x10, 0x7F}},
      {'O', {0x3E, 0x41, 0x41, 0x41, 0x3E}},
      {'P', {0x7F, 0x09, 0x09, 0x09, 0x06}},
      {'Q', {0x3E, 0x41, 0x51, 0x21, 0x5E}},
      {'R', {0x7F, 0x09, 0x19, 0x29, 0x46}},
      {'S', {0x46, 0x49, 0x49, 0x49, 0x31}},
      {'T', {0x01, 0x01, 0x7F, 0x01, 0x01}},
      {'U', {0x3F, 0x40, 0x40, 0x40, 0x3F}},
      {'V', {0x1F, 0x20, 0x40, 0x20, 0x1F}},
      {'W', {0x3F, 0x40, 0x38, 0x40, 0x3F}},
      {'X', {0x63, 0x14, 0x08, 0x14, 0x63}},
      {'Y', {0x07, 0x08, 0x70, 0x08, 0x07}},
      {'Z', {0x61, 0x51, 0x49, 0x45, 0x43}},
      {'_', {0x40, 0x40, 0x40, 0x40, 0x40}},
  };
  return f;
}

struct Canvas {
  int w, h;
  Tensor rgb;  // 3xHxW
  Canvas(int width, int height) : w(width), h(height), rgb({3, height, width}) {
    std::fill(rgb.vec().begin(), rgb.vec().end(), 1.0);
  }
  void put(int x, int y, double r, double g, double b) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    rgb.at(0, y, x) = r;
    rgb.at(1, y, x) = g;
    rgb.at(2, y, x) = b;
  }
  void line(double x0, double y0, double x1, double y1, double r, double g,
            double b) {
    int steps = static_cast<int>(std::max(std::fabs(x1 - x0), std::fabs(y1 - y0))) + 1;
    for (int i = 0; i <= steps; ++i) {
      double t = static_cast<double>(i) / steps;
      put(static_cast<int>(std::lround(x0 + t * (x1 - x0))),
          static_cast<int>(std::lround(y0 + t * (y1 - y0))), r, g, b);
    }
  }
  void text(int x, int y, const std::string& s, double r = 0, double g = 0,
            double b = 0) {
    int cx = x;
    for (char raw : s) {
      char c = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
      auto it = font().find(c);
      if (it == font().end()) it = font().find(' ');
      for (int col = 0; col < 5; ++col)
        for (int row = 0; row < 7; ++row)
          if (it->second[col] & (1 << row)) put(cx + col, y + row, r, g, b);
      cx += 6;
    }
  }
};

std::string fmt_tick(double v) {
  char buf[32];
  if (v != 0.0 && (std::fabs(v) >= 1e4 || std::fabs(v) < 1e-2))
    std::snprintf(buf, sizeof(buf), "%.1e", v);
  else
    std::snprintf(buf, sizeof(buf), "%.3g", v);
  return buf;
}

const double kColors[6][3] = {{0.80, 0.10, 0.10}, {0.10, 0.30, 0.80},
                              {0.05, 0.55, 0.20}, {0.75, 0.45, 0.05},
                              {0.50, 0.10, 0.60}, {0.10, 0.55, 0.55}};

}  // namespace

void render_line_plot(const std::string& path, const std::string& title,
                      const std::string& x_label, const std::string& y_label,
                      const std::vector<PlotSeries>& series) {
  if (series.empty())
    throw std::invalid_argument("render_line_plot: no series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const PlotSeries& s : series) {
    if (s.xs.size() != s.ys.size() || s.xs.empty())
      throw std::invalid_argument("render_line_plot: bad series " + s.label);
    for (double v : s.xs) {
      xmin = std::min(xmin, v);
      xmax = std::max(xmax, v);
    }
    for (double v : s.ys) {
      ymin = std::min(ymin, v);
      ymax = std::max(ymax, v);
    }
  }
  if (xmax - xmin < 1e-12) {
    xmax += 1.0;
    xmin -= 1.0;
  }
  if (ymax - ymin < 1e-12) {
    ymax += 1.0;
    ymin -= 1.0;
  }
  double ypad = 0.06 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const int W = 560, H = 360, ml = 70, mr = 16, mt = 28, mb = 46;
  Canvas cv(W, H);
  auto px = [&](double x) {
    return ml + (x - xmin) / (xmax - xmin) * (W - ml - mr);
  };
  auto py = [&](double y) {
    return (H - mb) - (y - ymin) / (ymax - ymin) * (H - mt - mb);
  };

  cv.text(ml, 8, title);
  cv.line(ml, mt, ml, H - mb, 0, 0, 0);
  cv.line(ml, H - mb, W - mr, H - mb, 0, 0, 0);
  for (int i = 0; i <= 4; ++i) {
    double xv = xmin + (xmax - xmin) * i / 4.0;
    double yv = ymin + (ymax - ymin) * i / 4.0;
    int xp = static_cast<int>(px(xv)), yp = static_cast<int>(py(yv));
    cv.line(xp, H - mb, xp, H - mb + 4, 0, 0, 0);
    cv.text(xp - 12, H - mb + 7, fmt_tick(xv));
    cv.line(ml - 4, yp, ml, yp, 0, 0, 0);
    cv.text(4, yp - 3, fmt_tick(yv));
  }
  cv.text((W - ml - mr) / 2 + ml - 3 * static_cast<int>(x_label.size()),
          H - 14, x_label);
  cv.text(4, mt - 12, y_label);

  for (size_t si = 0; si < series.size(); ++si) {
    const double* c = kColors[si % 6];
    const PlotSeries& s = series[si];
    for (size_t i = 0; i + 1 < s.xs.size(); ++i)
      cv.line(px(s.xs[i]), py(s.ys[i]), px(s.xs[i + 1]), py(s.ys[i + 1]), c[0],
              c[1], c[2]);
    for (size_t i = 0; i < s.xs.size(); ++i) {
      int xp = static_cast<int>(px(s.xs[i])), yp = static_cast<int>(py(s.ys[i]));
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) cv.put(xp + dx, yp + dy, c[0], c[1], c[2]);
    }
    int ly = mt + 4 + 10 * static_cast<int>(si);
    cv.line(W - mr - 90, ly + 3, W - mr - 74, ly + 3, c[0], c[1], c[2]);
    cv.text(W - mr - 70, ly, s.label, c[0], c[1], c[2]);
  }
  write_png(path, cv.rgb);
}

}  // namespace apa
