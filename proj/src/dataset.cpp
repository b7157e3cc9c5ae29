#include "apa/dataset.hpp"

#include <cmath>
#include <stdexcept>

#include "apa/rng.hpp"

namespace apa {

namespace {

struct ShapeParams {
  double cx, cy, r, fg, bg;
};

bool inside(int label, double px, double py, const ShapeParams& p) {
  double dx = px - p.cx, dy = py - p.cy;
  switch (label) {
    case 0:  // disk
      return dx * dx + dy * dy <= p.r * p.r;
    case 1:  // square
      return std::max(std::fabs(dx), std::fabs(dy)) <= 0.82 * p.r;
    case 2: {  // triangle, apex up
      double x0 = p.cx, y0 = p.cy - p.r;
      double x1 = p.cx - 0.95 * p.r, y1 = p.cy + 0.75 * p.r;
      double x2 = p.cx + 0.95 * p.r, y2 = p.cy + 0.75 * p.r;
      auto side = [&](double ax, double ay, double bx, double by) {
        return (bx - ax) * (py - ay) - (by - ay) * (px - ax);
      };
      double s0 = side(x0, y0, x1, y1);
      double s1 = side(x1, y1, x2, y2);
      double s2 = side(x2, y2, x0, y0);
      return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
    }
    case 3: {  // cross
      double arm = 0.34 * p.r;
      return (std::fabs(dx) <= arm && std::fabs(dy) <= p.r) ||
             (std::fabs(dy) <= arm && std::fabs(dx) <= p.r);
    }
    default:
      throw std::invalid_argument("shape_image: label out of range");
  }
}

}  // namespace

Tensor shape_image(int label, int height, int width, uint64_t seed) {
  Rng rng(seed);
  ShapeParams p;
  p.cx = width / 2.0 + rng.uniform(-3.0, 3.0);
  p.cy = height / 2.0 + rng.uniform(-3.0, 3.0);
  p.r = rng.uniform(0.22, 0.34) * std::min(height, width);
  p.fg = rng.uniform(0.75, 0.95);
  p.bg = rng.uniform(0.05, 0.20);

  Tensor img({1, height, width});
  const int ss = 3;  // supersampling grid per axis
  const double inv = 1.0 / (ss * ss);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      double cover = 0.0;
      for (int sy = 0; sy < ss; ++sy)
        for (int sx = 0; sx < ss; ++sx) {
          double px = x + (sx + 0.5) / ss;
          double py = y + (sy + 0.5) / ss;
          if (inside(label, px, py, p)) cover += inv;
        }
      img.at(0, y, x) = p.bg + (p.fg - p.bg) * cover;
    }
  return img;
}

Dataset generate_dataset(const DatasetSpec& spec, const std::string& split) {
  if (split != "train" && split != "eval")
    throw std::invalid_argument("generate_dataset: split must be train or eval");
  if (spec.num_classes != 4)
    throw std::invalid_argument("generate_dataset: generator provides 4 classes");
  int count = split == "train" ? spec.train_count : spec.eval_count;
  Dataset ds;
  for (int i = 0; i < count; ++i) {
    int label = i % spec.num_classes;
    uint64_t seed = derive_seed(spec.seed, "dataset-" + split, i);
    ds.images.push_back(shape_image(label, spec.height, spec.width, seed));
    ds.labels.push_back(label);
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%s_%04d", split.c_str(), i);
    ds.ids.push_back(buf);
  }
  return ds;
}

}  // namespace apa
