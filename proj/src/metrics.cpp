#include "apa/metrics.hpp"

#include <cmath>
#include <stdexcept>

namespace apa {

double asr(const Classifier& cls, const std::vector<Tensor>& batch,
           const std::vector<int>& labels) {
  if (batch.empty() || batch.size() != labels.size())
    throw std::invalid_argument("asr: empty or mismatched batch");
  int miss = 0;
  for (size_t i = 0; i < batch.size(); ++i)
    if (cls.predict_class(batch[i]) != labels[i]) ++miss;
  return 100.0 * static_cast<double>(miss) / static_cast<double>(batch.size());
}

double ssim(const Tensor& x, const Tensor& y) {
  require_same_shape(x, y, "ssim");
  if (x.ndim() != 3) throw std::invalid_argument("ssim: need CxHxW");
  const int win = 7;
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (h < win || w < win)
    throw std::invalid_argument("ssim: image smaller than the 7x7 window");
  const double np = static_cast<double>(win) * win;
  const double cov_norm = np / (np - 1.0);
  const double c1 = 0.01 * 0.01;  // (K1*L)^2 with L = 1
  const double c2 = 0.03 * 0.03;

  double total = 0.0;
  int64_t count = 0;
  for (int ci = 0; ci < c; ++ci)
    for (int oy = 0; oy + win <= h; ++oy)
      for (int ox = 0; ox + win <= w; ++ox) {
        double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
        for (int dy = 0; dy < win; ++dy)
          for (int dx = 0; dx < win; ++dx) {
            double a = x.at(ci, oy + dy, ox + dx);
            double b = y.at(ci, oy + dy, ox + dx);
            sx += a;
            sy += b;
            sxx += a * a;
            syy += b * b;
            sxy += a * b;
          }
        double ux = sx / np, uy = sy / np;
        double vx = cov_norm * (sxx / np - ux * ux);
        double vy = cov_norm * (syy / np - uy * uy);
        double vxy = cov_norm * (sxy / np - ux * uy);
        double s = ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) /
                   ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        total += s;
        ++count;
      }
  return total / static_cast<double>(count);
}

double perceptual_distance(const Tensor& x, const Tensor& y,
                           const Classifier& probe, const Classifier& substitute) {
  if (probe.spec().arch == substitute.spec().arch &&
      probe.spec().seed == substitute.spec().seed)
    throw std::invalid_argument(
        "perceptual_distance: probe must differ from the substitute "
        "(contaminated metric)");
  require_same_shape(x, y, "perceptual_distance");
  Tensor fx = probe.feature_vector(x);
  Tensor fy = probe.feature_vector(y);
  double s = 0.0;
  for (int64_t i = 0; i < fx.numel(); ++i) {
    double d = fx[i] - fy[i];
    s += d * d;
  }
  return std::sqrt(s) / static_cast<double>(fx.numel());
}

}  // namespace apa
