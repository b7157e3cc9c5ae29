#pragma once

// Small shared fixture for unit tests: an 8x8 four-class "bright quadrant"
// dataset, a briefly trained denoiser and substitute classifier. Built once
// per test binary.

#include <memory>
#include <vector>

#include "apa/attack.hpp"
#include "apa/classifiers.hpp"
#include "apa/diffusion.hpp"
#include "apa/rng.hpp"

namespace apa::testutil {

struct QuadrantData {
  std::vector<Tensor> train_x, eval_x;
  std::vector<int> train_y, eval_y;
};

inline Tensor quadrant_image(int label, Rng& rng) {
  Tensor img({1, 8, 8});
  for (int64_t i = 0; i < img.numel(); ++i) img[i] = 0.05 + 0.05 * rng.u01();
  int oy = (label / 2) * 4, ox = (label % 2) * 4;
  for (int y = 0; y < 3; ++y)
    for (int x = 0; x < 3; ++x)
      img.at(0, oy + y + 1, ox + x + 1) = 0.85 + 0.1 * rng.u01();
  return img;
}

inline QuadrantData make_quadrant_data(int train_n, int eval_n, uint64_t seed) {
  QuadrantData d;
  Rng rng(seed);
  for (int i = 0; i < train_n; ++i) {
    int label = i % 4;
    d.train_x.push_back(quadrant_image(label, rng));
    d.train_y.push_back(label);
  }
  for (int i = 0; i < eval_n; ++i) {
    int label = i % 4;
    d.eval_x.push_back(quadrant_image(label, rng));
    d.eval_y.push_back(label);
  }
  return d;
}

struct TinyWorld {
  QuadrantData data;
  Denoiser denoiser;
  Classifier substitute;
  NoiseSchedule sched = NoiseSchedule::linear_beta(4);
  Codec codec = Codec::identity();
  Conditioning cond = Conditioning::null_of(6);
  AugmentSpec augment;
};

inline const TinyWorld& tiny_world() {
  static TinyWorld* w = [] {
    auto* tw = new TinyWorld;
    tw->data = make_quadrant_data(64, 32, 4242);
    DenoiserConfig dc;
    dc.channels = 1;
    dc.height = 8;
    dc.width = 8;
    dc.base_width = 6;
    dc.cond_dim = 6;
    dc.embed_dim = 16;
    DenoiserTrainConfig tc;
    tc.epochs = 10;
    tc.batch_size = 8;
    tc.seed = 99;
    tw->denoiser = train_denoiser(tw->data.train_x, tw->data.train_y,
                                  NoiseSchedule::linear_beta(1000), tw->codec,
                                  dc, tc);
    ClassifierSpec cs;
    cs.arch = ClassifierArch::small_cnn_a;
    cs.seed = 7;
    ClassifierTrainOptions copt;
    copt.epochs = 12;
    copt.batch_size = 8;
    copt.accuracy_gate = 0.9;
    tw->substitute = train_classifier(cs, tw->data.train_x, tw->data.train_y,
                                      tw->data.eval_x, tw->data.eval_y, copt);
    tw->augment.pad_max = 2;
    tw->augment.seed = 5;
    return tw;
  }();
  return *w;
}

}  // namespace apa::testutil
