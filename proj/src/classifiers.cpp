#include "apa/classifiers.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "apa/errors.hpp"
#include "apa/rng.hpp"

namespace apa {

using ad::Tape;
using ad::Var;

std::string arch_name(ClassifierArch a) {
  switch (a) {
    case ClassifierArch::small_cnn_a: return "small_cnn_a";
    case ClassifierArch::small_cnn_b: return "small_cnn_b";
    case ClassifierArch::small_mlp: return "small_mlp";
    case ClassifierArch::tiny_attention: return "tiny_attention";
  }
  throw std::invalid_argument("arch_name: unknown arch");
}

ClassifierArch arch_from_name(const std::string& name) {
  if (name == "small_cnn_a") return ClassifierArch::small_cnn_a;
  if (name == "small_cnn_b") return ClassifierArch::small_cnn_b;
  if (name == "small_mlp") return ClassifierArch::small_mlp;
  if (name == "tiny_attention") return ClassifierArch::tiny_attention;
  throw std::invalid_argument("arch_from_name: unknown arch '" + name + "'");
}

Classifier Classifier::init(const ClassifierSpec& spec, int channels, int height,
                            int width) {
  Classifier c;
  c.spec_ = spec;
  c.channels_ = channels;
  c.height_ = height;
  c.width_ = width;
  Rng rng(derive_seed(spec.seed, "classifier-init"));
  nn::ParamStore& ps = c.params_;
  int k = spec.num_classes;

  auto add_conv = [&](const std::string& name, int oc, int ic, int ks) {
    ps.add(name + ".w", rng.normal_tensor({oc, ic, ks, ks},
                                          std::sqrt(1.0 / (ic * ks * ks))));
    ps.add(name + ".b", Tensor::zeros({oc}));
  };
  auto add_lin = [&](const std::string& name, int out, int in) {
    ps.add(name + ".w", nn::linear_init(rng, out, in));
    ps.add(name + ".b", Tensor::zeros({out}));
  };

  switch (spec.arch) {
    case ClassifierArch::small_cnn_a:
      add_conv("c1", 8, channels, 3);
      add_conv("c2", 16, 8, 3);
      add_conv("c3", 16, 16, 3);
      add_lin("fc", k, 16);
      break;
    case ClassifierArch::small_cnn_b:
      add_conv("c1", 6, channels, 5);
      add_conv("c2", 12, 6, 5);
      add_lin("fc1", 24, 12);
      add_lin("fc2", k, 24);
      break;
    case ClassifierArch::small_mlp: {
      int in = channels * height * width;
      add_lin("fc1", 128, in);
      add_lin("fc2", 64, 128);
      add_lin("fc3", k, 64);
      break;
    }
    case ClassifierArch::tiny_attention: {
      int patch = height / 4;
      int tok_dim = channels * patch * patch;
      int d = 24;
      ps.add("proj.w", nn::linear_init(rng, tok_dim, d));  // (tok_dim, d), used transposed
      ps.add("proj.b", Tensor::zeros({d}));
      ps.add("pos", rng.normal_tensor({16, d}, 0.1));  // learned positions
      ps.add("q.w", nn::linear_init(rng, d, d));
      ps.add("k.w", nn::linear_init(rng, d, d));
      ps.add("v.w", nn::linear_init(rng, d, d));
      add_lin("fc", k, d);
      break;
    }
  }
  return c;
}

Var Classifier::body(Tape& t, const nn::WeightProvider& w, Var x,
                     bool stop_at_features) const {
  const Tensor& v = t.value(x);
  if (v.ndim() != 3 || v.dim(0) != channels_ || v.dim(1) != height_ ||
      v.dim(2) != width_)
    throw std::invalid_argument("Classifier: input shape " + v.shape_str() +
                                " does not match model input");
  Var feat;
  switch (spec_.arch) {
    case ClassifierArch::small_cnn_a: {
      Var h = ad::silu(t, ad::conv2d(t, x, w("c1.w"), w("c1.b"), 1, 1));
      h = ad::avg_pool2(t, h);
      h = ad::silu(t, ad::conv2d(t, h, w("c2.w"), w("c2.b"), 1, 1));
      h = ad::avg_pool2(t, h);
      h = ad::silu(t, ad::conv2d(t, h, w("c3.w"), w("c3.b"), 1, 1));
      feat = ad::global_avg_pool(t, h);
      if (stop_at_features) return feat;
      return ad::linear(t, feat, w("fc.w"), w("fc.b"));
    }
    case ClassifierArch::small_cnn_b: {
      Var h = ad::silu(t, ad::conv2d(t, x, w("c1.w"), w("c1.b"), 1, 2));
      h = ad::avg_pool2(t, h);
      h = ad::silu(t, ad::conv2d(t, h, w("c2.w"), w("c2.b"), 1, 2));
      h = ad::avg_pool2(t, h);
      Var pooled = ad::global_avg_pool(t, h);
      feat = ad::silu(t, ad::linear(t, pooled, w("fc1.w"), w("fc1.b")));
      if (stop_at_features) return feat;
      return ad::linear(t, feat, w("fc2.w"), w("fc2.b"));
    }
    case ClassifierArch::small_mlp: {
      Var flat = ad::reshape(t, x, {channels_ * height_ * width_});
      Var h = ad::silu(t, ad::linear(t, flat, w("fc1.w"), w("fc1.b")));
      feat = ad::silu(t, ad::linear(t, h, w("fc2.w"), w("fc2.b")));
      if (stop_at_features) return feat;
      return ad::linear(t, feat, w("fc3.w"), w("fc3.b"));
    }
    case ClassifierArch::tiny_attention: {
      int patch = height_ / 4;
      Var tokens = ad::patchify(t, x, patch);                    // (16, tok_dim)
      Var proj = ad::add_row_bias(t, ad::matmul(t, tokens, w("proj.w")),
                                  w("proj.b"));                  // (16, d)
      proj = ad::add(t, proj, w("pos"));
      Var q = ad::matmul(t, proj, w("q.w"));
      Var key = ad::matmul(t, proj, w("k.w"));
      Var val = ad::matmul(t, proj, w("v.w"));
      int d = t.value(q).dim(1);
      Var scores = ad::scale(t, ad::matmul(t, q, ad::transpose(t, key)),
                             1.0 / std::sqrt(static_cast<double>(d)));
      Var attn = ad::matmul(t, ad::softmax_rows(t, scores), val);
      feat = ad::mean_rows(t, attn);
      if (stop_at_features) return feat;
      return ad::linear(t, feat, w("fc.w"), w("fc.b"));
    }
  }
  throw std::logic_error("Classifier: unreachable");
}

Var Classifier::forward(Tape& t, const nn::WeightProvider& w, Var x) const {
  return body(t, w, x, false);
}

Var Classifier::logits(Tape& t, Var x) const {
  nn::WeightProvider w = nn::constant_provider(t, params_);
  return body(t, w, x, false);
}

Var Classifier::features(Tape& t, Var x) const {
  nn::WeightProvider w = nn::constant_provider(t, params_);
  return body(t, w, x, true);
}

Tensor Classifier::predict_logits(const Tensor& image) const {
  Tape t;
  Var out = logits(t, t.constant(image));
  Tensor lv = t.value(out);
  if (!lv.all_finite())
    throw NumericalFailure("Classifier: non-finite logits");
  return lv;
}

Tensor Classifier::feature_vector(const Tensor& image) const {
  Tape t;
  return t.value(features(t, t.constant(image)));
}

int Classifier::predict_class(const Tensor& image) const {
  Tensor l = predict_logits(image);
  int best = 0;
  for (int i = 1; i < static_cast<int>(l.numel()); ++i)
    if (l[i] > l[best]) best = i;
  return best;
}

std::string Classifier::layer_signature() const {
  switch (spec_.arch) {
    case ClassifierArch::small_cnn_a:
      return "conv3x8/pool/conv3x16/pool/conv3x16/gap/fc";
    case ClassifierArch::small_cnn_b:
      return "conv5x6/pool/conv5x12/pool/gap/fc24/fc";
    case ClassifierArch::small_mlp:
      return "flatten/fc128/fc64/fc";
    case ClassifierArch::tiny_attention:
      return "patchify/proj24/selfattn/meanpool/fc";
  }
  return "?";
}

double classifier_accuracy(const Classifier& cls, const std::vector<Tensor>& xs,
                           const std::vector<int>& ys) {
  if (xs.empty() || xs.size() != ys.size())
    throw std::invalid_argument("classifier_accuracy: bad eval set");
  int correct = 0;
  for (size_t i = 0; i < xs.size(); ++i)
    if (cls.predict_class(xs[i]) == ys[i]) ++correct;
  return static_cast<double>(correct) / static_cast<double>(xs.size());
}

Classifier train_classifier(const ClassifierSpec& spec,
                            const std::vector<Tensor>& train_x,
                            const std::vector<int>& train_y,
                            const std::vector<Tensor>& eval_x,
                            const std::vector<int>& eval_y,
                            const ClassifierTrainOptions& opt) {
  if (train_x.empty() || train_x.size() != train_y.size())
    throw std::invalid_argument("train_classifier: bad training set");
  const Tensor& x0 = train_x.front();
  Classifier cls = Classifier::init(spec, x0.dim(0), x0.dim(1), x0.dim(2));
  Rng rng(derive_seed(spec.seed, "classifier-train"));
  nn::Adam adam({.lr = opt.lr});
  std::vector<size_t> order(train_x.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t start = 0; start < order.size();
         start += static_cast<size_t>(opt.batch_size)) {
      size_t end = std::min(order.size(),
                            start + static_cast<size_t>(opt.batch_size));
      nn::GradMap grads;
      double inv = 1.0 / static_cast<double>(end - start);
      double batch_loss = 0.0;
      for (size_t k = start; k < end; ++k) {
        Tape t;
        auto binding = std::make_shared<nn::Binding>();
        nn::WeightProvider w = nn::trainable_provider(t, cls.params(), binding);
        Var logits = cls.forward(t, w, t.constant(train_x[order[k]]));
        Var loss = ad::softmax_cross_entropy(t, logits, train_y[order[k]]);
        batch_loss += t.value(loss)[0];
        t.backward(loss);
        for (auto& [name, var] : binding->vars) {
          Tensor g = t.grad(var);
          auto it = grads.find(name);
          if (it == grads.end()) {
            g *= inv;
            grads.emplace(name, std::move(g));
          } else {
            for (int64_t i = 0; i < g.numel(); ++i) it->second[i] += inv * g[i];
          }
        }
      }
      if (!std::isfinite(batch_loss))
        throw TrainingFailure("train_classifier: non-finite loss");
      adam.step(cls.params(), grads);
    }
  }
  double acc = eval_x.empty() ? 1.0 : classifier_accuracy(cls, eval_x, eval_y);
  cls.spec().trained_accuracy = acc;
  if (acc < opt.accuracy_gate)
    throw TrainingFailure("train_classifier: eval accuracy " +
                          std::to_string(acc) + " below gate " +
                          std::to_string(opt.accuracy_gate) +
                          " for " + arch_name(spec.arch) +
                          "; increase epochs or adjust the recipe");
  return cls;
}

void Zoo::assert_valid() const {
  if (targets.empty()) throw std::invalid_argument("Zoo: no targets");
  for (const Classifier& t : targets) {
    bool arch_differs = t.spec().arch != substitute.spec().arch;
    bool seed_differs = t.spec().seed != substitute.spec().seed;
    if (!arch_differs && !seed_differs)
      throw std::invalid_argument("Zoo: target duplicates the substitute");
    bool sig_differs = t.layer_signature() != substitute.layer_signature();
    bool count_differs =
        t.params().total_params() != substitute.params().total_params();
    if (!sig_differs && !count_differs)
      throw std::invalid_argument(
          "Zoo: target is architecturally identical to the substitute");
  }
  auto gate = [](const Classifier& c) {
    if (c.spec().trained_accuracy < 0.9)
      throw std::invalid_argument("Zoo: member below the 0.9 accuracy gate (" +
                                  arch_name(c.spec().arch) + ")");
  };
  gate(substitute);
  for (const Classifier& t : targets) gate(t);
}

}  // namespace apa
