#pragma once

#include <string>
#include <vector>

#include "apa/nn.hpp"

namespace apa {

enum class ClassifierArch { small_cnn_a, small_cnn_b, small_mlp, tiny_attention };

std::string arch_name(ClassifierArch a);
ClassifierArch arch_from_name(const std::string& name);

struct ClassifierSpec {
  ClassifierArch arch = ClassifierArch::small_cnn_a;
  int num_classes = 4;
  uint64_t seed = 0;
  double trained_accuracy = -1.0;  // recorded by train_classifier
};

// Small differentiable image classifiers over CxHxW inputs in [0,1].
class Classifier {
 public:
  Classifier() = default;
  static Classifier init(const ClassifierSpec& spec, int channels, int height,
                         int width);

  const ClassifierSpec& spec() const { return spec_; }
  ClassifierSpec& spec() { return spec_; }
  nn::ParamStore& params() { return params_; }
  const nn::ParamStore& params() const { return params_; }
  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }

  // Layer-type signature, e.g. "conv3x8/pool/.../fc"; used to assert that
  // zoo members are architecturally distinct.
  std::string layer_signature() const;

  ad::Var forward(ad::Tape& tape, const nn::WeightProvider& weights,
                  ad::Var x) const;
  // Constant-weight graph; use when input gradients are needed.
  ad::Var logits(ad::Tape& tape, ad::Var x) const;
  // Penultimate feature vector (constant weights).
  ad::Var features(ad::Tape& tape, ad::Var x) const;

  Tensor predict_logits(const Tensor& image) const;
  Tensor feature_vector(const Tensor& image) const;
  int predict_class(const Tensor& image) const;

 private:
  ad::Var body(ad::Tape& tape, const nn::WeightProvider& weights, ad::Var x,
               bool stop_at_features) const;
  ClassifierSpec spec_;
  int channels_ = 1, height_ = 32, width_ = 32;
  nn::ParamStore params_;
};

struct ClassifierTrainOptions {
  int epochs = 30;
  int batch_size = 16;
  double lr = 3e-3;
  double accuracy_gate = 0.9;
};

// Deterministic supervised training; records eval accuracy in the returned
// spec and fails if the accuracy gate is not met.
Classifier train_classifier(const ClassifierSpec& spec,
                            const std::vector<Tensor>& train_x,
                            const std::vector<int>& train_y,
                            const std::vector<Tensor>& eval_x,
                            const std::vector<int>& eval_y,
                            const ClassifierTrainOptions& opt);

double classifier_accuracy(const Classifier& cls, const std::vector<Tensor>& xs,
                           const std::vector<int>& ys);

// Substitute + architecturally distinct targets. Construction asserts that
// the substitute differs from every target in parameter count or layer
// signature and that all members pass the accuracy gate.
struct Zoo {
  Classifier substitute;
  std::vector<Classifier> targets;

  void assert_valid() const;
  const Classifier& target(size_t i) const { return targets.at(i); }
};

}  // namespace apa
