#include "apa/codec.hpp"

#include <stdexcept>

#include "apa/errors.hpp"
#include "apa/rng.hpp"

namespace apa {

using ad::Tape;
using ad::Var;

Codec Codec::identity() {
  Codec c;
  c.mode_ = Mode::identity;
  return c;
}

Codec Codec::tiny_autoencoder_init(int img_channels, uint64_t seed) {
  Codec c;
  c.mode_ = Mode::tiny_autoencoder;
  c.img_channels_ = img_channels;
  Rng rng(seed);
  auto add_conv = [&](const std::string& name, int oc, int ic) {
    c.params_.add(name + ".w", nn::conv_init(rng, oc, ic, 3, 3));
    c.params_.add(name + ".b", Tensor::zeros({oc}));
  };
  add_conv("enc1", 8, img_channels);   // stride 2
  add_conv("enc2", 4, 8);              // stride 1
  add_conv("dec1", 8, 4);              // stride 1
  add_conv("dec2", 8, 8);              // after upsample
  add_conv("dec3", img_channels, 8);   // head
  return c;
}

std::vector<int> Codec::latent_shape(const std::vector<int>& s) const {
  if (mode_ == Mode::identity) return s;
  if (s.size() != 3 || s[1] % 2 || s[2] % 2)
    throw std::invalid_argument("Codec: image shape must be CxHxW with even H,W");
  return {4, s[1] / 2, s[2] / 2};
}

Var Codec::encode_graph(Tape& t, const nn::WeightProvider& w, Var x) const {
  Var h = ad::silu(t, ad::conv2d(t, x, w("enc1.w"), w("enc1.b"), 2, 1));
  return ad::conv2d(t, h, w("enc2.w"), w("enc2.b"), 1, 1);
}

Var Codec::decode_graph(Tape& t, const nn::WeightProvider& w, Var z) const {
  Var h = ad::silu(t, ad::conv2d(t, z, w("dec1.w"), w("dec1.b"), 1, 1));
  h = ad::silu(t, ad::conv2d(t, ad::upsample2x(t, h), w("dec2.w"), w("dec2.b"), 1, 1));
  return ad::conv2d(t, h, w("dec3.w"), w("dec3.b"), 1, 1);
}

Tensor Codec::encode(const Tensor& image) const {
  if (mode_ == Mode::identity) return image;
  Tape t;
  nn::WeightProvider w = nn::constant_provider(t, params_);
  return t.value(encode_graph(t, w, t.constant(image)));
}

Tensor Codec::decode(const Tensor& latent) const {
  if (mode_ == Mode::identity) return latent;
  Tape t;
  nn::WeightProvider w = nn::constant_provider(t, params_);
  return t.value(decode_graph(t, w, t.constant(latent)));
}

Var Codec::decode(Tape& tape, Var latent) const {
  if (mode_ == Mode::identity) return latent;
  nn::WeightProvider w = nn::constant_provider(tape, params_);
  return decode_graph(tape, w, latent);
}

double Codec::train(const std::vector<Tensor>& images, int epochs, double lr,
                    uint64_t seed) {
  if (mode_ == Mode::identity) return 0.0;
  if (images.empty()) throw std::invalid_argument("Codec::train: empty dataset");
  Rng rng(seed);
  nn::Adam opt({.lr = lr});
  std::vector<size_t> order(images.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  double epoch_loss = 0.0;
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    epoch_loss = 0.0;
    for (size_t idx : order) {
      Tape t;
      auto binding = std::make_shared<nn::Binding>();
      nn::WeightProvider w = nn::trainable_provider(t, params_, binding);
      Var x = t.constant(images[idx]);
      Var rec = decode_graph(t, w, encode_graph(t, w, x));
      Var err = ad::sub(t, rec, x);
      Var loss = ad::scale(t, ad::sum_squares(t, err),
                           1.0 / static_cast<double>(images[idx].numel()));
      double lv = t.value(loss)[0];
      if (!std::isfinite(lv))
        throw TrainingFailure("Codec::train: non-finite loss");
      epoch_loss += lv;
      t.backward(loss);
      opt.step(params_, binding->grads());
    }
    epoch_loss /= static_cast<double>(images.size());
  }
  return epoch_loss;
}

}  // namespace apa
